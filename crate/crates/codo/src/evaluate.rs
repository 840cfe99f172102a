//! Linear probe and invariance evaluation over the corpus.

use std::path::Path;

use codo_core::encoder::{image_to_input, EmbeddingSet, Encoder};
use codo_core::eval::{
    invariance_report, probe_features, LevelInvariance, LinearProbe, ProbeConfig, ProbeItem, Summary,
};
use codo_core::rng::seeded;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::corpus::{AnnotationRecord, Corpus};
use crate::error::{CliError, Result};

/// An encoder plus the parameters to evaluate.
pub struct EvalModel {
    pub encoder: Encoder,
    pub params: Vec<f32>,
    pub label: String,
}

impl EvalModel {
    /// The query encoder of a checkpoint.
    pub fn from_checkpoint(path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        Ok(Self { encoder: ckpt.encoder()?, params: ckpt.state.pair.query, label: path.display().to_string() })
    }

    /// Freshly initialised weights, the baseline for every comparison.
    pub fn random(cfg: &RunConfig, seed: u64) -> Result<Self> {
        let encoder = Encoder::new(cfg.encoder_config())?;
        let params = encoder.init_params(&mut seeded(seed));
        Ok(Self { encoder, params, label: format!("random-init(seed={seed})") })
    }
}

/// Embeds the ground-truth box of every record, spreading images over the
/// available cores. The model is only read.
pub fn embed_records(model: &EvalModel, corpus: &Corpus, records: &[&AnnotationRecord]) -> Result<Vec<EmbeddingSet<f32>>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(records.len().max(1));
    let chunk = records.len().div_ceil(workers).max(1);
    let embed = |recs: &[&AnnotationRecord]| -> Result<Vec<EmbeddingSet<f32>>> {
        recs.iter()
            .map(|r| {
                let img = corpus.image(r)?;
                Ok(model.encoder.extract_embeddings(&model.params, &image_to_input(&img), &r.bbox()?)?)
            })
            .collect()
    };
    if workers <= 1 {
        return embed(records);
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = records.chunks(chunk).map(|c| s.spawn(move || embed(c))).collect();
        let mut out = Vec::with_capacity(records.len());
        for h in handles {
            out.extend(h.join().map_err(|_| CliError::Runtime("embedding worker panicked".into()))??);
        }
        Ok(out)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub model: String,
    pub n_train: usize,
    pub n_test: usize,
    pub n_classes: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub chance: f64,
}

pub fn run_probe(model: &EvalModel, corpus: &Corpus, cfg: &ProbeConfig) -> Result<ProbeReport> {
    let (test, train): (Vec<&AnnotationRecord>, Vec<&AnnotationRecord>) = corpus.annotations.iter().partition(|r| r.is_test());
    if train.is_empty() || test.is_empty() {
        return Err(CliError::validation("the probe needs both train and test images"));
    }
    let features = |recs: &[&AnnotationRecord]| -> Result<Vec<Vec<f64>>> {
        embed_records(model, corpus, recs)?.iter().map(|e| Ok(probe_features(e)?)).collect()
    };
    let (xtr, xte) = (features(&train)?, features(&test)?);
    let ytr: Vec<usize> = train.iter().map(|r| r.class_id).collect();
    let yte: Vec<usize> = test.iter().map(|r| r.class_id).collect();
    let n_classes = corpus.n_classes();
    let probe = LinearProbe::fit(&xtr, &ytr, n_classes, cfg)?;
    Ok(ProbeReport {
        model: model.label.clone(),
        n_train: train.len(),
        n_test: test.len(),
        n_classes,
        train_accuracy: probe.accuracy(&xtr, &ytr)?,
        test_accuracy: probe.accuracy(&xte, &yte)?,
        chance: 1.0 / n_classes as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryJson {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl From<Summary> for SummaryJson {
    fn from(s: Summary) -> Self {
        Self { mean: s.mean, std: s.std, count: s.count }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelJson {
    pub same_fg_diff_bg_cosine: SummaryJson,
    pub diff_fg_cosine: SummaryJson,
    pub gap: f64,
}

impl From<LevelInvariance> for LevelJson {
    fn from(l: LevelInvariance) -> Self {
        Self { same_fg_diff_bg_cosine: l.same_fg_diff_bg_cosine.into(), diff_fg_cosine: l.diff_fg_cosine.into(), gap: l.gap }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceOutput {
    pub model: String,
    pub n_images: usize,
    pub overall: LevelJson,
    pub per_level: Vec<LevelJson>,
}

impl InvarianceOutput {
    pub fn gap(&self) -> f64 {
        self.overall.gap
    }
}

/// Invariance over the held-out split.
pub fn run_invariance(model: &EvalModel, corpus: &Corpus) -> Result<InvarianceOutput> {
    let test: Vec<&AnnotationRecord> = corpus.annotations.iter().filter(|r| r.is_test()).collect();
    let embeddings = embed_records(model, corpus, &test)?;
    let items: Vec<ProbeItem> = test
        .iter()
        .zip(embeddings)
        .map(|(r, embedding)| ProbeItem { foreground_id: r.foreground_id, class_id: r.class_id, pool_id: r.pool_id, embedding })
        .collect();
    let report = invariance_report(&items)?;
    Ok(InvarianceOutput {
        model: model.label.clone(),
        n_images: items.len(),
        overall: report.overall.into(),
        per_level: report.per_level.iter().map(|&l| l.into()).collect(),
    })
}

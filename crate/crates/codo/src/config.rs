//! Run configuration: TOML file plus `key=value` overrides.
//!
//! Every section has complete defaults, so an empty file is a valid config.
//! Unknown keys and out-of-range values are collected and reported together.

use std::path::Path;

use codo_core::contrastive::LossConfig;
use codo_core::cpj::{Blend, PasteConfig, PhotometricConfig, PoolRole, ViewConfig};
use codo_core::encoder::{EncoderConfig, LEVELS};
use codo_core::eval::ProbeConfig;
use codo_core::proposals::{ProposalGeneratorConfig, ProposalStrategy};
use codo_core::synth::SyntheticCorpusConfig;
use codo_core::trainer::{LrSchedule, TrainConfig};
use codo_core::JitterConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, IoContext, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub name: String,
    pub out_dir: String,
    pub seed: u64,
    pub deterministic: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { name: "codo".into(), out_dir: "runs".into(), seed: 0, deterministic: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSection {
    pub n_classes: usize,
    pub n_images: usize,
    pub image_size: usize,
    pub backgrounds_per_pool: usize,
    pub glyph_scale: [f64; 2],
    pub test_every: u64,
    pub train_on_pretrain_pool: bool,
}

impl Default for CorpusSection {
    fn default() -> Self {
        let d = SyntheticCorpusConfig::default();
        Self {
            n_classes: d.n_foreground_classes,
            n_images: d.n_images,
            image_size: d.image_size,
            backgrounds_per_pool: d.backgrounds_per_pool,
            glyph_scale: [d.glyph_scale.0, d.glyph_scale.1],
            test_every: d.test_every,
            train_on_pretrain_pool: d.train_on_pretrain_pool,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalSection {
    pub strategy: String,
    pub min_box_fraction: f64,
    pub max_box_fraction: f64,
    pub candidates_per_image: usize,
}

impl Default for ProposalSection {
    fn default() -> Self {
        let d = ProposalGeneratorConfig::default();
        Self {
            strategy: "graph_segmentation".into(),
            min_box_fraction: d.min_box_fraction,
            max_box_fraction: d.max_box_fraction,
            candidates_per_image: d.candidates_per_image,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JitterSection {
    pub iou_min: f64,
    pub max_center_shift: f64,
    pub max_scale_delta: f64,
    pub max_attempts: u32,
}

impl Default for JitterSection {
    fn default() -> Self {
        let d = JitterConfig::default();
        Self {
            iou_min: d.iou_min,
            max_center_shift: d.max_center_shift,
            max_scale_delta: d.max_scale_delta,
            max_attempts: d.max_attempts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhotometricSection {
    pub color_jitter_prob: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    pub grayscale_prob: f64,
    pub blur_prob: f64,
    pub blur_sigma: [f64; 2],
    pub flip_prob: f64,
}

impl Default for PhotometricSection {
    fn default() -> Self {
        let d = PhotometricConfig::default();
        Self {
            color_jitter_prob: d.color_jitter_prob,
            brightness: d.brightness,
            contrast: d.contrast,
            saturation: d.saturation,
            hue: d.hue,
            grayscale_prob: d.grayscale_prob,
            blur_prob: d.blur_prob,
            blur_sigma: [d.blur_sigma.0, d.blur_sigma.1],
            flip_prob: d.flip_prob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewSection {
    /// Background pools eligible for every view.
    pub pools: Vec<String>,
    /// View sets written by `make-views`.
    pub count: usize,
    pub scale_range: [f64; 2],
    pub aspect_jitter_range: [f64; 2],
    pub blend: String,
    pub jitter: JitterSection,
    pub photometric: PhotometricSection,
}

impl Default for ViewSection {
    fn default() -> Self {
        let d = PasteConfig::default();
        Self {
            pools: vec!["pretrain_like".into(), "downstream_like_A".into(), "downstream_like_B".into()],
            count: 5344,
            scale_range: [d.scale_range.0, d.scale_range.1],
            aspect_jitter_range: [d.aspect_jitter_range.0, d.aspect_jitter_range.1],
            blend: "hard".into(),
            jitter: JitterSection::default(),
            photometric: PhotometricSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSection {
    pub stem_channels: usize,
    pub stage_channels: [usize; LEVELS],
    pub extra_blocks: usize,
    pub fpn_channels: usize,
    pub norm_groups: usize,
    pub roi_size: usize,
    pub head_convs: usize,
    pub head_hidden: usize,
    pub embed_dim: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let d = EncoderConfig::default();
        Self {
            stem_channels: d.stem_channels,
            stage_channels: d.stage_channels,
            extra_blocks: d.extra_blocks,
            fpn_channels: d.fpn_channels,
            norm_groups: d.norm_groups,
            roi_size: d.roi_size,
            head_convs: d.head_convs,
            head_hidden: d.head_hidden,
            embed_dim: d.embed_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossSection {
    pub temperature: f64,
    pub level_weights: [f64; LEVELS],
}

impl Default for LossSection {
    fn default() -> Self {
        let d = LossConfig::default();
        Self { temperature: d.temperature, level_weights: d.level_weights }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum_sgd: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub lr_schedule: String,
    pub n_keys: usize,
    pub snapshot_every: u64,
    pub key_momentum: f64,
    pub queue_capacity: usize,
    /// Store queue contents in checkpoints.
    pub checkpoint_queues: bool,
    pub prefetch_batches: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            batch_size: d.batch_size,
            base_lr: d.base_lr,
            momentum_sgd: d.momentum_sgd,
            weight_decay: d.weight_decay,
            epochs: d.epochs,
            lr_schedule: d.lr_schedule.as_str().into(),
            n_keys: d.n_keys,
            snapshot_every: d.snapshot_every,
            key_momentum: d.key_momentum,
            queue_capacity: d.queue_capacity,
            checkpoint_queues: true,
            prefetch_batches: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub probe_iterations: usize,
    pub probe_weight_decay: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        let d = ProbeConfig::default();
        Self { probe_iterations: d.iterations, probe_weight_decay: d.weight_decay }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub run: RunSection,
    pub corpus: CorpusSection,
    pub proposals: ProposalSection,
    pub views: ViewSection,
    pub encoder: EncoderSection,
    pub loss: LossSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

/// Walks `user` against the default tree and names every key it lacks.
fn unknown_keys(user: &toml::Table, known: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (key, value) in user {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match known.get(key) {
            None => out.push(format!("unknown key `{path}`")),
            Some(toml::Value::Table(k)) => {
                if let toml::Value::Table(u) = value {
                    unknown_keys(u, k, &path, out);
                }
            }
            Some(_) => {}
        }
    }
}

fn parse_override_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `a.b.c = value` inside `table`, creating intermediate tables.
fn apply_override(table: &mut toml::Table, assignment: &str) -> std::result::Result<(), String> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| format!("override `{assignment}` is not of the form key=value"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("override key `{key}` is malformed"));
    }
    let mut cursor = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cursor.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(format!("override `{key}` descends into a non-table value")),
        };
    }
    cursor.insert(parts[parts.len() - 1].to_string(), parse_override_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Parses TOML text, applies overrides, rejects unknown keys and checks ranges.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            text.parse().map_err(|e: toml::de::Error| CliError::validation(format!("config does not parse: {e}")))?;
        let mut errors = Vec::new();
        for o in overrides {
            if let Err(e) = apply_override(&mut table, o) {
                errors.push(e);
            }
        }
        let known = toml::Table::try_from(RunConfig::default()).expect("defaults serialise");
        unknown_keys(&table, &known, "", &mut errors);
        // unknown keys are ignored by serde, so range checks still run
        let parsed = toml::Value::Table(table).try_into::<RunConfig>();
        match &parsed {
            Ok(cfg) => errors.extend(cfg.violations()),
            Err(e) => errors.push(format!("config has a wrongly typed value: {e}")),
        }
        match parsed {
            Ok(cfg) if errors.is_empty() => Ok(cfg),
            _ => Err(CliError::Validation(errors)),
        }
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).at(p)?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Every range violation across all sections.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut check = |r: codo_core::Result<()>| {
            if let Err(e) = r {
                v.push(strip_prefix(&e.to_string()));
            }
        };
        check(self.corpus_config().validate());
        check(self.view_config().map_or_else(|e| Err(e), |c| c.validate()));
        check(self.encoder_config().validate());
        check(self.loss_config().validate());
        check(self.proposal_config().map_or_else(|e| Err(e), |c| c.validate()));
        if !(self.loss.temperature > 0.0) {
            v.push("loss.temperature must be > 0".into());
        }
        if !(self.views.jitter.iou_min > 0.0 && self.views.jitter.iou_min < 1.0) {
            v.push("views.jitter.iou_min must lie in (0, 1)".into());
        }
        if self.views.pools.is_empty() {
            v.push("views.pools must name at least one pool".into());
        }
        for p in &self.views.pools {
            if PoolRole::parse(p).is_none() {
                v.push(format!("views.pools: unknown pool `{p}`"));
            }
        }
        if self.views.blend != "hard" {
            v.push(format!("views.blend: unsupported blend `{}`", self.views.blend));
        }
        if ProposalStrategy::from_name(&self.proposals.strategy).is_none() {
            v.push(format!("proposals.strategy: unknown strategy `{}`", self.proposals.strategy));
        }
        if LrSchedule::parse(&self.train.lr_schedule).is_none() {
            v.push(format!("train.lr_schedule: unknown schedule `{}`", self.train.lr_schedule));
        }
        v.extend(self.train_config_unchecked().violations());
        if self.train.prefetch_batches == 0 {
            v.push("train.prefetch_batches must be >= 1".into());
        }
        if self.eval.probe_iterations == 0 {
            v.push("eval.probe_iterations must be >= 1".into());
        }
        v.dedup();
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(v))
        }
    }

    /// SHA-256 of the canonical JSON of every setting that affects results.
    pub fn hash(&self) -> String {
        let mut hashed = self.clone();
        hashed.run.name = String::new();
        hashed.run.out_dir = String::new();
        hashed.run.deterministic = false;
        hashed.train.prefetch_batches = 0;
        let json = serde_json::to_string(&hashed).expect("config serialises");
        hex(&Sha256::digest(json.as_bytes()))
    }

    pub fn corpus_config(&self) -> SyntheticCorpusConfig {
        SyntheticCorpusConfig {
            n_foreground_classes: self.corpus.n_classes,
            n_images: self.corpus.n_images,
            image_size: self.corpus.image_size,
            backgrounds_per_pool: self.corpus.backgrounds_per_pool,
            glyph_scale: (self.corpus.glyph_scale[0], self.corpus.glyph_scale[1]),
            test_every: self.corpus.test_every,
            train_on_pretrain_pool: self.corpus.train_on_pretrain_pool,
            seed: self.run.seed,
        }
    }

    pub fn proposal_config(&self) -> codo_core::Result<ProposalGeneratorConfig> {
        let strategy = ProposalStrategy::from_name(&self.proposals.strategy)
            .ok_or_else(|| codo_core::Error::InvalidConfig(format!("unknown strategy {}", self.proposals.strategy)))?;
        Ok(ProposalGeneratorConfig {
            strategy,
            min_box_fraction: self.proposals.min_box_fraction,
            max_box_fraction: self.proposals.max_box_fraction,
            candidates_per_image: self.proposals.candidates_per_image,
        })
    }

    pub fn view_config(&self) -> codo_core::Result<ViewConfig> {
        let v = &self.views;
        let p = &v.photometric;
        Ok(ViewConfig {
            paste: PasteConfig {
                scale_range: (v.scale_range[0], v.scale_range[1]),
                aspect_jitter_range: (v.aspect_jitter_range[0], v.aspect_jitter_range[1]),
                blend: Blend::Hard,
            },
            jitter: JitterConfig {
                iou_min: v.jitter.iou_min,
                max_center_shift: v.jitter.max_center_shift,
                max_scale_delta: v.jitter.max_scale_delta,
                max_attempts: v.jitter.max_attempts,
            },
            photometric: PhotometricConfig {
                color_jitter_prob: p.color_jitter_prob,
                brightness: p.brightness,
                contrast: p.contrast,
                saturation: p.saturation,
                hue: p.hue,
                grayscale_prob: p.grayscale_prob,
                blur_prob: p.blur_prob,
                blur_sigma: (p.blur_sigma[0], p.blur_sigma[1]),
                flip_prob: p.flip_prob,
            },
        })
    }

    pub fn pool_roles(&self) -> Result<Vec<PoolRole>> {
        parse_pools(&self.views.pools)
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        let e = &self.encoder;
        EncoderConfig {
            stem_channels: e.stem_channels,
            stage_channels: e.stage_channels,
            extra_blocks: e.extra_blocks,
            fpn_channels: e.fpn_channels,
            norm_groups: e.norm_groups,
            roi_size: e.roi_size,
            head_convs: e.head_convs,
            head_hidden: e.head_hidden,
            embed_dim: e.embed_dim,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig { temperature: self.loss.temperature, level_weights: self.loss.level_weights }
    }

    fn train_config_unchecked(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            base_lr: t.base_lr,
            momentum_sgd: t.momentum_sgd,
            weight_decay: t.weight_decay,
            epochs: t.epochs,
            lr_schedule: LrSchedule::parse(&t.lr_schedule).unwrap_or(LrSchedule::Cosine),
            seed: self.run.seed,
            n_keys: t.n_keys,
            snapshot_every: t.snapshot_every,
            key_momentum: t.key_momentum,
            queue_capacity: t.queue_capacity,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train_config_unchecked()
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig { iterations: self.eval.probe_iterations, weight_decay: self.eval.probe_weight_decay }
    }
}

pub fn parse_pools(names: &[String]) -> Result<Vec<PoolRole>> {
    names
        .iter()
        .map(|n| PoolRole::parse(n.trim()).ok_or_else(|| CliError::validation(format!("unknown pool `{n}`"))))
        .collect()
}

fn strip_prefix(msg: &str) -> String {
    for p in ["invalid configuration: ", "invalid argument: "] {
        if let Some(rest) = msg.strip_prefix(p) {
            return rest.to_string();
        }
    }
    msg.to_string()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Deterministic mode from the flag or `CODO_DETERMINISTIC=1`.
pub fn deterministic_requested(flag: bool, cfg: &RunConfig) -> bool {
    flag || cfg.run.deterministic || std::env::var("CODO_DETERMINISTIC").is_ok_and(|v| v == "1")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let cfg = RunConfig::from_toml_str("", &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn two_keys_is_rejected() {
        let err = RunConfig::from_toml_str("[train]\nn_keys = 2\n", &[]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("n_keys"), "{err}");
    }

    #[test]
    fn override_beats_file() {
        let cfg = RunConfig::from_toml_str("[train]\nbase_lr = 0.5\n", &["train.base_lr=0.25".into()]).unwrap();
        assert_eq!(cfg.train.base_lr, 0.25);
        let cfg = RunConfig::from_toml_str("", &["views.pools=[\"pretrain_like\"]".into(), "run.name=abc".into()]).unwrap();
        assert_eq!(cfg.views.pools, vec!["pretrain_like".to_string()]);
        assert_eq!(cfg.run.name, "abc");
    }

    #[test]
    fn every_problem_is_listed() {
        let text = "bogus = 1\n[train]\nn_keys = 2\nepochs = 0\nwhatever = true\n[loss]\ntemperature = 0.0\n[views.jitter]\niou_min = 1.5\n";
        let err = RunConfig::from_toml_str(text, &[]).unwrap_err();
        let CliError::Validation(all) = &err else { panic!("{err}") };
        assert!(all.iter().any(|m| m.contains("`bogus`")));
        assert!(all.iter().any(|m| m.contains("`train.whatever`")));
        assert!(all.iter().any(|m| m.contains("temperature")), "{all:?}");

        let text = "[train]\nn_keys = 2\nepochs = 0\n[loss]\ntemperature = 0.0\n[views.jitter]\niou_min = 1.5\n";
        let CliError::Validation(v) = RunConfig::from_toml_str(text, &[]).unwrap_err() else { panic!() };
        let all = v.join("\n");
        for needle in ["n_keys", "epochs", "temperature", "iou_min"] {
            assert!(all.contains(needle), "missing {needle} in {all}");
        }
    }

    #[test]
    fn wrong_types_are_validation_errors() {
        let err = RunConfig::from_toml_str("[train]\nbatch_size = \"big\"\n", &[]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn hash_is_stable_and_ignores_paths() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.run.out_dir = "elsewhere".into();
        b.run.deterministic = true;
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        b.train.base_lr = 0.1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.train.n_keys = 3;
        cfg.views.pools = vec!["downstream_like_B".into()];
        let back = RunConfig::from_toml_str(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(back, cfg);
    }
}

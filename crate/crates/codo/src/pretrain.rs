//! The pretraining loop: batches, metrics, snapshots and resume.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use codo_core::cpj::ViewSet;
use codo_core::encoder::{Encoder, LEVELS};
use codo_core::rng::seeded;
use codo_core::trainer::{train_step, StepMetrics, TrainState};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{CliError, IoContext, Result};
use crate::shards::ShardWriter;
use crate::views::ViewGenerator;

/// Supplies the batch for a given 1-based step. Must be a pure function of
/// the step so that prefetching and resuming do not change the data order.
pub trait BatchSource: Sync {
    fn steps_per_epoch(&self) -> u64;
    fn batch(&self, step: u64) -> Result<Vec<ViewSet>>;
}

/// Pre-built view sets, reshuffled every epoch; the last partial batch is dropped.
pub struct ShardSource {
    sets: Vec<ViewSet>,
    batch_size: usize,
    seed: u64,
}

impl ShardSource {
    pub fn new(sets: Vec<ViewSet>, batch_size: usize, seed: u64) -> Self {
        Self { sets, batch_size, seed }
    }

    fn order(&self, epoch: u64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.sets.len()).collect();
        idx.shuffle(&mut seeded(self.seed ^ epoch.wrapping_mul(0xd134_2543_de82_ef95).wrapping_add(1)));
        idx
    }
}

impl BatchSource for ShardSource {
    fn steps_per_epoch(&self) -> u64 {
        (self.sets.len() / self.batch_size.max(1)) as u64
    }

    fn batch(&self, step: u64) -> Result<Vec<ViewSet>> {
        let spe = self.steps_per_epoch();
        if spe == 0 {
            return Err(CliError::validation("fewer view sets than one batch"));
        }
        let (epoch, within) = ((step - 1) / spe, ((step - 1) % spe) as usize);
        let order = self.order(epoch);
        Ok(order[within * self.batch_size..(within + 1) * self.batch_size].iter().map(|&i| self.sets[i].clone()).collect())
    }
}

/// Fresh views every step, built on the fly; no view set is reused.
pub struct GeneratedSource {
    pub generator: ViewGenerator,
    pub batch_size: usize,
}

impl BatchSource for GeneratedSource {
    fn steps_per_epoch(&self) -> u64 {
        (self.generator.n_proposals() / self.batch_size.max(1)).max(1) as u64
    }

    fn batch(&self, step: u64) -> Result<Vec<ViewSet>> {
        let b = self.batch_size as u64;
        let mut out = Vec::with_capacity(self.batch_size);
        let mut index = (step - 1) * b * 2;
        // Each step owns 2b indices so skips never borrow from a neighbour.
        let end = index + 2 * b;
        while out.len() < self.batch_size && index < end {
            if let Some(vs) = self.generator.viewset(index)? {
                out.push(vs);
            }
            index += 1;
        }
        if out.is_empty() {
            return Err(CliError::Runtime(format!("step {step}: every view set was skipped")));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub loss: f64,
    pub loss_levels: [f64; LEVELS],
    pub lr: f64,
    pub queue_fill: usize,
    pub pos_logit_mean: f64,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_s: Option<f64>,
}

impl MetricsRecord {
    fn new(m: &StepMetrics, hash: &str, elapsed_s: Option<f64>) -> Self {
        Self {
            step: m.step,
            loss: m.loss,
            loss_levels: m.per_level,
            lr: m.lr,
            queue_fill: m.queue_fill,
            pos_logit_mean: m.pos_logit_mean,
            config_hash: hash.into(),
            elapsed_s,
        }
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    crate::corpus::read_jsonl(path)
}

#[derive(Debug, Clone, Default)]
pub struct PretrainOptions {
    pub out: PathBuf,
    pub resume: Option<PathBuf>,
    pub deterministic: bool,
    /// Overrides `epochs * steps_per_epoch`; also the schedule length.
    pub max_steps: Option<u64>,
    /// Stop after this step without finishing, as if interrupted.
    pub stop_after: Option<u64>,
    /// Progress line on stderr every this many steps; 0 is silent.
    pub log_every: u64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub state: TrainState<f32>,
    pub total_steps: u64,
    pub metrics_path: PathBuf,
    pub final_checkpoint: Option<PathBuf>,
    pub wall_seconds: f64,
}

pub fn snapshot_path(out: &Path, step: u64) -> PathBuf {
    out.join("checkpoints").join(format!("step-{step:06}.ckpt"))
}

pub fn final_checkpoint_path(out: &Path) -> PathBuf {
    out.join("final.ckpt")
}

/// Keeps only metric lines at or before `step`, so a resumed run appends
/// onto exactly the history its checkpoint saw.
fn truncate_metrics(path: &Path, step: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let mut kept = Vec::new();
    for line in BufReader::new(File::open(path).at(path)?).lines() {
        let line = line.at(path)?;
        let rec: MetricsRecord = serde_json::from_str(&line).map_err(|e| CliError::format(path, e.to_string()))?;
        if rec.step <= step {
            kept.push(line);
        }
    }
    let mut w = BufWriter::new(File::create(path).at(path)?);
    for l in kept {
        writeln!(w, "{l}").at(path)?;
    }
    w.flush().at(path)
}

fn dump_batch(out: &Path, step: u64, batch: &[ViewSet], hash: &str) -> Result<PathBuf> {
    let dir = out.join(format!("nonfinite-step-{step:06}"));
    let first = &batch[0].query.image;
    let mut w = ShardWriter::create(&dir, first.width(), first.height(), batch[0].keys.len(), hash)?;
    for vs in batch {
        w.push(vs)?;
    }
    w.finish()?;
    Ok(dir)
}

pub fn pretrain(cfg: &RunConfig, source: &dyn BatchSource, opts: &PretrainOptions) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let hash = cfg.hash();
    let tc = cfg.train_config();
    let loss_cfg = cfg.loss_config();
    let encoder = Encoder::new(cfg.encoder_config())?;
    let spe = source.steps_per_epoch();
    if spe == 0 {
        return Err(CliError::validation("fewer view sets than one batch"));
    }
    let total = opts.max_steps.unwrap_or(tc.epochs as u64 * spe);
    fs::create_dir_all(opts.out.join("checkpoints")).at(&opts.out)?;
    fs::write(opts.out.join("config.toml"), cfg.to_toml()).at(&opts.out)?;

    let metrics_path = opts.out.join("metrics.jsonl");
    let mut state = match &opts.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.header.config_hash != hash {
                return Err(CliError::validation(format!(
                    "checkpoint {} was written under config {}, current config is {}",
                    path.display(),
                    ckpt.header.config_hash,
                    hash
                )));
            }
            truncate_metrics(&metrics_path, ckpt.state.step)?;
            ckpt.state
        }
        None => {
            let _ = fs::remove_file(&metrics_path);
            TrainState::new(&encoder, &tc, &mut seeded(tc.seed))?
        }
    };
    let mut metrics = BufWriter::new(OpenOptions::new().create(true).append(true).open(&metrics_path).at(&metrics_path)?);
    let last = opts.stop_after.map_or(total, |s| s.min(total));
    let first = state.step + 1;

    let mut run_step = |state: &mut TrainState<f32>, step: u64, batch: Result<Vec<ViewSet>>| -> Result<()> {
        let batch = batch?;
        let m = match train_step(&encoder, state, &batch, &tc, &loss_cfg, total) {
            Ok(m) => m,
            Err(e @ codo_core::Error::NonFiniteLoss { .. }) => {
                let dir = dump_batch(&opts.out, step, &batch, &hash)?;
                return Err(CliError::Runtime(format!("{e}; batch saved to {}", dir.display())));
            }
            Err(e) => return Err(e.into()),
        };
        let elapsed = (!opts.deterministic).then(|| started.elapsed().as_secs_f64());
        let rec = MetricsRecord::new(&m, &hash, elapsed);
        writeln!(metrics, "{}", serde_json::to_string(&rec).expect("metrics serialise")).at(&metrics_path)?;
        if opts.log_every > 0 && (step % opts.log_every == 0 || step == total) {
            eprintln!("step {step}/{total} loss {:.4} lr {:.5} queue {}", m.loss, m.lr, m.queue_fill);
        }
        if tc.snapshot_every > 0 && step % tc.snapshot_every == 0 {
            metrics.flush().at(&metrics_path)?;
            Checkpoint::from_state(cfg, state, cfg.train.checkpoint_queues).save(&snapshot_path(&opts.out, step))?;
        }
        Ok(())
    };

    if first <= last {
        if opts.deterministic || cfg.train.prefetch_batches == 0 {
            for step in first..=last {
                run_step(&mut state, step, source.batch(step))?;
            }
        } else {
            std::thread::scope(|s| -> Result<()> {
                let (tx, rx) = crossbeam_channel::bounded(cfg.train.prefetch_batches);
                s.spawn(move || {
                    for step in first..=last {
                        if tx.send(source.batch(step)).is_err() {
                            break;
                        }
                    }
                });
                for step in first..=last {
                    let batch = rx.recv().map_err(|_| CliError::Runtime("batch loader stopped".into()))?;
                    run_step(&mut state, step, batch)?;
                }
                Ok(())
            })?;
        }
    }
    metrics.flush().at(&metrics_path)?;
    let final_checkpoint = if state.step == total {
        let path = final_checkpoint_path(&opts.out);
        Checkpoint::from_state(cfg, &state, cfg.train.checkpoint_queues).save(&path)?;
        Some(path)
    } else {
        None
    };
    Ok(PretrainOutcome {
        state,
        total_steps: total,
        metrics_path,
        final_checkpoint,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

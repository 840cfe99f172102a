//! Training checkpoints.
//!
//! Layout: `"CODOCKPT"`, version u32, header length u32, JSON header, then
//! little-endian f32 query, key and velocity vectors, the four queues (oldest
//! entry first) when present, and a SHA-256 of everything before it.
//! Files are written to a temporary name and renamed into place.

use std::fs;
use std::io::Write;
use std::path::Path;

use codo_core::contrastive::NegativeQueue;
use codo_core::encoder::{Encoder, EncoderPair, LEVELS};
use codo_core::trainer::TrainState;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{EncoderSection, RunConfig};
use crate::error::{CliError, IoContext, Result};

pub const CKPT_MAGIC: &[u8; 8] = b"CODOCKPT";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config_hash: String,
    pub step: u64,
    pub seed: u64,
    pub encoder: EncoderSection,
    pub key_momentum: f64,
    pub n_params: usize,
    pub queue_capacity: usize,
    /// Entries per level, or `None` when queues were not saved.
    pub queue_lens: Option<[usize; LEVELS]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub state: TrainState<f32>,
}

impl Checkpoint {
    pub fn from_state(cfg: &RunConfig, state: &TrainState<f32>, include_queues: bool) -> Self {
        let queue_lens = include_queues.then(|| core::array::from_fn(|l| state.queues[l].len()));
        let mut state = state.clone();
        if !include_queues {
            let dim = cfg.encoder.embed_dim;
            state.queues = (0..LEVELS).map(|_| NegativeQueue::new(dim, cfg.train.queue_capacity)).collect();
        }
        Self {
            header: CheckpointHeader {
                config_hash: cfg.hash(),
                step: state.step,
                seed: state.seed,
                encoder: cfg.encoder.clone(),
                key_momentum: state.pair.momentum,
                n_params: state.pair.query.len(),
                queue_capacity: cfg.train.queue_capacity,
                queue_lens,
            },
            state,
        }
    }

    pub fn encoder(&self) -> Result<Encoder> {
        let cfg = RunConfig { encoder: self.header.encoder.clone(), ..RunConfig::default() };
        Ok(Encoder::new(cfg.encoder_config())?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serialises");
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        let push = |out: &mut Vec<u8>, v: &[f32]| v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        push(&mut out, &self.state.pair.query);
        push(&mut out, &self.state.pair.key);
        push(&mut out, &self.state.velocity);
        if self.header.queue_lens.is_some() {
            for q in &self.state.queues {
                push(&mut out, &q.entries_flat());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 16 + 32 || &bytes[..8] != CKPT_MAGIC {
            return Err("not a checkpoint".into());
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err("checksum mismatch".into());
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != CKPT_VERSION {
            return Err(format!("checkpoint version {version} is not supported"));
        }
        let hlen = u32::from_le_bytes(body[12..16].try_into().expect("4 bytes")) as usize;
        let hend = 16 + hlen;
        let header: CheckpointHeader =
            serde_json::from_slice(body.get(16..hend).ok_or("truncated header")?).map_err(|e| e.to_string())?;
        let mut at = hend;
        let mut take = |n: usize| -> std::result::Result<Vec<f32>, String> {
            let end = at + 4 * n;
            let slice = body.get(at..end).ok_or("truncated payload")?;
            at = end;
            Ok(slice.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
        };
        let n = header.n_params;
        let query = take(n)?;
        let key = take(n)?;
        let velocity = take(n)?;
        let dim = header.encoder.embed_dim;
        let queues = match header.queue_lens {
            Some(lens) => lens
                .iter()
                .map(|&len| {
                    let flat = take(len * dim)?;
                    NegativeQueue::from_entries(dim, header.queue_capacity, &flat).map_err(|e| e.to_string())
                })
                .collect::<std::result::Result<Vec<_>, String>>()?,
            None => (0..LEVELS).map(|_| NegativeQueue::new(dim, header.queue_capacity)).collect(),
        };
        if at != body.len() {
            return Err("trailing bytes in payload".into());
        }
        let state = TrainState {
            pair: EncoderPair { query, key, momentum: header.key_momentum },
            queues,
            velocity,
            step: header.step,
            seed: header.seed,
        };
        Ok(Self { header, state })
    }

    /// Writes atomically: temporary file, fsync, rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.tmp");
        {
            let mut f = fs::File::create(&tmp).at(&tmp)?;
            f.write_all(&self.to_bytes()).at(&tmp)?;
            f.sync_all().at(&tmp)?;
        }
        fs::rename(&tmp, path).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).at(path)?;
        let ckpt = Self::from_bytes(&bytes)
            .map_err(|m| CliError::Core(codo_core::Error::CorruptedCheckpoint(format!("{}: {m}", path.display()))))?;
        let encoder = ckpt.encoder()?;
        if encoder.num_params() != ckpt.header.n_params {
            return Err(CliError::Core(codo_core::Error::CorruptedCheckpoint(format!(
                "{}: encoder expects {} parameters, file holds {}",
                path.display(),
                encoder.num_params(),
                ckpt.header.n_params
            ))));
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use codo_core::rng::seeded;

    fn small_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.encoder.stem_channels = 4;
        cfg.encoder.stage_channels = [4, 4, 4, 4];
        cfg.encoder.fpn_channels = 4;
        cfg.encoder.norm_groups = 2;
        cfg.encoder.head_hidden = 8;
        cfg.encoder.embed_dim = 4;
        cfg.train.queue_capacity = 5;
        cfg
    }

    fn state(cfg: &RunConfig) -> TrainState<f32> {
        let enc = Encoder::new(cfg.encoder_config()).unwrap();
        let mut s = TrainState::new(&enc, &cfg.train_config(), &mut seeded(1)).unwrap();
        s.step = 17;
        s.velocity.iter_mut().enumerate().for_each(|(i, v)| *v = i as f32 * 1e-3);
        let batch: Vec<Vec<f32>> = (0..7).map(|i| vec![0.5, 0.5, 0.5, if i % 2 == 0 { 0.5 } else { -0.5 }]).collect();
        for q in &mut s.queues {
            q.enqueue(&batch).unwrap();
        }
        s
    }

    #[test]
    fn round_trip_with_and_without_queues() {
        let cfg = small_cfg();
        let s = state(&cfg);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let c = Checkpoint::from_state(&cfg, &s, true);
        c.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.state.pair, s.pair);
        assert_eq!(back.state.velocity, s.velocity);
        assert_eq!(back.state.step, 17);
        for (a, b) in back.state.queues.iter().zip(&s.queues) {
            assert_eq!(a.entries(), b.entries());
            assert_eq!(a.content_hash(), b.content_hash());
        }
        let without = Checkpoint::from_state(&cfg, &s, false);
        let back = Checkpoint::from_bytes(&without.to_bytes()).unwrap();
        assert!(back.state.queues.iter().all(|q| q.is_empty()));
        assert!(!dir.path().join("a.ckpt.tmp").exists());
    }

    #[test]
    fn flipped_byte_is_corruption() {
        let cfg = small_cfg();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        Checkpoint::from_state(&cfg, &state(&cfg), true).save(&path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        fs::write(&path, &bytes).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(matches!(err, CliError::Core(codo_core::Error::CorruptedCheckpoint(_))), "{err}");
        assert_eq!(err.exit_code(), 4);
    }
}

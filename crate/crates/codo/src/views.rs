//! Turning selected proposals into query/key view sets.

use std::path::Path;

use codo_core::cpj::{build_viewset_split, check_eligibility, BackgroundPool, ViewConfig, ViewSet};
use codo_core::proposals::Proposal;
use codo_core::rng::stream;
use codo_core::{Error as CoreError, Image};

use crate::corpus::{Corpus, ProposalRecord};
use crate::error::{CliError, Result};
use crate::shards::{ShardManifest, ShardWriter};

/// Extra attempts before an index gives up and is counted as skipped.
pub const VIEW_ATTEMPTS: u64 = 4;
const VIEW_STREAM: u64 = 0x5649_4557;

/// Deterministic view-set factory: index `i` always yields the same views.
pub struct ViewGenerator {
    proposals: Vec<Proposal>,
    sources: Vec<Image>,
    query_pools: Vec<BackgroundPool>,
    key_pools: Vec<BackgroundPool>,
    n_keys: usize,
    cfg: ViewConfig,
    seed: u64,
}

impl ViewGenerator {
    /// Matched pools: the eligibility rule is enforced.
    pub fn new(
        corpus: &Corpus,
        records: &[ProposalRecord],
        pools: Vec<BackgroundPool>,
        n_keys: usize,
        cfg: ViewConfig,
        seed: u64,
    ) -> Result<Self> {
        check_eligibility(&pools, &pools)?;
        Self::split(corpus, records, pools.clone(), pools, n_keys, cfg, seed)
    }

    /// Separate query and key pools, for the ablation only.
    pub fn split(
        corpus: &Corpus,
        records: &[ProposalRecord],
        query_pools: Vec<BackgroundPool>,
        key_pools: Vec<BackgroundPool>,
        n_keys: usize,
        cfg: ViewConfig,
        seed: u64,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(CliError::validation("no proposals to build views from"));
        }
        if query_pools.is_empty() || key_pools.is_empty() {
            return Err(CliError::validation("at least one background pool is required"));
        }
        cfg.validate()?;
        let mut proposals = Vec::with_capacity(records.len());
        let mut sources = Vec::with_capacity(records.len());
        for r in records {
            let [x0, y0, x1, y1] = r.bbox;
            let bbox = codo_core::BoundingBox::new(x0, y0, x1, y1)?;
            proposals.push(Proposal { bbox, source_image_id: r.image_id, score: r.score });
            sources.push(corpus.image_by_id(r.image_id)?);
        }
        Ok(Self { proposals, sources, query_pools, key_pools, n_keys, cfg, seed })
    }

    pub fn n_proposals(&self) -> usize {
        self.proposals.len()
    }

    pub fn image_size(&self) -> (usize, usize) {
        let bg = &self.query_pools[0].images()[0];
        (bg.width(), bg.height())
    }

    /// View set number `index`, or `None` if every attempt hit a skip.
    pub fn viewset(&self, index: u64) -> Result<Option<ViewSet>> {
        let n = self.proposals.len() as u64;
        for attempt in 0..VIEW_ATTEMPTS {
            // First attempt walks the proposals in order; retries jump elsewhere.
            let p = ((index + attempt.wrapping_mul(7919)) % n) as usize;
            let mut rng = stream(self.seed ^ attempt.wrapping_mul(0x9e37_79b9_7f4a_7c15), VIEW_STREAM ^ index);
            match build_viewset_split(
                &self.proposals[p],
                &self.sources[p],
                &self.query_pools,
                &self.key_pools,
                self.n_keys,
                &self.cfg,
                &mut rng,
            ) {
                Ok(vs) => return Ok(Some(vs)),
                Err(CoreError::SkipSample(_)) => continue,
                Err(e) => return Err(e.into()),
            }
        }
        Ok(None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MakeViewsSummary {
    pub written: usize,
    pub skipped: usize,
}

/// Writes `count` view sets to `out`. Indices whose attempts all skip are
/// replaced by later indices, up to `2 * count` tries in total.
pub fn write_views(gen: &ViewGenerator, count: usize, config_hash: &str, out: &Path) -> Result<(ShardManifest, MakeViewsSummary)> {
    let (w, h) = gen.image_size();
    let mut writer = ShardWriter::create(out, w, h, gen.n_keys, config_hash)?;
    let mut summary = MakeViewsSummary { written: 0, skipped: 0 };
    let mut index = 0u64;
    while summary.written < count && (index as usize) < 2 * count.max(1) {
        match gen.viewset(index)? {
            Some(vs) => {
                writer.push(&vs)?;
                summary.written += 1;
            }
            None => summary.skipped += 1,
        }
        index += 1;
    }
    if summary.written < count {
        return Err(CliError::Runtime(format!(
            "only {} of {count} view sets could be built ({} skipped)",
            summary.written, summary.skipped
        )));
    }
    Ok((writer.finish()?, summary))
}

//! Background-pool ablation: several pool configurations trained under the
//! same step budget and seeds, then evaluated side by side.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use codo_core::cpj::PoolRole;
use serde::{Deserialize, Serialize};

use crate::config::{parse_pools, RunConfig};
use crate::corpus::{read_proposals, write_json, Corpus};
use crate::error::{CliError, IoContext, Result};
use crate::evaluate::{run_invariance, run_probe, EvalModel};
use crate::pretrain::{pretrain, GeneratedSource, PretrainOptions};
use crate::views::ViewGenerator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixRow {
    pub name: String,
    pub query_pools: Vec<String>,
    pub key_pools: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationMatrix {
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub budget: Option<u64>,
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub proposals: Option<PathBuf>,
    pub rows: Vec<MatrixRow>,
}

impl AblationMatrix {
    pub fn parse(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| CliError::validation(format!("ablation matrix: {e}")))?;
        let mut problems = Vec::new();
        if m.seeds.is_empty() {
            problems.push("seeds must not be empty".to_string());
        }
        if m.rows.is_empty() {
            problems.push("rows must not be empty".to_string());
        }
        for r in &m.rows {
            for (what, pools) in [("query_pools", &r.query_pools), ("key_pools", &r.key_pools)] {
                if let Err(CliError::Validation(v)) = parse_pools(pools) {
                    problems.extend(v.into_iter().map(|p| format!("row `{}` {what}: {p}", r.name)));
                }
            }
        }
        if problems.is_empty() {
            Ok(m)
        } else {
            Err(CliError::Validation(problems))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).at(path)?)
    }

    /// Single pool, all pools, and query/key pools that never meet.
    pub fn standard(seeds: Vec<u64>) -> Self {
        let names = |roles: &[PoolRole]| roles.iter().map(|r| r.as_str().to_string()).collect::<Vec<_>>();
        let all = [PoolRole::PretrainLike, PoolRole::DownstreamLikeA, PoolRole::DownstreamLikeB];
        Self {
            seeds,
            budget: None,
            corpus: None,
            proposals: None,
            rows: vec![
                MatrixRow { name: "single".into(), query_pools: names(&all[..1]), key_pools: names(&all[..1]) },
                MatrixRow { name: "mixed".into(), query_pools: names(&all), key_pools: names(&all) },
                MatrixRow { name: "mismatched".into(), query_pools: names(&all[..1]), key_pools: names(&all[1..]) },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub gap: f64,
    pub probe_accuracy: f64,
    pub final_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowResult {
    pub name: String,
    pub query_pools: Vec<String>,
    pub key_pools: Vec<String>,
    pub seeds: Vec<SeedResult>,
    pub mean_gap: f64,
    pub mean_probe_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub budget: u64,
    pub batch_size: usize,
    pub config_hash: String,
    pub rows: Vec<RowResult>,
}

impl AblationReport {
    pub fn row(&self, name: &str) -> Option<&RowResult> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Seeds (by position) where row `a` has a gap at least as large as row `b`.
    pub fn wins(&self, a: &str, b: &str) -> Option<(usize, usize)> {
        let (a, b) = (self.row(a)?, self.row(b)?);
        let n = a.seeds.len().min(b.seeds.len());
        Some((a.seeds.iter().zip(&b.seeds).filter(|(x, y)| x.gap >= y.gap).count(), n))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let seeds: Vec<u64> = self.rows.first().map(|r| r.seeds.iter().map(|x| x.seed).collect()).unwrap_or_default();
        let _ = writeln!(s, "budget {} steps x batch {}  (config {})", self.budget, self.batch_size, &self.config_hash[..12]);
        let mut head = format!("{:<12} {:<44} {:<44}", "row", "query pools", "key pools");
        for sd in &seeds {
            let _ = write!(head, " {:>9}", format!("gap s{sd}"));
        }
        let _ = write!(head, " {:>9} {:>9}", "mean gap", "probe");
        let _ = writeln!(s, "{head}");
        let _ = writeln!(s, "{}", "-".repeat(head.len()));
        for r in &self.rows {
            let mut line = format!("{:<12} {:<44} {:<44}", r.name, r.query_pools.join(","), r.key_pools.join(","));
            for x in &r.seeds {
                let _ = write!(line, " {:>9.4}", x.gap);
            }
            let _ = write!(line, " {:>9.4} {:>9.4}", r.mean_gap, r.mean_probe_accuracy);
            let _ = writeln!(s, "{line}");
        }
        s
    }
}

pub struct AblationInputs<'a> {
    pub cfg: &'a RunConfig,
    pub matrix: &'a AblationMatrix,
    pub corpus: &'a Path,
    pub proposals: &'a Path,
    pub budget: u64,
    pub out: &'a Path,
    pub deterministic: bool,
    pub log_every: u64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn run_ablation(inp: &AblationInputs) -> Result<AblationReport> {
    if inp.budget == 0 {
        return Err(CliError::validation("ablation budget must be at least one step"));
    }
    let corpus = Corpus::open(inp.corpus)?;
    let (_, records) = read_proposals(inp.proposals)?;
    let view_cfg = inp.cfg.view_config()?;
    fs::create_dir_all(inp.out).at(inp.out)?;
    let mut rows = Vec::new();
    for row in &inp.matrix.rows {
        let query_pools = corpus.pools(&parse_pools(&row.query_pools)?)?;
        let key_pools = corpus.pools(&parse_pools(&row.key_pools)?)?;
        let mut seeds = Vec::new();
        for &seed in &inp.matrix.seeds {
            let mut cfg = inp.cfg.clone();
            cfg.run.seed = seed;
            let generator = ViewGenerator::split(
                &corpus,
                &records,
                query_pools.clone(),
                key_pools.clone(),
                cfg.train.n_keys,
                view_cfg.clone(),
                seed,
            )?;
            let source = GeneratedSource { generator, batch_size: cfg.train.batch_size };
            let out = inp.out.join(&row.name).join(format!("seed-{seed}"));
            if inp.log_every > 0 {
                eprintln!("ablation row `{}` seed {seed}", row.name);
            }
            let run = pretrain(
                &cfg,
                &source,
                &PretrainOptions {
                    out: out.clone(),
                    deterministic: inp.deterministic,
                    max_steps: Some(inp.budget),
                    log_every: inp.log_every,
                    ..Default::default()
                },
            )?;
            let model = EvalModel::from_checkpoint(&run.final_checkpoint.expect("a full run writes a final checkpoint"))?;
            let inv = run_invariance(&model, &corpus)?;
            let probe = run_probe(&model, &corpus, &cfg.probe_config())?;
            let last = crate::pretrain::read_metrics(&run.metrics_path)?;
            let result = SeedResult {
                seed,
                gap: inv.gap(),
                probe_accuracy: probe.test_accuracy,
                final_loss: last.last().map_or(f64::NAN, |m| m.loss),
                wall_seconds: run.wall_seconds,
            };
            write_json(&out.join("eval.json"), &result)?;
            seeds.push(result);
        }
        rows.push(RowResult {
            name: row.name.clone(),
            query_pools: row.query_pools.clone(),
            key_pools: row.key_pools.clone(),
            mean_gap: mean(seeds.iter().map(|s| s.gap)),
            mean_probe_accuracy: mean(seeds.iter().map(|s| s.probe_accuracy)),
            seeds,
        });
    }
    let report = AblationReport { budget: inp.budget, batch_size: inp.cfg.train.batch_size, config_hash: inp.cfg.hash(), rows };
    write_json(&inp.out.join("report.json"), &report)?;
    fs::write(inp.out.join("report.txt"), report.to_text()).at(inp.out)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_parses_and_validates() {
        let text = r#"
seeds = [0, 1]
budget = 10
[[rows]]
name = "single"
query_pools = ["pretrain_like"]
key_pools = ["pretrain_like"]
"#;
        let m = AblationMatrix::parse(text).unwrap();
        assert_eq!((m.seeds.len(), m.budget, m.rows.len()), (2, Some(10), 1));
        let bad = text.replace("\"pretrain_like\"]\nkey", "\"nowhere\"]\nkey");
        let err = AblationMatrix::parse(&bad).unwrap_err();
        assert!(err.to_string().contains("nowhere"), "{err}");
        assert!(AblationMatrix::parse("seeds = []\nrows = []").is_err());
    }

    #[test]
    fn standard_matrix_has_three_rows() {
        let m = AblationMatrix::standard(vec![0, 1, 2]);
        assert_eq!(m.rows.iter().map(|r| r.name.as_str()).collect::<Vec<_>>(), ["single", "mixed", "mismatched"]);
        let mismatched = &m.rows[2];
        assert!(mismatched.query_pools.iter().all(|q| !mismatched.key_pools.contains(q)));
    }

    #[test]
    fn wins_counts_seed_pairs() {
        let seed = |s, gap| SeedResult { seed: s, gap, probe_accuracy: 0.0, final_loss: 0.0, wall_seconds: 0.0 };
        let row = |name: &str, gaps: [f64; 3]| RowResult {
            name: name.into(),
            query_pools: vec![],
            key_pools: vec![],
            seeds: gaps.iter().enumerate().map(|(i, &g)| seed(i as u64, g)).collect(),
            mean_gap: 0.0,
            mean_probe_accuracy: 0.0,
        };
        let r = AblationReport {
            budget: 1,
            batch_size: 1,
            config_hash: "0".repeat(64),
            rows: vec![row("a", [0.3, 0.1, 0.2]), row("b", [0.2, 0.2, 0.2])],
        };
        assert_eq!(r.wins("a", "b"), Some((2, 3)));
        assert_eq!(r.wins("a", "zzz"), None);
        assert!(r.to_text().contains("gap s2"));
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use codo::ablate::{run_ablation, AblationInputs, AblationMatrix, AblationReport};
use codo::config::{deterministic_requested, parse_pools, RunConfig};
use codo::corpus::{
    generate_corpus, read_json, read_proposals, select_proposals, write_json, write_proposals, Corpus, ProposalHeader,
};
use codo::error::{CliError, Result};
use codo::evaluate::{run_invariance, run_probe, EvalModel, ProbeReport};
use codo::plot::{write_plots, PlotInputs};
use codo::pretrain::{pretrain, read_metrics, PretrainOptions, ShardSource};
use codo::shards::read_shard_dir;
use codo::views::{write_views, ViewGenerator};

#[derive(Parser)]
#[command(name = "codo", version, about = "Object-level contrastive pretraining on copy-paste-jitter views")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.base_lr=0.05`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Overrides run.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true, visible_alias = "output")]
    out: Option<PathBuf>,
    /// Single-threaded, reproducible execution without wall-clock fields.
    #[arg(long, global = true)]
    deterministic: bool,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut overrides = self.set.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("run.seed={seed}"));
        }
        RunConfig::load(self.config.as_deref(), &overrides)
    }

    fn out(&self, default: impl Fn(&RunConfig) -> PathBuf, cfg: &RunConfig) -> PathBuf {
        self.out.clone().unwrap_or_else(|| default(cfg))
    }
}

#[derive(Args)]
struct ModelArgs {
    /// Checkpoint whose query encoder is evaluated.
    #[arg(long = "ckpt", visible_alias = "checkpoint", conflicts_with = "random_init", required_unless_present = "random_init")]
    checkpoint: Option<PathBuf>,
    /// Evaluate freshly initialised weights instead.
    #[arg(long)]
    random_init: bool,
    #[arg(long)]
    corpus: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic corpus, annotations and background pools.
    GenerateCorpus {
        #[command(flatten)]
        common: Common,
    },
    /// Pick one unsupervised proposal per training image.
    GenerateProposals {
        #[arg(long = "input-dir", visible_alias = "corpus")]
        corpus: PathBuf,
        /// energy_sampler or graph_segmentation; defaults to the config.
        #[arg(long)]
        strategy: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Build query/key view sets into binary shards.
    MakeViews {
        #[arg(long)]
        proposals: PathBuf,
        /// Defaults to the corpus recorded in the proposals header.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Comma-separated pool roles; defaults to the config.
        #[arg(long, value_delimiter = ',')]
        pools: Option<Vec<String>>,
        #[arg(long)]
        n_keys: Option<usize>,
        #[arg(long)]
        count: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the encoder pair on view shards.
    Pretrain {
        #[arg(long = "shards", visible_alias = "views")]
        views: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Cap on steps; also sets the schedule length.
        #[arg(long)]
        max_steps: Option<u64>,
        #[arg(long, default_value_t = 100)]
        log_every: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Linear probe: fit on the train split, report test accuracy.
    Probe {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Same-object versus different-object cosine on the test split.
    EvalInvariance {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Background-pool ablation under an equal step budget.
    Ablate {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        proposals: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        log_every: u64,
        #[command(flatten)]
        common: Common,
    },
    /// SVG figures from metrics, ablation and probe outputs.
    Plot {
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        ablation: Option<PathBuf>,
        #[arg(long)]
        probe: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn out_dir(cfg: &RunConfig, leaf: &str) -> PathBuf {
    Path::new(&cfg.run.out_dir).join(leaf)
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serialisable"));
}

fn model(args: &ModelArgs, cfg: &RunConfig) -> Result<EvalModel> {
    match &args.checkpoint {
        Some(p) => EvalModel::from_checkpoint(p),
        None => EvalModel::random(cfg, cfg.run.seed),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateCorpus { common } => {
            let cfg = common.config()?;
            let out = common.out(|c| out_dir(c, "corpus"), &cfg);
            let m = generate_corpus(&cfg.corpus_config(), &cfg.hash(), &out)?;
            eprintln!("wrote {} images ({} train, {} test) to {}", m.n_images, m.n_train, m.n_test, out.display());
        }
        Command::GenerateProposals { corpus, strategy, common } => {
            let mut cfg = common.config()?;
            if let Some(s) = strategy {
                cfg.proposals.strategy = s;
                cfg.validate()?;
            }
            let out = common.out(|c| out_dir(c, "proposals.jsonl"), &cfg);
            let c = Corpus::open(&corpus)?;
            let (records, skipped) = select_proposals(&c, &cfg.proposal_config()?, cfg.run.seed)?;
            let header = ProposalHeader {
                corpus: corpus.canonicalize().unwrap_or(corpus).display().to_string(),
                strategy: cfg.proposals.strategy.clone(),
                seed: cfg.run.seed,
                config_hash: cfg.hash(),
                n_images: records.len(),
                n_skipped: skipped,
            };
            write_proposals(&out, &header, &records)?;
            eprintln!("selected {} proposals, skipped {skipped} images", records.len());
        }
        Command::MakeViews { proposals, corpus, pools, n_keys, count, common } => {
            let mut cfg = common.config()?;
            if let Some(p) = pools {
                cfg.views.pools = p;
            }
            if let Some(k) = n_keys {
                cfg.train.n_keys = k;
            }
            if let Some(n) = count {
                cfg.views.count = n;
            }
            cfg.validate()?;
            let (header, records) = read_proposals(&proposals)?;
            let corpus_dir = corpus.unwrap_or_else(|| PathBuf::from(&header.corpus));
            let c = Corpus::open(&corpus_dir)?;
            let pools = c.pools(&parse_pools(&cfg.views.pools)?)?;
            let gen = ViewGenerator::new(&c, &records, pools, cfg.train.n_keys, cfg.view_config()?, cfg.run.seed)?;
            let out = common.out(|c| out_dir(c, "views"), &cfg);
            let (m, s) = write_views(&gen, cfg.views.count, &cfg.hash(), &out)?;
            eprintln!("wrote {} view sets in {} shards ({} skipped)", m.count, m.shards.len(), s.skipped);
        }
        Command::Pretrain { views, resume, max_steps, log_every, common } => {
            let cfg = common.config()?;
            let deterministic = deterministic_requested(common.deterministic, &cfg);
            let (manifest, sets) = read_shard_dir(&views)?;
            if manifest.n_keys != cfg.train.n_keys {
                return Err(CliError::validation(format!(
                    "shards hold {} keys per view set but train.n_keys is {}",
                    manifest.n_keys, cfg.train.n_keys
                )));
            }
            let source = ShardSource::new(sets, cfg.train.batch_size, cfg.run.seed);
            let out = common.out(|c| out_dir(c, &c.run.name), &cfg);
            let done = pretrain(&cfg, &source, &PretrainOptions { out, resume, deterministic, max_steps, stop_after: None, log_every })?;
            eprintln!(
                "finished {} steps in {:.1}s; final checkpoint {}",
                done.state.step,
                done.wall_seconds,
                done.final_checkpoint.map(|p| p.display().to_string()).unwrap_or_default()
            );
        }
        Command::Probe { model: args, common } => {
            let cfg = common.config()?;
            let c = Corpus::open(&args.corpus)?;
            let report = run_probe(&model(&args, &cfg)?, &c, &cfg.probe_config())?;
            if let Some(out) = &common.out {
                write_json(out, &report)?;
            }
            print_json(&report);
        }
        Command::EvalInvariance { model: args, common } => {
            let cfg = common.config()?;
            let c = Corpus::open(&args.corpus)?;
            let report = run_invariance(&model(&args, &cfg)?, &c)?;
            if let Some(out) = &common.out {
                write_json(out, &report)?;
            }
            print_json(&report);
        }
        Command::Ablate { matrix, budget, corpus, proposals, log_every, common } => {
            let cfg = common.config()?;
            let m = AblationMatrix::load(&matrix)?;
            let base = matrix.parent().unwrap_or(Path::new("."));
            let resolve = |cli: Option<PathBuf>, file: &Option<PathBuf>, what: &str| -> Result<PathBuf> {
                cli.or_else(|| file.as_ref().map(|p| base.join(p)))
                    .ok_or_else(|| CliError::validation(format!("no {what} given on the command line or in the matrix")))
            };
            let corpus = resolve(corpus, &m.corpus, "corpus")?;
            let proposals = resolve(proposals, &m.proposals, "proposals")?;
            let budget = budget.or(m.budget).ok_or_else(|| CliError::validation("no --budget and none in the matrix"))?;
            let out = common.out(|c| out_dir(c, "ablation"), &cfg);
            let report = run_ablation(&AblationInputs {
                cfg: &cfg,
                matrix: &m,
                corpus: &corpus,
                proposals: &proposals,
                budget,
                out: &out,
                deterministic: deterministic_requested(common.deterministic, &cfg),
                log_every,
            })?;
            print!("{}", report.to_text());
        }
        Command::Plot { metrics, ablation, probe, common } => {
            let cfg = common.config()?;
            let inputs = PlotInputs {
                metrics: metrics.map(|p| read_metrics(&p)).transpose()?.unwrap_or_default(),
                ablation: ablation.map(|p| read_json::<AblationReport>(&p)).transpose()?,
                probes: probe.iter().map(|p| read_json::<ProbeReport>(p)).collect::<Result<_>>()?,
            };
            let out = common.out(|c| out_dir(c, "plots"), &cfg);
            for p in write_plots(&inputs, &out)? {
                eprintln!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

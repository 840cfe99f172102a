//! Drives the `codo` binary through the whole pipeline on a tiny corpus.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use codo::ablate::AblationReport;
use codo::corpus::read_json;

const SMALL: &str = r#"
[corpus]
n_images = 120
backgrounds_per_pool = 8

[views]
count = 48

[encoder]
stem_channels = 4
stage_channels = [8, 8, 8, 8]
fpn_channels = 8
norm_groups = 2
roi_size = 3
head_convs = 1
head_hidden = 16
embed_dim = 16

[train]
batch_size = 4
epochs = 1
snapshot_every = 4
queue_capacity = 32

[eval]
probe_iterations = 50
"#;

fn codo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_codo")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = codo(args);
    assert!(out.status.success(), "codo {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("run.toml");
        fs::write(&config, SMALL).unwrap();
        let f = Self { _dir: dir, root, config };
        ok(&["generate-corpus", "--config", s(&f.config), "--out", s(&f.p("corpus"))]);
        ok(&["generate-proposals", "--input-dir", s(&f.p("corpus")), "--config", s(&f.config), "--output", s(&f.p("props.jsonl"))]);
        ok(&["make-views", "--proposals", s(&f.p("props.jsonl")), "--config", s(&f.config), "--out", s(&f.p("views"))]);
        f
    }

    fn p(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn pretrain(&self, out: &str, extra: &[&str]) -> Output {
        let (views, out) = (self.p("views"), self.p(out));
        let mut args = vec!["pretrain", "--config", s(&self.config), "--shards", s(&views), "--out", s(&out), "--deterministic"];
        args.extend(extra);
        codo(&args)
    }
}

#[test]
fn pipeline_resume_and_evaluation() {
    let f = Fixture::new();
    let full = f.pretrain("full", &[]);
    assert!(full.status.success(), "{}", String::from_utf8_lossy(&full.stderr));
    let metrics = fs::read_to_string(f.p("full/metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 12);
    assert!(!metrics.contains("elapsed"), "deterministic runs omit wall time");
    assert!(f.p("full/checkpoints/step-000004.ckpt").exists());
    assert!(f.p("full/final.ckpt").exists());

    // interrupted after step 4 and resumed: identical metrics stream
    fs::create_dir_all(f.p("resumed")).unwrap();
    fs::copy(f.p("full/metrics.jsonl"), f.p("resumed/metrics.jsonl")).unwrap();
    let snap = f.p("full/checkpoints/step-000004.ckpt");
    assert!(f.pretrain("resumed", &["--resume", s(&snap)]).status.success());
    assert_eq!(fs::read(f.p("resumed/metrics.jsonl")).unwrap(), metrics.as_bytes());
    assert_eq!(fs::read(f.p("resumed/final.ckpt")).unwrap(), fs::read(f.p("full/final.ckpt")).unwrap());

    // a different config refuses to resume
    let changed = f.pretrain("changed", &["--resume", s(&snap), "--set", "train.base_lr=0.5"]);
    assert_eq!(changed.status.code(), Some(2));

    let ckpt = f.p("full/final.ckpt");
    let probe = ok(&["probe", "--ckpt", s(&ckpt), "--corpus", s(&f.p("corpus")), "--config", s(&f.config), "--out", s(&f.p("probe.json"))]);
    assert!(String::from_utf8_lossy(&probe.stdout).contains("test_accuracy"));
    let inv = ok(&["eval-invariance", "--ckpt", s(&ckpt), "--corpus", s(&f.p("corpus")), "--out", s(&f.p("inv.json"))]);
    assert!(String::from_utf8_lossy(&inv.stdout).contains("same_fg_diff_bg_cosine"));
    ok(&["eval-invariance", "--random-init", "--corpus", s(&f.p("corpus")), "--config", s(&f.config)]);

    ok(&["plot", "--metrics", s(&f.p("full/metrics.jsonl")), "--probe", s(&f.p("probe.json")), "--out", s(&f.p("plots"))]);
    assert!(f.p("plots/loss_curve.svg").exists() && f.p("plots/probe_table.md").exists());

    // corruption is a data-format error
    let mut bytes = fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    let bad = f.p("bad.ckpt");
    fs::write(&bad, bytes).unwrap();
    assert_eq!(codo(&["probe", "--ckpt", s(&bad), "--corpus", s(&f.p("corpus"))]).status.code(), Some(4));
}

#[test]
fn shard_version_mismatch_refuses_to_start() {
    let f = Fixture::new();
    let shard = f.p("views/views-0000.bin");
    let mut bytes = fs::read(&shard).unwrap();
    bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
    fs::write(&shard, bytes).unwrap();
    let out = f.pretrain("run", &[]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version"));
}

#[test]
fn ablation_is_reproducible() {
    let f = Fixture::new();
    let matrix = f.p("matrix.toml");
    fs::write(
        &matrix,
        r#"
seeds = [0, 1]
budget = 3
corpus = "corpus"
proposals = "props.jsonl"

[[rows]]
name = "single"
query_pools = ["pretrain_like"]
key_pools = ["pretrain_like"]

[[rows]]
name = "mismatched"
query_pools = ["pretrain_like"]
key_pools = ["downstream_like_A", "downstream_like_B"]
"#,
    )
    .unwrap();
    let run = |out: &str| -> AblationReport {
        let stdout = ok(&["ablate", "--matrix", s(&matrix), "--config", s(&f.config), "--out", s(&f.p(out)), "--deterministic"]).stdout;
        assert!(String::from_utf8_lossy(&stdout).contains("mismatched"));
        read_json(&f.p(out).join("report.json")).unwrap()
    };
    let (a, b) = (run("abl-a"), run("abl-b"));
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        for (x, y) in ra.seeds.iter().zip(&rb.seeds) {
            assert_eq!((x.gap, x.probe_accuracy, x.final_loss), (y.gap, y.probe_accuracy, y.final_loss));
        }
    }
    assert_eq!(codo(&["ablate", "--matrix", s(&f.p("missing.toml"))]).status.code(), Some(3));
}

#[test]
fn invalid_config_lists_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "mystery = 1\n[loss]\ntemperature = -1.0\n[train]\nn_keys = 2\n").unwrap();
    let out = codo(&["generate-corpus", "--config", s(&cfg), "--out", s(&dir.path().join("c"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for needle in ["mystery", "temperature", "n_keys"] {
        assert!(err.contains(needle), "missing {needle} in {err}");
    }
    assert!(!dir.path().join("c").exists(), "nothing runs before validation");
    let out = codo(&["generate-corpus", "--set", "views.jitter.iou_min=1.5", "--out", s(&dir.path().join("c"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn plot_with_no_input_warns() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["plot", "--out", s(&dir.path().join("plots"))]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nothing to plot"));
    assert!(!dir.path().join("plots").exists());
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

/// Small enough to train in well under a second; on this seed the average
/// ensemble beats member 1 on validation, so utility is defined.
const TINY: &str = "\
# tiny desk run
seed = 2
stages = 3
epochs = 4
hidden = 8
data.train = 600
data.val = 300
data.test = 300
eval.split = val
";

fn cascade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cascade"))
        .args(args)
        .env_remove("CASCADE_SEED")
        .env_remove("CASCADE_STAGES")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cascade(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

/// One training run shared by the read-only tests.
fn trained() -> &'static (TempDir, PathBuf, PathBuf) {
    static RUN: OnceLock<(TempDir, PathBuf, PathBuf)> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let cfg = write_config(dir.path(), "tiny.cfg", TINY);
        let out = dir.path().join("train");
        ok(&["train", "--config", s(&cfg), "--out", s(&out)]);
        (dir, cfg, out)
    })
}

/// Rows of a TSV table without its header.
fn rows(tsv: &str) -> Vec<Vec<String>> {
    tsv.lines()
        .skip(1)
        .map(|l| l.split('\t').map(String::from).collect())
        .collect()
}

fn row<'a>(table: &'a [Vec<String>], method: &str) -> &'a [String] {
    table
        .iter()
        .find(|r| r[0] == method)
        .unwrap_or_else(|| panic!("no {method} row"))
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "tiny.cfg", TINY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["train", "--config", s(&cfg), "--seed", "7", "--out", s(&a)]);
    ok(&["train", "--config", s(&cfg), "--seed", "7", "--out", s(&b)]);
    for file in [
        "checkpoint/payload.bin",
        "checkpoint/manifest.txt",
        "curve.tsv",
        "manifest.txt",
    ] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
    let manifest = std::fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert!(manifest.contains("override.seed = 7"));
    assert!(manifest.contains("output.checkpoint/payload.bin = sha256:"));
}

#[test]
fn env_var_mirrors_the_seed_flag() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "tiny.cfg", TINY);
    let (flag, env) = (dir.path().join("flag"), dir.path().join("env"));
    ok(&["train", "--config", s(&cfg), "--seed", "11", "--out", s(&flag)]);
    let out = Command::new(env!("CARGO_BIN_EXE_cascade"))
        .args(["train", "--config", s(&cfg), "--out", s(&env)])
        .env("CASCADE_SEED", "11")
        .output()
        .unwrap();
    assert!(out.status.success());
    let payload = |d: &Path| std::fs::read(d.join("checkpoint/payload.bin")).unwrap();
    assert_eq!(payload(&flag), payload(&env));
}

#[test]
fn config_is_echoed_verbatim() {
    let (_, _, out) = trained();
    assert_eq!(std::fs::read_to_string(out.join("config.cfg")).unwrap(), TINY);
}

#[test]
fn missing_dataset_is_one_clear_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "csv.cfg", "data = csv\ndata.path = /nonexistent/train.csv\n");
    let out = cascade(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    assert!(stderr.contains("dataset file not found: /nonexistent/train.csv"), "{stderr}");
}

#[test]
fn config_errors_are_listed_together() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "bad.cfg", "epochs = many\nweights.cost = -1\nbogus = 1\n");
    let out = cascade(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    for needle in ["epochs", "cost", "bogus"] {
        assert!(stderr.contains(needle), "missing `{needle}` in: {stderr}");
    }
}

#[test]
fn one_stage_trains_a_single_model() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "tiny.cfg", TINY);
    let out = dir.path().join("t1");
    let stdout = ok(&["train", "--config", s(&cfg), "--stages", "1", "--out", s(&out)]);
    assert!(out.join("stages/stage-1").is_dir());
    assert!(!out.join("stages/stage-2").exists());
    assert_eq!(row(&rows(&stdout), "learned")[2], "1.00");
    let ck = std::fs::read_to_string(out.join("checkpoint/manifest.txt")).unwrap();
    assert!(ck.contains("stage = 1"), "{ck}");
}

#[test]
fn eval_reproduces_the_trainers_validation_numbers() {
    let (dir, cfg, train) = trained();
    let out = dir.path().join("eval-learned");
    let stdout = ok(&[
        "eval",
        "--config",
        s(cfg),
        "--checkpoint",
        s(&train.join("checkpoint")),
        "--method",
        "learned",
        "--out",
        s(&out),
    ]);
    let trainer = std::fs::read_to_string(train.join("train_eval.tsv")).unwrap();
    let (a, b) = (rows(&trainer), rows(&stdout));
    // same top-1, cost and sample count; utility is only known to eval
    for col in [1, 2, 5] {
        assert_eq!(row(&a, "learned")[col], row(&b, "learned")[col]);
    }
    assert!(out.join("traces-learned.jsonl").is_file());
}

#[test]
fn zero_threshold_woc_runs_one_model() {
    let (dir, cfg, train) = trained();
    let out = dir.path().join("eval-woc");
    let stdout = ok(&[
        "eval",
        "--config",
        s(cfg),
        "--checkpoint",
        s(&train.join("checkpoint")),
        "--method",
        "woc",
        "--threshold",
        "0.0",
        "--out",
        s(&out),
    ]);
    assert_eq!(row(&rows(&stdout), "woc")[2], "1.00");
}

#[test]
fn single_model_utility_is_one() {
    let (dir, cfg, train) = trained();
    let out = dir.path().join("eval-all");
    let stdout = ok(&[
        "eval",
        "--config",
        s(cfg),
        "--checkpoint",
        s(&train.join("checkpoint")),
        "--out",
        s(&out),
    ]);
    let table = rows(&stdout);
    assert_eq!(row(&table, "single")[4], "1.0000");
    for method in ["learned", "average", "woc"] {
        row(&table, method);
    }
    assert!(out.join("woc_grid.tsv").is_file());
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("input.checkpoint.payload.bin = "));
}

#[test]
fn cost_grid_gives_one_frontier_row_per_point() {
    let (dir, cfg, _) = trained();
    let out = dir.path().join("sweep-cost");
    let stdout = ok(&["sweep", "--config", s(cfg), "--grid", "cost=1e-4,1e-2,1", "--out", s(&out)]);
    let table = rows(&stdout);
    assert_eq!(table.len(), 3);
    assert!(table.iter().any(|r| r[5] == "0"), "some point is on the frontier");
    assert!(std::fs::read_to_string(out.join("frontier.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn stage_sweep_reports_one_utility_per_length_and_reruns_identically() {
    let (dir, cfg, _) = trained();
    let (a, b) = (dir.path().join("sweep-t-a"), dir.path().join("sweep-t-b"));
    let first = ok(&["sweep", "--config", s(cfg), "--grid", "stages=1,2,3", "--out", s(&a)]);
    let second = ok(&["sweep", "--config", s(cfg), "--grid", "stages=1,2,3", "--out", s(&b)]);
    assert_eq!(first, second);
    let table = rows(&first);
    for t in ["1", "2", "3"] {
        let learned: Vec<_> = table.iter().filter(|r| r[0] == t && r[1] == "learned").collect();
        assert_eq!(learned.len(), 1, "T = {t}");
        assert!(learned[0][5].parse::<f64>().is_ok(), "utility for T = {t}: {}", learned[0][5]);
    }
    assert!(a.join("utility_vs_t.svg").is_file());
}

#[test]
fn threshold_grid_covers_all_points() {
    let (dir, cfg, _) = trained();
    let out = dir.path().join("sweep-threshold");
    let stdout = ok(&["sweep", "--config", s(cfg), "--grid", "threshold", "--out", s(&out)]);
    assert_eq!(rows(&stdout).len(), 101);
}

#[test]
fn baseline_trains_a_pool_and_reports_methods() {
    let (dir, cfg, _) = trained();
    let out = dir.path().join("baseline");
    let stdout = ok(&["baseline", "--config", s(cfg), "--out", s(&out)]);
    let table = rows(&stdout);
    assert_eq!(row(&table, "single")[4], "1.0000");
    assert_eq!(row(&table, "average")[2], "3.00");
    assert!(out.join("pool/payload.bin").is_file());
    let bad = cascade(&["baseline", "--config", s(cfg), "--method", "learned", "--out", s(&out)]);
    assert!(!bad.status.success());
}

#[test]
fn report_renders_plots_and_summary() {
    let (dir, cfg, train) = trained();
    let out = dir.path().join("report");
    ok(&[
        "eval",
        "--config",
        s(cfg),
        "--checkpoint",
        s(&train.join("checkpoint")),
        "--out",
        s(&out),
    ]);
    std::fs::copy(train.join("curve.tsv"), out.join("curve.tsv")).unwrap();
    ok(&["report", "--out", s(&out)]);
    let md = std::fs::read_to_string(out.join("report.md")).unwrap();
    assert!(md.contains("## eval.tsv") && md.contains("curve.svg"));
    assert!(out.join("curve.svg").is_file());

    let empty = TempDir::new().unwrap();
    assert!(!cascade(&["report", "--out", s(empty.path())]).status.success());
}

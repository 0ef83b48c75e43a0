use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ecgprune::io::load_model;
use ecgprune::pruning::pruned_count;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ecgprune"));
    c.env_remove("ECGPRUNE_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Small data set plus a model trained for two epochs.
    fn trained(&self) -> (PathBuf, PathBuf) {
        let (data, model) = (self.path("beats.csv"), self.path("model.bin"));
        ok(&["gen-data", "--counts", "16,16,16,16,16", "--seed", "3", "--out", p(&data)]);
        ok(&["train", "--data", p(&data), "--epochs", "2", "--batch-size", "16", "--seed", "3", "--out", p(&model)]);
        (data, model)
    }
}

#[test]
fn gen_data_is_deterministic() {
    let f = Fixture::new();
    let (a, b) = (f.path("a.csv"), f.path("b.csv"));
    ok(&["gen-data", "--counts", "3,2,2,1,0", "--seed", "7", "--out", p(&a)]);
    ok(&["gen-data", "--counts", "3,2,2,1,0", "--seed", "7", "--out", p(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read_to_string(&a).unwrap().lines().filter(|l| !l.starts_with('#')).count(), 8);
    // The seed can also come from the environment.
    let c = f.path("c.csv");
    let out =
        bin().env("ECGPRUNE_SEED", "7").args(["gen-data", "--counts", "3,2,2,1,0", "--out", p(&c)]).output().unwrap();
    assert!(out.status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn zero_noise_rows_repeat_per_class() {
    let f = Fixture::new();
    let a = f.path("a.csv");
    ok(&["gen-data", "--counts", "3,3,0,0,0", "--sigma", "0", "--out", p(&a)]);
    let text = fs::read_to_string(&a).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows[..3].iter().all(|r| *r == rows[0]));
    assert!(rows[3..].iter().all(|r| *r == rows[3]));
    assert_ne!(rows[0], rows[3]);
}

#[test]
fn exit_codes_separate_usage_and_data_errors() {
    let f = Fixture::new();
    let (data, model) = f.trained();
    let bad_eta = run(&[
        "prune",
        "--model",
        p(&model),
        "--data",
        p(&data),
        "--strategy",
        "simple",
        "--sparsity",
        "1.5",
        "--out",
        p(&f.path("x.bin")),
    ]);
    assert_eq!(bad_eta.status.code(), Some(2));
    let bad_strategy = run(&[
        "prune",
        "--model",
        p(&model),
        "--data",
        p(&data),
        "--strategy",
        "random",
        "--sparsity",
        "0.5",
        "--out",
        p(&f.path("x.bin")),
    ]);
    assert_eq!(bad_strategy.status.code(), Some(2));
    let missing = run(&["eval", "--model", p(&f.path("nope.bin")), "--data", p(&data)]);
    assert_eq!(missing.status.code(), Some(3));

    let broken = f.path("broken.csv");
    let mut text = fs::read_to_string(&data).unwrap();
    text.push_str("N,1,2,nan\n");
    fs::write(&broken, &text).unwrap();
    let out = run(&["eval", "--model", p(&model), "--data", p(&broken)]);
    assert_eq!(out.status.code(), Some(3));
    let line = text.lines().count();
    assert!(
        String::from_utf8_lossy(&out.stderr).contains(&format!("line {line}")),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let corrupt = f.path("corrupt.bin");
    let mut bytes = fs::read(&model).unwrap();
    bytes.truncate(bytes.len() / 2);
    fs::write(&corrupt, bytes).unwrap();
    assert_eq!(run(&["eval", "--model", p(&corrupt), "--data", p(&data)]).status.code(), Some(3));
}

#[test]
fn train_then_eval_and_prune_agree() {
    let f = Fixture::new();
    let (data, model) = f.trained();
    let log: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.path("model.log.json")).unwrap()).unwrap();
    assert_eq!(log["log"]["epochs"].as_array().unwrap().len(), 2);
    assert_eq!(log["config_hash"].as_str().unwrap().len(), 16);

    // Same model and data twice give the same table.
    let eval = ok(&["eval", "--model", p(&model), "--data", p(&data), "--seed", "3"]);
    assert_eq!(eval, ok(&["eval", "--model", p(&model), "--data", p(&data), "--seed", "3"]));
    // Everything after the title line up to the FLOPs summary.
    let body =
        |s: &str| s.lines().skip(1).take_while(|l| !l.starts_with("FLOPs")).map(str::to_owned).collect::<Vec<_>>();

    let zero = ok(&[
        "prune",
        "--model",
        p(&model),
        "--data",
        p(&data),
        "--seed",
        "3",
        "--strategy",
        "simple",
        "--sparsity",
        "0",
        "--out",
        p(&f.path("p0.bin")),
    ]);
    assert_eq!(body(&zero), body(&eval));

    let pruned = f.path("p6.bin");
    let out = ok(&[
        "prune",
        "--model",
        p(&model),
        "--data",
        p(&data),
        "--seed",
        "3",
        "--strategy",
        "multistage",
        "--sparsity",
        "0.6",
        "--finetune-epochs",
        "1",
        "--batch-size",
        "16",
        "--out",
        p(&pruned),
    ]);
    assert!(out.contains("FLOPs 386112"), "{out}");
    let m = load_model(&pruned).unwrap();
    for i in [0, 3, 6] {
        let w = &m.layer(i).unwrap().weight;
        assert_eq!(w.data().iter().filter(|&&v| v == 0.0).count(), pruned_count(0.6, w.len()));
    }
}

#[test]
fn training_repeats_byte_for_byte() {
    let f = Fixture::new();
    let (data, model) = f.trained();
    let again = f.path("again.bin");
    ok(&["train", "--data", p(&data), "--epochs", "2", "--batch-size", "16", "--seed", "3", "--out", p(&again)]);
    assert_eq!(fs::read(&model).unwrap(), fs::read(&again).unwrap());
    assert_eq!(fs::read(f.path("model.log.json")).unwrap(), fs::read(f.path("again.log.json")).unwrap());
}

#[test]
fn no_smote_keeps_the_training_histogram() {
    let f = Fixture::new();
    let data = f.path("beats.csv");
    ok(&["gen-data", "--counts", "20,10,10,10,10", "--out", p(&data)]);
    let model = f.path("m.bin");
    ok(&["train", "--data", p(&data), "--epochs", "1", "--batch-size", "8", "--no-smote", "--out", p(&model)]);
    let log: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.path("m.log.json")).unwrap()).unwrap();
    assert_eq!(log["data"]["train"], log["data"]["train_before_smote"]);
    ok(&["train", "--data", p(&data), "--epochs", "1", "--batch-size", "8", "--out", p(&model)]);
    let log: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.path("m.log.json")).unwrap()).unwrap();
    assert_eq!(log["data"]["train"], serde_json::json!([14, 14, 14, 14, 14]));
}

#[test]
fn sweep_writes_reports_and_series() {
    let f = Fixture::new();
    let (data, model) = f.trained();
    let report = f.path("sweep.csv");
    let series = f.path("series");
    let args = [
        "sweep",
        "--model",
        p(&model),
        "--data",
        p(&data),
        "--seed",
        "3",
        "--strategies",
        "simple,multistage",
        "--sparsities",
        "0.2,0.5",
        "--finetune-epochs",
        "1",
        "--batch-size",
        "16",
        "--out",
        p(&report),
        "--series-dir",
        p(&series),
    ];
    ok(&args);
    let csv = fs::read_to_string(&report).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("strategy,eta,accuracy,sensitivity,precision,f1,loss,flops,error\nsimple,0.2,"));
    let json = fs::read_to_string(f.path("sweep.json")).unwrap();
    let parsed = ecgprune::report::SweepReport::from_json(&json).unwrap();
    assert_eq!(parsed.to_csv(), csv);
    let acc = fs::read_to_string(series.join("accuracy.csv")).unwrap();
    assert!(acc.starts_with("eta,simple,multistage\n0.2,"));
    assert_eq!(fs::read_to_string(series.join("flops.csv")).unwrap().lines().nth(2).unwrap(), "0.5,477856,477856");

    let first = fs::read(&report).unwrap();
    ok(&args);
    assert_eq!(fs::read(&report).unwrap(), first);
}

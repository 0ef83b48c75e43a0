use std::fs;
use std::path::{Path, PathBuf};

use ecgprune::dataset::{generate_synthetic, load_beats, save_beats, smote_balance, stratified_split, BeatSet};
use ecgprune::flops::{exact_mac_flops, flops_total, FIXED_FLOPS, PRUNABLE_FLOPS};
use ecgprune::io::{load_model, save_model};
use ecgprune::metrics::{overall_metrics, ConfusionMatrix};
use ecgprune::pruning::{run_strategy, sweep as run_sweep, StrategyConfig, SweepData};
use ecgprune::report::{config_hash, Metric, ReportMeta, SweepReport, METRIC_NOTES};
use ecgprune::training::{evaluate, train as run_train, TrainConfig, TrainLog};
use ecgprune::{Error, Model, Tensor, UpdateRule};
use serde::Serialize;
use serde_json::json;

use crate::grid::parse_grid;
use crate::table::metrics_table;
use crate::{DataArgs, EvalArgs, GenDataArgs, OptimArgs, PruneArgs, SweepArgs, TrainArgs};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonFiniteLoss { .. } => EXIT_NUMERIC,
            Error::InvalidConfig(_) | Error::InvalidLayer(_) | Error::NoTrainableParameters => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Self { code, message: e.to_string() }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure { code: EXIT_DATA, message: format!("{}: {e}", path.display()) }
}

type CmdResult = Result<(), Failure>;

/// Seeds for the independent random streams, all derived from `--seed`.
#[derive(Debug, Clone, Copy, Serialize)]
struct Seeds {
    split: u64,
    smote: u64,
    init: u64,
    train: u64,
}

impl Seeds {
    fn from(seed: u64) -> Self {
        Self { split: seed, smote: seed ^ 0x5307_e5ee_d000_0001, init: seed, train: seed ^ 0x7ea1_4000_0000_0002 }
    }
}

struct Data {
    train: Vec<(Tensor, usize)>,
    val: Vec<(Tensor, usize)>,
    test: Vec<(Tensor, usize)>,
    summary: serde_json::Value,
}

fn fnv_file(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path).map_err(|e| io_failure(path, e))?;
    Ok(config_hash(&bytes))
}

fn load(path: &Path) -> Result<BeatSet, Failure> {
    load_beats(path).map_err(|e| match e {
        Error::Io(io) => io_failure(path, io),
        other => Failure { code: EXIT_DATA, message: format!("{}: {other}", path.display()) },
    })
}

/// Loads the beat file and re-derives the 70/15/15 split, balancing the
/// training partition when `balance` is set and SMOTE is not disabled.
fn prepare(args: &DataArgs, seeds: Seeds, balance: bool) -> Result<Data, Failure> {
    let set = load(&args.data)?;
    let split = stratified_split(&set, [0.7, 0.15, 0.15], seeds.split)?;
    for w in &split.warnings {
        eprintln!("warning: {w}");
    }
    let before = split.train.histogram();
    let smote = balance && !args.no_smote;
    let train = if !smote { split.train.clone() } else { smote_balance(&split.train, args.smote_k, seeds.smote)? };
    let summary = json!({
        "beats": set.len(),
        "histogram": set.histogram(),
        "train_before_smote": before,
        "train": train.histogram(),
        "val": split.val.histogram(),
        "test": split.test.histogram(),
        "smote": smote,
    });
    Ok(Data { train: train.examples(), val: split.val.examples(), test: split.test.examples(), summary })
}

fn train_config(optim: &OptimArgs, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: optim.batch_size,
        lr: optim.lr,
        patience: optim.patience,
        seed,
        rule: if optim.sgd { UpdateRule::Sgd } else { UpdateRule::default() },
    }
}

fn hash_of(value: &serde_json::Value) -> String {
    config_hash(value.to_string().as_bytes())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CmdResult {
    fs::write(path, contents).map_err(|e| io_failure(path, e))
}

fn save(model: &Model, path: &Path) -> CmdResult {
    save_model(model, path).map_err(|e| io_failure(path, e))
}

fn open_model(path: &Path) -> Result<Model, Failure> {
    load_model(path).map_err(|e| match e {
        Error::Io(io) => io_failure(path, io),
        other => Failure { code: EXIT_DATA, message: format!("{}: {other}", path.display()) },
    })
}

pub fn gen_data(seed: u64, a: GenDataArgs) -> CmdResult {
    let counts: [usize; 5] = a.counts.as_slice().try_into().map_err(|_| Failure::usage("--counts needs 5 values"))?;
    let set = generate_synthetic(counts, a.sigma, seed)?;
    save_beats(&set, &a.out).map_err(|e| io_failure(&a.out, e))?;
    println!("wrote {} beats to {}", set.len(), a.out.display());
    Ok(())
}

fn print_eval(title: &str, cm: &ConfusionMatrix, loss: f64) {
    println!("{title}");
    print!("{}", metrics_table(cm));
    println!("mean loss {loss:.4}");
}

pub fn train(seed: u64, a: TrainArgs) -> CmdResult {
    let seeds = Seeds::from(seed);
    let data = prepare(&a.data, seeds, true)?;
    let cfg = train_config(&a.optim, a.epochs, seeds.train);
    let config = json!({
        "command": "train",
        "seed": seed,
        "data_fnv": fnv_file(&a.data.data)?,
        "smote": !a.data.no_smote,
        "smote_k": a.data.smote_k,
        "train": cfg,
    });
    let (model, log) = run_train(&Model::build_baseline(seeds.init), &data.train, &data.val, &cfg)?;
    let mut model = model;
    model.push_history(format!("trained seed={seed} epochs={} best={:?}", log.epochs.len(), log.best_epoch));
    let ev = evaluate(&model, &data.test)?;
    save(&model, &a.out)?;
    let log_path = a.log.unwrap_or_else(|| sibling(&a.out, "log.json"));
    write(&log_path, train_log(&config, &data.summary, &log, &ev.confusion, ev.mean_loss))?;
    print_eval(&format!("test partition ({} beats)", data.test.len()), &ev.confusion, ev.mean_loss);
    println!("model written to {}", a.out.display());
    Ok(())
}

fn train_log(
    config: &serde_json::Value,
    data: &serde_json::Value,
    log: &TrainLog,
    cm: &ConfusionMatrix,
    loss: f64,
) -> String {
    let doc = json!({
        "config_hash": hash_of(config),
        "config": config,
        "data": data,
        "log": log,
        "test": { "confusion": cm.counts, "metrics": overall_metrics(cm), "mean_loss": loss },
    });
    serde_json::to_string_pretty(&doc).expect("log serializes") + "\n"
}

/// `dir/stem.<ext>` next to `path`.
fn sibling(path: &Path, ext: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}.{ext}"))
}

pub fn prune(seed: u64, a: PruneArgs) -> CmdResult {
    ecgprune::pruning::check_sparsity(a.sparsity).map_err(|e| Failure::usage(e.to_string()))?;
    let seeds = Seeds::from(seed);
    let baseline = open_model(&a.model)?;
    let data = prepare(&a.data, seeds, true)?;
    let cfg = StrategyConfig {
        strategy: a.strategy,
        sparsity: a.sparsity,
        finetune: train_config(&a.optim, a.finetune_epochs, seeds.train),
    };
    let pruned = run_strategy(&baseline, &cfg, &data.train, &data.val)?;
    let ev = evaluate(&pruned, &data.test)?;
    save(&pruned, &a.out)?;
    print_eval(&format!("{} pruning at sparsity {}", a.strategy, a.sparsity), &ev.confusion, ev.mean_loss);
    let flops = flops_total(a.sparsity)?;
    let dense = PRUNABLE_FLOPS + FIXED_FLOPS;
    println!("FLOPs {flops} ({:.2}% below {dense})", 100.0 * (dense - flops) as f64 / dense as f64);
    println!("exact MAC FLOPs {}", exact_mac_flops(&pruned)?.iter().sum::<u64>());
    Ok(())
}

pub fn sweep(seed: u64, a: SweepArgs) -> CmdResult {
    let etas = parse_grid(&a.sparsities).map_err(Failure::usage)?;
    let seeds = Seeds::from(seed);
    let baseline = open_model(&a.model)?;
    let data = prepare(&a.data, seeds, true)?;
    let finetune = train_config(&a.optim, a.finetune_epochs, seeds.train);
    let mut strategies = a.strategies.clone();
    strategies.sort();
    strategies.dedup();
    let config = json!({
        "command": "sweep",
        "seed": seed,
        "model_fnv": fnv_file(&a.model)?,
        "data_fnv": fnv_file(&a.data.data)?,
        "smote": !a.data.no_smote,
        "smote_k": a.data.smote_k,
        "strategies": strategies,
        "sparsities": etas,
        "finetune": finetune,
    });
    let split = SweepData { train: &data.train, val: &data.val, test: &data.test };
    let rows = run_sweep(&baseline, &strategies, &etas, split, &finetune, seeds.train);
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    let meta = ReportMeta {
        seed,
        config_hash: hash_of(&config),
        version: env!("CARGO_PKG_VERSION").to_string(),
        metric_notes: METRIC_NOTES.to_string(),
    };
    let report = SweepReport::new(meta, rows);
    write(&a.out, report.to_csv())?;
    write(&sibling(&a.out, "json"), report.to_json() + "\n")?;
    if let Some(dir) = &a.series_dir {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
        for m in Metric::ALL {
            write(&dir.join(format!("{}.csv", m.name())), report.series_csv(m))?;
        }
    }
    println!(
        "{:<11}{:>6}{:>10}{:>13}{:>11}{:>8}{:>9}{:>9}",
        "strategy", "eta", "accuracy", "sensitivity", "precision", "f1", "loss", "flops"
    );
    for r in &report.rows {
        println!(
            "{:<11}{:>6}{:>10.2}{:>13.2}{:>11.2}{:>8.2}{:>9.4}{:>9}",
            r.strategy.to_string(),
            r.eta,
            r.accuracy * 100.0,
            r.sensitivity * 100.0,
            r.precision * 100.0,
            r.f1 * 100.0,
            r.loss,
            r.flops
        );
    }
    if failed > 0 {
        eprintln!("warning: {failed} cell(s) failed; see the error column");
    }
    println!("report written to {}", a.out.display());
    Ok(())
}

pub fn eval(seed: u64, a: EvalArgs) -> CmdResult {
    let model = open_model(&a.model)?;
    let (title, examples) = if a.all {
        let set = load(&a.data.data)?;
        (format!("all beats ({})", set.len()), set.examples())
    } else {
        let data = prepare(&a.data, Seeds::from(seed), false)?;
        (format!("test partition ({} beats)", data.test.len()), data.test)
    };
    let ev = evaluate(&model, &examples)?;
    print_eval(&title, &ev.confusion, ev.mean_loss);
    Ok(())
}

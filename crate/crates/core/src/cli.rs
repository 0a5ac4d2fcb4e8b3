//! Command-line surface of the `wino3d` binary.
//!
//! Every subcommand is deterministic given `--seed`: model weights, dataset
//! contents, epoch shuffles, and benchmark problems all flow from that one
//! value through the counter-based RNG. Worker count comes from the
//! `WINO3D_THREADS` environment variable (default 1).
//!
//! Exit codes: 0 on success, 1 on usage or I/O problems, 2 when an internal
//! equivalence check refuses to proceed (see [`Error::Validation`]).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::bench::{bench_layer, bench_report, BenchCase, Strategy};
use crate::error::{Error, Result};
use crate::io::save_tensor;
use crate::lowrank::spectrum_report;
use crate::model_io::{load_model, save_model};
use crate::parallel::thread_count;
use crate::pruning::{finalize_model, prune_pipeline, Indicator, PruneConfig, Stage};
use crate::tensor::{Matrix, Tensor};
use crate::trainer::{
    attach_lowrank, convert_to_winograd, evaluate, synth_dataset, tiny_c3d, train, Mode,
    TrainConfig,
};
use crate::transform::{base_matrices, transforms_f2x3, WinogradSpec};

/// Default synthetic-task volume (C, D, H, W) and heading count.
const DEFAULT_DIMS: &str = "1,8,16,16";
const DEFAULT_CLASSES: usize = 4;

#[derive(Parser)]
#[command(
    name = "wino3d",
    version,
    about = "3D Winograd convolution: train, prune, finalize, benchmark"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the F(2³,3³) base and flattened transform matrices as .lrt files.
    GenMatrices(GenMatricesArgs),
    /// Re-express every spatial convolution after the stem in the Winograd domain.
    Convert(ConvertArgs),
    /// Train the small 3D convnet on the synthetic moving-blob task.
    Train(TrainArgs),
    /// Two-stage Winograd-domain column pruning: score, freeze masks, retrain.
    Prune(PruneArgs),
    /// Collapse masked Winograd layers into compact column-sparse form.
    Finalize(FinalizeArgs),
    /// Evaluate a model on a freshly generated eval split.
    Eval(EvalArgs),
    /// Time convolution strategies against each other; emit a CSV report.
    Bench(BenchArgs),
    /// Singular-value spectrum of each Winograd layer's weight matrix.
    Spectrum(SpectrumArgs),
}

#[derive(Args)]
struct GenMatricesArgs {
    /// Directory for k/b/a/t_k/t_i/t_o .lrt files (created if missing).
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// fs (spatial), fw (Winograd weights), or lr (low-rank factors only).
    #[arg(long, default_value = "fw")]
    mode: String,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the trained model (.lrw).
    #[arg(long)]
    out: PathBuf,
    /// Optional per-epoch CSV (epoch,split,loss,accuracy).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Ranks per Winograd layer, used by --mode lr.
    #[arg(long, default_value = "4,8")]
    rank_plan: String,
    /// Initialization scale for the low-rank factors.
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 256)]
    train_samples: usize,
    #[arg(long, default_value_t = 64)]
    eval_samples: usize,
    /// Input volume as C,D,H,W.
    #[arg(long, default_value = DEFAULT_DIMS)]
    dims: String,
    #[arg(long, default_value_t = DEFAULT_CLASSES)]
    classes: usize,
}

#[derive(Args)]
struct PruneArgs {
    /// Fraction of Winograd-domain columns to drop, in [0, 1).
    #[arg(long)]
    sparsity: f64,
    /// Ranks per Winograd layer; empty keeps existing factors.
    #[arg(long, default_value = "4,8")]
    rank_plan: String,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Factor-training epochs that accumulate column scores.
    #[arg(long, default_value_t = 2)]
    score_epochs: usize,
    /// Epochs trained after the masks freeze.
    #[arg(long, default_value_t = 10)]
    retrain_epochs: usize,
    /// mag-delta, mag-full, grad, delta-grad, or full-grad.
    #[arg(long, default_value = "full-grad")]
    indicator: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the pruned (masked, not yet compacted) model.
    #[arg(long)]
    out: PathBuf,
    /// Optional per-epoch CSV (epoch,stage,split,loss,accuracy).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    train_samples: usize,
    #[arg(long, default_value_t = 64)]
    eval_samples: usize,
    /// Input volume as C,D,H,W.
    #[arg(long, default_value = DEFAULT_DIMS)]
    dims: String,
    #[arg(long, default_value_t = DEFAULT_CLASSES)]
    classes: usize,
}

#[derive(Args)]
struct FinalizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Seed of the matching training run; the eval split derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    samples: usize,
    /// Input volume as C,D,H,W.
    #[arg(long, default_value = DEFAULT_DIMS)]
    dims: String,
    #[arg(long, default_value_t = DEFAULT_CLASSES)]
    classes: usize,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma list drawn from im2col, winograd, sparse.
    #[arg(long, default_value = "im2col,winograd,sparse")]
    strategies: String,
    /// Comma list of column sparsities in [0, 1).
    #[arg(long, default_value = "0,0.3,0.5,0.7,0.9")]
    sparsities: String,
    /// Problem shape as Ci,Co,D,H,W.
    #[arg(long, default_value = "64,64,8,28,28")]
    shape: String,
    #[arg(long, default_value_t = 21)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    pad: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SpectrumArgs {
    #[arg(long)]
    model: PathBuf,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parse `argv` and execute, returning the process exit code.
pub fn run_from<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    exit_code(dispatch(cli.cmd))
}

/// 0 on success, 2 when an equivalence oracle rejected the run, 1 otherwise.
fn exit_code(result: Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(Error::Validation(msg)) => {
            eprintln!("validation failure: {msg}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// [`run_from`] over the process arguments.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenMatrices(a) => gen_matrices(a),
        Cmd::Convert(a) => convert(a),
        Cmd::Train(a) => run_train(a),
        Cmd::Prune(a) => run_prune(a),
        Cmd::Finalize(a) => finalize(a),
        Cmd::Eval(a) => run_eval(a),
        Cmd::Bench(a) => run_bench(a),
        Cmd::Spectrum(a) => run_spectrum(a),
    }
}

// ── shared parsing helpers ──────────────────────────────────────────────────

fn parse_list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<T>()
                .map_err(|_| Error::Config(format!("bad {what} entry {tok:?}")))
        })
        .collect()
}

fn parse_dims4(s: &str) -> Result<[usize; 4]> {
    let v: Vec<usize> = parse_list(s, "dims")?;
    v.try_into()
        .map_err(|_| Error::Config(format!("--dims wants C,D,H,W, got {s:?}")))
}

/// The eval split lives one seed above the train split, so `train --seed N`
/// and `eval --seed N` see the same held-out samples.
fn eval_seed(seed: u64) -> u64 {
    seed.wrapping_add(1)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    println!("wrote {}", path.display());
    Ok(())
}

// ── subcommand bodies ───────────────────────────────────────────────────────

fn mat_tensor(m: &Matrix<f64>) -> Tensor<f64> {
    Tensor::new(vec![m.rows(), m.cols()], m.data().to_vec()).expect("matrix dims are valid")
}

fn gen_matrices(args: GenMatricesArgs) -> Result<()> {
    fs::create_dir_all(&args.out_dir)?;
    let bm = base_matrices(WinogradSpec::f2x3())?;
    let ts = transforms_f2x3();
    let named: [(&str, &Matrix<f64>); 6] = [
        ("k", &bm.k),
        ("b", &bm.b),
        ("a", &bm.a),
        ("t_k", &ts.t_k),
        ("t_i", &ts.t_i),
        ("t_o", &ts.t_o),
    ];
    for (name, m) in named {
        let path = args.out_dir.join(format!("{name}.lrt"));
        save_tensor(&mat_tensor(m), &path)?;
        println!("wrote {} ({}x{})", path.display(), m.rows(), m.cols());
    }
    Ok(())
}

fn convert(args: ConvertArgs) -> Result<()> {
    let model = load_model(&args.input)?;
    let converted = convert_to_winograd(&model)?;
    save_model(&converted, &args.out)?;
    for line in converted.describe() {
        println!("{line}");
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let mode = Mode::from_str(&args.mode)?;
    let dims = parse_dims4(&args.dims)?;
    let mut model = tiny_c3d::<f32>(args.seed, args.classes, dims)?;
    if mode != Mode::Fs {
        model = convert_to_winograd(&model)?;
    }
    if mode == Mode::Lr {
        let plan: Vec<usize> = parse_list(&args.rank_plan, "rank plan")?;
        attach_lowrank(&mut model, &plan, args.alpha)?;
    }
    let train_ds = synth_dataset::<f32>(args.seed, args.train_samples, args.classes, dims)?;
    let eval_ds = synth_dataset::<f32>(eval_seed(args.seed), args.eval_samples, args.classes, dims)?;

    let mut cfg = TrainConfig::new(mode);
    cfg.epochs = args.epochs;
    cfg.lr = args.lr;
    cfg.seed = args.seed;
    let logs = train(&mut model, &train_ds, Some(&eval_ds), &cfg)?;
    for l in &logs {
        println!(
            "epoch {:>3}  lr {:.3e}  train loss {:.4} acc {:.3}  eval loss {:.4} acc {:.3}",
            l.epoch, l.lr, l.train_loss, l.train_acc, l.eval_loss, l.eval_acc
        );
    }
    save_model(&model, &args.out)?;
    println!("wrote {}", args.out.display());
    if let Some(path) = &args.log {
        let mut csv = String::from("epoch,split,loss,accuracy\n");
        for l in &logs {
            writeln!(csv, "{},train,{:.6},{:.4}", l.epoch, l.train_loss, l.train_acc).unwrap();
            writeln!(csv, "{},eval,{:.6},{:.4}", l.epoch, l.eval_loss, l.eval_acc).unwrap();
        }
        write_text(path, &csv)?;
    }
    Ok(())
}

fn stage_name(stage: Stage) -> &'static str {
    match stage {
        Stage::Score => "score",
        Stage::Retrain => "retrain",
    }
}

fn run_prune(args: PruneArgs) -> Result<()> {
    let indicator = Indicator::from_str(&args.indicator)?;
    let dims = parse_dims4(&args.dims)?;
    let base = tiny_c3d::<f32>(args.seed, args.classes, dims)?;
    let mut model = convert_to_winograd(&base)?;
    let train_ds = synth_dataset::<f32>(args.seed, args.train_samples, args.classes, dims)?;
    let eval_ds = synth_dataset::<f32>(eval_seed(args.seed), args.eval_samples, args.classes, dims)?;

    let mut cfg = PruneConfig::new(args.sparsity, args.retrain_epochs);
    cfg.score_epochs = args.score_epochs;
    cfg.rank_plan = parse_list(&args.rank_plan, "rank plan")?;
    cfg.alpha = args.alpha;
    cfg.indicator = indicator;
    cfg.seed = args.seed;
    let logs = prune_pipeline(&mut model, &train_ds, Some(&eval_ds), &cfg)?;
    for l in &logs {
        let kept: Vec<String> = l.kept.iter().map(|k| k.to_string()).collect();
        println!(
            "epoch {:>3} [{:>7}] lr {:.3e}  train loss {:.4} acc {:.3}  eval loss {:.4} acc {:.3}  kept [{}]",
            l.epoch,
            stage_name(l.stage),
            l.lr,
            l.train_loss,
            l.train_acc,
            l.eval_loss,
            l.eval_acc,
            kept.join(",")
        );
    }
    save_model(&model, &args.out)?;
    println!("wrote {}", args.out.display());
    if let Some(path) = &args.log {
        let mut csv = String::from("epoch,stage,split,loss,accuracy\n");
        for l in &logs {
            let stage = stage_name(l.stage);
            writeln!(csv, "{},{stage},train,{:.6},{:.4}", l.epoch, l.train_loss, l.train_acc)
                .unwrap();
            writeln!(csv, "{},{stage},eval,{:.6},{:.4}", l.epoch, l.eval_loss, l.eval_acc)
                .unwrap();
        }
        write_text(path, &csv)?;
    }
    Ok(())
}

fn finalize(args: FinalizeArgs) -> Result<()> {
    let model = load_model(&args.input)?;
    let compact = finalize_model(&model)?;
    save_model(&compact, &args.out)?;
    for line in compact.describe() {
        println!("{line}");
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let dims = parse_dims4(&args.dims)?;
    let ds = synth_dataset::<f32>(eval_seed(args.seed), args.samples, args.classes, dims)?;
    let (loss, acc) = evaluate(&model, &ds)?;
    println!("loss {loss:.6}  accuracy {acc:.4}  samples {}", args.samples);
    Ok(())
}

fn run_bench(args: BenchArgs) -> Result<()> {
    let strategies: Vec<Strategy> = args
        .strategies
        .split(',')
        .map(|tok| Strategy::from_str(tok.trim()))
        .collect::<Result<_>>()?;
    let sparsities: Vec<f64> = parse_list(&args.sparsities, "sparsity")?;
    let shape: [usize; 5] = parse_list::<usize>(&args.shape, "shape")?
        .try_into()
        .map_err(|_| Error::Config(format!("--shape wants Ci,Co,D,H,W, got {:?}", args.shape)))?;
    if strategies.is_empty() || sparsities.is_empty() {
        return Err(Error::Config("need at least one strategy and sparsity".into()));
    }
    let [ci, co, d, h, w] = shape;
    let label = format!("c{ci}x{co}_{d}x{h}x{w}");
    let threads = thread_count();
    let mut rows = Vec::new();
    for &s in &sparsities {
        let case = BenchCase::new(&label, args.seed, ci, co, [d, h, w], args.pad, s)?;
        for &strat in &strategies {
            eprintln!("timing {} at sparsity {s} ...", strat.name());
            rows.push(bench_layer(strat, &case, args.reps, threads)?);
        }
    }
    let report = bench_report(&rows)?;
    match &args.out {
        Some(path) => write_text(path, &report)?,
        None => print!("{report}"),
    }
    Ok(())
}

fn run_spectrum(args: SpectrumArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let layers = model.winograd_layers();
    if layers.is_empty() {
        return Err(Error::Config(
            "model has no Winograd layers to analyze".into(),
        ));
    }
    let mut csv = String::from("layer,i,sigma,individual_fraction,cumulative_fraction\n");
    for (idx, layer) in layers.iter().enumerate() {
        let report = spectrum_report(&layer.g_w.cast())?;
        for i in 0..report.sigma.len() {
            writeln!(
                csv,
                "{idx},{i},{:.9e},{:.9e},{:.9e}",
                report.sigma[i], report.individual_fractions[i], report.cumulative_fractions[i]
            )
            .unwrap();
        }
    }
    match &args.out {
        Some(path) => write_text(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_distinguish_validation_from_other_errors() {
        assert_eq!(exit_code(Ok(())), 0);
        assert_eq!(exit_code(Err(Error::Validation("oracle mismatch".into()))), 2);
        assert_eq!(exit_code(Err(Error::Config("bad flag".into()))), 1);
        assert_eq!(exit_code(Err(Error::Format("bad magic".into()))), 1);
    }

    #[test]
    fn list_and_dims_parsing() {
        assert_eq!(parse_list::<usize>("4, 8", "x").unwrap(), vec![4, 8]);
        assert_eq!(parse_list::<f64>("0,0.5", "x").unwrap(), vec![0.0, 0.5]);
        assert!(parse_list::<usize>("", "x").unwrap().is_empty());
        assert!(parse_list::<usize>("4,oops", "x").is_err());
        assert_eq!(parse_dims4("1,8,16,16").unwrap(), [1, 8, 16, 16]);
        assert!(parse_dims4("1,8,16").is_err());
        assert!(parse_dims4("1,8,16,16,2").is_err());
    }

    #[test]
    fn help_and_version_exit_zero_without_dispatch() {
        assert_eq!(run_from(["wino3d", "--help"]), 0);
        assert_eq!(run_from(["wino3d", "--version"]), 0);
        assert_eq!(run_from(["wino3d"]), 1);
        assert_eq!(run_from(["wino3d", "no-such-command"]), 1);
    }
}

//! `dwafm`: train, evaluate, ablate and inspect traffic forecasters.
//!
//! Configuration precedence, lowest first: built-in defaults, the `--config`
//! file, `--data-dir`, then `--set key.path=value` overrides in order.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dwafm::config::{Precision, RunConfig, TemporalKind, Variant};
use dwafm::data::{Dataset, Split};
use dwafm::error::ErrorCategory;
use dwafm::experiment::{build_model, load_dataset, train_and_report, RunReport};
use dwafm::model::{Manifest, DwafmModel};
use dwafm::numerics::Real;
use dwafm::training::{
    evaluate_split, gradcheck, hi_baseline_split, HiMode, TrainOptions, Trainer, BEST_DIR,
};
use dwafm::Error;
use serde::Serialize;

const SNAPSHOT: &str = "config.toml";

#[derive(Parser, Debug)]
#[command(name = "dwafm", version, about = "Traffic forecasting with dynamic graph embeddings and frequency-domain MLPs")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration; defaults are used for anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset directory (`data.dwaf`, `data.json`, `adj.csv`). Without it the
    /// synthetic generator is used.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Where artifacts are written.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Config override `key.path=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads for batch-parallel kernels.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model and write checkpoints, the epoch log and a report.
    Train {
        /// Continue the run stored in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint (a run directory or a checkpoint directory).
    Eval {
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Historical-inertia baseline.
    Baseline {
        #[arg(long, value_enum, default_value_t = HiArg::CopyWindow)]
        mode: HiArg,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Train the full model and ablation variants and compare them.
    Ablate {
        /// Comma-separated variant names; all eight when omitted.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// Compare backpropagated gradients with central differences on a toy problem.
    Gradcheck {
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write learned adjacency matrices as CSV.
    ExportGraph {
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Window positions within the split.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        samples: Vec<usize>,
        /// Input steps; all when omitted.
        #[arg(long, value_delimiter = ',')]
        timesteps: Vec<usize>,
        /// Node window `start:end` (end exclusive); all nodes when omitted.
        #[arg(long)]
        nodes: Option<String>,
    },
    /// Train each temporal module and tabulate accuracy and epoch time.
    BenchTemporal,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum HiArg {
    CopyWindow,
    LastDay,
}

impl From<HiArg> for HiMode {
    fn from(m: HiArg) -> HiMode {
        match m {
            HiArg::CopyWindow => HiMode::CopyWindow,
            HiArg::LastDay => HiMode::LastDay,
        }
    }
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    tag: &'static str,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, tag) = match e.category() {
            ErrorCategory::Config => (2, "config"),
            ErrorCategory::Data => (3, "data"),
            ErrorCategory::Numerical => (4, "numerical"),
            ErrorCategory::Internal => (1, "internal"),
        };
        Failure { code, tag, msg: e.to_string() }
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {}", f.tag, f.msg.replace('\n', " "));
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    if let Some(k) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("--threads: {e}")))?;
    }
    let c = &cli.common;
    match cli.command {
        Command::Train { resume } => train(&resolve(c, None)?, &c.out_dir, resume),
        Command::Eval { checkpoint, split } => {
            let (ckpt, run_dir) = checkpoint_dir(&checkpoint);
            let cfg = resolve(c, run_dir.as_deref())?;
            eval(&cfg, &ckpt, split.into(), &c.out_dir)
        }
        Command::Baseline { mode, split } => baseline(&resolve(c, None)?, mode.into(), split.into(), &c.out_dir),
        Command::Ablate { variants } => ablate(&resolve(c, None)?, &parse_variants(&variants)?, &c.out_dir),
        Command::Gradcheck { variants, seed } => gradcheck_cmd(&parse_variants(&variants)?, seed, &c.out_dir),
        Command::ExportGraph {
            checkpoint,
            split,
            samples,
            timesteps,
            nodes,
        } => {
            let (ckpt, run_dir) = checkpoint_dir(&checkpoint);
            let cfg = resolve(c, run_dir.as_deref())?;
            let sel = GraphSelection {
                split: split.into(),
                samples,
                timesteps,
                nodes: nodes.as_deref().map(parse_node_window).transpose()?,
            };
            export_graph(&cfg, &ckpt, &sel, &c.out_dir)
        }
        Command::BenchTemporal => bench_temporal(&resolve(c, None)?, &c.out_dir),
    }
}

/// Builds the run configuration. `run_dir` supplies a snapshot to start from
/// when no `--config` is given.
fn resolve(c: &Common, run_dir: Option<&Path>) -> CliResult<RunConfig> {
    let base = match (&c.config, run_dir) {
        (Some(p), _) => read(p)?,
        (None, Some(dir)) if dir.join(SNAPSHOT).is_file() => read(&dir.join(SNAPSHOT))?,
        _ => String::new(),
    };
    let mut overrides = Vec::new();
    if let Some(d) = &c.data_dir {
        let d = d.to_str().ok_or_else(|| Error::Config("--data-dir is not valid UTF-8".into()))?;
        overrides.push(format!("data.dir={}", toml_string(d)));
    }
    overrides.extend(c.overrides.iter().cloned());
    Ok(RunConfig::with_overrides(&base, &overrides)?)
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| {
        Failure::from(Error::Config(format!("{}: {e}", path.display())))
    })
}

fn write(path: &Path, contents: &str) -> CliResult {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    let s = serde_json::to_string_pretty(value).expect("reports serialize");
    write(path, &(s + "\n"))
}

fn snapshot(cfg: &RunConfig, out: &Path) -> CliResult {
    write(&out.join(SNAPSHOT), &cfg.to_toml_string())
}

fn parse_variants(names: &[String]) -> CliResult<Vec<Variant>> {
    if names.is_empty() {
        return Ok(Variant::ALL.to_vec());
    }
    Ok(names.iter().map(|n| Variant::parse(n.trim())).collect::<Result<_, _>>()?)
}

fn parse_node_window(s: &str) -> CliResult<(usize, usize)> {
    let bad = || Failure::from(Error::Config(format!("--nodes expects start:end, got {s:?}")));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a >= b {
        return Err(bad());
    }
    Ok((a, b))
}

/// A run directory resolves to its `best/` checkpoint and supplies its
/// config snapshot.
fn checkpoint_dir(path: &Path) -> (PathBuf, Option<PathBuf>) {
    if path.join(BEST_DIR).is_dir() {
        (path.join(BEST_DIR), Some(path.to_path_buf()))
    } else {
        (path.to_path_buf(), path.parent().map(Path::to_path_buf))
    }
}

fn print_metrics(label: &str, m: &dwafm::training::MetricsReport) {
    println!("{label:<14} MAE {:>10.4}  RMSE {:>10.4}  MAPE {:>8.3}%", m.mae, m.rmse, m.mape_pct);
}

fn train(cfg: &RunConfig, out: &Path, resume: bool) -> CliResult {
    snapshot(cfg, out)?;
    let data = load_dataset(cfg)?;
    let report = match cfg.precision {
        Precision::F32 => train_typed::<f32>(cfg, &data, out, resume)?,
        Precision::F64 => train_typed::<f64>(cfg, &data, out, resume)?,
    };
    write_json(&out.join("report.json"), &report)?;
    print_metrics("val", &report.val);
    print_metrics("test", &report.test);
    Ok(())
}

fn train_typed<F: Real>(cfg: &RunConfig, data: &Dataset, out: &Path, resume: bool) -> CliResult<RunReport> {
    let opts = TrainOptions::from(cfg);
    let mut trainer = if resume {
        Trainer::<F>::resume(out, opts)?
    } else {
        Trainer::new(build_model::<F>(cfg, data)?, opts)
    };
    if trainer.epoch < cfg.train.epochs {
        eprintln!(
            "training {} ({} parameters) for {} epochs",
            trainer.model.variant().name(),
            trainer.model.num_params(),
            cfg.train.epochs - trainer.epoch
        );
    }
    let result = trainer.train(data, |t, rec| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  val MAE {:.4}  {:.2}s",
            rec.epoch, rec.train_loss, rec.val_mae, rec.seconds
        );
        t.save(out)
    });
    if let Err(e) = result {
        trainer.save(out)?;
        return Err(e.into());
    }
    trainer.save(out)?;
    if trainer.clipped_batches > 0 {
        eprintln!("gradient clipping applied to {} batches", trainer.clipped_batches);
    }
    Ok(RunReport::from_trainer(&trainer, data, cfg.train.eval_batch_size)?)
}

fn eval(cfg: &RunConfig, ckpt: &Path, split: Split, out: &Path) -> CliResult {
    let manifest = Manifest::load(ckpt)?;
    let data = load_dataset(cfg)?;
    let report = match manifest.dtype.as_str() {
        "f64" => eval_typed::<f64>(ckpt, &data, split, cfg.train.eval_batch_size)?,
        _ => eval_typed::<f32>(ckpt, &data, split, cfg.train.eval_batch_size)?,
    };
    snapshot(cfg, out)?;
    write_json(&out.join("eval.json"), &report)?;
    print_metrics(split_name(split), &report);
    Ok(())
}

fn eval_typed<F: Real>(ckpt: &Path, data: &Dataset, split: Split, bs: usize) -> CliResult<dwafm::training::MetricsReport> {
    let (model, _) = DwafmModel::<F>::load_checkpoint(ckpt)?;
    check_compatible(&model, data)?;
    Ok(evaluate_split(&model, data, split, bs)?)
}

fn check_compatible<F: Real>(model: &DwafmModel<F>, data: &Dataset) -> CliResult {
    let c = &model.config;
    if c.n_nodes != data.n_nodes() || c.t_in != data.t_in() || c.t_out != data.t_out() {
        return Err(Error::Config(format!(
            "checkpoint expects N={}, T={}, T_f={} but the dataset gives N={}, T={}, T_f={}",
            c.n_nodes,
            c.t_in,
            c.t_out,
            data.n_nodes(),
            data.t_in(),
            data.t_out()
        ))
        .into());
    }
    Ok(())
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    }
}

fn baseline(cfg: &RunConfig, mode: HiMode, split: Split, out: &Path) -> CliResult {
    snapshot(cfg, out)?;
    let data = load_dataset(cfg)?;
    let report = hi_baseline_split(&data, split, mode)?;
    write_json(&out.join("baseline.json"), &report)?;
    print_metrics(&format!("HI {}", split_name(split)), &report);
    Ok(())
}

fn ablate(cfg: &RunConfig, variants: &[Variant], out: &Path) -> CliResult {
    snapshot(cfg, out)?;
    let data = load_dataset(cfg)?;
    let mut rows = Vec::new();
    for &v in variants {
        let mut c = cfg.clone();
        c.model.variant = v;
        eprintln!("ablate: {}", v.name());
        let r = train_and_report(&c, &data, |_| {})?;
        write_json(&out.join(v.name()).join("report.json"), &r)?;
        println!(
            "{:<12} val MAE {:>9.4}  test MAE {:>9.4}  RMSE {:>9.4}  MAPE {:>7.3}%  {:.2}s/epoch",
            v.name(),
            r.best_val_mae,
            r.test.mae,
            r.test.rmse,
            r.test.mape_pct,
            r.mean_epoch_seconds
        );
        rows.push(r);
    }
    let mut csv = String::from("variant,params,best_val_mae,test_mae,test_rmse,test_mape_pct,seconds_per_epoch\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.variant.name(),
            r.params,
            r.best_val_mae,
            r.test.mae,
            r.test.rmse,
            r.test.mape_pct,
            r.mean_epoch_seconds
        );
    }
    write(&out.join("ablation.csv"), &csv)?;
    if let Some(full) = rows.iter().find(|r| r.variant == Variant::Full) {
        let beaten: Vec<_> = rows
            .iter()
            .filter(|r| r.variant != Variant::Full && r.best_val_mae < full.best_val_mae)
            .map(|r| r.variant.name())
            .collect();
        if beaten.is_empty() {
            println!("full has the lowest validation MAE");
        } else {
            println!("full is beaten on validation MAE by: {}", beaten.join(", "));
        }
    }
    Ok(())
}

fn gradcheck_cmd(variants: &[Variant], seed: u64, out: &Path) -> CliResult {
    let mut reports = Vec::new();
    let mut failed = Vec::new();
    for &v in variants {
        let r = gradcheck(v, seed)?;
        println!(
            "{:<12} max relative error {:.3e}  {}",
            v.name(),
            r.max_rel_error,
            if r.passed { "ok" } else { "FAIL" }
        );
        if !r.passed {
            failed.push(v.name());
        }
        reports.push(r);
    }
    write_json(&out.join("gradcheck.json"), &reports)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: 5,
            tag: "gradcheck",
            msg: format!("gradient check failed for {}", failed.join(", ")),
        })
    }
}

struct GraphSelection {
    split: Split,
    samples: Vec<usize>,
    timesteps: Vec<usize>,
    nodes: Option<(usize, usize)>,
}

fn export_graph(cfg: &RunConfig, ckpt: &Path, sel: &GraphSelection, out: &Path) -> CliResult {
    let manifest = Manifest::load(ckpt)?;
    let data = load_dataset(cfg)?;
    snapshot(cfg, out)?;
    match manifest.dtype.as_str() {
        "f64" => export_typed::<f64>(&data, ckpt, sel, out),
        _ => export_typed::<f32>(&data, ckpt, sel, out),
    }
}

fn export_typed<F: Real>(data: &Dataset, ckpt: &Path, sel: &GraphSelection, out: &Path) -> CliResult {
    let (model, _) = DwafmModel::<F>::load_checkpoint(ckpt)?;
    check_compatible(&model, data)?;
    let indices = data.indices(sel.split);
    let windows = sel
        .samples
        .iter()
        .map(|&s| {
            indices.get(s).copied().ok_or_else(|| {
                Failure::from(Error::Config(format!(
                    "sample {s} out of range: the {} split has {} windows",
                    split_name(sel.split),
                    indices.len()
                )))
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let batch = data.batch::<F>(&windows);
    let a = model
        .adjacency(&batch)?
        .ok_or_else(|| Error::Config(format!("variant {} has no graph to export", model.variant().name())))?;
    let (t, n) = (data.t_in(), data.n_nodes());
    let steps: Vec<usize> = if sel.timesteps.is_empty() { (0..t).collect() } else { sel.timesteps.clone() };
    if let Some(&bad) = steps.iter().find(|&&s| s >= t) {
        return Err(Error::Config(format!("timestep {bad} out of range for T={t}")).into());
    }
    let (lo, hi) = sel.nodes.unwrap_or((0, n));
    if hi > n {
        return Err(Error::Config(format!("node window {lo}:{hi} exceeds N={n}")).into());
    }
    for (bi, &sample) in sel.samples.iter().enumerate() {
        for &s in &steps {
            let mut csv = String::from("node");
            for j in lo..hi {
                let _ = write!(csv, ",{j}");
            }
            csv.push('\n');
            let base = (bi * t + s) * n * n;
            for i in lo..hi {
                let _ = write!(csv, "{i}");
                for j in lo..hi {
                    let _ = write!(csv, ",{}", a.data()[base + i * n + j]);
                }
                csv.push('\n');
            }
            let name = format!("adjacency_{}_s{sample}_t{s}.csv", split_name(sel.split));
            write(&out.join(name), &csv)?;
        }
    }
    println!(
        "wrote {} matrices of {}x{} to {}",
        sel.samples.len() * steps.len(),
        hi - lo,
        hi - lo,
        out.display()
    );
    Ok(())
}

fn bench_temporal(cfg: &RunConfig, out: &Path) -> CliResult {
    snapshot(cfg, out)?;
    let data = load_dataset(cfg)?;
    let mut csv = String::from("temporal,params,test_mae,test_rmse,test_mape_pct,seconds_per_epoch\n");
    println!("{:<10} {:>10} {:>10} {:>10} {:>10}", "module", "MAE", "RMSE", "MAPE%", "s/epoch");
    for kind in TemporalKind::ALL {
        let mut c = cfg.clone();
        c.model.temporal = kind;
        let r = train_and_report(&c, &data, |_| {})?;
        println!(
            "{:<10} {:>10.4} {:>10.4} {:>10.3} {:>10.3}",
            kind.name(),
            r.test.mae,
            r.test.rmse,
            r.test.mape_pct,
            r.mean_epoch_seconds
        );
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            kind.name(),
            r.params,
            r.test.mae,
            r.test.rmse,
            r.test.mape_pct,
            r.mean_epoch_seconds
        );
        write_json(&out.join(kind.name()).join("report.json"), &r)?;
    }
    write(&out.join("bench_temporal.csv"), &csv)?;
    Ok(())
}

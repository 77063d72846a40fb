//! The five batch commands: train, eval, analyze, bench, inspect-checkpoint.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;

use fire_core::analytics::{analyze_series, EvolutionParams};
use fire_core::checkpoint;
use fire_core::data::{load_csv, make_windows, split, LoadOptions, Series, WindowSet};
use fire_core::model::ParamRef;
use fire_core::trainer::{evaluate, history_csv, train, MetricsScale, TrainOutcome, LR_GRID};

use crate::config::{preset_channels, resolve, ResolvedRun, RunArgs};

/// Errors that must map to exit code 2 (usage-level problems).
#[derive(Debug)]
pub struct DatasetNotFound(pub PathBuf);

impl std::fmt::Display for DatasetNotFound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "dataset not found: {}", self.0.display())
    }
}

impl std::error::Error for DatasetNotFound {}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let pretty = serde_json::to_string_pretty(value)?;
    std::fs::write(path, pretty).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn load_dataset(run: &ResolvedRun, args: &RunArgs) -> Result<(Series, serde_json::Value)> {
    if !args.data.exists() {
        return Err(anyhow::Error::new(DatasetNotFound(args.data.clone())));
    }
    let opts = LoadOptions {
        fill: run.fill,
        max_bad_rows: 0,
    };
    let (series, report) = load_csv(&args.data, &opts)
        .with_context(|| format!("loading {}", args.data.display()))?;
    if let Some(expected) = preset_channels(&args.preset) {
        if series.n_channels() != expected {
            bail!(
                "preset {} expects {} channels, {} has {}",
                args.preset,
                expected,
                args.data.display(),
                series.n_channels()
            );
        }
    }
    Ok((series, serde_json::to_value(&report)?))
}

fn split_windows<'a>(
    run: &ResolvedRun,
    series: &'a Series,
) -> Result<[WindowSet<'a>; 3]> {
    let views = split(
        series,
        run.split_spec(),
        run.model.lookback,
        run.model.horizon,
    )?;
    let mk = |v| make_windows(v, run.model.lookback, run.model.horizon, true);
    Ok([mk(views[0])?, mk(views[1])?, mk(views[2])?])
}

fn metrics_json(
    run: &ResolvedRun,
    mse: f64,
    mae: f64,
    outcome: Option<&TrainOutcome>,
) -> serde_json::Value {
    json!({
        "dataset": run.dataset,
        "preset": run.preset,
        "horizon": run.model.horizon,
        "mse": mse,
        "mae": mae,
        "metrics_scale": run.train.metrics_scale,
        "variant": run.model.variant,
        "loss_ablation": run.loss.ablation,
        "best_epoch": outcome.map(|o| o.best_epoch),
        "best_val_loss": outcome.map(|o| o.best_val),
        "config_hash": run.config_hash(),
        "config": run,
    })
}

pub fn cmd_train(args: &RunArgs) -> Result<()> {
    let run = resolve(args)?;
    run.model.validate()?;
    ensure_out_dir(&args.out)?;
    let (series, load_report) = load_dataset(&run, args)?;
    write_json(&args.out.join("load_report.json"), &load_report)?;

    let [trw, vaw, tew] = split_windows(&run, &series)?;
    eprintln!(
        "training: {} train / {} val / {} test windows, horizon {}",
        trw.len(),
        vaw.len(),
        tew.len(),
        run.model.horizon
    );
    let outcome = train(&run.model, &trw, &vaw, &run.loss, &run.train)?;
    let (mse, mae) = evaluate(&outcome.params, &run.model, &tew, run.train.metrics_scale)?;

    checkpoint::save(&args.out.join("checkpoint.json"), &run.model, &outcome.params)?;
    std::fs::write(args.out.join("history.csv"), history_csv(&outcome.history))?;
    write_json(
        &args.out.join("metrics.json"),
        &metrics_json(&run, mse, mae, Some(&outcome)),
    )?;
    println!(
        "{} horizon {}: test mse {:.6} mae {:.6} (best epoch {}, artifacts in {})",
        run.dataset,
        run.model.horizon,
        mse,
        mae,
        outcome.best_epoch,
        args.out.display()
    );
    Ok(())
}

pub fn cmd_eval(args: &RunArgs, checkpoint_path: &Path) -> Result<()> {
    let mut run = resolve(args)?;
    let (config, params) = checkpoint::load(checkpoint_path)
        .with_context(|| format!("loading checkpoint {}", checkpoint_path.display()))?;
    // the checkpoint owns the model geometry; CLI keeps split/scale control
    run.model = config;
    ensure_out_dir(&args.out)?;
    let (series, _) = load_dataset(&run, args)?;
    let [_, _, tew] = split_windows(&run, &series)?;
    let (mse, mae) = evaluate(&params, &run.model, &tew, run.train.metrics_scale)?;
    write_json(
        &args.out.join("metrics.json"),
        &metrics_json(&run, mse, mae, None),
    )?;
    println!(
        "{} horizon {}: test mse {:.6} mae {:.6}",
        run.dataset, run.model.horizon, mse, mae
    );
    Ok(())
}

#[derive(Clone, Debug, clap::Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Restrict to one channel index.
    #[arg(long)]
    pub channel: Option<usize>,
    /// Detector confidence δ_A.
    #[arg(long = "adwin-delta", default_value_t = 0.002)]
    pub adwin_delta: f64,
    /// Division guard η.
    #[arg(long, default_value_t = 1e-8)]
    pub eta: f64,
    /// Per-basis relative change threshold ε.
    #[arg(long, default_value_t = 0.5)]
    pub epsilon: f64,
    /// Evolving-fraction threshold τ.
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    /// Analysis patch length.
    #[arg(long = "patch-len", default_value_t = 96)]
    pub patch_len: usize,
    /// Analysis patch stride.
    #[arg(long, default_value_t = 96)]
    pub stride: usize,
    /// Missing-value policy: drop|ffill.
    #[arg(long, default_value = "drop")]
    pub fill: String,
    #[arg(long, default_value = "runs/analyze")]
    pub out: PathBuf,
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    if !args.data.exists() {
        return Err(anyhow::Error::new(DatasetNotFound(args.data.clone())));
    }
    let fill = match args.fill.as_str() {
        "drop" => fire_core::data::FillPolicy::Drop,
        "ffill" => fire_core::data::FillPolicy::ForwardFill,
        other => bail!("--fill expects drop|ffill, got `{other}`"),
    };
    let (series, _) = load_csv(
        &args.data,
        &LoadOptions {
            fill,
            max_bad_rows: 0,
        },
    )?;
    let channels: Vec<usize> = match args.channel {
        Some(c) => {
            if c >= series.n_channels() {
                bail!(
                    "channel {c} out of range: {} has {} channels",
                    args.data.display(),
                    series.n_channels()
                );
            }
            vec![c]
        }
        None => (0..series.n_channels()).collect(),
    };
    let params = EvolutionParams {
        eta: args.eta,
        epsilon: args.epsilon,
        tau: args.tau,
        patch_len: args.patch_len,
        stride: args.stride,
    };
    let reports = analyze_series(&series, &channels, args.adwin_delta, &params)?;
    ensure_out_dir(&args.out)?;
    let doc = json!({
        "dataset": args.data.display().to_string(),
        "adwin_confidence": args.adwin_delta,
        "evolution_params": params,
        "channels": reports,
    });
    write_json(&args.out.join("analyze.json"), &doc)?;
    for r in &reports {
        println!(
            "channel {:>4} {:<24} d_drift {:.4}% ({} changes / {}), d_evolution {:.4}%",
            r.channel,
            r.channel_name,
            r.d_drift * 100.0,
            r.n_change,
            r.n_total,
            r.d_evolution * 100.0
        );
    }
    println!(
        "parameters: adwin_delta={} eta={} epsilon={} tau={} patch_len={} stride={}",
        args.adwin_delta, args.eta, args.epsilon, args.tau, args.patch_len, args.stride
    );
    println!("report written to {}", args.out.join("analyze.json").display());
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    /// Horizons × learning-rate grid, best-val selection per horizon.
    Main,
    /// Patch lengths {4,8,16,32,48} × horizons.
    Patch,
    /// Look-back windows {96,192,288,384,512} × horizons.
    Lookback,
}

#[derive(Clone, Debug, clap::Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Which grid to run.
    #[arg(long, value_enum)]
    pub suite: Suite,
    /// Comma list overriding the default horizons {96,192,336,720}.
    #[arg(long, value_delimiter = ',')]
    pub horizons: Option<Vec<usize>>,
    /// Comma list overriding the learning-rate grid (main suite).
    #[arg(long, value_delimiter = ',')]
    pub lrs: Option<Vec<f64>>,
    /// Comma list overriding the patch lengths (patch suite).
    #[arg(long = "patch-lens", value_delimiter = ',')]
    pub patch_lens: Option<Vec<usize>>,
    /// Comma list overriding the look-back windows (lookback suite).
    #[arg(long, value_delimiter = ',')]
    pub lookbacks: Option<Vec<usize>>,
    /// Seeds per cell (base seed, base+1, ...).
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
}

struct CellOutcome {
    mse: f64,
    mae: f64,
    best_val: f64,
}

/// One grid cell: train + test-evaluate with overridden knobs.
fn run_cell(
    base: &RunArgs,
    series: &Series,
    horizon: usize,
    lookback: Option<usize>,
    patch_len: Option<usize>,
    lr: Option<f64>,
    seed: u64,
) -> Result<CellOutcome> {
    let mut args = base.clone();
    args.horizon = Some(horizon);
    if lookback.is_some() {
        args.lookback = lookback;
    }
    if patch_len.is_some() {
        args.patch_len = patch_len;
        args.stride = Some((patch_len.unwrap() / 2).max(1));
    }
    if lr.is_some() {
        args.lr = lr;
    }
    args.seed = Some(seed);
    let run = resolve(&args)?;
    run.model.validate()?;
    let [trw, vaw, tew] = split_windows(&run, series)?;
    let outcome = train(&run.model, &trw, &vaw, &run.loss, &run.train)?;
    let (mse, mae) = evaluate(&outcome.params, &run.model, &tew, run.train.metrics_scale)?;
    Ok(CellOutcome {
        mse,
        mae,
        best_val: outcome.best_val,
    })
}

/// Append-only results file: create with header once, then add rows.
struct ResultsCsv {
    file: std::fs::File,
}

impl ResultsCsv {
    fn open(path: &Path) -> Result<Self> {
        let exists = path.exists();
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("cannot open {}", path.display()))?;
        if !exists {
            writeln!(file, "dataset,suite,cell,horizon,seed,status,val_loss,mse,mae")?;
        }
        Ok(ResultsCsv { file })
    }

    #[allow(clippy::too_many_arguments)]
    fn row(
        &mut self,
        dataset: &str,
        suite: &str,
        cell: &str,
        horizon: &str,
        seed: u64,
        status: &str,
        val: Option<f64>,
        mse: Option<f64>,
        mae: Option<f64>,
    ) -> Result<()> {
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            self.file,
            "{dataset},{suite},{cell},{horizon},{seed},{status},{},{},{}",
            fmt(val),
            fmt(mse),
            fmt(mae)
        )?;
        self.file.flush()?;
        Ok(())
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let run = resolve(&args.run)?;
    ensure_out_dir(&args.run.out)?;
    let (series, _) = load_dataset(&run, &args.run)?;
    let horizons = args
        .horizons
        .clone()
        .unwrap_or_else(|| vec![96, 192, 336, 720]);
    let base_seed = args.run.seed.unwrap_or(0);
    let seeds: Vec<u64> = (0..args.seeds.max(1)).map(|s| base_seed + s).collect();
    let mut csv = ResultsCsv::open(&args.run.out.join("results.csv"))?;
    let dataset = run.dataset.clone();

    // (label, horizon, mse, mae) per summary row
    let mut summary: Vec<(String, String, f64, f64)> = Vec::new();

    match args.suite {
        Suite::Main => {
            let lrs = args.lrs.clone().unwrap_or_else(|| LR_GRID.to_vec());
            for &t in &horizons {
                // pick the grid lr with the best mean val loss, then report
                // that lr's test metrics
                let mut best: Option<(f64, f64, f64, f64)> = None; // (val, lr, mse, mae)
                for &lr in &lrs {
                    let cell = format!("lr={lr}");
                    let mut vals = Vec::new();
                    let mut mses = Vec::new();
                    let mut maes = Vec::new();
                    for &seed in &seeds {
                        match run_cell(&args.run, &series, t, None, None, Some(lr), seed) {
                            Ok(c) => {
                                csv.row(
                                    &dataset,
                                    "main",
                                    &cell,
                                    &t.to_string(),
                                    seed,
                                    "ok",
                                    Some(c.best_val),
                                    Some(c.mse),
                                    Some(c.mae),
                                )?;
                                vals.push(c.best_val);
                                mses.push(c.mse);
                                maes.push(c.mae);
                            }
                            Err(e) => {
                                eprintln!("cell {cell} T={t} seed={seed} failed: {e}");
                                csv.row(
                                    &dataset,
                                    "main",
                                    &cell,
                                    &t.to_string(),
                                    seed,
                                    "error",
                                    None,
                                    None,
                                    None,
                                )?;
                            }
                        }
                    }
                    if !vals.is_empty() {
                        let v = mean(&vals);
                        if best.map(|b| v < b.0).unwrap_or(true) {
                            best = Some((v, lr, mean(&mses), mean(&maes)));
                        }
                    }
                }
                if let Some((_, lr, mse, mae)) = best {
                    summary.push((format!("best lr={lr}"), t.to_string(), mse, mae));
                }
            }
        }
        Suite::Patch => {
            let patch_lens = args
                .patch_lens
                .clone()
                .unwrap_or_else(|| vec![4, 8, 16, 32, 48]);
            for &lp in &patch_lens {
                for &t in &horizons {
                    let cell = format!("patch_len={lp}");
                    let mut mses = Vec::new();
                    let mut maes = Vec::new();
                    for &seed in &seeds {
                        match run_cell(&args.run, &series, t, None, Some(lp), None, seed) {
                            Ok(c) => {
                                csv.row(
                                    &dataset,
                                    "patch",
                                    &cell,
                                    &t.to_string(),
                                    seed,
                                    "ok",
                                    Some(c.best_val),
                                    Some(c.mse),
                                    Some(c.mae),
                                )?;
                                mses.push(c.mse);
                                maes.push(c.mae);
                            }
                            Err(e) => {
                                eprintln!("cell {cell} T={t} seed={seed} failed: {e}");
                                csv.row(
                                    &dataset,
                                    "patch",
                                    &cell,
                                    &t.to_string(),
                                    seed,
                                    "error",
                                    None,
                                    None,
                                    None,
                                )?;
                            }
                        }
                    }
                    if !mses.is_empty() {
                        summary.push((cell.clone(), t.to_string(), mean(&mses), mean(&maes)));
                    }
                }
            }
        }
        Suite::Lookback => {
            let lookbacks = args
                .lookbacks
                .clone()
                .unwrap_or_else(|| vec![96, 192, 288, 384, 512]);
            for &lb in &lookbacks {
                for &t in &horizons {
                    let cell = format!("lookback={lb}");
                    let mut mses = Vec::new();
                    let mut maes = Vec::new();
                    for &seed in &seeds {
                        match run_cell(&args.run, &series, t, Some(lb), None, None, seed) {
                            Ok(c) => {
                                csv.row(
                                    &dataset,
                                    "lookback",
                                    &cell,
                                    &t.to_string(),
                                    seed,
                                    "ok",
                                    Some(c.best_val),
                                    Some(c.mse),
                                    Some(c.mae),
                                )?;
                                mses.push(c.mse);
                                maes.push(c.mae);
                            }
                            Err(e) => {
                                eprintln!("cell {cell} T={t} seed={seed} failed: {e}");
                                csv.row(
                                    &dataset,
                                    "lookback",
                                    &cell,
                                    &t.to_string(),
                                    seed,
                                    "error",
                                    None,
                                    None,
                                    None,
                                )?;
                            }
                        }
                    }
                    if !mses.is_empty() {
                        summary.push((cell.clone(), t.to_string(), mean(&mses), mean(&maes)));
                    }
                }
            }
        }
    }

    // per-group average rows, Table-2 style
    let mut groups: Vec<String> = Vec::new();
    for (label, _, _, _) in &summary {
        if !groups.contains(label) {
            groups.push(label.clone());
        }
    }
    let mut md = String::new();
    md.push_str(&format!("# bench summary: {dataset}\n\n"));
    md.push_str("| cell | T | MSE | MAE |\n|---|---|---|---|\n");
    for g in &groups {
        let rows: Vec<&(String, String, f64, f64)> =
            summary.iter().filter(|r| &r.0 == g).collect();
        for (label, t, mse, mae) in rows.iter() {
            md.push_str(&format!("| {label} | {t} | {mse:.4} | {mae:.4} |\n"));
        }
        if rows.len() > 1 {
            let avg_mse = mean(&rows.iter().map(|r| r.2).collect::<Vec<_>>());
            let avg_mae = mean(&rows.iter().map(|r| r.3).collect::<Vec<_>>());
            md.push_str(&format!("| {g} | avg | {avg_mse:.4} | {avg_mae:.4} |\n"));
        }
    }
    std::fs::write(args.run.out.join("summary.md"), &md)?;
    print!("{md}");
    println!("rows appended to {}", args.run.out.join("results.csv").display());
    Ok(())
}

pub fn cmd_inspect(checkpoint_path: &Path) -> Result<()> {
    if !checkpoint_path.exists() {
        return Err(anyhow!(
            "checkpoint not found: {}",
            checkpoint_path.display()
        ));
    }
    let (config, params) = checkpoint::load(checkpoint_path)?;
    println!("config: {}", serde_json::to_string_pretty(&config)?);
    println!("{:<24} {:>12} {:>10}", "tensor", "shape", "values");
    let mut total = 0usize;
    for (name, p) in params.visit() {
        let (shape, n) = match p {
            ParamRef::Real(t) => (format!("{:?}", t.shape), t.data.len()),
            ParamRef::Complex(t) => (format!("{:?} ℂ", t.shape), 2 * t.re.len()),
        };
        total += n;
        println!("{name:<24} {shape:>12} {n:>10}");
    }
    println!("total 64-bit values: {total}");
    Ok(())
}

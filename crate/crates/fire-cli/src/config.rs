//! Run configuration: dataset presets, plain key=value config files, and
//! flag resolution with CLI > file > preset precedence. The resolved
//! configuration is echoed into every output for reproducibility.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use fire_core::data::{FillPolicy, SplitSpec};
use fire_core::loss::{LossAblation, LossConfig, PhaseSource};
use fire_core::model::{DriftAxis, ModelConfig, Variant};
use fire_core::trainer::{MetricsScale, TrainConfig};

/// Per-dataset defaults: split protocol, expected channel count, and the
/// patch geometry that works best on that data.
pub struct Preset {
    pub name: &'static str,
    pub split: SplitSpec,
    pub channels: Option<usize>,
    pub patch_len: usize,
    pub stride: usize,
}

pub fn preset(name: &str) -> Result<Preset> {
    let p = match name {
        "etth1" | "etth2" => Preset {
            name: "etth",
            split: SplitSpec::Etth,
            channels: Some(7),
            patch_len: 16,
            stride: 8,
        },
        "ettm1" | "ettm2" => Preset {
            name: "ettm",
            split: SplitSpec::Ettm,
            channels: Some(7),
            patch_len: 16,
            stride: 8,
        },
        "weather" => Preset {
            name: "weather",
            split: SplitSpec::Ratio712,
            channels: Some(21),
            patch_len: 16,
            stride: 8,
        },
        "traffic" => Preset {
            name: "traffic",
            split: SplitSpec::Ratio712,
            channels: Some(862),
            patch_len: 16,
            stride: 8,
        },
        "elc" | "electricity" => Preset {
            name: "elc",
            split: SplitSpec::Ratio712,
            channels: Some(321),
            patch_len: 32,
            stride: 16,
        },
        "none" => Preset {
            name: "none",
            split: SplitSpec::Ratio712,
            channels: None,
            patch_len: 16,
            stride: 8,
        },
        other => bail!(
            "unknown preset `{other}` (etth1|etth2|ettm1|ettm2|weather|traffic|elc|none)"
        ),
    };
    Ok(p)
}

/// Flat key=value file; `#` starts a comment. Keys match the long CLI flags.
pub fn read_config_file(path: &Path) -> Result<HashMap<String, String>> {
    const KNOWN: &[&str] = &[
        "horizon",
        "lookback",
        "patch-len",
        "stride",
        "dim",
        "attn-dim",
        "blocks",
        "variant",
        "drift-axis",
        "loss",
        "delta",
        "tau-hat",
        "lambda",
        "w-fft",
        "phase-source",
        "lr",
        "batch",
        "epochs",
        "patience",
        "clip",
        "seed",
        "metrics-scale",
        "fill",
    ];
    let raw = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    let mut map = HashMap::new();
    for (lineno, line) in raw.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected key=value", lineno + 1))?;
        let key = key.trim().to_string();
        if !KNOWN.contains(&key.as_str()) {
            bail!("config line {}: unknown key `{key}`", lineno + 1);
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

fn file_get<T: FromStr>(file: &HashMap<String, String>, key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match file.get(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse::<T>()
            .map(Some)
            .map_err(|e| anyhow!("config key `{key}`: {e}")),
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>, fallback: T) -> T {
    flag.or(file).unwrap_or(fallback)
}

/// Shared knobs across train/eval/bench, before resolution.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct RunArgs {
    /// Dataset CSV (header row; first column timestamps).
    #[arg(long)]
    pub data: PathBuf,
    /// Dataset preset: etth1|etth2|ettm1|ettm2|weather|traffic|elc|none.
    #[arg(long, default_value = "none")]
    pub preset: String,
    /// Optional key=value config file (CLI flags win over it).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub lookback: Option<usize>,
    #[arg(long = "patch-len")]
    pub patch_len: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Embedding width D.
    #[arg(long = "dim")]
    pub dim: Option<usize>,
    /// Attention projection width d.
    #[arg(long = "attn-dim")]
    pub attn_dim: Option<usize>,
    /// Backbone repetitions.
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Backbone ablation: full|advanced|base.
    #[arg(long)]
    pub variant: Option<String>,
    /// Drift-linear mixing axis: patch|feature.
    #[arg(long = "drift-axis")]
    pub drift_axis: Option<String>,
    /// Loss ablation: full|enhanced|advanced|base.
    #[arg(long = "loss")]
    pub loss: Option<String>,
    /// Huber threshold δ.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Strong-convergence weight τ̂ ∈ [0,1].
    #[arg(long = "tau-hat")]
    pub tau_hat: Option<f64>,
    /// Phase-penalty weight λ.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Frequency-MAE weight.
    #[arg(long = "w-fft")]
    pub w_fft: Option<f64>,
    /// Phase vector the penalty reads: features|spectrum.
    #[arg(long = "phase-source")]
    pub phase_source: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long = "batch")]
    pub batch: Option<usize>,
    #[arg(long = "epochs")]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Gradient clip by global norm; `none` disables.
    #[arg(long)]
    pub clip: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// normalized|raw.
    #[arg(long = "metrics-scale")]
    pub metrics_scale: Option<String>,
    /// Missing-value policy: drop|ffill.
    #[arg(long)]
    pub fill: Option<String>,
    /// Output directory for run artifacts.
    #[arg(long, default_value = "runs/latest")]
    pub out: PathBuf,
}

/// Fully resolved run: everything a command needs, serializable for echo.
#[derive(Clone, Debug, Serialize)]
pub struct ResolvedRun {
    pub dataset: String,
    pub preset: String,
    pub split: String,
    pub fill: FillPolicy,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

impl ResolvedRun {
    pub fn split_spec(&self) -> SplitSpec {
        match self.split.as_str() {
            "etth" => SplitSpec::Etth,
            "ettm" => SplitSpec::Ettm,
            _ => SplitSpec::Ratio712,
        }
    }

    /// FNV-1a over the canonical JSON echo; stable across runs and builds.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("resolved run serializes");
        let mut hash: u64 = 0xcbf29ce484222325;
        for b in json.as_bytes() {
            hash ^= *b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        format!("{hash:016x}")
    }
}

pub fn resolve(args: &RunArgs) -> Result<ResolvedRun> {
    let preset = preset(&args.preset)?;
    let file = match &args.config {
        Some(p) => read_config_file(p)?,
        None => HashMap::new(),
    };

    let lookback = pick(args.lookback, file_get(&file, "lookback")?, 96);
    let horizon = pick(args.horizon, file_get(&file, "horizon")?, 96);
    let patch_len = pick(args.patch_len, file_get(&file, "patch-len")?, preset.patch_len);
    let stride = pick(
        args.stride,
        file_get(&file, "stride")?,
        (patch_len / 2).max(1),
    );
    let seed = pick(args.seed, file_get(&file, "seed")?, 0);

    let variant = pick(
        args.variant
            .as_deref()
            .map(Variant::from_str)
            .transpose()
            .map_err(|e| anyhow!(e))?,
        file_get(&file, "variant")?,
        Variant::Full,
    );
    let drift_axis = pick(
        args.drift_axis
            .as_deref()
            .map(DriftAxis::from_str)
            .transpose()
            .map_err(|e| anyhow!(e))?,
        file_get(&file, "drift-axis")?,
        DriftAxis::Patch,
    );

    let model = ModelConfig {
        lookback,
        horizon,
        patch_len,
        stride,
        embed_dim: pick(args.dim, file_get(&file, "dim")?, 64),
        attn_dim: pick(args.attn_dim, file_get(&file, "attn-dim")?, 16),
        n_blocks: pick(args.blocks, file_get(&file, "blocks")?, 1),
        variant,
        drift_axis,
        seed,
    };

    let loss = LossConfig {
        delta: pick(args.delta, file_get(&file, "delta")?, 1.0),
        tau_hat: pick(args.tau_hat, file_get(&file, "tau-hat")?, 0.9),
        lambda: pick(args.lambda, file_get(&file, "lambda")?, 1.0),
        w_fft: pick(args.w_fft, file_get(&file, "w-fft")?, 1.0),
        ablation: pick(
            args.loss
                .as_deref()
                .map(LossAblation::from_str)
                .transpose()
                .map_err(|e| anyhow!(e))?,
            file_get(&file, "loss")?,
            LossAblation::Full,
        ),
        phase_source: pick(
            args.phase_source
                .as_deref()
                .map(PhaseSource::from_str)
                .transpose()
                .map_err(|e| anyhow!(e))?,
            file_get(&file, "phase-source")?,
            PhaseSource::DriftFeatures,
        ),
    };

    let clip_raw: Option<String> = args.clip.clone().or_else(|| file.get("clip").cloned());
    let clip_norm = match clip_raw.as_deref() {
        None => Some(5.0),
        Some("none") | Some("off") => None,
        Some(v) => Some(
            v.parse::<f64>()
                .map_err(|_| anyhow!("--clip expects a number or `none`, got `{v}`"))?,
        ),
    };

    let train = TrainConfig {
        lr: pick(args.lr, file_get(&file, "lr")?, 2e-3),
        batch_size: pick(args.batch, file_get(&file, "batch")?, 64),
        max_epochs: pick(args.epochs, file_get(&file, "epochs")?, 100),
        patience: pick(args.patience, file_get(&file, "patience")?, 8),
        clip_norm,
        metrics_scale: pick(
            args.metrics_scale
                .as_deref()
                .map(MetricsScale::from_str)
                .transpose()
                .map_err(|e| anyhow!(e))?,
            file_get(&file, "metrics-scale")?,
            MetricsScale::Normalized,
        ),
        seed,
        per_channel_batches: false,
    };

    let fill_raw: Option<String> = args.fill.clone().or_else(|| file.get("fill").cloned());
    let fill = match fill_raw.as_deref() {
        None | Some("drop") => FillPolicy::Drop,
        Some("ffill") | Some("forward-fill") => FillPolicy::ForwardFill,
        Some(v) => bail!("--fill expects drop|ffill, got `{v}`"),
    };

    Ok(ResolvedRun {
        dataset: args.data.display().to_string(),
        preset: args.preset.clone(),
        split: match preset.split {
            SplitSpec::Etth => "etth".into(),
            SplitSpec::Ettm => "ettm".into(),
            _ => "ratio712".into(),
        },
        fill,
        model,
        loss,
        train,
    })
}

/// Expected channel count of the preset, for the post-load check.
pub fn preset_channels(name: &str) -> Option<usize> {
    preset(name).ok().and_then(|p| p.channels)
}

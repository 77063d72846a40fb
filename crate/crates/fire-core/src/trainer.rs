//! Adam optimization with mini-batches, seeded shuffling, gradient
//! clipping, patience-based early stopping, and MSE/MAE evaluation.
//!
//! One training step records one tape over a batch: parameters register as
//! leaves once, every window's forward reuses them, so the backward pass
//! accumulates batch gradients directly. The tape drops at the end of the
//! step.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{denormalize, WindowSet};
use crate::loss::{composite_on_tape, BatchSample, LossConfig, PhaseSource};
use crate::model::{forward, AnyVar, ModelConfig, ModelParams, ParamMut, ParamVars};
use crate::tape::Tape;
use crate::tensor::TensorError;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// The learning-rate grid swept by `bench`.
pub const LR_GRID: [f64; 6] = [1e-2, 5e-3, 2e-3, 1e-3, 5e-4, 1e-4];

#[derive(Debug)]
pub enum TrainError {
    Core(TensorError),
    /// Loss went non-finite; names where.
    NanLoss { epoch: usize, step: usize },
    /// A gradient went non-finite; names the parameter.
    NanGradient { param: String },
    EmptySplit(&'static str),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Core(e) => write!(f, "{e}"),
            TrainError::NanLoss { epoch, step } => {
                write!(f, "training diverged: non-finite loss at epoch {epoch}, step {step}")
            }
            TrainError::NanGradient { param } => {
                write!(f, "non-finite gradient for parameter {param}")
            }
            TrainError::EmptySplit(which) => write!(f, "{which} split has no windows"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Core(e)
    }
}

/// Scale metrics are computed on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricsScale {
    /// Instance-normalized (the benchmark convention).
    Normalized,
    /// Original data units after denormalization.
    Raw,
}

impl std::str::FromStr for MetricsScale {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normalized" => Ok(MetricsScale::Normalized),
            "raw" => Ok(MetricsScale::Raw),
            other => Err(format!("unknown metrics scale `{other}` (normalized|raw)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without val improvement.
    pub patience: usize,
    /// Global-norm gradient clip; None disables.
    pub clip_norm: Option<f64>,
    pub metrics_scale: MetricsScale,
    pub seed: u64,
    /// Group batches by channel instead of pooling all channels.
    pub per_channel_batches: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-3,
            batch_size: 64,
            max_epochs: 100,
            patience: 8,
            clip_norm: Some(5.0),
            metrics_scale: MetricsScale::Normalized,
            seed: 0,
            per_channel_batches: false,
        }
    }
}

/// First/second moment buffers, one pair per real buffer (complex
/// parameters contribute their re and im buffers separately).
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let mut sizes = Vec::new();
        for (_, p) in params.visit() {
            match p {
                crate::model::ParamRef::Real(t) => sizes.push(t.data.len()),
                crate::model::ParamRef::Complex(t) => {
                    sizes.push(t.re.len());
                    sizes.push(t.im.len());
                }
            }
        }
        AdamState {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Gradients for one parameter, mirroring its storage.
#[derive(Clone, Debug)]
pub enum GradBuf {
    Real(Vec<f64>),
    Complex(Vec<f64>, Vec<f64>),
}

/// Pull parameter gradients off a backpropagated tape, in `visit` order.
pub fn collect_grads(tape: &Tape, vars: &ParamVars) -> Vec<GradBuf> {
    vars.ordered()
        .into_iter()
        .map(|v| match v {
            AnyVar::Real(v) => GradBuf::Real(tape.grad(v).to_vec()),
            AnyVar::Complex(v) => {
                let (re, im) = tape.grad_c(v);
                GradBuf::Complex(re.to_vec(), im.to_vec())
            }
        })
        .collect()
}

/// Bias-corrected Adam update of one flat buffer.
pub fn adam_update_buffer(
    data: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
) {
    let bc1 = 1.0 - ADAM_BETA1.powi(step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
    for i in 0..data.len() {
        let g = grad[i];
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        data[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// One optimizer step over every parameter. Complex parameters update on
/// their re/im buffers independently. Rejects non-finite gradients by name.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &[GradBuf],
    state: &mut AdamState,
    lr: f64,
) -> Result<(), TrainError> {
    // validate first so a NaN never half-applies
    for ((name, _), g) in params.visit().iter().zip(grads) {
        let bad = match g {
            GradBuf::Real(g) => g.iter().any(|v| !v.is_finite()),
            GradBuf::Complex(re, im) => re.iter().chain(im.iter()).any(|v| !v.is_finite()),
        };
        if bad {
            return Err(TrainError::NanGradient {
                param: name.clone(),
            });
        }
    }
    state.step += 1;
    let step = state.step;
    let mut buf = 0usize;
    for ((_, p), g) in params.visit_mut().into_iter().zip(grads) {
        match (p, g) {
            (ParamMut::Real(t), GradBuf::Real(g)) => {
                adam_update_buffer(&mut t.data, g, &mut state.m[buf], &mut state.v[buf], step, lr);
                buf += 1;
            }
            (ParamMut::Complex(t), GradBuf::Complex(gre, gim)) => {
                adam_update_buffer(&mut t.re, gre, &mut state.m[buf], &mut state.v[buf], step, lr);
                buf += 1;
                adam_update_buffer(&mut t.im, gim, &mut state.m[buf], &mut state.v[buf], step, lr);
                buf += 1;
            }
            _ => unreachable!("grad kind mismatches parameter kind"),
        }
    }
    Ok(())
}

/// Scale gradients in place when their global L2 norm exceeds `max_norm`.
pub fn clip_global_norm(grads: &mut [GradBuf], max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for g in grads.iter() {
        match g {
            GradBuf::Real(g) => sq += g.iter().map(|v| v * v).sum::<f64>(),
            GradBuf::Complex(re, im) => {
                sq += re.iter().chain(im.iter()).map(|v| v * v).sum::<f64>()
            }
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            match g {
                GradBuf::Real(g) => g.iter_mut().for_each(|v| *v *= s),
                GradBuf::Complex(re, im) => {
                    re.iter_mut().for_each(|v| *v *= s);
                    im.iter_mut().for_each(|v| *v *= s);
                }
            }
        }
    }
    norm
}

/// Patience-based stopping on the validation loss.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_improvement: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience: patience.max(1),
            best: f64::INFINITY,
            best_epoch: 0,
            since_improvement: 0,
        }
    }

    /// Feed one epoch's val loss; returns (improved, should_stop).
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> (bool, bool) {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.since_improvement = 0;
            (true, false)
        } else {
            self.since_improvement += 1;
            (false, self.since_improvement >= self.patience)
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_val(&self) -> f64 {
        self.best
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss.
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val: f64,
}

fn select_phase(out: &crate::model::ForwardOut, source: PhaseSource) -> crate::tape::Var {
    match source {
        PhaseSource::DriftFeatures => out.drift_phase,
        PhaseSource::OutputSpectrum => out.spectrum_phase,
    }
}

/// Shuffled window order for one epoch: pooled across channels by default,
/// grouped per channel when requested.
fn epoch_order(
    windows: &WindowSet,
    rng: &mut ChaCha8Rng,
    per_channel: bool,
) -> Vec<usize> {
    let n = windows.len();
    if !per_channel {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        return idx;
    }
    let c = windows.n_channels();
    let mut idx = Vec::with_capacity(n);
    for ch in 0..c {
        let mut group: Vec<usize> = (0..windows.n_starts()).map(|s| s * c + ch).collect();
        group.shuffle(rng);
        idx.extend(group);
    }
    idx
}

/// Mean composite loss over a window set, forward-only.
pub fn validation_loss(
    params: &ModelParams,
    model_cfg: &ModelConfig,
    windows: &WindowSet,
    loss_cfg: &LossConfig,
) -> Result<f64, TrainError> {
    if windows.is_empty() {
        return Err(TrainError::EmptySplit("val"));
    }
    let mut acc = 0.0;
    for w in windows.iter() {
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let out = forward(&mut tape, &vars, &w, model_cfg)?;
        let sample = BatchSample {
            target: w.normalized_y(),
            y_pred: out.y_norm,
            phase: select_phase(&out, loss_cfg.phase_source),
        };
        let (_, report) = composite_on_tape(&mut tape, &[sample], loss_cfg)?;
        acc += report.total;
    }
    Ok(acc / windows.len() as f64)
}

/// Full optimization loop. Deterministic given the seeds in the configs.
pub fn train(
    model_cfg: &ModelConfig,
    train_windows: &WindowSet,
    val_windows: &WindowSet,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    if train_windows.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val_windows.is_empty() {
        return Err(TrainError::EmptySplit("val"));
    }
    loss_cfg.validate()?;
    let mut params = crate::model::init_params(model_cfg)?;
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut stopper = EarlyStopping::new(train_cfg.patience);
    let mut best_params = params.clone();
    let mut history = Vec::new();
    let batch = train_cfg.batch_size.max(1);

    for epoch in 1..=train_cfg.max_epochs {
        let order = epoch_order(train_windows, &mut rng, train_cfg.per_channel_batches);
        let mut train_loss_acc = 0.0;
        for (step, chunk) in order.chunks(batch).enumerate() {
            let mut tape = Tape::new();
            let vars = params.register(&mut tape);
            let mut samples = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let w = train_windows.get(i);
                let out = forward(&mut tape, &vars, &w, model_cfg)?;
                samples.push(BatchSample {
                    target: w.normalized_y(),
                    y_pred: out.y_norm,
                    phase: select_phase(&out, loss_cfg.phase_source),
                });
            }
            let (total, report) = composite_on_tape(&mut tape, &samples, loss_cfg)?;
            if !report.total.is_finite() {
                return Err(TrainError::NanLoss { epoch, step });
            }
            train_loss_acc += report.total * chunk.len() as f64;
            tape.backward(total)?;
            let mut grads = collect_grads(&tape, &vars);
            drop(tape);
            if let Some(max_norm) = train_cfg.clip_norm {
                clip_global_norm(&mut grads, max_norm);
            }
            adam_step(&mut params, &grads, &mut adam, train_cfg.lr)?;
        }
        let train_loss = train_loss_acc / order.len() as f64;
        let val_loss = validation_loss(&params, model_cfg, val_windows, loss_cfg)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            lr: train_cfg.lr,
        });
        let (improved, stop) = stopper.observe(epoch, val_loss);
        if improved {
            best_params = params.clone();
        }
        if stop {
            break;
        }
    }

    Ok(TrainOutcome {
        params: best_params,
        history,
        best_epoch: stopper.best_epoch(),
        best_val: stopper.best_val(),
    })
}

/// Mean squared / absolute error over prediction–target pairs.
pub fn metrics_from_pairs(pairs: &[(Vec<f64>, Vec<f64>)]) -> (f64, f64) {
    let mut se = 0.0;
    let mut ae = 0.0;
    let mut n = 0usize;
    for (pred, target) in pairs {
        for (p, t) in pred.iter().zip(target) {
            let e = p - t;
            se += e * e;
            ae += e.abs();
            n += 1;
        }
    }
    (se / n as f64, ae / n as f64)
}

/// (MSE, MAE) of a trained model over a window set, averaged across all
/// windows, channels, and horizon steps.
pub fn evaluate(
    params: &ModelParams,
    model_cfg: &ModelConfig,
    windows: &WindowSet,
    scale: MetricsScale,
) -> Result<(f64, f64), TrainError> {
    if windows.is_empty() {
        return Err(TrainError::EmptySplit("test"));
    }
    let mut se = 0.0;
    let mut ae = 0.0;
    let mut n = 0usize;
    for w in windows.iter() {
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let out = forward(&mut tape, &vars, &w, model_cfg)?;
        let y_norm = tape.value(out.y_norm);
        match scale {
            MetricsScale::Normalized => {
                for (p, t) in y_norm.iter().zip(w.normalized_y()) {
                    let e = p - t;
                    se += e * e;
                    ae += e.abs();
                    n += 1;
                }
            }
            MetricsScale::Raw => {
                let y = denormalize(y_norm, w.stats);
                for (p, t) in y.iter().zip(&w.y) {
                    let e = p - t;
                    se += e * e;
                    ae += e.abs();
                    n += 1;
                }
            }
        }
    }
    Ok((se / n as f64, ae / n as f64))
}

/// History CSV in the fixed epoch,train_loss,val_loss,lr layout.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,lr\n");
    for h in history {
        out.push_str(&format!(
            "{},{},{},{}\n",
            h.epoch, h.train_loss, h.val_loss, h.lr
        ));
    }
    out
}

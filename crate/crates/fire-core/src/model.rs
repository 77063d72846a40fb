//! The forecasting network: frequency embedding of overlapping patches,
//! complex intra-patch linear, disentangled amplitude/phase drift linears,
//! causal-attention basis evolution, and projection back to the time domain.
//!
//! One forward pass maps a normalized lookback window to a normalized
//! horizon prediction; denormalization happens at the caller with the
//! window's own stats.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{patch, Window};
use crate::spectral;
use crate::tape::{CVar, Tape, Var};
use crate::tensor::{CTensor, CoreResult, Tensor, TensorError};

/// Ablation switch over the backbone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Drift linears + causal-attention basis evolution.
    Full,
    /// Drift linears only; the attention stage is removed.
    Advanced,
    /// Simplified drift path: amplitude linear only (phase passes through),
    /// no attention.
    Base,
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Variant::Full),
            "advanced" => Ok(Variant::Advanced),
            "base" => Ok(Variant::Base),
            other => Err(format!("unknown variant `{other}` (full|advanced|base)")),
        }
    }
}

/// Which axis the drift linears mix.
///
/// The drift layers model correlations across patches, so the default mixes
/// the patch axis (weights [N_p × N_p], bias per patch). The feature-axis
/// reading (weights [D × D]) is kept selectable for comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftAxis {
    Patch,
    Feature,
}

impl std::str::FromStr for DriftAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "patch" => Ok(DriftAxis::Patch),
            "feature" => Ok(DriftAxis::Feature),
            other => Err(format!("unknown drift axis `{other}` (patch|feature)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub patch_len: usize,
    pub stride: usize,
    /// Embedding width D.
    pub embed_dim: usize,
    /// Attention projection width d.
    pub attn_dim: usize,
    /// Backbone repetitions (1 by default; exposed for scaling sweeps).
    pub n_blocks: usize,
    pub variant: Variant,
    pub drift_axis: DriftAxis,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            lookback: 96,
            horizon: 96,
            patch_len: 16,
            stride: 8,
            embed_dim: 64,
            attn_dim: 16,
            n_blocks: 1,
            variant: Variant::Full,
            drift_axis: DriftAxis::Patch,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> CoreResult<()> {
        if self.embed_dim == 0 || self.attn_dim == 0 {
            return Err(TensorError::Invalid("embed_dim and attn_dim must be ≥ 1"));
        }
        if self.patch_len == 0 || self.patch_len > self.lookback {
            return Err(TensorError::Invalid("need 0 < patch_len ≤ lookback"));
        }
        if self.stride == 0 {
            return Err(TensorError::Invalid("stride must be ≥ 1"));
        }
        if self.n_blocks == 0 {
            return Err(TensorError::Invalid("n_blocks must be ≥ 1"));
        }
        if self.horizon == 0 || self.lookback == 0 {
            return Err(TensorError::Invalid("lookback and horizon must be ≥ 1"));
        }
        Ok(())
    }

    /// One-sided bins per patch.
    pub fn f_patch(&self) -> usize {
        spectral::one_sided_len(self.patch_len)
    }

    /// Patches per lookback.
    pub fn n_patches(&self) -> usize {
        (self.lookback - self.patch_len) / self.stride + 1
    }

    /// One-sided bins of the horizon.
    pub fn f_out(&self) -> usize {
        spectral::one_sided_len(self.horizon)
    }

    fn drift_dim(&self) -> usize {
        match self.drift_axis {
            DriftAxis::Patch => self.n_patches(),
            DriftAxis::Feature => self.embed_dim,
        }
    }
}

/// Learnable tensors of one backbone block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    /// Intra-patch complex linear [D × D] and bias [D].
    pub w_intra: CTensor,
    pub b_intra: CTensor,
    /// Amplitude drift linear (axis per config) and bias.
    pub w_amp: Tensor,
    pub b_amp: Tensor,
    /// Phase drift linear and bias.
    pub w_phase: Tensor,
    pub b_phase: Tensor,
    /// Attention projections [D × d].
    pub w_query: Tensor,
    pub w_key: Tensor,
    /// Intra-patch value projection [D × D] and bias [D].
    pub w_val: Tensor,
    pub b_val: Tensor,
}

/// All learnable tensors of one model instance.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// Frequency embedding [F_p × D], complex.
    pub w_embed: CTensor,
    pub blocks: Vec<BlockParams>,
    /// Output projection [(N_p·D) × F_out], complex.
    pub w_proj: CTensor,
}

/// Borrowed view of one named parameter buffer (complex params expose their
/// real and imaginary buffers separately).
pub enum ParamRef<'a> {
    Real(&'a Tensor),
    Complex(&'a CTensor),
}

pub enum ParamMut<'a> {
    Real(&'a mut Tensor),
    Complex(&'a mut CTensor),
}

impl ModelParams {
    /// Named parameters in a stable order.
    pub fn visit(&self) -> Vec<(String, ParamRef<'_>)> {
        let mut out: Vec<(String, ParamRef)> =
            vec![("w_embed".into(), ParamRef::Complex(&self.w_embed))];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.w_intra"), ParamRef::Complex(&b.w_intra)));
            out.push((format!("block{i}.b_intra"), ParamRef::Complex(&b.b_intra)));
            out.push((format!("block{i}.w_amp"), ParamRef::Real(&b.w_amp)));
            out.push((format!("block{i}.b_amp"), ParamRef::Real(&b.b_amp)));
            out.push((format!("block{i}.w_phase"), ParamRef::Real(&b.w_phase)));
            out.push((format!("block{i}.b_phase"), ParamRef::Real(&b.b_phase)));
            out.push((format!("block{i}.w_query"), ParamRef::Real(&b.w_query)));
            out.push((format!("block{i}.w_key"), ParamRef::Real(&b.w_key)));
            out.push((format!("block{i}.w_val"), ParamRef::Real(&b.w_val)));
            out.push((format!("block{i}.b_val"), ParamRef::Real(&b.b_val)));
        }
        out.push(("w_proj".into(), ParamRef::Complex(&self.w_proj)));
        out
    }

    /// Mutable traversal in the same order as [`visit`](Self::visit).
    pub fn visit_mut(&mut self) -> Vec<(String, ParamMut<'_>)> {
        let mut out: Vec<(String, ParamMut)> =
            vec![("w_embed".into(), ParamMut::Complex(&mut self.w_embed))];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("block{i}.w_intra"), ParamMut::Complex(&mut b.w_intra)));
            out.push((format!("block{i}.b_intra"), ParamMut::Complex(&mut b.b_intra)));
            out.push((format!("block{i}.w_amp"), ParamMut::Real(&mut b.w_amp)));
            out.push((format!("block{i}.b_amp"), ParamMut::Real(&mut b.b_amp)));
            out.push((format!("block{i}.w_phase"), ParamMut::Real(&mut b.w_phase)));
            out.push((format!("block{i}.b_phase"), ParamMut::Real(&mut b.b_phase)));
            out.push((format!("block{i}.w_query"), ParamMut::Real(&mut b.w_query)));
            out.push((format!("block{i}.w_key"), ParamMut::Real(&mut b.w_key)));
            out.push((format!("block{i}.w_val"), ParamMut::Real(&mut b.w_val)));
            out.push((format!("block{i}.b_val"), ParamMut::Real(&mut b.b_val)));
        }
        out.push(("w_proj".into(), ParamMut::Complex(&mut self.w_proj)));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.visit().iter().all(|(_, p)| match p {
            ParamRef::Real(t) => t.is_finite(),
            ParamRef::Complex(t) => t.is_finite(),
        })
    }

    /// Register every parameter as a tape leaf, in `visit` order.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        let w_embed = tape.leaf_c(&self.w_embed);
        let blocks = self
            .blocks
            .iter()
            .map(|b| BlockVars {
                w_intra: tape.leaf_c(&b.w_intra),
                b_intra: tape.leaf_c(&b.b_intra),
                w_amp: tape.leaf(&b.w_amp),
                b_amp: tape.leaf(&b.b_amp),
                w_phase: tape.leaf(&b.w_phase),
                b_phase: tape.leaf(&b.b_phase),
                w_query: tape.leaf(&b.w_query),
                w_key: tape.leaf(&b.w_key),
                w_val: tape.leaf(&b.w_val),
                b_val: tape.leaf(&b.b_val),
            })
            .collect();
        ParamVars {
            w_embed,
            blocks,
            w_proj: tape.leaf_c(&self.w_proj),
        }
    }
}

/// Tape handles for one block's parameters.
#[derive(Clone)]
pub struct BlockVars {
    pub w_intra: CVar,
    pub b_intra: CVar,
    pub w_amp: Var,
    pub b_amp: Var,
    pub w_phase: Var,
    pub b_phase: Var,
    pub w_query: Var,
    pub w_key: Var,
    pub w_val: Var,
    pub b_val: Var,
}

/// Tape handles for all parameters, aligned with `ModelParams::visit` order.
#[derive(Clone)]
pub struct ParamVars {
    pub w_embed: CVar,
    pub blocks: Vec<BlockVars>,
    pub w_proj: CVar,
}

/// A tape handle to either kind of parameter, in `visit` order.
pub enum AnyVar {
    Real(Var),
    Complex(CVar),
}

impl ParamVars {
    pub fn ordered(&self) -> Vec<AnyVar> {
        let mut out = vec![AnyVar::Complex(self.w_embed)];
        for b in &self.blocks {
            out.push(AnyVar::Complex(b.w_intra));
            out.push(AnyVar::Complex(b.b_intra));
            out.push(AnyVar::Real(b.w_amp));
            out.push(AnyVar::Real(b.b_amp));
            out.push(AnyVar::Real(b.w_phase));
            out.push(AnyVar::Real(b.b_phase));
            out.push(AnyVar::Real(b.w_query));
            out.push(AnyVar::Real(b.w_key));
            out.push(AnyVar::Real(b.w_val));
            out.push(AnyVar::Real(b.b_val));
        }
        out.push(AnyVar::Complex(self.w_proj));
        out
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], gain: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-gain..gain)).collect();
    Tensor::from_vec(shape, data).expect("shape/product consistent")
}

fn uniform_c(rng: &mut ChaCha8Rng, shape: &[usize], gain: f64) -> CTensor {
    let n: usize = shape.iter().product();
    let re = (0..n).map(|_| rng.gen_range(-gain..gain)).collect();
    let im = (0..n).map(|_| rng.gen_range(-gain..gain)).collect();
    CTensor::from_parts(shape, re, im).expect("shape/product consistent")
}

/// Deterministic scaled-uniform initialization: gain 1/√fan_in per real
/// matrix, 1/√(2·fan_in) on each part of a complex matrix, zero biases.
pub fn init_params(config: &ModelConfig) -> CoreResult<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = self::dim(config);
    let f_p = config.f_patch();
    let n_p = config.n_patches();
    let dd = config.drift_dim();

    let w_embed = uniform_c(&mut rng, &[f_p, d], 1.0 / ((2 * f_p) as f64).sqrt());
    let mut blocks = Vec::with_capacity(config.n_blocks);
    for _ in 0..config.n_blocks {
        blocks.push(BlockParams {
            w_intra: uniform_c(&mut rng, &[d, d], 1.0 / ((2 * d) as f64).sqrt()),
            b_intra: CTensor::zeros(&[d]),
            w_amp: uniform(&mut rng, &[dd, dd], 1.0 / (dd as f64).sqrt()),
            b_amp: Tensor::zeros(&[dd]),
            w_phase: uniform(&mut rng, &[dd, dd], 1.0 / (dd as f64).sqrt()),
            b_phase: Tensor::zeros(&[dd]),
            w_query: uniform(&mut rng, &[d, config.attn_dim], 1.0 / (d as f64).sqrt()),
            w_key: uniform(&mut rng, &[d, config.attn_dim], 1.0 / (d as f64).sqrt()),
            w_val: uniform(&mut rng, &[d, d], 1.0 / (d as f64).sqrt()),
            b_val: Tensor::zeros(&[d]),
        });
    }
    let w_proj = uniform_c(
        &mut rng,
        &[n_p * d, config.f_out()],
        1.0 / ((2 * n_p * d) as f64).sqrt(),
    );
    Ok(ModelParams {
        w_embed,
        blocks,
        w_proj,
    })
}

fn dim(config: &ModelConfig) -> usize {
    config.embed_dim
}

/// Everything a loss needs from one forward pass.
pub struct ForwardOut {
    /// Normalized-scale prediction, length `horizon`.
    pub y_norm: Var,
    /// Phase features after the drift stage (last block, last patch row),
    /// length D.
    pub drift_phase: Var,
    /// Phase of the projected output spectrum, length F_out.
    pub spectrum_phase: Var,
}

/// Patch spectra of a normalized lookback: rows are one-sided transforms of
/// each patch, [N_p × F_p].
pub fn patch_spectra(x_norm: &[f64], config: &ModelConfig) -> CoreResult<CTensor> {
    let ps = patch(x_norm, config.patch_len, config.stride)
        .map_err(|_| TensorError::Invalid("patching failed: lookback/patch_len mismatch"))?;
    let f_p = config.f_patch();
    let mut re = Vec::with_capacity(ps.n_patches * f_p);
    let mut im = Vec::with_capacity(ps.n_patches * f_p);
    for p in 0..ps.n_patches {
        let (r, i) = spectral::rfft_raw(ps.row(p));
        re.extend_from_slice(&r);
        im.extend_from_slice(&i);
    }
    CTensor::from_parts(&[ps.n_patches, f_p], re, im)
}

/// Embed patch spectra into the feature space: H_i = X_P · W_embed.
pub fn embed(tape: &mut Tape, spectra: &CTensor, vars: &ParamVars) -> CoreResult<CVar> {
    let xp = tape.constant_c(spectra);
    tape.cmatmul(xp, vars.w_embed)
}

/// Causal mask: 0 at q ≤ p, −inf at q > p.
pub fn causal_mask(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for p in 0..n {
        for q in p + 1..n {
            m[p * n + q] = f64::NEG_INFINITY;
        }
    }
    m
}

/// Drift stage of one block: complex intra-patch linear, polar split, and
/// the amplitude/phase drift linears. Returns (Â, φ̂).
pub fn drift_stage(
    tape: &mut Tape,
    blk: &BlockVars,
    h: CVar,
    config: &ModelConfig,
) -> CoreResult<(Var, Var)> {
    let hp = {
        let t = tape.cmatmul(h, blk.w_intra)?;
        tape.cadd_row_vec(t, blk.b_intra)?
    };
    let (amp, phase) = tape.polar_decompose(hp);
    let (a_hat, phi_hat) = match config.drift_axis {
        DriftAxis::Patch => {
            let a = tape.matmul(blk.w_amp, amp)?;
            let a = tape.add_col_vec(a, blk.b_amp)?;
            let p = if config.variant == Variant::Base {
                phase
            } else {
                let p = tape.matmul(blk.w_phase, phase)?;
                tape.add_col_vec(p, blk.b_phase)?
            };
            (a, p)
        }
        DriftAxis::Feature => {
            let a = tape.matmul(amp, blk.w_amp)?;
            let a = tape.add_row_vec(a, blk.b_amp)?;
            let p = if config.variant == Variant::Base {
                phase
            } else {
                let p = tape.matmul(phase, blk.w_phase)?;
                tape.add_row_vec(p, blk.b_phase)?
            };
            (a, p)
        }
    };
    Ok((a_hat, phi_hat))
}

/// Basis-evolution stage: rebuild the complex bases B from (Â, φ̂) and, for
/// the full variant, modulate them with causally-attended weights U.
/// Returns H_o and, when attention ran, its weight matrix.
pub fn evolve_basis(
    tape: &mut Tape,
    blk: &BlockVars,
    a_hat: Var,
    phi_hat: Var,
    variant: Variant,
    attn_dim: usize,
) -> CoreResult<(CVar, Option<Var>)> {
    let basis = tape.polar_recompose(a_hat, phi_hat)?;
    if variant != Variant::Full {
        return Ok((basis, None));
    }
    let q = tape.matmul(a_hat, blk.w_query)?;
    let k = tape.matmul(a_hat, blk.w_key)?;
    let scores = tape.matmul_nt(q, k)?;
    let scores = tape.scale(scores, 1.0 / (attn_dim as f64).sqrt());
    let n_p = tape.shape(scores)[0];
    let scores = tape.add_const(scores, &causal_mask(n_p))?;
    let attn = tape.softmax_rows(scores)?;
    let v = {
        let t = tape.matmul_nt(a_hat, blk.w_val)?;
        tape.add_row_vec(t, blk.b_val)?
    };
    let u = tape.matmul(attn, v)?;
    let h_o = tape.scale_complex(u, basis)?;
    Ok((h_o, Some(attn)))
}

/// Full backbone: `n_blocks` repetitions of drift + basis evolution.
/// Returns H_o and the last block's φ̂.
pub fn backbone(
    tape: &mut Tape,
    vars: &ParamVars,
    h_in: CVar,
    config: &ModelConfig,
) -> CoreResult<(CVar, Var)> {
    let mut h = h_in;
    let mut last_phase = None;
    for blk in &vars.blocks {
        let (a_hat, phi_hat) = drift_stage(tape, blk, h, config)?;
        let (h_o, _) = evolve_basis(tape, blk, a_hat, phi_hat, config.variant, config.attn_dim)?;
        h = h_o;
        last_phase = Some(phi_hat);
    }
    Ok((h, last_phase.expect("n_blocks ≥ 1 validated")))
}

/// Output projection: flatten H_o, project to the horizon's one-sided bins,
/// and synthesize the normalized-scale prediction.
pub fn project(
    tape: &mut Tape,
    vars: &ParamVars,
    h_o: CVar,
    config: &ModelConfig,
) -> CoreResult<(Var, Var)> {
    let flat_len = config.n_patches() * config.embed_dim;
    let flat = tape.reshape_c(h_o, &[1, flat_len])?;
    let bins = tape.cmatmul(flat, vars.w_proj)?;
    let (_, spectrum_phase) = tape.polar_decompose(bins);
    let y_norm = tape.irfft(bins, config.horizon)?;
    Ok((y_norm, spectrum_phase))
}

/// One end-to-end pass over a window, on an existing tape with registered
/// parameters. Pure in (window, params); the caller denormalizes.
pub fn forward(
    tape: &mut Tape,
    vars: &ParamVars,
    window: &Window,
    config: &ModelConfig,
) -> CoreResult<ForwardOut> {
    let x_norm = window.normalized_x();
    if x_norm.len() != config.lookback {
        return Err(TensorError::ShapeMismatch {
            op: "forward",
            lhs: vec![x_norm.len()],
            rhs: vec![config.lookback],
        });
    }
    let spectra = patch_spectra(&x_norm, config)?;
    let h_i = embed(tape, &spectra, vars)?;
    let (h_o, phi_hat) = backbone(tape, vars, h_i, config)?;
    let (y_norm, spectrum_phase) = project(tape, vars, h_o, config)?;
    let n_p = config.n_patches();
    let drift_phase = tape.row_slice(phi_hat, n_p - 1)?;
    Ok(ForwardOut {
        y_norm,
        drift_phase,
        spectrum_phase,
    })
}

/// Inference convenience: run one window through a throwaway tape and
/// denormalize with the window's stats.
pub fn predict(params: &ModelParams, window: &Window, config: &ModelConfig) -> CoreResult<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let out = forward(&mut tape, &vars, window, config)?;
    let y_norm = tape.value(out.y_norm);
    Ok(crate::data::denormalize(y_norm, window.stats))
}

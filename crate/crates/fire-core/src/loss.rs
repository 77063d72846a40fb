//! The composite objective: hybrid-convergence weighted pseudo-Huber,
//! frequency-domain MAE, and a phase smoothness penalty, with the ablation
//! switches that strip terms one by one.

use serde::{Deserialize, Serialize};

use crate::spectral;
use crate::tape::{Tape, Var};
use crate::tensor::{CoreResult, Tensor, TensorError};

/// Which loss terms are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossAblation {
    /// Weighted Huber + frequency MAE + phase penalty.
    Full,
    /// Drops the phase penalty.
    Enhanced,
    /// Drops the phase penalty and the frequency MAE.
    Advanced,
    /// Plain unweighted Huber only.
    Base,
}

impl std::str::FromStr for LossAblation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(LossAblation::Full),
            "enhanced" => Ok(LossAblation::Enhanced),
            "advanced" => Ok(LossAblation::Advanced),
            "base" => Ok(LossAblation::Base),
            other => Err(format!(
                "unknown loss ablation `{other}` (full|enhanced|advanced|base)"
            )),
        }
    }
}

/// Which phase vector the smoothness penalty reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseSource {
    /// Drift-stage phase features (last patch row), along the feature axis.
    DriftFeatures,
    /// Phase of the projected output spectrum, along the frequency axis.
    OutputSpectrum,
}

impl std::str::FromStr for PhaseSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "features" => Ok(PhaseSource::DriftFeatures),
            "spectrum" => Ok(PhaseSource::OutputSpectrum),
            other => Err(format!(
                "unknown phase source `{other}` (features|spectrum)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Huber transition threshold δ.
    pub delta: f64,
    /// Strong-convergence weight τ̂ ∈ [0,1]; τ = 1−τ̂ goes to the weak term.
    pub tau_hat: f64,
    /// Phase penalty weight λ.
    pub lambda: f64,
    /// Frequency-MAE weight.
    pub w_fft: f64,
    pub ablation: LossAblation,
    pub phase_source: PhaseSource,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            delta: 1.0,
            tau_hat: 0.9,
            lambda: 1.0,
            w_fft: 1.0,
            ablation: LossAblation::Full,
            phase_source: PhaseSource::DriftFeatures,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> CoreResult<()> {
        if self.delta <= 0.0 {
            return Err(TensorError::Invalid("loss: delta must be positive"));
        }
        if !(0.0..=1.0).contains(&self.tau_hat) {
            return Err(TensorError::Invalid("loss: tau_hat must lie in [0,1]"));
        }
        if self.lambda < 0.0 || self.w_fft < 0.0 {
            return Err(TensorError::Invalid("loss: term weights must be ≥ 0"));
        }
        Ok(())
    }

    pub fn phase_term_active(&self) -> bool {
        matches!(self.ablation, LossAblation::Full)
    }

    pub fn fft_term_active(&self) -> bool {
        matches!(self.ablation, LossAblation::Full | LossAblation::Enhanced)
    }

    pub fn hybrid_weighting_active(&self) -> bool {
        !matches!(self.ablation, LossAblation::Base)
    }
}

/// Per-term values of one composite evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossReport {
    pub total: f64,
    pub huber: f64,
    pub fft: f64,
    pub phase_reg: f64,
}

// ── pure evaluations (also the oracles for the tape path) ───────────────

/// Mean pseudo-Huber: (1/L)·Σ δ²(√(1+(e/δ)²)−1).
pub fn pseudo_huber(y_true: &[f64], y_pred: &[f64], delta: f64) -> CoreResult<f64> {
    if y_true.len() != y_pred.len() {
        return Err(TensorError::ShapeMismatch {
            op: "pseudo_huber",
            lhs: vec![y_true.len()],
            rhs: vec![y_pred.len()],
        });
    }
    if delta <= 0.0 {
        return Err(TensorError::Invalid("pseudo_huber: delta must be positive"));
    }
    let d2 = delta * delta;
    let sum: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(t, p)| {
            let e = t - p;
            d2 * ((1.0 + (e / delta) * (e / delta)).sqrt() - 1.0)
        })
        .sum();
    Ok(sum / y_true.len() as f64)
}

/// The single all-ones predicate the objective uses by default.
pub fn default_predicates(batch: usize) -> Vec<Vec<f64>> {
    vec![vec![1.0; batch]]
}

/// Mixing matrix W = τ̂·I + (1−τ̂)·P with P the row-normalized empirical
/// predicate covariance (1/m)·Σ ψ_s·ψ_sᵀ. For the default ψ≡1 this is
/// τ̂·I + (1−τ̂)·J/B, which is row-stochastic.
pub fn hybrid_weight_matrix(
    batch: usize,
    tau_hat: f64,
    predicates: &[Vec<f64>],
) -> CoreResult<Tensor> {
    if batch == 0 {
        return Err(TensorError::EmptyInput("hybrid_weight_matrix"));
    }
    if !(0.0..=1.0).contains(&tau_hat) {
        return Err(TensorError::Invalid("tau_hat must lie in [0,1]"));
    }
    if predicates.is_empty() || predicates.iter().any(|p| p.len() != batch) {
        return Err(TensorError::Invalid(
            "predicates must be non-empty vectors of batch length",
        ));
    }
    let m = predicates.len() as f64;
    let mut p = vec![0.0; batch * batch];
    for psi in predicates {
        for i in 0..batch {
            for j in 0..batch {
                p[i * batch + j] += psi[i] * psi[j] / m;
            }
        }
    }
    // Row-normalize so the weak term stays on the same scale as the strong
    // one regardless of batch size.
    for i in 0..batch {
        let row_sum: f64 = p[i * batch..(i + 1) * batch].iter().sum();
        if row_sum <= 0.0 {
            return Err(TensorError::Invalid(
                "predicate covariance has a non-positive row mass",
            ));
        }
        for j in 0..batch {
            p[i * batch + j] /= row_sum;
        }
    }
    let tau = 1.0 - tau_hat;
    let mut w = vec![0.0; batch * batch];
    for i in 0..batch {
        for j in 0..batch {
            w[i * batch + j] = tau * p[i * batch + j] + if i == j { tau_hat } else { 0.0 };
        }
    }
    Tensor::from_vec(&[batch, batch], w)
}

/// (1/B)·1ᵀ·W·ℓ — the mixed per-sample losses averaged over the batch.
pub fn weighted_huber(losses: &[f64], w: &Tensor) -> CoreResult<f64> {
    let b = losses.len();
    if w.shape != vec![b, b] {
        return Err(TensorError::ShapeMismatch {
            op: "weighted_huber",
            lhs: w.shape.clone(),
            rhs: vec![b, b],
        });
    }
    let mut acc = 0.0;
    for i in 0..b {
        for j in 0..b {
            acc += w.data[i * b + j] * losses[j];
        }
    }
    Ok(acc / b as f64)
}

/// Column weights c_b = (1/B)·Σ_i W[i,b], so that Σ c_b·ℓ_b = (1/B)·1ᵀWℓ.
fn batch_mix_coefficients(w: &Tensor) -> Vec<f64> {
    let b = w.shape[0];
    let mut c = vec![0.0; b];
    for i in 0..b {
        for j in 0..b {
            c[j] += w.data[i * b + j];
        }
    }
    for cj in &mut c {
        *cj /= b as f64;
    }
    c
}

/// Frequency-domain MAE over one-sided bins:
/// (1/N_f)·Σ_k |FFT(y_true)[k] − FFT(y_pred)[k]|.
pub fn fft_loss(y_true: &[f64], y_pred: &[f64]) -> CoreResult<f64> {
    if y_true.len() != y_pred.len() {
        return Err(TensorError::ShapeMismatch {
            op: "fft_loss",
            lhs: vec![y_true.len()],
            rhs: vec![y_pred.len()],
        });
    }
    if y_true.is_empty() {
        return Err(TensorError::EmptyInput("fft_loss"));
    }
    let (tr, ti) = spectral::rfft_raw(y_true);
    let (pr, pi) = spectral::rfft_raw(y_pred);
    let nf = tr.len() as f64;
    let mut acc = 0.0;
    for k in 0..tr.len() {
        let dr = tr[k] - pr[k];
        let di = ti[k] - pi[k];
        acc += (dr * dr + di * di).sqrt();
    }
    Ok(acc / nf)
}

/// λ·(1/(D−1))·Σ (φ[d+1]−φ[d])².
pub fn phase_regularizer(phases: &[f64], lambda: f64) -> CoreResult<f64> {
    if phases.len() < 2 {
        return Err(TensorError::Invalid(
            "phase_regularizer: need at least two phase entries",
        ));
    }
    let mut acc = 0.0;
    for i in 0..phases.len() - 1 {
        let d = phases[i + 1] - phases[i];
        acc += d * d;
    }
    Ok(lambda * acc / (phases.len() - 1) as f64)
}

// ── tape path ────────────────────────────────────────────────────────────

/// One batch element wired into the graph.
pub struct BatchSample {
    /// Normalized-scale target.
    pub target: Vec<f64>,
    /// Normalized-scale prediction node.
    pub y_pred: Var,
    /// Phase vector node for the smoothness penalty.
    pub phase: Var,
}

/// Build the composite objective over a batch. Reported terms sum exactly
/// to the total (same f64 additions, same order).
pub fn composite_on_tape(
    tape: &mut Tape,
    samples: &[BatchSample],
    cfg: &LossConfig,
) -> CoreResult<(Var, LossReport)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(TensorError::EmptyInput("composite_on_tape"));
    }
    let b = samples.len();

    let mut huber_vars = Vec::with_capacity(b);
    for s in samples {
        huber_vars.push(tape.pseudo_huber(s.y_pred, &s.target, cfg.delta)?);
    }
    let coefs = if cfg.hybrid_weighting_active() {
        let w = hybrid_weight_matrix(b, cfg.tau_hat, &default_predicates(b))?;
        batch_mix_coefficients(&w)
    } else {
        vec![1.0 / b as f64; b]
    };
    let huber_terms: Vec<(Var, f64)> = huber_vars.into_iter().zip(coefs).collect();
    let huber_total = tape.lin_comb(&huber_terms)?;

    let mut active: Vec<(Var, f64)> = vec![(huber_total, 1.0)];

    let fft_total = if cfg.fft_term_active() {
        let mut terms = Vec::with_capacity(b);
        for s in samples {
            terms.push((tape.fft_mae(s.y_pred, &s.target)?, cfg.w_fft / b as f64));
        }
        let t = tape.lin_comb(&terms)?;
        active.push((t, 1.0));
        Some(t)
    } else {
        None
    };

    let phase_total = if cfg.phase_term_active() {
        let mut terms = Vec::with_capacity(b);
        for s in samples {
            terms.push((tape.sq_diff_mean(s.phase)?, cfg.lambda / b as f64));
        }
        let t = tape.lin_comb(&terms)?;
        active.push((t, 1.0));
        Some(t)
    } else {
        None
    };

    let total = tape.lin_comb(&active)?;
    let report = LossReport {
        total: tape.scalar(total),
        huber: tape.scalar(huber_total),
        fft: fft_total.map(|v| tape.scalar(v)).unwrap_or(0.0),
        phase_reg: phase_total.map(|v| tape.scalar(v)).unwrap_or(0.0),
    };
    Ok((total, report))
}

/// Single-sample composite: the batch path with B = 1.
pub fn composite(
    tape: &mut Tape,
    y_true: &[f64],
    y_pred: Var,
    phase: Var,
    cfg: &LossConfig,
) -> CoreResult<(Var, LossReport)> {
    composite_on_tape(
        tape,
        &[BatchSample {
            target: y_true.to_vec(),
            y_pred,
            phase,
        }],
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pseudo_huber_zero_at_perfect_prediction() {
        let y = vec![1.0, -2.0, 3.0];
        assert_eq!(pseudo_huber(&y, &y, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn pseudo_huber_closed_form_at_delta() {
        let delta = 0.7;
        let got = pseudo_huber(&[delta], &[0.0], delta).unwrap();
        let want = delta * delta * (2f64.sqrt() - 1.0);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn pseudo_huber_limit_regimes() {
        let delta = 1.3;
        // linear tail: value/|e| → δ
        let e = 1e7;
        let v = pseudo_huber(&[e], &[0.0], delta).unwrap();
        assert!((v / e - delta).abs() < 1e-5);
        // quadratic core: value/e² → 1/2 (e small but clear of the
        // √(1+x)−1 cancellation floor)
        let e = 1e-3;
        let v = pseudo_huber(&[e], &[0.0], delta).unwrap();
        assert!((v / (e * e) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn pseudo_huber_rejects_length_mismatch() {
        assert!(pseudo_huber(&[1.0], &[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn hybrid_matrix_pure_strong() {
        let w = hybrid_weight_matrix(3, 1.0, &default_predicates(3)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((w.data[i * 3 + j] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn hybrid_matrix_pure_weak_two() {
        let w = hybrid_weight_matrix(2, 0.0, &default_predicates(2)).unwrap();
        for v in &w.data {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn hybrid_matrix_affine_mix() {
        let w = hybrid_weight_matrix(3, 0.5, &default_predicates(3)).unwrap();
        for i in 0..3 {
            let mut row_sum = 0.0;
            for j in 0..3 {
                let want = 0.5 / 3.0 + if i == j { 0.5 } else { 0.0 };
                assert!((w.data[i * 3 + j] - want).abs() < 1e-15);
                row_sum += w.data[i * 3 + j];
            }
            assert!((row_sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_huber_identity_is_plain_mean() {
        let l = vec![0.3, 0.9, 1.5];
        let w = hybrid_weight_matrix(3, 1.0, &default_predicates(3)).unwrap();
        let got = weighted_huber(&l, &w).unwrap();
        assert!((got - 0.9).abs() < 1e-12);
    }

    #[test]
    fn weighted_huber_preserves_constant_for_row_stochastic_w() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = 4;
        // random row-stochastic matrix
        let mut w = vec![0.0; b * b];
        for i in 0..b {
            let row: Vec<f64> = (0..b).map(|_| rng.gen_range(0.01..1.0)).collect();
            let s: f64 = row.iter().sum();
            for j in 0..b {
                w[i * b + j] = row[j] / s;
            }
        }
        let w = Tensor::from_vec(&[b, b], w).unwrap();
        let c = 0.7123;
        let got = weighted_huber(&vec![c; b], &w).unwrap();
        assert!((got - c).abs() < 1e-12);
    }

    #[test]
    fn weighted_huber_default_predicate_equals_plain_mean() {
        // Direct matrix evaluation oracle: with ψ≡1 and the J/B
        // normalization, 1ᵀW = 1ᵀ for every τ̂, so the mix is the mean.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for tau_hat in [0.0, 0.3, 0.9] {
            let b = 5;
            let l: Vec<f64> = (0..b).map(|_| rng.gen_range(0.0..2.0)).collect();
            let mean: f64 = l.iter().sum::<f64>() / b as f64;
            let w = hybrid_weight_matrix(b, tau_hat, &default_predicates(b)).unwrap();
            // oracle: explicit 1ᵀWℓ/B
            let mut acc = 0.0;
            for i in 0..b {
                for j in 0..b {
                    acc += w.data[i * b + j] * l[j];
                }
            }
            acc /= b as f64;
            let got = weighted_huber(&l, &w).unwrap();
            assert!((got - acc).abs() < 1e-15);
            assert!((got - mean).abs() < 1e-12, "tau_hat={tau_hat}");
        }
    }

    #[test]
    fn fft_loss_zero_on_identical() {
        let y: Vec<f64> = (0..16).map(|t| (t as f64 * 0.4).sin()).collect();
        assert_eq!(fft_loss(&y, &y).unwrap(), 0.0);
    }

    #[test]
    fn fft_loss_dc_shift() {
        let n = 12;
        let y: Vec<f64> = (0..n).map(|t| (t as f64 * 0.8).cos()).collect();
        let c = 0.37;
        let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
        let nf = spectral::one_sided_len(n) as f64;
        let want = c * n as f64 / nf;
        let got = fft_loss(&y, &shifted).unwrap();
        assert!((got - want).abs() < 1e-9);
    }

    #[test]
    fn fft_loss_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [9usize, 16, 21] {
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            // naive DFT-then-modulus oracle
            let half = spectral::one_sided_len(n);
            let mut acc = 0.0;
            for k in 0..half {
                let (mut dr, mut di) = (0.0, 0.0);
                for t in 0..n {
                    let ang = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                    dr += (a[t] - b[t]) * ang.cos();
                    di += (a[t] - b[t]) * ang.sin();
                }
                acc += (dr * dr + di * di).sqrt();
            }
            let want = acc / half as f64;
            let got = fft_loss(&a, &b).unwrap();
            assert!((got - want).abs() < 1e-9, "n={n}");
        }
    }

    #[test]
    fn fft_loss_nonnegative_and_zero_iff_equal_spectra() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v = fft_loss(&a, &b).unwrap();
            assert!(v >= 0.0);
            if a != b {
                assert!(v > 0.0);
            }
        }
    }

    #[test]
    fn phase_regularizer_examples() {
        assert_eq!(phase_regularizer(&[0.4; 6], 2.0).unwrap(), 0.0);
        let pi = std::f64::consts::PI;
        let got = phase_regularizer(&[0.0, pi], 1.0).unwrap();
        assert!((got - pi * pi).abs() < 1e-12);
        // linear ramp of step s
        let s = 0.21;
        let ramp: Vec<f64> = (0..7).map(|i| i as f64 * s).collect();
        let got = phase_regularizer(&ramp, 1.7).unwrap();
        assert!((got - 1.7 * s * s).abs() < 1e-12);
    }

    #[test]
    fn phase_regularizer_needs_two_entries() {
        assert!(phase_regularizer(&[1.0], 1.0).is_err());
    }

    fn sample_on_tape(
        tape: &mut Tape,
        target: &[f64],
        pred: &[f64],
        phases: &[f64],
    ) -> BatchSample {
        let y_pred = tape.constant(&[pred.len()], pred.to_vec());
        let phase = tape.constant(&[phases.len()], phases.to_vec());
        BatchSample {
            target: target.to_vec(),
            y_pred,
            phase,
        }
    }

    #[test]
    fn composite_base_is_plain_huber_mean() {
        let cfg = LossConfig {
            ablation: LossAblation::Base,
            ..LossConfig::default()
        };
        let mut tape = Tape::new();
        let t1 = vec![1.0, 2.0, 3.0];
        let p1 = vec![0.5, 2.5, 2.0];
        let t2 = vec![-1.0, 0.0, 1.0];
        let p2 = vec![0.0, 0.0, 0.0];
        let s1 = sample_on_tape(&mut tape, &t1, &p1, &[0.0, 0.0]);
        let s2 = sample_on_tape(&mut tape, &t2, &p2, &[0.0, 0.0]);
        let (_, report) = composite_on_tape(&mut tape, &[s1, s2], &cfg).unwrap();
        let want = (pseudo_huber(&t1, &p1, cfg.delta).unwrap()
            + pseudo_huber(&t2, &p2, cfg.delta).unwrap())
            / 2.0;
        assert!((report.total - want).abs() < 1e-12);
        assert_eq!(report.fft, 0.0);
        assert_eq!(report.phase_reg, 0.0);
    }

    #[test]
    fn composite_zero_for_perfect_prediction_and_flat_phase() {
        let cfg = LossConfig::default();
        let mut tape = Tape::new();
        let y = vec![0.3, -0.7, 1.1, 0.0];
        let s = sample_on_tape(&mut tape, &y, &y, &[0.5, 0.5, 0.5]);
        let (_, report) = composite_on_tape(&mut tape, &[s], &cfg).unwrap();
        assert_eq!(report.total, 0.0);
    }

    #[test]
    fn composite_total_equals_sum_of_active_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for ablation in [
            LossAblation::Full,
            LossAblation::Enhanced,
            LossAblation::Advanced,
            LossAblation::Base,
        ] {
            let cfg = LossConfig {
                ablation,
                lambda: 0.8,
                w_fft: 1.3,
                ..LossConfig::default()
            };
            let mut tape = Tape::new();
            let t: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ph: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s = sample_on_tape(&mut tape, &t, &p, &ph);
            let (_, r) = composite_on_tape(&mut tape, &[s], &cfg).unwrap();
            assert!(
                (r.total - (r.huber + r.fft + r.phase_reg)).abs() < 1e-12,
                "{ablation:?}"
            );
        }
    }

    #[test]
    fn ablations_strip_terms_in_order() {
        // enhanced = full − phase term; advanced = enhanced − fft term,
        // evaluated on identical inputs.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let t: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ph: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let eval = |ablation: LossAblation| -> LossReport {
            let cfg = LossConfig {
                ablation,
                ..LossConfig::default()
            };
            let mut tape = Tape::new();
            let s = sample_on_tape(&mut tape, &t, &p, &ph);
            composite_on_tape(&mut tape, &[s], &cfg).unwrap().1
        };

        let full = eval(LossAblation::Full);
        let enhanced = eval(LossAblation::Enhanced);
        let advanced = eval(LossAblation::Advanced);
        assert!(full.phase_reg > 0.0);
        assert!((full.total - enhanced.total - full.phase_reg).abs() < 1e-12);
        assert!((enhanced.total - advanced.total - enhanced.fft).abs() < 1e-12);
        assert_eq!(enhanced.huber, full.huber);
        assert_eq!(enhanced.fft, full.fft);
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let cfg = LossConfig {
            lambda: 0.6,
            w_fft: 0.9,
            tau_hat: 0.7,
            ..LossConfig::default()
        };
        let t: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p0: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ph0: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let run = |p: &[f64], ph: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let s = sample_on_tape(&mut tape, &t, p, ph);
            let (total, _) = composite_on_tape(&mut tape, &[s], &cfg).unwrap();
            tape.scalar(total)
        };

        let mut tape = Tape::new();
        let y_pred = tape.constant(&[8], p0.clone());
        let phase = tape.constant(&[5], ph0.clone());
        let s = BatchSample {
            target: t.clone(),
            y_pred,
            phase,
        };
        let (total, _) = composite_on_tape(&mut tape, &[s], &cfg).unwrap();
        tape.backward(total).unwrap();

        let h = 1e-5;
        for i in 0..8 {
            let mut pp = p0.clone();
            let mut pm = p0.clone();
            pp[i] += h;
            pm[i] -= h;
            let fd = (run(&pp, &ph0) - run(&pm, &ph0)) / (2.0 * h);
            let an = tape.grad(y_pred)[i];
            let m = fd.abs().max(an.abs()).max(1e-7);
            assert!((fd - an).abs() / m < 1e-4, "pred[{i}]: fd={fd} an={an}");
        }
        for i in 0..5 {
            let mut pp = ph0.clone();
            let mut pm = ph0.clone();
            pp[i] += h;
            pm[i] -= h;
            let fd = (run(&p0, &pp) - run(&p0, &pm)) / (2.0 * h);
            let an = tape.grad(phase)[i];
            let m = fd.abs().max(an.abs()).max(1e-7);
            assert!((fd - an).abs() / m < 1e-4, "phase[{i}]: fd={fd} an={an}");
        }
    }
}

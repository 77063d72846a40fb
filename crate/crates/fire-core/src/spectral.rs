//! Discrete Fourier analysis for real-valued series.
//!
//! Everything here speaks the one-sided layout: a real input of length N
//! keeps bins k = 0..⌊N/2⌋, the rest implied by conjugate symmetry. The
//! forward transform takes a radix-2 path for power-of-two N and a direct
//! summation otherwise; both agree to ~1e-12 and the direct path is the
//! testing oracle for the fast one.

use crate::tensor::{CTensor, CoreResult, TensorError};

/// One-sided spectrum of a real series of length `n_time`.
#[derive(Clone, Debug)]
pub struct Spectrum {
    /// ⌊N/2⌋+1 complex bins.
    pub bins: CTensor,
    /// Original sample count N.
    pub n_time: usize,
}

/// Number of one-sided bins for a real input of length n.
pub fn one_sided_len(n: usize) -> usize {
    n / 2 + 1
}

/// Forward DFT of a real vector: bins[k] = Σ x[n]·e^{−j2πkn/N}, k = 0..⌊N/2⌋.
pub fn dft_forward(x: &[f64]) -> CoreResult<Spectrum> {
    if x.is_empty() {
        return Err(TensorError::EmptyInput("dft_forward"));
    }
    let (re, im) = rfft_raw(x);
    let bins = CTensor::from_parts(&[re.len()], re, im)?;
    Ok(Spectrum {
        bins,
        n_time: x.len(),
    })
}

/// Inverse of [`dft_forward`]; exact to ~1e-12 for consistent inputs.
pub fn dft_inverse(s: &Spectrum) -> CoreResult<Vec<f64>> {
    if s.bins.numel() != one_sided_len(s.n_time) {
        return Err(TensorError::InconsistentSpectrum {
            n_time: s.n_time,
            bins: s.bins.numel(),
        });
    }
    Ok(irfft_raw(&s.bins.re, &s.bins.im, s.n_time))
}

/// Trigonometric reconstruction from amplitude/phase form:
/// x[n] = a0 + Σ_{k=1}^{N−1} β_k·A[k]·cos(2πkn/N − φ[k]).
///
/// Phases follow the delay convention: φ[k] = −angle(X[k]), the negative of
/// the atan2 angle a polar decomposition yields, and a0 is the signed DC
/// coefficient X[0]/N. With that and the canonical weights of
/// [`canonical_basis_weights`], the reconstruction equals the inverse DFT of
/// the corresponding spectrum.
pub fn reconstruct_trig(
    a0: f64,
    amplitudes: &[f64],
    phases: &[f64],
    weights: &[f64],
    n: usize,
) -> CoreResult<Vec<f64>> {
    if amplitudes.len() != n - 1 || phases.len() != n - 1 || weights.len() != n - 1 {
        return Err(TensorError::ShapeMismatch {
            op: "reconstruct_trig",
            lhs: vec![amplitudes.len(), phases.len(), weights.len()],
            rhs: vec![n - 1],
        });
    }
    let table = TrigTable::new(n);
    let mut x = vec![a0; n];
    for k in 1..n {
        let w = weights[k - 1];
        if w == 0.0 {
            continue;
        }
        let a = amplitudes[k - 1];
        let phi = phases[k - 1];
        let (cp, sp) = (phi.cos(), phi.sin());
        for (t, xt) in x.iter_mut().enumerate() {
            // cos(θ − φ) = cosθ·cosφ + sinθ·sinφ
            let (c, s) = table.at(k * t);
            *xt += w * a * (c * cp + s * sp);
        }
    }
    Ok(x)
}

/// Canonical synthesis weights for the k = 1..N−1 basis range: 2/N below the
/// Nyquist bin, 1/N at Nyquist (even N), and 0 above it — the upper half is
/// already accounted for by conjugate symmetry in the doubled lower bins.
pub fn canonical_basis_weights(n: usize) -> Vec<f64> {
    let mut w = vec![0.0; n.saturating_sub(1)];
    for k in 1..n {
        let two_k = 2 * k;
        w[k - 1] = if two_k < n {
            2.0 / n as f64
        } else if two_k == n {
            1.0 / n as f64
        } else {
            0.0
        };
    }
    w
}

/// Real/imaginary parts of the full-range DFT via the trigonometric
/// expansion: a[k] = Σ x[n]cos(2πkn/N), b[k] = −Σ x[n]sin(2πkn/N),
/// for k = 0..N−1.
pub fn euler_parts(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let table = TrigTable::new(n.max(1));
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    for k in 0..n {
        let mut ar = 0.0;
        let mut br = 0.0;
        for (t, &xt) in x.iter().enumerate() {
            let (c, s) = table.at(k * t);
            ar += xt * c;
            br -= xt * s;
        }
        a[k] = ar;
        b[k] = br;
    }
    (a, b)
}

// ── raw kernels (shared with the autodiff tape) ─────────────────────────

/// Table of cos/sin at multiples of 2π/N; indexing is mod N so products
/// k·n can be looked up directly.
pub(crate) struct TrigTable {
    cos: Vec<f64>,
    sin: Vec<f64>,
    n: usize,
}

impl TrigTable {
    pub(crate) fn new(n: usize) -> Self {
        let step = 2.0 * std::f64::consts::PI / n as f64;
        let mut cos = Vec::with_capacity(n);
        let mut sin = Vec::with_capacity(n);
        for t in 0..n {
            let ang = step * t as f64;
            cos.push(ang.cos());
            sin.push(ang.sin());
        }
        TrigTable { cos, sin, n }
    }

    #[inline]
    pub(crate) fn at(&self, idx: usize) -> (f64, f64) {
        let i = idx % self.n;
        (self.cos[i], self.sin[i])
    }
}

/// One-sided forward transform of a real input. Radix-2 for power-of-two
/// lengths, direct summation otherwise.
pub(crate) fn rfft_raw(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    if n.is_power_of_two() && n >= 2 {
        let mut re = x.to_vec();
        let mut im = vec![0.0; n];
        fft_pow2(&mut re, &mut im, false);
        let half = one_sided_len(n);
        re.truncate(half);
        im.truncate(half);
        (re, im)
    } else {
        rfft_direct(x)
    }
}

/// Direct Θ(N·F) evaluation of the one-sided forward transform.
pub(crate) fn rfft_direct(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let half = one_sided_len(n);
    let table = TrigTable::new(n.max(1));
    let mut re = vec![0.0; half];
    let mut im = vec![0.0; half];
    for k in 0..half {
        let mut ar = 0.0;
        let mut br = 0.0;
        for (t, &xt) in x.iter().enumerate() {
            let (c, s) = table.at(k * t);
            ar += xt * c;
            br -= xt * s;
        }
        re[k] = ar;
        im[k] = br;
    }
    (re, im)
}

/// Inverse of the one-sided transform by direct synthesis:
/// x[n] = (1/N)·[re₀ + 2Σ interior (re_k cosθ − im_k sinθ) + re_Nyq·cos(πn)].
pub(crate) fn irfft_raw(re: &[f64], im: &[f64], n_time: usize) -> Vec<f64> {
    one_sided_synth(re, im, n_time, true)
}

/// Adjoint of [`rfft_raw`] as a linear map from one-sided bins back to the
/// time domain: x[n] = Σ_k (re_k cosθ − im_k sinθ), no doubling, no 1/N.
pub(crate) fn rfft_adjoint(re: &[f64], im: &[f64], n_time: usize) -> Vec<f64> {
    one_sided_synth(re, im, n_time, false)
}

fn one_sided_synth(re: &[f64], im: &[f64], n_time: usize, inverse_weights: bool) -> Vec<f64> {
    let half = one_sided_len(n_time);
    debug_assert_eq!(re.len(), half);
    let table = TrigTable::new(n_time.max(1));
    let inv_n = 1.0 / n_time as f64;
    let mut x = vec![0.0; n_time];
    for k in 0..half {
        let edge = k == 0 || (n_time % 2 == 0 && k == n_time / 2);
        let (rk, ik) = if inverse_weights {
            let w = if edge { inv_n } else { 2.0 * inv_n };
            // The inverse ignores the DC/Nyquist imaginary parts: a real
            // signal has none.
            (re[k] * w, if edge { 0.0 } else { im[k] * w })
        } else {
            // Adjoint of the forward map: literal Σ g·cos − g·sin per bin.
            // sin is exactly zero at the DC/Nyquist angles, no special case.
            (re[k], im[k])
        };
        if rk == 0.0 && ik == 0.0 {
            continue;
        }
        for (t, xt) in x.iter_mut().enumerate() {
            let (c, s) = table.at(k * t);
            *xt += rk * c - ik * s;
        }
    }
    x
}

/// Iterative radix-2 complex FFT, in place. `inverse` flips the twiddle sign
/// and applies no normalization.
pub(crate) fn fft_pow2(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    debug_assert!(n.is_power_of_two());
    // bit-reversal permutation
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * std::f64::consts::PI / len as f64;
        let (wr, wi) = (ang.cos(), ang.sin());
        let mut i = 0;
        while i < n {
            let mut cr = 1.0;
            let mut ci = 0.0;
            for t in 0..len / 2 {
                let u = i + t;
                let v = i + t + len / 2;
                let xr = re[v] * cr - im[v] * ci;
                let xi = re[v] * ci + im[v] * cr;
                re[v] = re[u] - xr;
                im[v] = im[u] - xi;
                re[u] += xr;
                im[u] += xi;
                let ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
            i += len;
        }
        len <<= 1;
    }
}

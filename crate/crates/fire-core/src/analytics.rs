//! Distribution-shift diagnostics: adaptive-windowing change detection on
//! raw channel values (degree of concept drift) and relative spectral-energy
//! change across patches (degree of basis evolution).

use serde::Serialize;

use crate::spectral;
use crate::tensor::{CoreResult, TensorError};

/// One exponential-histogram bucket: 2^row values summarized by their sum
/// and internal sum of squared deviations.
#[derive(Clone, Debug)]
struct Bucket {
    count: u64,
    sum: f64,
    /// Σ (x − bucket mean)², merged via the parallel-axis rule.
    variance: f64,
}

/// Adaptive windowing change detector over a real-valued stream.
///
/// The window is kept as rows of buckets with power-of-two counts (row r
/// holds buckets of 2^r values, at most `max_buckets_per_row` per row before
/// the two oldest merge upward), so memory is O(log n). After every insert,
/// each bucket boundary splits the window into (older W₀, newer W₁); the
/// window shrinks from the old side while
/// |mean(W₀) − mean(W₁)| ≥ ε_cut, with the variance-aware bound
/// ε_cut = √((2/m)·σ²_W·ln(2/δ′)) + (2/(3m))·ln(2/δ′), 1/m = 1/n₀ + 1/n₁,
/// δ′ = δ_A/n. Raw values are unbounded, which rules the range-based
/// Hoeffding form out.
#[derive(Clone, Debug)]
pub struct AdwinState {
    /// rows[r] holds capacity-2^r buckets, oldest first.
    rows: Vec<Vec<Bucket>>,
    /// Confidence δ_A ∈ (0,1); smaller fires less.
    pub confidence: f64,
    pub max_buckets_per_row: usize,
    total: f64,
    /// Window-level Σ (x − mean)².
    variance: f64,
    width: u64,
}

impl AdwinState {
    pub fn new(confidence: f64) -> CoreResult<Self> {
        if !(confidence > 0.0 && confidence < 1.0) {
            return Err(TensorError::Invalid("adwin: confidence must be in (0,1)"));
        }
        Ok(AdwinState {
            rows: Vec::new(),
            confidence,
            max_buckets_per_row: 5,
            total: 0.0,
            variance: 0.0,
            width: 0,
        })
    }

    pub fn width(&self) -> u64 {
        self.width
    }

    pub fn mean(&self) -> f64 {
        if self.width == 0 {
            0.0
        } else {
            self.total / self.width as f64
        }
    }

    /// Feed one value; true when the window just dropped its older part.
    pub fn update(&mut self, value: f64) -> bool {
        if self.width > 0 {
            let mean = self.total / self.width as f64;
            let w = self.width as f64;
            self.variance += w / (w + 1.0) * (value - mean) * (value - mean);
        }
        self.total += value;
        self.width += 1;
        if self.rows.is_empty() {
            self.rows.push(Vec::new());
        }
        self.rows[0].push(Bucket {
            count: 1,
            sum: value,
            variance: 0.0,
        });
        self.compress();
        self.shrink()
    }

    /// Merge the two oldest buckets of any overfull row into the next row.
    fn compress(&mut self) {
        let mut r = 0;
        while r < self.rows.len() {
            if self.rows[r].len() > self.max_buckets_per_row {
                let b1 = self.rows[r].remove(0);
                let b2 = self.rows[r].remove(0);
                let n1 = b1.count as f64;
                let n2 = b2.count as f64;
                let m1 = b1.sum / n1;
                let m2 = b2.sum / n2;
                let merged = Bucket {
                    count: b1.count + b2.count,
                    sum: b1.sum + b2.sum,
                    variance: b1.variance
                        + b2.variance
                        + n1 * n2 / (n1 + n2) * (m1 - m2) * (m1 - m2),
                };
                if r + 1 == self.rows.len() {
                    self.rows.push(Vec::new());
                }
                self.rows[r + 1].push(merged);
            }
            r += 1;
        }
    }

    /// Oldest-to-newest bucket walk: highest row first, oldest bucket first.
    fn buckets_old_to_new(&self) -> impl Iterator<Item = &Bucket> {
        self.rows.iter().rev().flatten()
    }

    fn epsilon_cut(&self, n0: f64, n1: f64) -> f64 {
        let n = self.width as f64;
        let sigma2 = self.variance / n;
        let delta_prime = self.confidence / n;
        let ln_term = (2.0 / delta_prime).ln();
        let m = 1.0 / (1.0 / n0 + 1.0 / n1);
        (2.0 / m * sigma2 * ln_term).sqrt() + 2.0 / (3.0 * m) * ln_term
    }

    /// Scan every bucket boundary for a significant mean difference.
    fn find_cut(&self) -> bool {
        if self.width < 2 {
            return false;
        }
        let n = self.width as f64;
        let mut n0 = 0.0;
        let mut sum0 = 0.0;
        for b in self.buckets_old_to_new() {
            n0 += b.count as f64;
            sum0 += b.sum;
            let n1 = n - n0;
            if n1 < 1.0 {
                break;
            }
            let mean0 = sum0 / n0;
            let mean1 = (self.total - sum0) / n1;
            if (mean0 - mean1).abs() >= self.epsilon_cut(n0, n1) {
                return true;
            }
        }
        false
    }

    /// Drop oldest buckets while any cut is significant.
    fn shrink(&mut self) -> bool {
        let mut detected = false;
        while self.find_cut() {
            detected = true;
            self.drop_oldest_bucket();
        }
        detected
    }

    fn drop_oldest_bucket(&mut self) {
        let r = match self.rows.iter().rposition(|row| !row.is_empty()) {
            Some(r) => r,
            None => return,
        };
        let b = self.rows[r].remove(0);
        let n_b = b.count as f64;
        let n_rem = self.width as f64 - n_b;
        if n_rem > 0.0 {
            let mean_b = b.sum / n_b;
            let mean_rem = (self.total - b.sum) / n_rem;
            let cross = n_b * n_rem / (n_b + n_rem) * (mean_b - mean_rem) * (mean_b - mean_rem);
            self.variance = (self.variance - b.variance - cross).max(0.0);
        } else {
            self.variance = 0.0;
        }
        self.total -= b.sum;
        self.width -= b.count;
        while self.rows.len() > 1 && self.rows.last().is_some_and(|row| row.is_empty()) {
            self.rows.pop();
        }
    }
}

/// Change points per time point for one channel.
#[derive(Clone, Debug, Serialize)]
pub struct DriftReport {
    pub n_change: usize,
    pub n_total: usize,
    /// n_change / n_total.
    pub degree: f64,
    pub change_indices: Vec<usize>,
}

/// Run the detector over a full channel and count detections.
pub fn drift_degree(channel: &[f64], confidence: f64) -> CoreResult<DriftReport> {
    if channel.len() < 2 {
        return Err(TensorError::Invalid("drift_degree: need at least 2 values"));
    }
    let mut adwin = AdwinState::new(confidence)?;
    let mut change_indices = Vec::new();
    for (i, &v) in channel.iter().enumerate() {
        if adwin.update(v) {
            change_indices.push(i);
        }
    }
    Ok(DriftReport {
        n_change: change_indices.len(),
        n_total: channel.len(),
        degree: change_indices.len() as f64 / channel.len() as f64,
        change_indices,
    })
}

/// Basis energies per patch: E[q][k] = |X_q[k]|² over one-sided bins.
#[derive(Clone, Debug)]
pub struct EnergyMatrix {
    data: Vec<f64>,
    pub n_patches: usize,
    pub n_bins: usize,
}

impl EnergyMatrix {
    pub fn row(&self, q: usize) -> &[f64] {
        &self.data[q * self.n_bins..(q + 1) * self.n_bins]
    }
}

/// Slice a channel into patches and take each patch's spectral energies.
pub fn basis_energy(channel: &[f64], patch_len: usize, stride: usize) -> CoreResult<EnergyMatrix> {
    if patch_len == 0 || stride == 0 {
        return Err(TensorError::Invalid(
            "basis_energy: patch_len and stride must be positive",
        ));
    }
    if channel.len() < patch_len {
        return Err(TensorError::Invalid(
            "basis_energy: channel shorter than patch length",
        ));
    }
    let n_patches = (channel.len() - patch_len) / stride + 1;
    let n_bins = spectral::one_sided_len(patch_len);
    let mut data = Vec::with_capacity(n_patches * n_bins);
    for q in 0..n_patches {
        let seg = &channel[q * stride..q * stride + patch_len];
        let (re, im) = spectral::rfft_raw(seg);
        for k in 0..n_bins {
            data.push(re[k] * re[k] + im[k] * im[k]);
        }
    }
    Ok(EnergyMatrix {
        data,
        n_patches,
        n_bins,
    })
}

/// Detector parameterization, echoed in every report.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EvolutionParams {
    pub eta: f64,
    pub epsilon: f64,
    pub tau: f64,
    pub patch_len: usize,
    pub stride: usize,
}

impl Default for EvolutionParams {
    fn default() -> Self {
        EvolutionParams {
            eta: 1e-8,
            epsilon: 0.5,
            tau: 0.5,
            patch_len: 96,
            stride: 96,
        }
    }
}

/// Share of patches whose spectral energies changed significantly.
///
/// Entries cover the comparable patches q = 2..Q (the first patch has no
/// predecessor), so `per_patch_flags` has Q−1 entries and
/// degree = flagged / (Q−1).
#[derive(Clone, Debug, Serialize)]
pub struct EvolutionReport {
    pub per_patch_flags: Vec<bool>,
    pub evolving_fraction_per_patch: Vec<f64>,
    pub degree: f64,
    pub params: EvolutionParams,
}

/// Flag patch q when the fraction of bases with relative energy change
/// δ_k = |E_k(q) − E_k(q−1)| / (E_k(q−1) + η) above ε exceeds τ.
pub fn evolution_degree(
    energies: &EnergyMatrix,
    params: &EvolutionParams,
) -> CoreResult<EvolutionReport> {
    if energies.n_patches < 2 {
        return Err(TensorError::Invalid(
            "evolution_degree: need at least two patches",
        ));
    }
    if params.eta <= 0.0 || params.epsilon <= 0.0 {
        return Err(TensorError::Invalid(
            "evolution_degree: eta and epsilon must be positive",
        ));
    }
    if !(params.tau > 0.0 && params.tau <= 1.0) {
        return Err(TensorError::Invalid("evolution_degree: tau must be in (0,1]"));
    }
    let q_cmp = energies.n_patches - 1;
    let mut flags = Vec::with_capacity(q_cmp);
    let mut fractions = Vec::with_capacity(q_cmp);
    for q in 1..energies.n_patches {
        let prev = energies.row(q - 1);
        let cur = energies.row(q);
        let evolving = prev
            .iter()
            .zip(cur)
            .filter(|(p, c)| (*c - *p).abs() / (*p + params.eta) > params.epsilon)
            .count();
        let fraction = evolving as f64 / energies.n_bins as f64;
        fractions.push(fraction);
        flags.push(fraction > params.tau);
    }
    let degree = flags.iter().filter(|f| **f).count() as f64 / q_cmp as f64;
    Ok(EvolutionReport {
        per_patch_flags: flags,
        evolving_fraction_per_patch: fractions,
        degree,
        params: *params,
    })
}

/// Convenience: energies + evolution flags for one channel.
pub fn evolution_degree_of_channel(
    channel: &[f64],
    params: &EvolutionParams,
) -> CoreResult<EvolutionReport> {
    let energies = basis_energy(channel, params.patch_len, params.stride)?;
    evolution_degree(&energies, params)
}

/// Per-channel diagnostic bundle for the `analyze` surface.
#[derive(Clone, Debug, Serialize)]
pub struct ChannelReport {
    pub channel: usize,
    pub channel_name: String,
    pub d_drift: f64,
    pub n_change: usize,
    pub n_total: usize,
    pub d_evolution: f64,
    pub adwin_confidence: f64,
    pub evolution_params: EvolutionParams,
}

/// Analyze one channel with the given parameterization.
pub fn analyze_channel(
    values: &[f64],
    channel: usize,
    channel_name: &str,
    confidence: f64,
    params: &EvolutionParams,
) -> CoreResult<ChannelReport> {
    let drift = drift_degree(values, confidence)?;
    let evolution = evolution_degree_of_channel(values, params)?;
    Ok(ChannelReport {
        channel,
        channel_name: channel_name.to_string(),
        d_drift: drift.degree,
        n_change: drift.n_change,
        n_total: drift.n_total,
        d_evolution: evolution.degree,
        adwin_confidence: confidence,
        evolution_params: *params,
    })
}

/// Analyze every requested channel; channels are independent, so they run
/// on a small scoped thread pool.
pub fn analyze_series(
    series: &crate::data::Series,
    channels: &[usize],
    confidence: f64,
    params: &EvolutionParams,
) -> CoreResult<Vec<ChannelReport>> {
    let n_workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(channels.len().max(1));
    let mut results: Vec<Option<CoreResult<ChannelReport>>> = Vec::new();
    results.resize_with(channels.len(), || None);

    std::thread::scope(|scope| {
        let chunk = channels.len().div_ceil(n_workers);
        for (slot_chunk, ch_chunk) in results.chunks_mut(chunk).zip(channels.chunks(chunk)) {
            scope.spawn(move || {
                for (slot, &ch) in slot_chunk.iter_mut().zip(ch_chunk) {
                    let values = series.channel(ch);
                    let name = series
                        .channel_names
                        .get(ch)
                        .cloned()
                        .unwrap_or_else(|| format!("ch{ch}"));
                    *slot = Some(analyze_channel(&values, ch, &name, confidence, params));
                }
            });
        }
    });

    results
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

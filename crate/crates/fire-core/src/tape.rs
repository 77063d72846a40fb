//! Reverse-mode autodiff over a recorded operation tape.
//!
//! Ops execute eagerly and append one node each; `backward` walks the nodes
//! in reverse creation order and accumulates gradients. The tape is built
//! per training step and dropped afterwards — no higher-order derivatives.
//!
//! Complex values use the real-pair convention: a node's gradient buffers
//! hold (∂L/∂re, ∂L/∂im) of the real-valued loss. For holomorphic pieces
//! like the complex matmul this coincides with the Wirtinger conjugate
//! gradient, giving dA = G·Bᴴ and dB = Aᴴ·G for C = A·B with cotangent
//! G = g_re + i·g_im.

use crate::spectral;
use crate::tensor::{
    cmat_mul, cmat_mul_hn, cmat_mul_nh, mat_mul, mat_mul_nt, mat_mul_tn, CTensor, CoreResult,
    Tensor, TensorError,
};

/// Handle to a real-valued node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Handle to a complex-valued node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CVar(usize);

enum Slot {
    Real {
        value: Vec<f64>,
        grad: Vec<f64>,
    },
    Complex {
        re: Vec<f64>,
        im: Vec<f64>,
        grad_re: Vec<f64>,
        grad_im: Vec<f64>,
    },
}

enum Op {
    LeafR,
    LeafC,
    // real → real
    MatMul { a: usize, b: usize },
    MatMulNT { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    AddRowVec { m: usize, v: usize },
    AddColVec { m: usize, v: usize },
    Scale { a: usize, c: f64 },
    AddConst { a: usize },
    Cos { a: usize },
    Sin { a: usize },
    SumAll { a: usize },
    RowSlice { a: usize, row: usize, cols: usize },
    SoftmaxRows { a: usize },
    // complex → real
    Amplitude { z: usize },
    PhaseOf { z: usize },
    Irfft { bins: usize, n_time: usize },
    // losses
    PseudoHuber { pred: usize, target: Vec<f64>, delta: f64 },
    FftMae { pred: usize, target_re: Vec<f64>, target_im: Vec<f64> },
    SqDiffMean { a: usize },
    LinComb { terms: Vec<(usize, f64)> },
    // complex → complex
    CMatMul { a: usize, b: usize },
    CAddRowVec { m: usize, v: usize },
    Recompose { amp: usize, phase: usize },
    MulRealC { u: usize, z: usize },
    ReshapeC { a: usize },
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    slot: Slot,
}

/// Recorded computation graph. One per training step.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (0, 0),
        1 => (1, shape[0]),
        _ => (shape[0], shape[1..].iter().product()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_real(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>) -> Var {
        let n = value.len();
        self.nodes.push(Node {
            op,
            shape,
            slot: Slot::Real {
                value,
                grad: vec![0.0; n],
            },
        });
        Var(self.nodes.len() - 1)
    }

    fn push_complex(&mut self, op: Op, shape: Vec<usize>, re: Vec<f64>, im: Vec<f64>) -> CVar {
        let n = re.len();
        self.nodes.push(Node {
            op,
            shape,
            slot: Slot::Complex {
                re,
                im,
                grad_re: vec![0.0; n],
                grad_im: vec![0.0; n],
            },
        });
        CVar(self.nodes.len() - 1)
    }

    fn real(&self, id: usize) -> &[f64] {
        match &self.nodes[id].slot {
            Slot::Real { value, .. } => value,
            Slot::Complex { .. } => unreachable!("real slot expected"),
        }
    }

    fn complex(&self, id: usize) -> (&[f64], &[f64]) {
        match &self.nodes[id].slot {
            Slot::Complex { re, im, .. } => (re, im),
            Slot::Real { .. } => unreachable!("complex slot expected"),
        }
    }

    // ── inputs ──────────────────────────────────────────────────────────

    /// Register a real tensor as a differentiable leaf.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push_real(Op::LeafR, t.shape.clone(), t.data.clone())
    }

    /// Register a complex tensor as a differentiable leaf.
    pub fn leaf_c(&mut self, t: &CTensor) -> CVar {
        self.push_complex(Op::LeafC, t.shape.clone(), t.re.clone(), t.im.clone())
    }

    /// Register input data; gradients stop here (same node kind as a leaf,
    /// the caller simply never reads its gradient).
    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Var {
        self.push_real(Op::LeafR, shape.to_vec(), data)
    }

    pub fn constant_c(&mut self, t: &CTensor) -> CVar {
        self.push_complex(Op::LeafC, t.shape.clone(), t.re.clone(), t.im.clone())
    }

    // ── reads ───────────────────────────────────────────────────────────

    pub fn value(&self, v: Var) -> &[f64] {
        self.real(v.0)
    }

    pub fn value_c(&self, v: CVar) -> (&[f64], &[f64]) {
        self.complex(v.0)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn shape_c(&self, v: CVar) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Scalar value of a 1-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        let d = self.real(v.0);
        debug_assert_eq!(d.len(), 1);
        d[0]
    }

    pub fn grad(&self, v: Var) -> &[f64] {
        match &self.nodes[v.0].slot {
            Slot::Real { grad, .. } => grad,
            Slot::Complex { .. } => unreachable!(),
        }
    }

    pub fn grad_c(&self, v: CVar) -> (&[f64], &[f64]) {
        match &self.nodes[v.0].slot {
            Slot::Complex {
                grad_re, grad_im, ..
            } => (grad_re, grad_im),
            Slot::Real { .. } => unreachable!(),
        }
    }

    // ── real ops ────────────────────────────────────────────────────────

    /// Matrix product a·b.
    pub fn matmul(&mut self, a: Var, b: Var) -> CoreResult<Var> {
        let (n, k) = rows_cols(self.shape(a));
        let (k2, m) = rows_cols(self.shape(b));
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let c = mat_mul(self.real(a.0), self.real(b.0), n, k, m);
        Ok(self.push_real(Op::MatMul { a: a.0, b: b.0 }, vec![n, m], c))
    }

    /// Matrix product a·bᵀ (b stored [m×k]).
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> CoreResult<Var> {
        let (n, k) = rows_cols(self.shape(a));
        let (m, k2) = rows_cols(self.shape(b));
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_nt",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let c = mat_mul_nt(self.real(a.0), self.real(b.0), n, k, m);
        Ok(self.push_real(Op::MatMulNT { a: a.0, b: b.0 }, vec![n, m], c))
    }

    fn zip_op(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> CoreResult<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op: name,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let out: Vec<f64> = self
            .real(a.0)
            .iter()
            .zip(self.real(b.0))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push_real(op, shape, out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> CoreResult<Var> {
        self.zip_op("add", a, b, |x, y| x + y, Op::Add { a: a.0, b: b.0 })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> CoreResult<Var> {
        self.zip_op("sub", a, b, |x, y| x - y, Op::Sub { a: a.0, b: b.0 })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> CoreResult<Var> {
        self.zip_op("mul", a, b, |x, y| x * y, Op::Mul { a: a.0, b: b.0 })
    }

    /// m + v with v broadcast across rows (one entry per column).
    pub fn add_row_vec(&mut self, m: Var, v: Var) -> CoreResult<Var> {
        let (rows, cols) = rows_cols(self.shape(m));
        if self.real(v.0).len() != cols {
            return Err(TensorError::ShapeMismatch {
                op: "add_row_vec",
                lhs: self.shape(m).to_vec(),
                rhs: self.shape(v).to_vec(),
            });
        }
        let mut out = self.real(m.0).to_vec();
        let vv = self.real(v.0).to_vec();
        for r in 0..rows {
            for c in 0..cols {
                out[r * cols + c] += vv[c];
            }
        }
        let shape = self.shape(m).to_vec();
        Ok(self.push_real(Op::AddRowVec { m: m.0, v: v.0 }, shape, out))
    }

    /// m + v with v broadcast across columns (one entry per row).
    pub fn add_col_vec(&mut self, m: Var, v: Var) -> CoreResult<Var> {
        let (rows, cols) = rows_cols(self.shape(m));
        if self.real(v.0).len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "add_col_vec",
                lhs: self.shape(m).to_vec(),
                rhs: self.shape(v).to_vec(),
            });
        }
        let mut out = self.real(m.0).to_vec();
        let vv = self.real(v.0).to_vec();
        for r in 0..rows {
            for c in 0..cols {
                out[r * cols + c] += vv[r];
            }
        }
        let shape = self.shape(m).to_vec();
        Ok(self.push_real(Op::AddColVec { m: m.0, v: v.0 }, shape, out))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out: Vec<f64> = self.real(a.0).iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        self.push_real(Op::Scale { a: a.0, c }, shape, out)
    }

    /// Add a constant matrix (e.g. the causal −inf mask).
    pub fn add_const(&mut self, a: Var, k: &[f64]) -> CoreResult<Var> {
        if self.real(a.0).len() != k.len() {
            return Err(TensorError::ShapeMismatch {
                op: "add_const",
                lhs: self.shape(a).to_vec(),
                rhs: vec![k.len()],
            });
        }
        let out: Vec<f64> = self.real(a.0).iter().zip(k).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push_real(Op::AddConst { a: a.0 }, shape, out))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.real(a.0).iter().map(|x| x.cos()).collect();
        let shape = self.shape(a).to_vec();
        self.push_real(Op::Cos { a: a.0 }, shape, out)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.real(a.0).iter().map(|x| x.sin()).collect();
        let shape = self.shape(a).to_vec();
        self.push_real(Op::Sin { a: a.0 }, shape, out)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.real(a.0).iter().sum();
        self.push_real(Op::SumAll { a: a.0 }, vec![1], vec![s])
    }

    /// Extract one row of a 2-D node as a vector.
    pub fn row_slice(&mut self, a: Var, row: usize) -> CoreResult<Var> {
        let (rows, cols) = rows_cols(self.shape(a));
        if row >= rows {
            return Err(TensorError::Invalid("row_slice: row out of range"));
        }
        let out = self.real(a.0)[row * cols..(row + 1) * cols].to_vec();
        Ok(self.push_real(Op::RowSlice { a: a.0, row, cols }, vec![cols], out))
    }

    /// Row-wise softmax, stabilized by row-max subtraction. Entries of −inf
    /// map to exactly zero; a fully masked row is an error.
    pub fn softmax_rows(&mut self, a: Var) -> CoreResult<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 {
            return Err(TensorError::NotMatrix {
                op: "softmax_rows",
                shape,
            });
        }
        let (rows, cols) = (shape[0], shape[1]);
        let x = self.real(a.0);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &x[r * cols..(r + 1) * cols];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if mx == f64::NEG_INFINITY {
                return Err(TensorError::FullyMaskedRow { row: r });
            }
            let mut sum = 0.0;
            for c in 0..cols {
                let e = (row[c] - mx).exp(); // exp(−inf) = 0 exactly
                out[r * cols + c] = e;
                sum += e;
            }
            for c in 0..cols {
                out[r * cols + c] /= sum;
            }
        }
        Ok(self.push_real(Op::SoftmaxRows { a: a.0 }, shape, out))
    }

    // ── complex ↔ real ──────────────────────────────────────────────────

    /// Split a complex node into (amplitude, phase). Phase is atan2(im, re)
    /// in (−π, π]; at the origin both gradients are defined as zero.
    pub fn polar_decompose(&mut self, z: CVar) -> (Var, Var) {
        let shape = self.shape_c(z).to_vec();
        let (re, im) = self.complex(z.0);
        let amp: Vec<f64> = re
            .iter()
            .zip(im)
            .map(|(r, i)| (r * r + i * i).sqrt())
            .collect();
        let phase: Vec<f64> = re.iter().zip(im).map(|(r, i)| i.atan2(*r)).collect();
        let a = self.push_real(Op::Amplitude { z: z.0 }, shape.clone(), amp);
        let p = self.push_real(Op::PhaseOf { z: z.0 }, shape, phase);
        (a, p)
    }

    /// Rebuild a complex node from amplitude and phase: re = A·cosφ,
    /// im = A·sinφ.
    pub fn polar_recompose(&mut self, amp: Var, phase: Var) -> CoreResult<CVar> {
        if self.shape(amp) != self.shape(phase) {
            return Err(TensorError::ShapeMismatch {
                op: "polar_recompose",
                lhs: self.shape(amp).to_vec(),
                rhs: self.shape(phase).to_vec(),
            });
        }
        let a = self.real(amp.0);
        let p = self.real(phase.0);
        let re: Vec<f64> = a.iter().zip(p).map(|(a, p)| a * p.cos()).collect();
        let im: Vec<f64> = a.iter().zip(p).map(|(a, p)| a * p.sin()).collect();
        let shape = self.shape(amp).to_vec();
        Ok(self.push_complex(
            Op::Recompose {
                amp: amp.0,
                phase: phase.0,
            },
            shape,
            re,
            im,
        ))
    }

    /// Elementwise real·complex product (a real weight scaling both parts).
    pub fn scale_complex(&mut self, u: Var, z: CVar) -> CoreResult<CVar> {
        if self.real(u.0).len() != self.complex(z.0).0.len() {
            return Err(TensorError::ShapeMismatch {
                op: "scale_complex",
                lhs: self.shape(u).to_vec(),
                rhs: self.shape_c(z).to_vec(),
            });
        }
        let uu = self.real(u.0);
        let (re, im) = self.complex(z.0);
        let ore: Vec<f64> = uu.iter().zip(re).map(|(u, r)| u * r).collect();
        let oim: Vec<f64> = uu.iter().zip(im).map(|(u, i)| u * i).collect();
        let shape = self.shape_c(z).to_vec();
        Ok(self.push_complex(Op::MulRealC { u: u.0, z: z.0 }, shape, ore, oim))
    }

    /// Complex matrix product a·b.
    pub fn cmatmul(&mut self, a: CVar, b: CVar) -> CoreResult<CVar> {
        let (n, k) = rows_cols(self.shape_c(a));
        let (k2, m) = rows_cols(self.shape_c(b));
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "cmatmul",
                lhs: self.shape_c(a).to_vec(),
                rhs: self.shape_c(b).to_vec(),
            });
        }
        let (ar, ai) = self.complex(a.0);
        let (br, bi) = self.complex(b.0);
        let (cr, ci) = cmat_mul(ar, ai, br, bi, n, k, m);
        Ok(self.push_complex(Op::CMatMul { a: a.0, b: b.0 }, vec![n, m], cr, ci))
    }

    /// Complex m + v with v broadcast across rows.
    pub fn cadd_row_vec(&mut self, m: CVar, v: CVar) -> CoreResult<CVar> {
        let (rows, cols) = rows_cols(self.shape_c(m));
        if self.complex(v.0).0.len() != cols {
            return Err(TensorError::ShapeMismatch {
                op: "cadd_row_vec",
                lhs: self.shape_c(m).to_vec(),
                rhs: self.shape_c(v).to_vec(),
            });
        }
        let (mre, mim) = self.complex(m.0);
        let (vre, vim) = self.complex(v.0);
        let mut ore = mre.to_vec();
        let mut oim = mim.to_vec();
        for r in 0..rows {
            for c in 0..cols {
                ore[r * cols + c] += vre[c];
                oim[r * cols + c] += vim[c];
            }
        }
        let shape = self.shape_c(m).to_vec();
        Ok(self.push_complex(Op::CAddRowVec { m: m.0, v: v.0 }, shape, ore, oim))
    }

    /// View a complex node under a new shape (same element count).
    pub fn reshape_c(&mut self, a: CVar, shape: &[usize]) -> CoreResult<CVar> {
        let expected: usize = shape.iter().product();
        let (re, im) = self.complex(a.0);
        if re.len() != expected {
            return Err(TensorError::DataLength {
                expected,
                got: re.len(),
            });
        }
        let (re, im) = (re.to_vec(), im.to_vec());
        Ok(self.push_complex(Op::ReshapeC { a: a.0 }, shape.to_vec(), re, im))
    }

    /// Inverse one-sided DFT to a real series of length `n_time`.
    pub fn irfft(&mut self, bins: CVar, n_time: usize) -> CoreResult<Var> {
        let f = self.complex(bins.0).0.len();
        if f != spectral::one_sided_len(n_time) {
            return Err(TensorError::InconsistentSpectrum { n_time, bins: f });
        }
        let (re, im) = self.complex(bins.0);
        let x = spectral::irfft_raw(re, im, n_time);
        Ok(self.push_real(
            Op::Irfft {
                bins: bins.0,
                n_time,
            },
            vec![n_time],
            x,
        ))
    }

    // ── loss heads ──────────────────────────────────────────────────────

    /// Mean pseudo-Huber loss δ²(√(1+(e/δ)²)−1) against a constant target.
    pub fn pseudo_huber(&mut self, pred: Var, target: &[f64], delta: f64) -> CoreResult<Var> {
        let p = self.real(pred.0);
        if p.len() != target.len() {
            return Err(TensorError::ShapeMismatch {
                op: "pseudo_huber",
                lhs: self.shape(pred).to_vec(),
                rhs: vec![target.len()],
            });
        }
        if delta <= 0.0 {
            return Err(TensorError::Invalid("pseudo_huber: delta must be positive"));
        }
        let inv = 1.0 / p.len() as f64;
        let d2 = delta * delta;
        let mut acc = 0.0;
        for (y, t) in p.iter().zip(target) {
            let e = t - y;
            acc += d2 * ((1.0 + (e / delta) * (e / delta)).sqrt() - 1.0);
        }
        Ok(self.push_real(
            Op::PseudoHuber {
                pred: pred.0,
                target: target.to_vec(),
                delta,
            },
            vec![1],
            vec![acc * inv],
        ))
    }

    /// Mean absolute error between the one-sided spectra of prediction and
    /// target: (1/N_f)·Σ |FFT(target)[k] − FFT(pred)[k]|.
    pub fn fft_mae(&mut self, pred: Var, target: &[f64]) -> CoreResult<Var> {
        let p = self.real(pred.0);
        if p.len() != target.len() {
            return Err(TensorError::ShapeMismatch {
                op: "fft_mae",
                lhs: self.shape(pred).to_vec(),
                rhs: vec![target.len()],
            });
        }
        if p.is_empty() {
            return Err(TensorError::EmptyInput("fft_mae"));
        }
        let (tre, tim) = spectral::rfft_raw(target);
        let (pre, pim) = spectral::rfft_raw(p);
        let nf = tre.len() as f64;
        let mut acc = 0.0;
        for k in 0..tre.len() {
            let dr = tre[k] - pre[k];
            let di = tim[k] - pim[k];
            acc += (dr * dr + di * di).sqrt();
        }
        Ok(self.push_real(
            Op::FftMae {
                pred: pred.0,
                target_re: tre,
                target_im: tim,
            },
            vec![1],
            vec![acc / nf],
        ))
    }

    /// Mean squared first difference: (1/(L−1))·Σ (a[i+1]−a[i])².
    pub fn sq_diff_mean(&mut self, a: Var) -> CoreResult<Var> {
        let x = self.real(a.0);
        if x.len() < 2 {
            return Err(TensorError::Invalid(
                "sq_diff_mean: need at least two entries",
            ));
        }
        let inv = 1.0 / (x.len() - 1) as f64;
        let mut acc = 0.0;
        for i in 0..x.len() - 1 {
            let d = x[i + 1] - x[i];
            acc += d * d;
        }
        Ok(self.push_real(Op::SqDiffMean { a: a.0 }, vec![1], vec![acc * inv]))
    }

    /// Weighted sum of scalar nodes: Σ cᵢ·xᵢ.
    pub fn lin_comb(&mut self, terms: &[(Var, f64)]) -> CoreResult<Var> {
        let mut acc = 0.0;
        let mut ts = Vec::with_capacity(terms.len());
        for (v, c) in terms {
            let d = self.real(v.0);
            if d.len() != 1 {
                return Err(TensorError::NotScalar {
                    op: "lin_comb",
                    shape: self.shape(*v).to_vec(),
                });
            }
            acc += c * d[0];
            ts.push((v.0, *c));
        }
        Ok(self.push_real(Op::LinComb { terms: ts }, vec![1], vec![acc]))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss; fills every node's gradient.
    pub fn backward(&mut self, loss: Var) -> CoreResult<()> {
        {
            let d = self.real(loss.0);
            if d.len() != 1 {
                return Err(TensorError::NotScalar {
                    op: "backward",
                    shape: self.shape(loss).to_vec(),
                });
            }
        }
        if let Slot::Real { grad, .. } = &mut self.nodes[loss.0].slot {
            grad[0] = 1.0;
        }
        for id in (0..self.nodes.len()).rev() {
            self.backprop_node(id);
        }
        Ok(())
    }

    fn take_real_grad(&self, id: usize) -> Vec<f64> {
        match &self.nodes[id].slot {
            Slot::Real { grad, .. } => grad.clone(),
            Slot::Complex { .. } => unreachable!(),
        }
    }

    fn take_complex_grad(&self, id: usize) -> (Vec<f64>, Vec<f64>) {
        match &self.nodes[id].slot {
            Slot::Complex {
                grad_re, grad_im, ..
            } => (grad_re.clone(), grad_im.clone()),
            Slot::Real { .. } => unreachable!(),
        }
    }

    fn add_to_real_grad(&mut self, id: usize, delta: &[f64]) {
        if let Slot::Real { grad, .. } = &mut self.nodes[id].slot {
            for (g, d) in grad.iter_mut().zip(delta) {
                *g += d;
            }
        }
    }

    fn add_to_complex_grad(&mut self, id: usize, dre: &[f64], dim: &[f64]) {
        if let Slot::Complex {
            grad_re, grad_im, ..
        } = &mut self.nodes[id].slot
        {
            for (g, d) in grad_re.iter_mut().zip(dre) {
                *g += d;
            }
            for (g, d) in grad_im.iter_mut().zip(dim) {
                *g += d;
            }
        }
    }

    fn backprop_node(&mut self, id: usize) {
        // Cheap skip: a node whose gradient is all zero contributes nothing.
        let live = match &self.nodes[id].slot {
            Slot::Real { grad, .. } => grad.iter().any(|g| *g != 0.0),
            Slot::Complex {
                grad_re, grad_im, ..
            } => grad_re.iter().chain(grad_im.iter()).any(|g| *g != 0.0),
        };
        if !live {
            return;
        }
        match &self.nodes[id].op {
            Op::LeafR | Op::LeafC => {}
            Op::MatMul { a, b } => {
                let (a, b) = (*a, *b);
                let g = self.take_real_grad(id);
                let (n, k) = rows_cols(&self.nodes[a].shape);
                let (_, m) = rows_cols(&self.nodes[b].shape);
                let da = mat_mul_nt(&g, self.real(b), n, m, k);
                let db = mat_mul_tn(self.real(a), &g, n, k, m);
                self.add_to_real_grad(a, &da);
                self.add_to_real_grad(b, &db);
            }
            Op::MatMulNT { a, b } => {
                let (a, b) = (*a, *b);
                let g = self.take_real_grad(id);
                let (n, k) = rows_cols(&self.nodes[a].shape);
                let (m, _) = rows_cols(&self.nodes[b].shape);
                let da = mat_mul(&g, self.real(b), n, m, k);
                let db = mat_mul_tn(&g, self.real(a), n, m, k);
                self.add_to_real_grad(a, &da);
                self.add_to_real_grad(b, &db);
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                let g = self.take_real_grad(id);
                self.add_to_real_grad(a, &g);
                self.add_to_real_grad(b, &g);
            }
            Op::Sub { a, b } => {
                let (a, b) = (*a, *b);
                let g = self.take_real_grad(id);
                self.add_to_real_grad(a, &g);
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                self.add_to_real_grad(b, &neg);
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                let g = self.take_real_grad(id);
                let da: Vec<f64> = g.iter().zip(self.real(b)).map(|(g, y)| g * y).collect();
                let db: Vec<f64> = g.iter().zip(self.real(a)).map(|(g, x)| g * x).collect();
                self.add_to_real_grad(a, &da);
                self.add_to_real_grad(b, &db);
            }
            Op::AddRowVec { m, v } => {
                let (m, v) = (*m, *v);
                let g = self.take_real_grad(id);
                let (rows, cols) = rows_cols(&self.nodes[id].shape);
                let mut dv = vec![0.0; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        dv[c] += g[r * cols + c];
                    }
                }
                self.add_to_real_grad(m, &g);
                self.add_to_real_grad(v, &dv);
            }
            Op::AddColVec { m, v } => {
                let (m, v) = (*m, *v);
                let g = self.take_real_grad(id);
                let (rows, cols) = rows_cols(&self.nodes[id].shape);
                let mut dv = vec![0.0; rows];
                for r in 0..rows {
                    for c in 0..cols {
                        dv[r] += g[r * cols + c];
                    }
                }
                self.add_to_real_grad(m, &g);
                self.add_to_real_grad(v, &dv);
            }
            Op::Scale { a, c } => {
                let (a, c) = (*a, *c);
                let g = self.take_real_grad(id);
                let da: Vec<f64> = g.iter().map(|g| g * c).collect();
                self.add_to_real_grad(a, &da);
            }
            Op::AddConst { a } => {
                let a = *a;
                let g = self.take_real_grad(id);
                self.add_to_real_grad(a, &g);
            }
            Op::Cos { a } => {
                let a = *a;
                let g = self.take_real_grad(id);
                let da: Vec<f64> = g
                    .iter()
                    .zip(self.real(a))
                    .map(|(g, x)| -g * x.sin())
                    .collect();
                self.add_to_real_grad(a, &da);
            }
            Op::Sin { a } => {
                let a = *a;
                let g = self.take_real_grad(id);
                let da: Vec<f64> = g
                    .iter()
                    .zip(self.real(a))
                    .map(|(g, x)| g * x.cos())
                    .collect();
                self.add_to_real_grad(a, &da);
            }
            Op::SumAll { a } => {
                let a = *a;
                let g = self.take_real_grad(id)[0];
                let da = vec![g; self.real(a).len()];
                self.add_to_real_grad(a, &da);
            }
            Op::RowSlice { a, row, cols } => {
                let (a, row, cols) = (*a, *row, *cols);
                let g = self.take_real_grad(id);
                let mut da = vec![0.0; self.real(a).len()];
                da[row * cols..(row + 1) * cols].copy_from_slice(&g);
                self.add_to_real_grad(a, &da);
            }
            Op::SoftmaxRows { a } => {
                let a = *a;
                let g = self.take_real_grad(id);
                let (rows, cols) = rows_cols(&self.nodes[id].shape);
                let y = match &self.nodes[id].slot {
                    Slot::Real { value, .. } => value.clone(),
                    _ => unreachable!(),
                };
                let mut da = vec![0.0; rows * cols];
                for r in 0..rows {
                    let mut dot = 0.0;
                    for c in 0..cols {
                        dot += g[r * cols + c] * y[r * cols + c];
                    }
                    for c in 0..cols {
                        let i = r * cols + c;
                        da[i] = y[i] * (g[i] - dot);
                    }
                }
                self.add_to_real_grad(a, &da);
            }
            Op::Amplitude { z } => {
                let z = *z;
                let g = self.take_real_grad(id);
                let (re, im) = self.complex(z);
                let mut dre = vec![0.0; re.len()];
                let mut dim = vec![0.0; re.len()];
                for i in 0..re.len() {
                    let r = (re[i] * re[i] + im[i] * im[i]).sqrt();
                    if r > 0.0 {
                        dre[i] = g[i] * re[i] / r;
                        dim[i] = g[i] * im[i] / r;
                    }
                    // subgradient 0 at the origin
                }
                self.add_to_complex_grad(z, &dre, &dim);
            }
            Op::PhaseOf { z } => {
                let z = *z;
                let g = self.take_real_grad(id);
                let (re, im) = self.complex(z);
                let mut dre = vec![0.0; re.len()];
                let mut dim = vec![0.0; re.len()];
                for i in 0..re.len() {
                    let r2 = re[i] * re[i] + im[i] * im[i];
                    if r2 > 0.0 {
                        dre[i] = -g[i] * im[i] / r2;
                        dim[i] = g[i] * re[i] / r2;
                    }
                    // phase gradient defined as 0 at the origin
                }
                self.add_to_complex_grad(z, &dre, &dim);
            }
            Op::Irfft { bins, n_time } => {
                let (bins, n_time) = (*bins, *n_time);
                let g = self.take_real_grad(id);
                // Adjoint of the synthesis: a forward transform of the
                // gradient with the inverse-side weights re-applied.
                let (gr, gi) = spectral::rfft_raw(&g);
                let half = gr.len();
                let inv_n = 1.0 / n_time as f64;
                let mut dre = vec![0.0; half];
                let mut dim = vec![0.0; half];
                for k in 0..half {
                    let edge = k == 0 || (n_time % 2 == 0 && k == n_time / 2);
                    let w = if edge { inv_n } else { 2.0 * inv_n };
                    dre[k] = gr[k] * w;
                    dim[k] = if edge { 0.0 } else { gi[k] * w };
                }
                self.add_to_complex_grad(bins, &dre, &dim);
            }
            Op::PseudoHuber {
                pred,
                target,
                delta,
            } => {
                let (pred, delta) = (*pred, *delta);
                let target = target.clone();
                let g = self.take_real_grad(id)[0];
                let p = self.real(pred);
                let inv = 1.0 / p.len() as f64;
                let mut dp = vec![0.0; p.len()];
                for i in 0..p.len() {
                    let e = target[i] - p[i];
                    dp[i] = -g * inv * e / (1.0 + (e / delta) * (e / delta)).sqrt();
                }
                self.add_to_real_grad(pred, &dp);
            }
            Op::FftMae {
                pred,
                target_re,
                target_im,
            } => {
                let pred = *pred;
                let (tre, tim) = (target_re.clone(), target_im.clone());
                let g = self.take_real_grad(id)[0];
                let p = self.real(pred);
                let n_time = p.len();
                let (pre, pim) = spectral::rfft_raw(p);
                let nf = tre.len() as f64;
                let mut dbr = vec![0.0; tre.len()];
                let mut dbi = vec![0.0; tre.len()];
                for k in 0..tre.len() {
                    let dr = pre[k] - tre[k];
                    let di = pim[k] - tim[k];
                    let m = (dr * dr + di * di).sqrt();
                    if m > 0.0 {
                        dbr[k] = g * dr / (m * nf);
                        dbi[k] = g * di / (m * nf);
                    }
                    // modulus subgradient 0 at an exact zero difference
                }
                let dp = spectral::rfft_adjoint(&dbr, &dbi, n_time);
                self.add_to_real_grad(pred, &dp);
            }
            Op::SqDiffMean { a } => {
                let a = *a;
                let g = self.take_real_grad(id)[0];
                let x = self.real(a);
                let inv = 1.0 / (x.len() - 1) as f64;
                let mut da = vec![0.0; x.len()];
                for i in 0..x.len() - 1 {
                    let t = 2.0 * g * inv * (x[i + 1] - x[i]);
                    da[i + 1] += t;
                    da[i] -= t;
                }
                self.add_to_real_grad(a, &da);
            }
            Op::LinComb { terms } => {
                let terms = terms.clone();
                let g = self.take_real_grad(id)[0];
                for (t, c) in terms {
                    self.add_to_real_grad(t, &[g * c]);
                }
            }
            Op::CMatMul { a, b } => {
                let (a, b) = (*a, *b);
                let (gr, gi) = self.take_complex_grad(id);
                let (n, k) = rows_cols(&self.nodes[a].shape);
                let (_, m) = rows_cols(&self.nodes[b].shape);
                let (ar, ai) = {
                    let (r, i) = self.complex(a);
                    (r.to_vec(), i.to_vec())
                };
                let (br, bi) = {
                    let (r, i) = self.complex(b);
                    (r.to_vec(), i.to_vec())
                };
                // dA = G·Bᴴ, dB = Aᴴ·G (conjugate / Wirtinger convention)
                let (dar, dai) = cmat_mul_nh(&gr, &gi, &br, &bi, n, m, k);
                let (dbr, dbi) = cmat_mul_hn(&ar, &ai, &gr, &gi, n, k, m);
                self.add_to_complex_grad(a, &dar, &dai);
                self.add_to_complex_grad(b, &dbr, &dbi);
            }
            Op::CAddRowVec { m, v } => {
                let (m, v) = (*m, *v);
                let (gr, gi) = self.take_complex_grad(id);
                let (rows, cols) = rows_cols(&self.nodes[id].shape);
                let mut dvr = vec![0.0; cols];
                let mut dvi = vec![0.0; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        dvr[c] += gr[r * cols + c];
                        dvi[c] += gi[r * cols + c];
                    }
                }
                self.add_to_complex_grad(m, &gr, &gi);
                self.add_to_complex_grad(v, &dvr, &dvi);
            }
            Op::Recompose { amp, phase } => {
                let (amp, phase) = (*amp, *phase);
                let (gr, gi) = self.take_complex_grad(id);
                let a = self.real(amp);
                let p = self.real(phase);
                let mut da = vec![0.0; a.len()];
                let mut dp = vec![0.0; a.len()];
                for i in 0..a.len() {
                    let (c, s) = (p[i].cos(), p[i].sin());
                    da[i] = gr[i] * c + gi[i] * s;
                    dp[i] = a[i] * (gi[i] * c - gr[i] * s);
                }
                self.add_to_real_grad(amp, &da);
                self.add_to_real_grad(phase, &dp);
            }
            Op::MulRealC { u, z } => {
                let (u, z) = (*u, *z);
                let (gr, gi) = self.take_complex_grad(id);
                let uu = self.real(u).to_vec();
                let (zr, zi) = self.complex(z);
                let mut du = vec![0.0; uu.len()];
                for i in 0..uu.len() {
                    du[i] = gr[i] * zr[i] + gi[i] * zi[i];
                }
                let dzr: Vec<f64> = gr.iter().zip(&uu).map(|(g, u)| g * u).collect();
                let dzi: Vec<f64> = gi.iter().zip(&uu).map(|(g, u)| g * u).collect();
                self.add_to_real_grad(u, &du);
                self.add_to_complex_grad(z, &dzr, &dzi);
            }
            Op::ReshapeC { a } => {
                let a = *a;
                let (gr, gi) = self.take_complex_grad(id);
                self.add_to_complex_grad(a, &gr, &gi);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const FD_H: f64 = 1e-5;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Relative error with a floor so near-zero pairs compare cleanly.
    fn rel_err(a: f64, b: f64) -> f64 {
        let m = a.abs().max(b.abs());
        if m < 1e-8 {
            0.0
        } else {
            (a - b).abs() / m
        }
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a0 = Tensor::from_vec(&[3, 4], rand_vec(&mut rng, 12)).unwrap();
        let b0 = Tensor::from_vec(&[4, 2], rand_vec(&mut rng, 8)).unwrap();

        let run = |a: &Tensor, b: &Tensor| -> f64 {
            let mut tape = Tape::new();
            let va = tape.leaf(a);
            let vb = tape.leaf(b);
            let c = tape.matmul(va, vb).unwrap();
            let s = tape.sum_all(c);
            tape.scalar(s)
        };

        let mut tape = Tape::new();
        let va = tape.leaf(&a0);
        let vb = tape.leaf(&b0);
        let c = tape.matmul(va, vb).unwrap();
        let s = tape.sum_all(c);
        tape.backward(s).unwrap();

        for i in 0..a0.numel() {
            let mut ap = a0.clone();
            let mut am = a0.clone();
            ap.data[i] += FD_H;
            am.data[i] -= FD_H;
            let fd = (run(&ap, &b0) - run(&am, &b0)) / (2.0 * FD_H);
            assert!(rel_err(fd, tape.grad(va)[i]) < 1e-6, "dA[{i}]");
        }
        for i in 0..b0.numel() {
            let mut bp = b0.clone();
            let mut bm = b0.clone();
            bp.data[i] += FD_H;
            bm.data[i] -= FD_H;
            let fd = (run(&a0, &bp) - run(&a0, &bm)) / (2.0 * FD_H);
            assert!(rel_err(fd, tape.grad(vb)[i]) < 1e-6, "dB[{i}]");
        }
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(&[2, 3], vec![0.0; 6]);
        let b = tape.constant(&[2, 2], vec![0.0; 4]);
        match tape.matmul(a, b) {
            Err(TensorError::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 2]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn softmax_single_unmasked_entry() {
        let mut tape = Tape::new();
        let a = tape.constant(&[1, 2], vec![0.0, f64::NEG_INFINITY]);
        let y = tape.softmax_rows(a).unwrap();
        assert_eq!(tape.value(y), &[1.0, 0.0]);
    }

    #[test]
    fn softmax_symmetry_and_row_sums() {
        let mut tape = Tape::new();
        let a = tape.constant(&[1, 2], vec![0.0, 0.0]);
        let y = tape.softmax_rows(a).unwrap();
        assert_eq!(tape.value(y), &[0.5, 0.5]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let mut tape = Tape::new();
            let x = tape.constant(&[3, 5], rand_vec(&mut rng, 15));
            let y = tape.softmax_rows(x).unwrap();
            for r in 0..3 {
                let s: f64 = tape.value(y)[r * 5..(r + 1) * 5].iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_matches_direct_evaluation() {
        let mut tape = Tape::new();
        let a = tape.constant(&[1, 3], vec![1.0, 2.0, 3.0]);
        let y = tape.softmax_rows(a).unwrap();
        // direct high-precision evaluation of exp-normalize
        let exps = [1.0f64.exp(), 2.0f64.exp(), 3.0f64.exp()];
        let z: f64 = exps.iter().sum();
        for (got, want) in tape.value(y).iter().zip(exps.iter().map(|e| e / z)) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rejects_fully_masked_row() {
        let mut tape = Tape::new();
        let a = tape.constant(&[1, 2], vec![f64::NEG_INFINITY, f64::NEG_INFINITY]);
        assert!(matches!(
            tape.softmax_rows(a),
            Err(TensorError::FullyMaskedRow { row: 0 })
        ));
    }

    #[test]
    fn polar_decompose_examples() {
        let mut tape = Tape::new();
        let z = CTensor::from_parts(&[2], vec![3.0, 0.0], vec![4.0, 1.0]).unwrap();
        let v = tape.constant_c(&z);
        let (a, p) = tape.polar_decompose(v);
        assert!((tape.value(a)[0] - 5.0).abs() < 1e-12);
        assert!((tape.value(p)[0] - 4.0f64.atan2(3.0)).abs() < 1e-12);
        assert!((tape.value(a)[1] - 1.0).abs() < 1e-12);
        assert!((tape.value(p)[1] - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn polar_gradients_match_finite_differences() {
        // amplitude and phase of 1+1i, gradients wrt re and im
        let z0 = CTensor::from_parts(&[1], vec![1.0], vec![1.0]).unwrap();
        let run_amp = |z: &CTensor| {
            let mut tape = Tape::new();
            let v = tape.constant_c(z);
            let (a, _) = tape.polar_decompose(v);
            tape.value(a)[0]
        };
        let run_phase = |z: &CTensor| {
            let mut tape = Tape::new();
            let v = tape.constant_c(z);
            let (_, p) = tape.polar_decompose(v);
            tape.value(p)[0]
        };

        let mut tape = Tape::new();
        let v = tape.leaf_c(&z0);
        let (a, _p) = tape.polar_decompose(v);
        let s = tape.sum_all(a);
        tape.backward(s).unwrap();
        let (gre, gim) = tape.grad_c(v);

        for (i, (g, run)) in [(gre[0], true), (gim[0], false)].iter().enumerate() {
            let _ = run;
            let mut zp = z0.clone();
            let mut zm = z0.clone();
            if i == 0 {
                zp.re[0] += FD_H;
                zm.re[0] -= FD_H;
            } else {
                zp.im[0] += FD_H;
                zm.im[0] -= FD_H;
            }
            let fd = (run_amp(&zp) - run_amp(&zm)) / (2.0 * FD_H);
            assert!(rel_err(fd, *g) < 1e-6, "amplitude grad {i}");
        }

        let mut tape = Tape::new();
        let v = tape.leaf_c(&z0);
        let (_a, p) = tape.polar_decompose(v);
        let s = tape.sum_all(p);
        tape.backward(s).unwrap();
        let (gre, gim) = tape.grad_c(v);
        for i in 0..2 {
            let mut zp = z0.clone();
            let mut zm = z0.clone();
            if i == 0 {
                zp.re[0] += FD_H;
                zm.re[0] -= FD_H;
            } else {
                zp.im[0] += FD_H;
                zm.im[0] -= FD_H;
            }
            let fd = (run_phase(&zp) - run_phase(&zm)) / (2.0 * FD_H);
            let g = if i == 0 { gre[0] } else { gim[0] };
            assert!(rel_err(fd, g) < 1e-6, "phase grad {i}");
        }
    }

    #[test]
    fn polar_gradients_zero_at_origin() {
        let z = CTensor::zeros(&[1]);
        let mut tape = Tape::new();
        let v = tape.leaf_c(&z);
        let (a, p) = tape.polar_decompose(v);
        let both = tape.lin_comb(&[(a, 1.0), (p, 1.0)]).unwrap();
        tape.backward(both).unwrap();
        let (gre, gim) = tape.grad_c(v);
        assert_eq!((gre[0], gim[0]), (0.0, 0.0));
    }

    #[test]
    fn recompose_examples_and_roundtrip() {
        let mut tape = Tape::new();
        let amp = tape.constant(&[2], vec![1.0, 2.0]);
        let phase = tape.constant(&[2], vec![0.0, std::f64::consts::PI]);
        let z = tape.polar_recompose(amp, phase).unwrap();
        let (re, im) = tape.value_c(z);
        assert!((re[0] - 1.0).abs() < 1e-12 && im[0].abs() < 1e-12);
        assert!((re[1] + 2.0).abs() < 1e-12 && im[1].abs() < 1e-12);

        // roundtrip on 100 random nonzero values
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let re0: Vec<f64> = (0..100).map(|_| rng.gen_range(0.1..2.0)).collect();
        let im0: Vec<f64> = (0..100).map(|_| rng.gen_range(0.1..2.0)).collect();
        let z0 = CTensor::from_parts(&[100], re0.clone(), im0.clone()).unwrap();
        let mut tape = Tape::new();
        let v = tape.constant_c(&z0);
        let (a, p) = tape.polar_decompose(v);
        let back = tape.polar_recompose(a, p).unwrap();
        let (re, im) = tape.value_c(back);
        for i in 0..100 {
            assert!((re[i] - re0[i]).abs() < 1e-9);
            assert!((im[i] - im0[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn complex_matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let a0 = CTensor::from_parts(&[2, 3], rand_vec(&mut rng, 6), rand_vec(&mut rng, 6)).unwrap();
        let b0 = CTensor::from_parts(&[3, 2], rand_vec(&mut rng, 6), rand_vec(&mut rng, 6)).unwrap();

        // real scalar loss: sum of amplitudes of the product
        let run = |a: &CTensor, b: &CTensor| -> f64 {
            let mut tape = Tape::new();
            let va = tape.constant_c(a);
            let vb = tape.constant_c(b);
            let c = tape.cmatmul(va, vb).unwrap();
            let (amp, _) = tape.polar_decompose(c);
            let s = tape.sum_all(amp);
            tape.scalar(s)
        };

        let mut tape = Tape::new();
        let va = tape.leaf_c(&a0);
        let vb = tape.leaf_c(&b0);
        let c = tape.cmatmul(va, vb).unwrap();
        let (amp, _) = tape.polar_decompose(c);
        let s = tape.sum_all(amp);
        tape.backward(s).unwrap();

        let (gar, gai) = {
            let (r, i) = tape.grad_c(va);
            (r.to_vec(), i.to_vec())
        };
        let (gbr, gbi) = {
            let (r, i) = tape.grad_c(vb);
            (r.to_vec(), i.to_vec())
        };

        for i in 0..a0.numel() {
            for part in 0..2 {
                let mut zp = a0.clone();
                let mut zm = a0.clone();
                let buf_p = if part == 0 { &mut zp.re } else { &mut zp.im };
                buf_p[i] += FD_H;
                let buf_m = if part == 0 { &mut zm.re } else { &mut zm.im };
                buf_m[i] -= FD_H;
                let fd = (run(&zp, &b0) - run(&zm, &b0)) / (2.0 * FD_H);
                let g = if part == 0 { gar[i] } else { gai[i] };
                assert!(rel_err(fd, g) < 1e-5, "dA[{i}] part {part}");
            }
        }
        for i in 0..b0.numel() {
            for part in 0..2 {
                let mut zp = b0.clone();
                let mut zm = b0.clone();
                let buf_p = if part == 0 { &mut zp.re } else { &mut zp.im };
                buf_p[i] += FD_H;
                let buf_m = if part == 0 { &mut zm.re } else { &mut zm.im };
                buf_m[i] -= FD_H;
                let fd = (run(&a0, &zp) - run(&a0, &zm)) / (2.0 * FD_H);
                let g = if part == 0 { gbr[i] } else { gbi[i] };
                assert!(rel_err(fd, g) < 1e-5, "dB[{i}] part {part}");
            }
        }
    }

    #[test]
    fn random_composition_gradients_match_finite_differences() {
        // Chain several ops into a scalar and finite-difference every input
        // entry, across 20 seeds.
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x0 = Tensor::from_vec(&[3, 4], rand_vec(&mut rng, 12)).unwrap();
            let w0 = Tensor::from_vec(&[4, 3], rand_vec(&mut rng, 12)).unwrap();

            let run = |x: &Tensor, w: &Tensor| -> f64 {
                let mut tape = Tape::new();
                let vx = tape.leaf(x);
                let vw = tape.leaf(w);
                let h = tape.matmul(vx, vw).unwrap();
                let c = tape.cos(h);
                let s = tape.sin(h);
                let m = tape.mul(c, s).unwrap();
                let sm = tape.softmax_rows(m).unwrap();
                let target = vec![0.1; 9];
                let l1 = tape.pseudo_huber(sm, &target, 0.7).unwrap();
                let row = tape.row_slice(sm, 1).unwrap();
                let l2 = tape.sq_diff_mean(row).unwrap();
                let l = tape.lin_comb(&[(l1, 1.0), (l2, 0.5)]).unwrap();
                tape.scalar(l)
            };

            let mut tape = Tape::new();
            let vx = tape.leaf(&x0);
            let vw = tape.leaf(&w0);
            let h = tape.matmul(vx, vw).unwrap();
            let c = tape.cos(h);
            let s = tape.sin(h);
            let m = tape.mul(c, s).unwrap();
            let sm = tape.softmax_rows(m).unwrap();
            let target = vec![0.1; 9];
            let l1 = tape.pseudo_huber(sm, &target, 0.7).unwrap();
            let row = tape.row_slice(sm, 1).unwrap();
            let l2 = tape.sq_diff_mean(row).unwrap();
            let l = tape.lin_comb(&[(l1, 1.0), (l2, 0.5)]).unwrap();
            tape.backward(l).unwrap();

            for i in 0..x0.numel() {
                let mut xp = x0.clone();
                let mut xm = x0.clone();
                xp.data[i] += FD_H;
                xm.data[i] -= FD_H;
                let fd = (run(&xp, &w0) - run(&xm, &w0)) / (2.0 * FD_H);
                assert!(
                    rel_err(fd, tape.grad(vx)[i]) < 1e-4,
                    "seed {seed} dx[{i}]: fd={fd}, an={}",
                    tape.grad(vx)[i]
                );
            }
            for i in 0..w0.numel() {
                let mut wp = w0.clone();
                let mut wm = w0.clone();
                wp.data[i] += FD_H;
                wm.data[i] -= FD_H;
                let fd = (run(&x0, &wp) - run(&x0, &wm)) / (2.0 * FD_H);
                assert!(rel_err(fd, tape.grad(vw)[i]) < 1e-4, "seed {seed} dw[{i}]");
            }
        }
    }

    #[test]
    fn irfft_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for n_time in [8usize, 9, 12] {
            let half = spectral::one_sided_len(n_time);
            let z0 =
                CTensor::from_parts(&[half], rand_vec(&mut rng, half), rand_vec(&mut rng, half))
                    .unwrap();
            let target = rand_vec(&mut rng, n_time);

            let run = |z: &CTensor| -> f64 {
                let mut tape = Tape::new();
                let v = tape.constant_c(z);
                let y = tape.irfft(v, n_time).unwrap();
                let l = tape.pseudo_huber(y, &target, 1.0).unwrap();
                tape.scalar(l)
            };

            let mut tape = Tape::new();
            let v = tape.leaf_c(&z0);
            let y = tape.irfft(v, n_time).unwrap();
            let l = tape.pseudo_huber(y, &target, 1.0).unwrap();
            tape.backward(l).unwrap();
            let (gr, gi) = {
                let (r, i) = tape.grad_c(v);
                (r.to_vec(), i.to_vec())
            };

            for i in 0..half {
                for part in 0..2 {
                    let mut zp = z0.clone();
                    let mut zm = z0.clone();
                    if part == 0 {
                        zp.re[i] += FD_H;
                        zm.re[i] -= FD_H;
                    } else {
                        zp.im[i] += FD_H;
                        zm.im[i] -= FD_H;
                    }
                    let fd = (run(&zp) - run(&zm)) / (2.0 * FD_H);
                    let g = if part == 0 { gr[i] } else { gi[i] };
                    assert!(
                        rel_err(fd, g) < 1e-5,
                        "n_time={n_time} bin {i} part {part}: fd={fd} an={g}"
                    );
                }
            }
        }
    }

    #[test]
    fn fft_mae_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for n in [8usize, 11] {
            let p0 = Tensor::from_vec(&[n], rand_vec(&mut rng, n)).unwrap();
            let target = rand_vec(&mut rng, n);

            let run = |p: &Tensor| -> f64 {
                let mut tape = Tape::new();
                let v = tape.constant(&p.shape, p.data.clone());
                let l = tape.fft_mae(v, &target).unwrap();
                tape.scalar(l)
            };

            let mut tape = Tape::new();
            let v = tape.leaf(&p0);
            let l = tape.fft_mae(v, &target).unwrap();
            tape.backward(l).unwrap();
            let g = tape.grad(v).to_vec();

            for i in 0..n {
                let mut pp = p0.clone();
                let mut pm = p0.clone();
                pp.data[i] += FD_H;
                pm.data[i] -= FD_H;
                let fd = (run(&pp) - run(&pm)) / (2.0 * FD_H);
                assert!(rel_err(fd, g[i]) < 1e-5, "n={n} dp[{i}]");
            }
        }
    }

    #[test]
    fn scale_complex_and_recompose_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let u0 = Tensor::from_vec(&[4], rand_vec(&mut rng, 4)).unwrap();
        let a0 = Tensor::from_vec(&[4], (0..4).map(|_| rng.gen_range(0.2..1.5)).collect()).unwrap();
        let p0 = Tensor::from_vec(&[4], rand_vec(&mut rng, 4)).unwrap();

        let run = |u: &Tensor, a: &Tensor, p: &Tensor| -> f64 {
            let mut tape = Tape::new();
            let vu = tape.constant(&u.shape, u.data.clone());
            let va = tape.constant(&a.shape, a.data.clone());
            let vp = tape.constant(&p.shape, p.data.clone());
            let z = tape.polar_recompose(va, vp).unwrap();
            let zz = tape.scale_complex(vu, z).unwrap();
            let (amp, ph) = tape.polar_decompose(zz);
            let s1 = tape.sum_all(amp);
            let s2 = tape.sum_all(ph);
            let l = tape.lin_comb(&[(s1, 1.0), (s2, 0.3)]).unwrap();
            tape.scalar(l)
        };

        let mut tape = Tape::new();
        let vu = tape.leaf(&u0);
        let va = tape.leaf(&a0);
        let vp = tape.leaf(&p0);
        let z = tape.polar_recompose(va, vp).unwrap();
        let zz = tape.scale_complex(vu, z).unwrap();
        let (amp, ph) = tape.polar_decompose(zz);
        let s1 = tape.sum_all(amp);
        let s2 = tape.sum_all(ph);
        let l = tape.lin_comb(&[(s1, 1.0), (s2, 0.3)]).unwrap();
        tape.backward(l).unwrap();

        for (name, t0, v) in [("u", &u0, vu), ("a", &a0, va), ("p", &p0, vp)] {
            for i in 0..t0.numel() {
                let mut tp = t0.clone();
                let mut tm = t0.clone();
                tp.data[i] += FD_H;
                tm.data[i] -= FD_H;
                let (up, am, pm) = match name {
                    "u" => (&tp, &a0, &p0),
                    "a" => (&u0, &tp, &p0),
                    _ => (&u0, &a0, &tp),
                };
                let (um, amm, pmm) = match name {
                    "u" => (&tm, &a0, &p0),
                    "a" => (&u0, &tm, &p0),
                    _ => (&u0, &a0, &tm),
                };
                let fd = (run(up, am, pm) - run(um, amm, pmm)) / (2.0 * FD_H);
                assert!(rel_err(fd, tape.grad(v)[i]) < 1e-5, "{name}[{i}]");
            }
        }
    }
}

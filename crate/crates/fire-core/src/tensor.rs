//! Dense row-major real and complex tensors in 64-bit floats.
//!
//! These are deliberately small value types: flat storage, explicit shapes,
//! and just enough matrix arithmetic for the forecasting network. Gradients
//! live in an optional buffer of the same shape; the autodiff tape
//! ([`crate::tape`]) fills them in.

use std::fmt;

pub type CoreResult<T> = Result<T, TensorError>;

/// Errors from tensor construction and arithmetic.
#[derive(Clone, Debug, PartialEq)]
pub enum TensorError {
    /// Operands have incompatible shapes; names both sides.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// Flat data length does not match the product of the shape.
    DataLength { expected: usize, got: usize },
    /// Operation requires a 2-D tensor.
    NotMatrix { op: &'static str, shape: Vec<usize> },
    /// A softmax row contained only -inf entries.
    FullyMaskedRow { row: usize },
    /// Operation received an empty input.
    EmptyInput(&'static str),
    /// One-sided spectrum length does not match the time-domain length.
    InconsistentSpectrum { n_time: usize, bins: usize },
    /// Scalar expected (numel == 1).
    NotScalar { op: &'static str, shape: Vec<usize> },
    /// Generic precondition violation with a short description.
    Invalid(&'static str),
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch between {lhs:?} and {rhs:?}")
            }
            TensorError::DataLength { expected, got } => {
                write!(f, "data length {got} does not match shape product {expected}")
            }
            TensorError::NotMatrix { op, shape } => {
                write!(f, "{op}: expected a 2-D tensor, got shape {shape:?}")
            }
            TensorError::FullyMaskedRow { row } => {
                write!(f, "softmax_rows: row {row} is fully masked (all -inf)")
            }
            TensorError::EmptyInput(what) => write!(f, "empty input: {what}"),
            TensorError::InconsistentSpectrum { n_time, bins } => {
                write!(
                    f,
                    "one-sided spectrum of {bins} bins is inconsistent with n_time {n_time}"
                )
            }
            TensorError::NotScalar { op, shape } => {
                write!(f, "{op}: expected a scalar, got shape {shape:?}")
            }
            TensorError::Invalid(what) => write!(f, "{what}"),
        }
    }
}

impl std::error::Error for TensorError {}

/// Dense real tensor, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    /// Gradient of the same shape, populated by the tape after `backward`.
    pub grad: Option<Vec<f64>>,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> CoreResult<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::DataLength {
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.data.len()]);
        }
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows of a 2-D tensor (a 1-D tensor counts as a single row).
    pub fn rows(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 0,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Dense complex tensor, row-major, split into real and imaginary buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct CTensor {
    pub shape: Vec<usize>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub grad_re: Option<Vec<f64>>,
    pub grad_im: Option<Vec<f64>>,
}

impl CTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        CTensor {
            shape: shape.to_vec(),
            re: vec![0.0; n],
            im: vec![0.0; n],
            grad_re: None,
            grad_im: None,
        }
    }

    pub fn from_parts(shape: &[usize], re: Vec<f64>, im: Vec<f64>) -> CoreResult<Self> {
        let expected: usize = shape.iter().product();
        if re.len() != expected || im.len() != expected {
            return Err(TensorError::DataLength {
                expected,
                got: re.len().max(im.len()),
            });
        }
        Ok(CTensor {
            shape: shape.to_vec(),
            re,
            im,
            grad_re: None,
            grad_im: None,
        })
    }

    pub fn numel(&self) -> usize {
        self.re.len()
    }

    pub fn rows(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 0,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(self.im.iter()).all(|v| v.is_finite())
    }
}

// ── flat matrix kernels ─────────────────────────────────────────────────
//
// All matrices are row-major flat slices. The ikj loop order keeps the
// inner accesses sequential; sizes here are small (tens to a few hundred
// per side) so this is plenty.

/// c = a · b, a: [n×k], b: [k×m].
pub fn mat_mul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * m];
    for i in 0..n {
        for t in 0..k {
            let av = a[i * k + t];
            if av == 0.0 {
                continue;
            }
            let brow = &b[t * m..(t + 1) * m];
            let crow = &mut c[i * m..(i + 1) * m];
            for j in 0..m {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

/// c = a · bᵀ, a: [n×k], b: [m×k].
pub fn mat_mul_nt(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * m];
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for t in 0..k {
                acc += arow[t] * brow[t];
            }
            c[i * m + j] = acc;
        }
    }
    c
}

/// c = aᵀ · b, a: [n×k], b: [n×m], result [k×m].
pub fn mat_mul_tn(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * m];
    for t in 0..n {
        let arow = &a[t * k..(t + 1) * k];
        let brow = &b[t * m..(t + 1) * m];
        for i in 0..k {
            let av = arow[i];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[i * m..(i + 1) * m];
            for j in 0..m {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

/// Complex c = a · b with (a+bi)(c+di) expansion. a: [n×k], b: [k×m].
pub fn cmat_mul(
    ar: &[f64],
    ai: &[f64],
    br: &[f64],
    bi: &[f64],
    n: usize,
    k: usize,
    m: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut cr = vec![0.0; n * m];
    let mut ci = vec![0.0; n * m];
    for i in 0..n {
        for t in 0..k {
            let are = ar[i * k + t];
            let aim = ai[i * k + t];
            if are == 0.0 && aim == 0.0 {
                continue;
            }
            let brr = &br[t * m..(t + 1) * m];
            let bir = &bi[t * m..(t + 1) * m];
            let crr = &mut cr[i * m..(i + 1) * m];
            for j in 0..m {
                crr[j] += are * brr[j] - aim * bir[j];
            }
            let cir = &mut ci[i * m..(i + 1) * m];
            for j in 0..m {
                cir[j] += are * bir[j] + aim * brr[j];
            }
        }
    }
    (cr, ci)
}

/// Complex c = a · bᴴ (conjugate transpose). a: [n×k], b: [m×k].
pub fn cmat_mul_nh(
    ar: &[f64],
    ai: &[f64],
    br: &[f64],
    bi: &[f64],
    n: usize,
    k: usize,
    m: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut cr = vec![0.0; n * m];
    let mut ci = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut accr = 0.0;
            let mut acci = 0.0;
            for t in 0..k {
                let gre = ar[i * k + t];
                let gim = ai[i * k + t];
                let bre = br[j * k + t];
                let bim = bi[j * k + t];
                // g * conj(b)
                accr += gre * bre + gim * bim;
                acci += gim * bre - gre * bim;
            }
            cr[i * m + j] = accr;
            ci[i * m + j] = acci;
        }
    }
    (cr, ci)
}

/// Complex c = aᴴ · b. a: [n×k], b: [n×m], result [k×m].
pub fn cmat_mul_hn(
    ar: &[f64],
    ai: &[f64],
    br: &[f64],
    bi: &[f64],
    n: usize,
    k: usize,
    m: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut cr = vec![0.0; k * m];
    let mut ci = vec![0.0; k * m];
    for t in 0..n {
        for i in 0..k {
            let are = ar[t * k + i];
            let aim = -ai[t * k + i]; // conj
            if are == 0.0 && aim == 0.0 {
                continue;
            }
            let brr = &br[t * m..(t + 1) * m];
            let bir = &bi[t * m..(t + 1) * m];
            let crr = &mut cr[i * m..(i + 1) * m];
            let cir = &mut ci[i * m..(i + 1) * m];
            for j in 0..m {
                crr[j] += are * brr[j] - aim * bir[j];
                cir[j] += are * bir[j] + aim * brr[j];
            }
        }
    }
    (cr, ci)
}

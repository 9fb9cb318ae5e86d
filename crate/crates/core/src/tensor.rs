//! Dense third-order tensors and the multilinear kernels used by the
//! factorization.
//!
//! Layout: entries are stored contiguously with the first index fastest,
//! i.e. entry `(i, j, k)` of an `I x J x K` tensor lives at
//! `i + I * (j + J * k)`. Every unfolding is defined relative to this
//! layout:
//!
//! | mode | shape          | column index of entry `(i, j, k)` |
//! |------|----------------|-----------------------------------|
//! | 1    | `I x (J * K)`  | `j + J * k`                       |
//! | 2    | `J x (I * K)`  | `i + I * k`                       |
//! | 3    | `K x (I * J)`  | `i + I * j`                       |
//!
//! With this convention the mode-n unfolding of a CP tensor
//! `[[A, B, C]]` is `A (C ⊙ B)^T`, `B (C ⊙ A)^T` and `C (B ⊙ A)^T`, where
//! `⊙` is [`khatri_rao`].

use std::fmt;
use std::ops::Deref;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{OmaError, Result};

/// Unfolding mode of a third-order tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    One,
    Two,
    Three,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::One, Mode::Two, Mode::Three];
}

impl TryFrom<usize> for Mode {
    type Error = OmaError;

    fn try_from(n: usize) -> Result<Self> {
        match n {
            1 => Ok(Mode::One),
            2 => Ok(Mode::Two),
            3 => Ok(Mode::Three),
            _ => Err(OmaError::usage(format!("tensor mode must be 1, 2 or 3, got {n}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = match self {
            Mode::One => 1,
            Mode::Two => 2,
            Mode::Three => 3,
        };
        write!(f, "{n}")
    }
}

/// Dense real `I x J x K` tensor, first index fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    /// Wrap a buffer laid out first-index-fastest. Rejects length mismatches
    /// and non-finite entries.
    pub fn from_vec(dims: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        let (i, j, k) = dims;
        if data.len() != i * j * k {
            return Err(OmaError::usage(format!(
                "tensor data has {} entries, dims {i}x{j}x{k} need {}",
                data.len(),
                i * j * k
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(OmaError::usage(format!("tensor entry {pos} is not finite")));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: (usize, usize, usize)) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.0 * dims.1 * dims.2],
        }
    }

    /// Build a tensor by evaluating `f(i, j, k)` at every index.
    pub fn from_fn(dims: (usize, usize, usize), mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let (ni, nj, nk) = dims;
        let mut data = Vec::with_capacity(ni * nj * nk);
        for k in 0..nk {
            for j in 0..nj {
                for i in 0..ni {
                    data.push(f(i, j, k));
                }
            }
        }
        Self::from_vec(dims, data)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims.0 * (j + self.dims.1 * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    /// Frontal slice `k` as an `I x J` matrix.
    pub fn slice(&self, k: usize) -> DMatrix<f64> {
        let (ni, nj, _) = self.dims;
        let start = ni * nj * k;
        DMatrix::from_column_slice(ni, nj, &self.data[start..start + ni * nj])
    }

    /// Scale every entry by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Sum of squared entries.
    pub fn norm_squared(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Inner product of the vectorized tensors. Dimensions must agree.
    pub fn inner(&self, other: &Tensor3) -> f64 {
        assert_eq!(self.dims, other.dims, "inner product of mismatched tensors");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}

/// Factor matrix of a CP model: one row per index of its mode, one column
/// per rank-one component.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrix(DMatrix<f64>);

impl FactorMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.ncols() == 0 {
            return Err(OmaError::usage("factor matrix needs at least one column"));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(OmaError::usage("factor matrix has non-finite entries"));
        }
        Ok(Self(m))
    }

    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_row_slice(rows, cols, data))
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

impl Deref for FactorMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Mode-n unfolding. See the module docs for the column ordering.
pub fn unfold(t: &Tensor3, mode: Mode) -> DMatrix<f64> {
    let (ni, nj, nk) = t.dims;
    match mode {
        // Column-major buffer of the mode-1 unfolding is exactly the tensor buffer.
        Mode::One => DMatrix::from_column_slice(ni, nj * nk, &t.data),
        Mode::Two => DMatrix::from_fn(nj, ni * nk, |j, col| {
            let (i, k) = (col % ni, col / ni);
            t.get(i, j, k)
        }),
        Mode::Three => DMatrix::from_fn(nk, ni * nj, |k, col| {
            let (i, j) = (col % ni, col / ni);
            t.get(i, j, k)
        }),
    }
}

/// Inverse of [`unfold`].
pub fn refold(m: &DMatrix<f64>, mode: Mode, dims: (usize, usize, usize)) -> Result<Tensor3> {
    let (ni, nj, nk) = dims;
    let expected = match mode {
        Mode::One => (ni, nj * nk),
        Mode::Two => (nj, ni * nk),
        Mode::Three => (nk, ni * nj),
    };
    if m.shape() != expected {
        return Err(OmaError::usage(format!(
            "mode-{mode} unfolding of {ni}x{nj}x{nk} must be {}x{}, got {}x{}",
            expected.0,
            expected.1,
            m.nrows(),
            m.ncols()
        )));
    }
    Tensor3::from_fn(dims, |i, j, k| match mode {
        Mode::One => m[(i, j + nj * k)],
        Mode::Two => m[(j, i + ni * k)],
        Mode::Three => m[(k, i + ni * j)],
    })
}

/// Column-wise Kronecker product: column `r` is `a[:, r] ⊗ b[:, r]`, so row
/// `p * b.rows + q` holds `a[p, r] * b[q, r]`.
pub fn khatri_rao(a: &FactorMatrix, b: &FactorMatrix) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(OmaError::usage(format!(
            "khatri-rao needs equal column counts, got {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    Ok(khatri_rao_unchecked(a, b))
}

pub(crate) fn khatri_rao_unchecked(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ra, rb) = (a.nrows(), b.nrows());
    DMatrix::from_fn(ra * rb, a.ncols(), |row, r| a[(row / rb, r)] * b[(row % rb, r)])
}

/// Sum of rank-one outer products `Σ_r a1[:, r] ∘ a2[:, r] ∘ rs[:, r]`.
pub fn cp_reconstruct(a1: &FactorMatrix, a2: &FactorMatrix, rs: &FactorMatrix) -> Result<Tensor3> {
    if a1.ncols() != a2.ncols() || a1.ncols() != rs.ncols() {
        return Err(OmaError::usage(format!(
            "cp factors disagree on rank: {}, {}, {}",
            a1.ncols(),
            a2.ncols(),
            rs.ncols()
        )));
    }
    Ok(cp_reconstruct_unchecked(a1, a2, rs))
}

pub(crate) fn cp_reconstruct_unchecked(a1: &DMatrix<f64>, a2: &DMatrix<f64>, rs: &DMatrix<f64>) -> Tensor3 {
    let dims = (a1.nrows(), a2.nrows(), rs.nrows());
    // mode-1 unfolding: A1 (Rs ⊙ A2)^T, whose column-major buffer is the tensor.
    let unfolded = a1 * khatri_rao_unchecked(rs, a2).transpose();
    Tensor3 {
        dims,
        data: unfolded.as_slice().to_vec(),
    }
}

pub fn frobenius_norm(t: &Tensor3) -> f64 {
    t.norm_squared().sqrt()
}

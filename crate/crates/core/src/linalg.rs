//! Arithmetic in the coefficient algebra `B = M_d(C)` and its matricial
//! amplifications `M_k(B) = M_{kd}(C)`.
//!
//! Elements of `B` and of `M_k(B)` are both plain dense complex matrices;
//! the block structure of `M_k(B)` is `k x k` blocks of size `d x d`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense complex matrix: an element of `B` or of some `M_k(B)`.
pub type Mat = DMatrix<Complex64>;

/// Relative threshold below which a matrix is treated as singular.
pub const SINGULAR_RTOL: f64 = 1e-12;

#[inline]
pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity(d: usize) -> Mat {
    Mat::identity(d, d)
}

pub fn zeros(d: usize) -> Mat {
    Mat::zeros(d, d)
}

/// Matrix unit `E_{ab}` in `M_d(C)`.
pub fn matrix_unit(d: usize, a: usize, b: usize) -> Mat {
    let mut m = zeros(d);
    m[(a, b)] = Complex64::new(1.0, 0.0);
    m
}

pub fn scalar(d: usize, z: Complex64) -> Mat {
    Mat::from_diagonal_element(d, d, z)
}

pub fn adjoint(x: &Mat) -> Mat {
    x.adjoint()
}

/// `(x - x*) / 2i`, always self-adjoint.
pub fn imag_part(x: &Mat) -> Mat {
    let diff = x - x.adjoint();
    diff * c64(0.0, -0.5)
}

/// `(x + x*) / 2`.
pub fn real_part(x: &Mat) -> Mat {
    (x + x.adjoint()) * c64(0.5, 0.0)
}

pub fn is_self_adjoint(x: &Mat, tol: f64) -> bool {
    x.is_square() && (x - x.adjoint()).iter().all(|z| z.norm() <= tol)
}

/// Eigenvalues of the Hermitian part of `x`, ascending.
pub fn hermitian_eigenvalues(x: &Mat) -> Vec<f64> {
    // The complex solver can return NaN on sparse input; the real form
    // [[A, -B], [B, A]] has the same spectrum with every eigenvalue doubled.
    let h = real_part(x);
    let n = h.nrows();
    let real = nalgebra::DMatrix::<f64>::from_fn(2 * n, 2 * n, |r, c| {
        let z = h[(r % n, c % n)];
        match (r < n, c < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    });
    let mut ev: Vec<f64> = real.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev.into_iter().step_by(2).collect()
}

pub fn min_eigenvalue(x: &Mat) -> f64 {
    hermitian_eigenvalues(x).first().copied().unwrap_or(0.0)
}

pub fn max_eigenvalue(x: &Mat) -> f64 {
    hermitian_eigenvalues(x).last().copied().unwrap_or(0.0)
}

/// Membership in the (matricial) upper half-plane with margin `eps`.
pub fn in_upper_half_plane(x: &Mat, eps: f64) -> bool {
    x.is_square() && x.nrows() > 0 && min_eigenvalue(&imag_part(x)) >= eps
}

pub fn singular_values(x: &Mat) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let mut sv: Vec<f64> = x.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).expect("finite singular values"));
    sv
}

/// Operator norm (largest singular value).
pub fn op_norm(x: &Mat) -> f64 {
    singular_values(x).first().copied().unwrap_or(0.0)
}

/// Inverse, refusing matrices whose smallest singular value falls below
/// `SINGULAR_RTOL * ||x||`.
pub fn invert(x: &Mat) -> Result<Mat> {
    if !x.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "cannot invert a {}x{} matrix",
            x.nrows(),
            x.ncols()
        )));
    }
    let sv = singular_values(x);
    let norm = sv.first().copied().unwrap_or(0.0);
    let sigma_min = sv.last().copied().unwrap_or(0.0);
    if norm == 0.0 || sigma_min < SINGULAR_RTOL * norm {
        return Err(Error::Singular { sigma_min, norm });
    }
    x.clone()
        .try_inverse()
        .ok_or(Error::Singular { sigma_min, norm })
}

/// Assemble a `k x k` array of `d x d` blocks into an element of `M_k(B)`.
pub fn amplify(blocks: &[Vec<Mat>]) -> Result<Mat> {
    let k = blocks.len();
    if k == 0 {
        return Err(Error::DimensionMismatch("empty block array".into()));
    }
    let d = blocks[0]
        .first()
        .map(|b| b.nrows())
        .ok_or_else(|| Error::DimensionMismatch("empty block row".into()))?;
    let mut out = Mat::zeros(k * d, k * d);
    for (i, row) in blocks.iter().enumerate() {
        if row.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "block row {i} has {} blocks, expected {k}",
                row.len()
            )));
        }
        for (j, b) in row.iter().enumerate() {
            if b.nrows() != d || b.ncols() != d {
                return Err(Error::DimensionMismatch(format!(
                    "block ({i},{j}) is {}x{}, expected {d}x{d}",
                    b.nrows(),
                    b.ncols()
                )));
            }
            out.view_mut((i * d, j * d), (d, d)).copy_from(b);
        }
    }
    Ok(out)
}

/// Block-diagonal `diag(b, ..., b)` in `M_k(B)`, i.e. `I_k (x) b`.
pub fn amplify_diagonal(b: &Mat, k: usize) -> Mat {
    let d = b.nrows();
    let mut out = Mat::zeros(k * d, k * d);
    for i in 0..k {
        out.view_mut((i * d, i * d), (d, d)).copy_from(b);
    }
    out
}

/// Block `(i, j)` of an element of `M_k(B)`.
pub fn block(x: &Mat, d: usize, i: usize, j: usize) -> Mat {
    x.view((i * d, j * d), (d, d)).into_owned()
}

/// `b (x) I_n` with `M_d (x) M_n` indexed as `(p, alpha) -> p * n + alpha`.
pub fn kron_identity(b: &Mat, n: usize) -> Mat {
    b.kronecker(&Mat::identity(n, n))
}

/// Largest entrywise modulus.
pub fn max_abs(x: &Mat) -> f64 {
    x.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Normalized trace `tr(x) / dim`.
pub fn normalized_trace(x: &Mat) -> Complex64 {
    let n = x.nrows().max(1) as f64;
    x.trace() / n
}

/// Random matrix with i.i.d. standard complex Gaussian-like entries
/// (uniform on `[-1, 1]` in each part).
pub fn random_matrix<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Mat {
    Mat::from_fn(d, d, |_, _| {
        c64(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    })
}

pub fn random_hermitian<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Mat {
    real_part(&random_matrix(rng, d))
}

/// Random self-adjoint matrix rescaled to operator norm `norm`.
pub fn random_hermitian_with_norm<R: Rng + ?Sized>(rng: &mut R, d: usize, norm: f64) -> Mat {
    let h = random_hermitian(rng, d);
    let n = op_norm(&h);
    if n == 0.0 {
        return zeros(d);
    }
    h * c64(norm / n, 0.0)
}

/// JSON form of a matrix: `{"dim": d, "entries": [[re, im], ...]}`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub dim: usize,
    pub entries: Vec<[f64; 2]>,
}

impl From<&Mat> for MatrixJson {
    fn from(m: &Mat) -> Self {
        MatrixJson {
            dim: m.nrows(),
            entries: row_major_pairs(m),
        }
    }
}

impl TryFrom<&MatrixJson> for Mat {
    type Error = Error;

    fn try_from(j: &MatrixJson) -> Result<Mat> {
        from_row_major_pairs(j.dim, &j.entries)
    }
}

pub fn row_major_pairs(m: &Mat) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let z = m[(r, c)];
            out.push([z.re, z.im]);
        }
    }
    out
}

pub fn from_row_major_pairs(dim: usize, entries: &[[f64; 2]]) -> Result<Mat> {
    if entries.len() != dim * dim {
        return Err(Error::DimensionMismatch(format!(
            "expected {} entries for a {dim}x{dim} matrix, found {}",
            dim * dim,
            entries.len()
        )));
    }
    Ok(Mat::from_fn(dim, dim, |r, c| {
        let [re, im] = entries[r * dim + c];
        c64(re, im)
    }))
}

/// A point of `M_k^+(B)`: `Im(value) >= margin * I`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbePoint {
    level: usize,
    value: Mat,
    margin: f64,
}

impl ProbePoint {
    /// Wraps `value` as a level-`level` probe; the margin is the smallest
    /// eigenvalue of its imaginary part, which must be positive.
    pub fn new(value: Mat, level: usize) -> Result<Self> {
        if level == 0 || !value.is_square() || value.nrows() % level != 0 {
            return Err(Error::DimensionMismatch(format!(
                "a {}x{} matrix is not an element of M_{level}(B)",
                value.nrows(),
                value.ncols()
            )));
        }
        let margin = min_eigenvalue(&imag_part(&value));
        if margin <= 0.0 {
            return Err(Error::DomainViolation(format!(
                "imaginary part has eigenvalue {margin:e} <= 0"
            )));
        }
        Ok(ProbePoint {
            level,
            value,
            margin,
        })
    }

    /// Scalar probe `z * I_d` at level 1.
    pub fn scalar(d: usize, z: Complex64) -> Result<Self> {
        Self::new(scalar(d, z), 1)
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn value(&self) -> &Mat {
        &self.value
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    /// Size `d` of the coefficient algebra.
    pub fn dim(&self) -> usize {
        self.value.nrows() / self.level
    }

    pub fn inverse(&self) -> Result<Mat> {
        invert(&self.value)
    }

    /// `||b^{-1}||`.
    pub fn inverse_norm(&self) -> Result<f64> {
        Ok(op_norm(&self.inverse()?))
    }
}

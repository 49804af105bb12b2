//! Dense storage for C-multilinear maps `B^m -> B`, `B = M_d(C)`.
//!
//! A map with `m` slots is stored by its values on all tuples of matrix
//! units `(E_{a_1 b_1}, ..., E_{a_m b_m})`. A basis tuple is addressed by
//! its index `sum_s e_s (d^2)^(m-1-s)` with digit `e_s = a_s * d + b_s`
//! (first slot most significant). Each value is a row-major `d x d` block.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{op_norm, Mat};

/// Upper limit on stored basis tuples per map (keeps a map under ~150 MB at d = 3).
pub const MAX_TUPLES: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Multilinear {
    dim: usize,
    slots: usize,
    data: Vec<Complex64>,
}

impl Multilinear {
    pub fn zeros(dim: usize, slots: usize) -> Result<Self> {
        let tuples = tuple_count(dim, slots)?;
        Ok(Multilinear {
            dim,
            slots,
            data: vec![Complex64::new(0.0, 0.0); tuples * dim * dim],
        })
    }

    /// The constant map (no slots) with value `value`.
    pub fn constant(value: &Mat) -> Self {
        let d = value.nrows();
        let mut m = Multilinear::zeros(d, 0).expect("one tuple");
        m.set_entry(0, value);
        m
    }

    /// Builds a map from its values on basis tuples; `f` receives the digits.
    pub fn from_basis_fn<F>(dim: usize, slots: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(&[usize]) -> Mat,
    {
        let mut m = Multilinear::zeros(dim, slots)?;
        let mut digits = vec![0usize; slots];
        for t in 0..m.num_tuples() {
            m.digits_into(t, &mut digits);
            let v = f(&digits);
            m.set_entry(t, &v);
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn num_tuples(&self) -> usize {
        self.data.len() / (self.dim * self.dim)
    }

    /// Size of the per-slot basis, `d^2`.
    pub fn base(&self) -> usize {
        self.dim * self.dim
    }

    pub fn raw(&self) -> &[Complex64] {
        &self.data
    }

    pub fn raw_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn entry_slice(&self, t: usize) -> &[Complex64] {
        let b = self.base();
        &self.data[t * b..(t + 1) * b]
    }

    pub fn entry(&self, t: usize) -> Mat {
        let d = self.dim;
        let s = self.entry_slice(t);
        Mat::from_fn(d, d, |r, c| s[r * d + c])
    }

    pub fn set_entry(&mut self, t: usize, value: &Mat) {
        let d = self.dim;
        let b = self.base();
        let dst = &mut self.data[t * b..(t + 1) * b];
        for r in 0..d {
            for c in 0..d {
                dst[r * d + c] = value[(r, c)];
            }
        }
    }

    pub fn digits_into(&self, mut t: usize, out: &mut [usize]) {
        let base = self.base();
        for s in (0..self.slots).rev() {
            out[s] = t % base;
            t /= base;
        }
    }

    pub fn index_of(&self, digits: &[usize]) -> usize {
        digits.iter().fold(0, |acc, &e| acc * self.base() + e)
    }

    fn check_compatible(&self, other: &Multilinear) -> Result<()> {
        if self.dim != other.dim || self.slots != other.slots {
            return Err(Error::DimensionMismatch(format!(
                "maps ({}, {} slots) and ({}, {} slots) differ in shape",
                self.dim, self.slots, other.dim, other.slots
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Multilinear) -> Result<Multilinear> {
        self.check_compatible(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(self.with_data(data))
    }

    pub fn sub(&self, other: &Multilinear) -> Result<Multilinear> {
        self.check_compatible(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(self.with_data(data))
    }

    pub fn scale(&self, s: f64) -> Multilinear {
        let data = self.data.iter().map(|a| a * s).collect();
        self.with_data(data)
    }

    fn with_data(&self, data: Vec<Complex64>) -> Multilinear {
        Multilinear {
            dim: self.dim,
            slots: self.slots,
            data,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|z| z.re == 0.0 && z.im == 0.0)
    }

    /// Largest operator norm over basis-tuple values.
    pub fn max_entry_norm(&self) -> f64 {
        (0..self.num_tuples())
            .map(|t| op_norm(&self.entry(t)))
            .fold(0.0, f64::max)
    }

    /// `max_entry_norm(self - other)`.
    pub fn distance(&self, other: &Multilinear) -> Result<f64> {
        Ok(self.sub(other)?.max_entry_norm())
    }

    /// Evaluation at arbitrary arguments in `B`.
    pub fn eval(&self, args: &[Mat]) -> Result<Mat> {
        self.eval_amplified(args, 1)
    }

    /// Evaluation of the level-`k` amplification at arguments in `M_k(B)`:
    /// `T^{(k)}(A_1, ..., A_m)_{ij} = sum T(A_1[i, i_1], A_2[i_1, i_2], ..., A_m[i_{m-1}, j])`.
    /// With no slots the result is `I_k (x) T()`.
    pub fn eval_amplified(&self, args: &[Mat], k: usize) -> Result<Mat> {
        if args.len() != self.slots {
            return Err(Error::DimensionMismatch(format!(
                "map takes {} arguments, {} given",
                self.slots,
                args.len()
            )));
        }
        let d = self.dim;
        for a in args {
            if a.nrows() != k * d || a.ncols() != k * d {
                return Err(Error::DimensionMismatch(format!(
                    "argument is {}x{}, expected {}x{}",
                    a.nrows(),
                    a.ncols(),
                    k * d,
                    k * d
                )));
            }
        }
        // coefficient matrices C_s[e] (k x k) for each slot and basis digit
        let base = self.base();
        let coeffs: Vec<Vec<Mat>> = args
            .iter()
            .map(|a| {
                (0..base)
                    .map(|e| {
                        let (p, q) = (e / d, e % d);
                        Mat::from_fn(k, k, |i, j| a[(i * d + p, j * d + q)])
                    })
                    .collect()
            })
            .collect();
        let mut out = Mat::zeros(k * d, k * d);
        let start = Mat::identity(k, k);
        self.accumulate(&coeffs, 0, 0, &start, k, &mut out);
        Ok(out)
    }

    fn accumulate(&self, coeffs: &[Vec<Mat>], slot: usize, prefix: usize, path: &Mat, k: usize, out: &mut Mat) {
        let d = self.dim;
        if slot == self.slots {
            let v = self.entry_slice(prefix);
            for i in 0..k {
                for j in 0..k {
                    let w = path[(i, j)];
                    if w.re == 0.0 && w.im == 0.0 {
                        continue;
                    }
                    for p in 0..d {
                        for q in 0..d {
                            out[(i * d + p, j * d + q)] += w * v[p * d + q];
                        }
                    }
                }
            }
            return;
        }
        let base = self.base();
        for (e, c) in coeffs[slot].iter().enumerate() {
            if c.iter().all(|z| z.re == 0.0 && z.im == 0.0) {
                continue;
            }
            let next = path * c;
            self.accumulate(coeffs, slot + 1, prefix * base + e, &next, k, out);
        }
    }
}

pub fn tuple_count(dim: usize, slots: usize) -> Result<usize> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    let base = dim * dim;
    let mut n: usize = 1;
    for _ in 0..slots {
        n = n
            .checked_mul(base)
            .filter(|&n| n <= MAX_TUPLES)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "a {slots}-slot map over M_{dim} exceeds the dense storage limit of {MAX_TUPLES} basis tuples"
                ))
            })?;
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{amplify, c64, matrix_unit, random_matrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, d: usize, slots: usize) -> Multilinear {
        Multilinear::from_basis_fn(d, slots, |_| random_matrix(rng, d)).unwrap()
    }

    #[test]
    fn basis_evaluation_reads_stored_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_map(&mut rng, 2, 2);
        let args = [matrix_unit(2, 1, 0), matrix_unit(2, 0, 1)];
        let digits = [2, 1];
        let t = m.index_of(&digits);
        assert_eq!(m.eval(&args).unwrap(), m.entry(t));
    }

    #[test]
    fn eval_is_multilinear() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_map(&mut rng, 2, 3);
        let a: Vec<Mat> = (0..3).map(|_| random_matrix(&mut rng, 2)).collect();
        let x = random_matrix(&mut rng, 2);
        let alpha = c64(0.3, -1.2);
        for slot in 0..3 {
            let mut lhs_args = a.clone();
            lhs_args[slot] = &a[slot] * alpha + &x;
            let mut x_args = a.clone();
            x_args[slot] = x.clone();
            let lhs = m.eval(&lhs_args).unwrap();
            let rhs = m.eval(&a).unwrap() * alpha + m.eval(&x_args).unwrap();
            assert!(op_norm(&(lhs - rhs)) < 1e-10);
        }
    }

    #[test]
    fn amplification_matches_index_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 2;
        let k = 2;
        let m = random_map(&mut rng, d, 2);
        let blocks = |rng: &mut ChaCha8Rng| -> Vec<Vec<Mat>> {
            (0..k).map(|_| (0..k).map(|_| random_matrix(rng, d)).collect()).collect()
        };
        let b1 = blocks(&mut rng);
        let b2 = blocks(&mut rng);
        let big = m
            .eval_amplified(&[amplify(&b1).unwrap(), amplify(&b2).unwrap()], k)
            .unwrap();
        for i in 0..k {
            for j in 0..k {
                let mut expect = Mat::zeros(d, d);
                for l in 0..k {
                    expect += m.eval(&[b1[i][l].clone(), b2[l][j].clone()]).unwrap();
                }
                let got = crate::linalg::block(&big, d, i, j);
                assert!(op_norm(&(got - expect)) < 1e-12);
            }
        }
    }

    #[test]
    fn constant_map_amplifies_block_diagonally() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = random_matrix(&mut rng, 2);
        let m = Multilinear::constant(&v);
        let out = m.eval_amplified(&[], 3).unwrap();
        assert_eq!(out, crate::linalg::amplify_diagonal(&v, 3));
    }

    #[test]
    fn storage_limit_is_enforced() {
        assert!(Multilinear::zeros(3, 7).is_err());
        assert!(Multilinear::zeros(2, 7).is_ok());
    }
}

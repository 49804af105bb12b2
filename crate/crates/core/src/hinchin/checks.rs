//! Gram-form checks of a truncated distribution: the trace conditions and
//! complete positivity, evaluated on words with matrix-unit coefficients.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{CumulantSequence, TruncatedMoments};
use crate::error::{Error, Result};
use crate::linalg::{c64, hermitian_eigenvalues, identity, matrix_unit, zeros, Mat};
use crate::multilinear::Multilinear;

const CHECK_TOL: f64 = 1e-8;

/// `None` is the unit of `B`, `Some((a, b))` the matrix unit `E_ab`.
type Coef = Option<(usize, usize)>;

/// `u_0 X u_1 X ... X u_q`, stored as its `q + 1` coefficients.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Word(Vec<Coef>);

impl Word {
    fn letters(&self) -> usize {
        self.0.len() - 1
    }

    fn adjoint(&self) -> Word {
        Word(self.0.iter().rev().map(|c| c.map(|(a, b)| (b, a))).collect())
    }

    /// `self * other`; `None` when the junction coefficient vanishes.
    fn times(&self, other: &Word) -> Option<Word> {
        let (last, first) = (*self.0.last()?, other.0[0]);
        let joint = match (last, first) {
            (None, c) | (c, None) => c,
            (Some((a, b)), Some((c, e))) => {
                if b != c {
                    return None;
                }
                Some((a, e))
            }
        };
        let mut v = self.0[..self.0.len() - 1].to_vec();
        v.push(joint);
        v.extend_from_slice(&other.0[1..]);
        Some(Word(v))
    }

    /// `self * X * other`.
    fn times_x(&self, other: &Word) -> Word {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Word(v)
    }
}

fn coef_matrix(d: usize, c: Coef) -> Mat {
    match c {
        None => identity(d),
        Some((a, b)) => matrix_unit(d, a, b),
    }
}

/// All words with at most `degree` letters; the leading coefficient is the unit
/// when `unit_first`, otherwise it runs over the matrix units as well.
fn word_family(d: usize, degree: usize, unit_first: bool) -> Vec<Word> {
    let units: Vec<Coef> = (0..d * d).map(|e| Some((e / d, e % d))).collect();
    let mut out = Vec::new();
    let mut layer: Vec<Vec<Coef>> = if unit_first {
        vec![vec![None]]
    } else {
        units.iter().map(|&u| vec![u]).collect()
    };
    for q in 0..=degree {
        out.extend(layer.iter().cloned().map(Word));
        if q == degree {
            break;
        }
        layer = layer
            .iter()
            .flat_map(|w| {
                units.iter().map(move |&u| {
                    let mut w = w.clone();
                    w.push(u);
                    w
                })
            })
            .collect();
    }
    out
}

/// `m_n(u_1..u_{n-1})` with unit coefficients expanded over diagonal matrix units.
fn middle(map: &Multilinear, coefs: &[Coef]) -> Mat {
    let d = map.dim();
    let mut acc = zeros(d);
    let mut digits = vec![0usize; coefs.len()];
    let free: Vec<usize> = (0..coefs.len()).filter(|&i| coefs[i].is_none()).collect();
    let combos = d.pow(free.len() as u32);
    for mut k in 0..combos {
        for (i, c) in coefs.iter().enumerate() {
            if let Some((a, b)) = c {
                digits[i] = a * d + b;
            }
        }
        for &i in &free {
            let a = k % d;
            k /= d;
            digits[i] = a * d + a;
        }
        acc += map.entry(map.index_of(&digits));
    }
    acc
}

/// `mu(w)`: `u_0 m_q(u_1..u_{q-1}) u_q`, or `u_0` for a letterless word.
fn word_value(mu: &TruncatedMoments, w: &Word) -> Result<Mat> {
    let d = mu.dim();
    let n = w.letters();
    if n == 0 {
        return Ok(coef_matrix(d, w.0[0]));
    }
    let m = middle(mu.map(n)?, &w.0[1..n]);
    Ok(coef_matrix(d, w.0[0]) * m * coef_matrix(d, w.0[n]))
}

fn tau_value(mu: &TruncatedMoments, w: Option<Word>) -> Result<num_complex::Complex64> {
    match w {
        None => Ok(c64(0.0, 0.0)),
        Some(w) => Ok(word_value(mu, &w)?.trace() / mu.dim() as f64),
    }
}

fn gram<F>(words: &[Word], f: F) -> Result<Mat>
where
    F: Fn(&Word, &Word) -> Result<num_complex::Complex64> + Sync,
{
    let n = words.len();
    let rows = words
        .par_iter()
        .map(|wi| {
            let adj = wi.adjoint();
            words.iter().map(|wj| f(&adj, wj)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Mat::from_fn(n, n, |i, j| rows[i][j]))
}

/// Smallest eigenvalue of the Hermitian part and the Hermitian defect.
fn hermitian_spectrum(g: &Mat) -> (f64, f64, f64) {
    let h = (g + g.adjoint()) * c64(0.5, 0.0);
    let defect = (g - g.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    let ev = hermitian_eigenvalues(&h);
    let lo = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale = ev.iter().map(|x| x.abs()).fold(0.0, f64::max);
    (lo, scale, defect)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub pass: bool,
    /// Worst violation, zero when none.
    pub worst_violation: f64,
    /// Words or word pairs examined.
    pub tested: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracialReport {
    /// Degree cutoffs used for conditions (1) and (2)/(3) after clamping to the stored order.
    pub degree_weighted: usize,
    pub degree_gram: usize,
    /// `tau mu(P^* X P) <= M tau mu(P^* P)`
    pub bounded: ConditionResult,
    /// Cauchy-Schwarz, as positivity of the Gram form `tau mu(P^* Q)`.
    pub cauchy_schwarz: ConditionResult,
    /// `tau mu(P Q) = tau mu(Q P)`
    pub tracial: ConditionResult,
}

impl TracialReport {
    pub fn pass(&self) -> bool {
        self.bounded.pass && self.cauchy_schwarz.pass && self.tracial.pass
    }
}

/// The three trace conditions over words of degree at most `degree_cutoff`.
/// The cutoff is clamped so every word product used is covered by the stored
/// moments: `(order - 1) / 2` for (1) and `order / 2` for (2) and (3).
pub fn check_tracial_conditions(mu: &TruncatedMoments, bound: f64, degree_cutoff: usize) -> Result<TracialReport> {
    if !(bound >= 0.0 && bound.is_finite()) {
        return Err(Error::InvalidArgument(format!("bound must be finite and nonnegative, got {bound}")));
    }
    let d = mu.dim();
    let order = mu.order();
    let d1 = degree_cutoff.min(order.saturating_sub(1) / 2);
    let d2 = degree_cutoff.min(order / 2);

    let f1 = word_family(d, d1, false);
    let g = gram(&f1, |p, q| tau_value(mu, p.times(q)))?;
    let gx = gram(&f1, |p, q| tau_value(mu, Some(p.times_x(q))))?;
    let (lo, scale, defect) = hermitian_spectrum(&(g * c64(bound, 0.0) - gx));
    let v1 = (-lo).max(0.0).max(defect);
    let bounded = ConditionResult {
        pass: v1 <= CHECK_TOL * (1.0 + scale),
        worst_violation: v1,
        tested: f1.len(),
    };

    let f2 = word_family(d, d2, false);
    let g = gram(&f2, |p, q| tau_value(mu, p.times(q)))?;
    let (lo, scale, defect) = hermitian_spectrum(&g);
    let v2 = (-lo).max(0.0).max(defect);
    let cauchy_schwarz = ConditionResult {
        pass: v2 <= CHECK_TOL * (1.0 + scale),
        worst_violation: v2,
        tested: f2.len(),
    };

    let pairs = f2
        .par_iter()
        .map(|p| {
            let mut worst = 0.0f64;
            let mut count = 0usize;
            let mut ok = true;
            for q in &f2 {
                let letters = p.letters() + q.letters();
                if letters > order {
                    continue;
                }
                count += 1;
                let gap = (tau_value(mu, p.times(q))? - tau_value(mu, q.times(p))?).norm();
                let rel = gap / (1.0 + bound).powi(letters as i32);
                if rel > CHECK_TOL {
                    ok = false;
                }
                worst = worst.max(gap);
            }
            Ok((ok, worst, count))
        })
        .collect::<Result<Vec<_>>>()?;
    let tracial = ConditionResult {
        pass: pairs.iter().all(|p| p.0),
        worst_violation: pairs.iter().map(|p| p.1).fold(0.0, f64::max),
        tested: pairs.iter().map(|p| p.2).sum(),
    };

    Ok(TracialReport {
        degree_weighted: d1,
        degree_gram: d2,
        bounded,
        cauchy_schwarz,
        tracial,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub degree: usize,
    /// Number of `d x d` blocks per side.
    pub blocks: usize,
    pub min_eigenvalue: f64,
    pub pass: bool,
}

/// Positivity of `[mu(P_i^* P_j)]` in `M_n(B)` over `P_i = X u_1 X ... u_q`, `q <= family_degree`
/// (clamped to `order / 2`). Left coefficients are omitted: they act by conjugation on the block matrix.
pub fn check_complete_positivity(mu: &TruncatedMoments, family_degree: usize) -> Result<PositivityReport> {
    let d = mu.dim();
    let degree = family_degree.min(mu.order() / 2);
    let words = word_family(d, degree, true);
    let n = words.len();
    let blocks = words
        .par_iter()
        .map(|wi| {
            let adj = wi.adjoint();
            words
                .iter()
                .map(|wj| match adj.times(wj) {
                    Some(w) => word_value(mu, &w),
                    None => Ok(zeros(d)),
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let big = Mat::from_fn(n * d, n * d, |r, c| blocks[r / d][c / d][(r % d, c % d)]);
    let h = (&big + big.adjoint()) * c64(0.5, 0.0);
    let lo = hermitian_eigenvalues(&h).into_iter().fold(f64::INFINITY, f64::min);
    Ok(PositivityReport {
        degree,
        blocks: n,
        min_eigenvalue: lo,
        pass: lo >= -CHECK_TOL,
    })
}

/// Scalar moments `0, -1, 0, 1`: the Gram form on `{1, X}` is `diag(1, -1)`.
pub fn forge_negative_variance() -> TruncatedMoments {
    let maps = [0.0, -1.0, 0.0, 1.0]
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            Multilinear::from_basis_fn(1, i, |_| Mat::from_element(1, 1, c64(v, 0.0))).expect("scalar tensor")
        })
        .collect();
    TruncatedMoments::new(1, 1.0, maps).expect("valid shapes")
}

/// Adds `eps E_11` to `m_3(E_11, E_22)` and to its adjoint partner `m_3(E_22, E_11)`.
/// The result stays `*`-preserving but `tau mu(X E_11 X E_22 X)` no longer matches its rotations.
pub fn forge_non_tracial(mu: &TruncatedMoments, eps: f64) -> Result<TruncatedMoments> {
    let d = mu.dim();
    if d < 2 || mu.order() < 3 {
        return Err(Error::InvalidArgument("non-tracial forgery needs d >= 2 and order >= 3".into()));
    }
    let mut out = mu.clone();
    let m3 = &mut out.maps_mut()[2];
    let bump = matrix_unit(d, 0, 0) * c64(eps, 0.0);
    for digits in [[0, d + 1], [d + 1, 0]] {
        let t = m3.index_of(&digits);
        let v = m3.entry(t) + &bump;
        m3.set_entry(t, &v);
    }
    Ok(out)
}

/// `kappa_2 -> -kappa_2`.
pub fn forge_flipped_covariance(kappa: &CumulantSequence) -> Result<CumulantSequence> {
    let mut out = kappa.clone();
    let k2 = out.map(2)?.scale(-1.0);
    out.set_map(2, k2)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{moments_from_realized, RealizedModel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn word_values_match_the_model() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let model = RealizedModel::random(&mut r, 2, 3, 1.0);
        let mu = moments_from_realized(&model, 5).unwrap();
        let a = model.element().clone();
        for unit_first in [false, true] {
            for w in word_family(2, 3, unit_first).iter().step_by(7) {
                let mut prod = model.embed(&coef_matrix(2, w.0[0]));
                for &c in &w.0[1..] {
                    prod = prod * &a * model.embed(&coef_matrix(2, c));
                }
                let direct = model.expectation(&prod);
                let got = word_value(&mu, w).unwrap();
                assert!((direct - got).iter().all(|z| z.norm() < 1e-12), "{w:?}");
            }
        }
    }

    #[test]
    fn word_algebra() {
        let p = Word(vec![Some((0, 1)), Some((1, 1))]);
        let q = Word(vec![Some((1, 0))]);
        assert_eq!(p.times(&q), Some(Word(vec![Some((0, 1)), Some((1, 0))])));
        assert_eq!(q.times(&p), Some(Word(vec![Some((1, 1)), Some((1, 1))])));
        assert_eq!(q.times(&q), None);
        assert_eq!(p.adjoint(), Word(vec![Some((1, 1)), Some((1, 0))]));
        assert_eq!(p.times_x(&q).letters(), 2);
        assert_eq!(word_family(2, 2, false).len(), 4 + 16 + 64);
    }
}

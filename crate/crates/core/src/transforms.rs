//! Cauchy, F- and Voiculescu transforms and the subordination fixed point.
//!
//! Convention: `G(b) = E[(b - X)^{-1}] = sum_{n>=0} b^{-1} m_n(b^{-1}, ..., b^{-1}) b^{-1}`,
//! with the `n = 0` term `b^{-1}`. It maps the upper half-plane into the lower one,
//! `F = G^{-1}` satisfies `Im F(b) >= Im b`, and `phi(b) = F^{<-1>}(b) - b`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{
    apply_linear_map, choi_matrix, covariance_matrix, is_semicircular_plus_shift,
    CumulantSequence, RealizedModel, TruncatedMoments,
};
use crate::error::{Error, Result};
use crate::linalg::{
    amplify_diagonal, block, invert, is_self_adjoint, kron_identity, min_eigenvalue, op_norm,
    Mat, ProbePoint,
};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 500;

/// Tag written into sweep CSVs.
pub const CONVENTION: &str = "G=E[(b-X)^-1]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RadiusRule {
    /// `||b^{-1}|| < 1/M`
    Cauchy,
    /// `||b^{-1}|| < 1/(4M)`
    Voiculescu,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformDomain {
    pub bound: f64,
    pub level: usize,
    pub rule: RadiusRule,
}

impl TransformDomain {
    pub fn cauchy(bound: f64, level: usize) -> Self {
        TransformDomain {
            bound,
            level,
            rule: RadiusRule::Cauchy,
        }
    }

    pub fn voiculescu(bound: f64, level: usize) -> Self {
        TransformDomain {
            bound,
            level,
            rule: RadiusRule::Voiculescu,
        }
    }

    /// Supremum of admissible `||b^{-1}||`.
    pub fn radius(&self) -> f64 {
        let m = self.bound.max(0.0);
        let r = match self.rule {
            RadiusRule::Cauchy => 1.0 / m,
            RadiusRule::Voiculescu => 0.25 / m,
        };
        if r.is_nan() {
            f64::INFINITY
        } else {
            r
        }
    }

    /// Returns `||b^{-1}||` for an admissible probe.
    pub fn check(&self, b: &ProbePoint) -> Result<f64> {
        if b.level() != self.level {
            return Err(Error::DimensionMismatch(format!(
                "probe at level {} used in a level {} domain",
                b.level(),
                self.level
            )));
        }
        let r = b.inverse_norm()?;
        if r >= self.radius() {
            return Err(Error::DomainViolation(format!(
                "||b^-1|| = {r:.6e} is not below {:.6e} (M = {})",
                self.radius(),
                self.bound
            )));
        }
        Ok(r)
    }
}

/// A truncated series value with a rigorous bound on the discarded tail.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesValue {
    pub value: Mat,
    pub tail_bound: f64,
}

fn check_probe_dim(d: usize, b: &ProbePoint) -> Result<()> {
    if b.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "probe over M_{} used with a distribution over M_{d}",
            b.dim()
        )));
    }
    Ok(())
}

/// `G` from the moment series, summing orders `0..=tail_order`.
pub fn cauchy_series(mu: &TruncatedMoments, b: &ProbePoint, tail_order: usize) -> Result<SeriesValue> {
    check_probe_dim(mu.dim(), b)?;
    if tail_order > mu.order() {
        return Err(Error::MissingOrder(mu.order() + 1));
    }
    let k = b.level();
    let r = TransformDomain::cauchy(mu.bound(), k).check(b)?;
    let inv = b.inverse()?;
    let mut value = inv.clone();
    for n in 1..=tail_order {
        let args = vec![inv.clone(); n - 1];
        let m = mu.map(n)?.eval_amplified(&args, k)?;
        value += &inv * m * &inv;
    }
    let q = mu.bound() * r;
    let tail_bound = r * q.powi(tail_order as i32 + 1) / (1.0 - q);
    Ok(SeriesValue { value, tail_bound })
}

/// Exact `E_B`-partial trace of the level-`k` resolvent `(b (x) I_N - a (x) I_k)^{-1}`.
pub fn cauchy_realized(model: &RealizedModel, b: &ProbePoint) -> Result<Mat> {
    check_probe_dim(model.dim(), b)?;
    let k = b.level();
    let n = model.copies();
    // index (i, p, alpha) -> (i d + p) N + alpha, so b embeds as b (x) I_N
    let resolvent = invert(&(kron_identity(b.value(), n) - amplify_diagonal(model.element(), k)))?;
    Ok(crate::dist::block_partial_trace(&resolvent, k * model.dim(), n))
}

/// `phi` from the cumulant series, summing orders `1..=tail_order`.
///
/// A closed sequence (all unstored cumulants vanish) summed past its stored
/// order is a polynomial in `b^{-1}`: the tail is zero and no radius is imposed.
pub fn voiculescu_series(kappa: &CumulantSequence, b: &ProbePoint, tail_order: usize) -> Result<SeriesValue> {
    check_probe_dim(kappa.dim(), b)?;
    let k = b.level();
    let exact = kappa.is_closed() && tail_order >= kappa.order();
    if !exact && tail_order > kappa.order() {
        return Err(Error::MissingOrder(kappa.order() + 1));
    }
    let r = if exact {
        b.inverse_norm()?
    } else {
        TransformDomain::voiculescu(kappa.bound(), k).check(b)?
    };
    let inv = b.inverse()?;
    let mut value = Mat::zeros(k * kappa.dim(), k * kappa.dim());
    for n in 1..=tail_order.min(kappa.order()) {
        let args = vec![inv.clone(); n - 1];
        value += kappa.map(n)?.eval_amplified(&args, k)?;
    }
    let tail_bound = if exact {
        0.0
    } else {
        // ||kappa_n|| <= M (4M)^{n-1} on unit arguments
        let m = kappa.bound();
        let q = 4.0 * m * r;
        m * q.powi(tail_order as i32) / (1.0 - q)
    };
    Ok(SeriesValue { value, tail_bound })
}

/// Anything that can evaluate `G` at points of the upper half-plane.
pub trait CauchyProvider: Sync {
    fn dim(&self) -> usize;
    /// Exponential bound `M` of the underlying distribution.
    fn bound(&self) -> f64;
    fn cauchy(&self, b: &ProbePoint) -> Result<Mat>;
}

/// Uses the full stored series; the tail is not reported.
impl CauchyProvider for TruncatedMoments {
    fn dim(&self) -> usize {
        TruncatedMoments::dim(self)
    }

    fn bound(&self) -> f64 {
        TruncatedMoments::bound(self)
    }

    fn cauchy(&self, b: &ProbePoint) -> Result<Mat> {
        Ok(cauchy_series(self, b, self.order())?.value)
    }
}

impl CauchyProvider for RealizedModel {
    fn dim(&self) -> usize {
        RealizedModel::dim(self)
    }

    fn bound(&self) -> f64 {
        self.norm()
    }

    fn cauchy(&self, b: &ProbePoint) -> Result<Mat> {
        cauchy_realized(self, b)
    }
}

/// Semicircular law with mean `mean` and covariance `eta`, whose Cauchy
/// transform solves `G = (b - mean - eta(G))^{-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemicircularLaw {
    mean: Mat,
    eta: Mat,
    bound: f64,
}

impl SemicircularLaw {
    pub fn new(mean: Mat, eta: Mat) -> Result<Self> {
        let d = mean.nrows();
        if !mean.is_square() || eta.nrows() != d * d || eta.ncols() != d * d {
            return Err(Error::DimensionMismatch(format!(
                "mean is {}x{} but covariance is {}x{}",
                mean.nrows(),
                mean.ncols(),
                eta.nrows(),
                eta.ncols()
            )));
        }
        if !is_self_adjoint(&mean, 1e-10 * (1.0 + op_norm(&mean))) {
            return Err(Error::InvalidArgument("mean must be self-adjoint".into()));
        }
        let choi = choi_matrix(&eta, d);
        if min_eigenvalue(&choi) < -1e-10 * (1.0 + op_norm(&choi)) {
            return Err(Error::InvalidArgument(
                "covariance is not completely positive".into(),
            ));
        }
        let one = apply_linear_map(&eta, &Mat::identity(d, d));
        let bound = op_norm(&mean) + 2.0 * op_norm(&one).sqrt();
        Ok(SemicircularLaw { mean, eta, bound })
    }

    pub fn from_cumulants(kappa: &CumulantSequence) -> Result<Self> {
        if !is_semicircular_plus_shift(kappa) {
            return Err(Error::InvalidArgument(
                "sequence is not a semicircular law plus a shift".into(),
            ));
        }
        let d = kappa.dim();
        let eta = match kappa.map(2) {
            Ok(k2) => covariance_matrix(k2),
            Err(_) => Mat::zeros(d * d, d * d),
        };
        SemicircularLaw::new(kappa.mean(), eta)
    }

    pub fn mean(&self) -> &Mat {
        &self.mean
    }

    pub fn covariance(&self) -> &Mat {
        &self.eta
    }

    fn eta_amplified(&self, w: &Mat, k: usize) -> Mat {
        let d = self.mean.nrows();
        let mut out = Mat::zeros(k * d, k * d);
        for i in 0..k {
            for j in 0..k {
                let img = apply_linear_map(&self.eta, &block(w, d, i, j));
                out.view_mut((i * d, j * d), (d, d)).copy_from(&img);
            }
        }
        out
    }
}

impl CauchyProvider for SemicircularLaw {
    fn dim(&self) -> usize {
        self.mean.nrows()
    }

    fn bound(&self) -> f64 {
        self.bound
    }

    fn cauchy(&self, b: &ProbePoint) -> Result<Mat> {
        check_probe_dim(self.dim(), b)?;
        let k = b.level();
        let shifted = b.value() - amplify_diagonal(&self.mean, k);
        // averaged iteration W <- (W + (b - mean - eta(W))^{-1}) / 2
        let mut w = b.inverse()?;
        let mut step = f64::INFINITY;
        for _ in 0..100_000 {
            let next = invert(&(&shifted - self.eta_amplified(&w, k)))?;
            let new = (&w + next) * crate::linalg::c64(0.5, 0.0);
            step = op_norm(&(&new - &w));
            w = new;
            if step <= 1e-15 * (1.0 + op_norm(&w)) {
                return Ok(w);
            }
        }
        Err(Error::NoConvergence {
            iterations: 100_000,
            residual: step,
        })
    }
}

/// `F(b) = G(b)^{-1}`.
pub fn f_transform<P: CauchyProvider + ?Sized>(mu: &P, b: &ProbePoint) -> Result<Mat> {
    invert(&mu.cauchy(b)?)
}

fn probe(w: Mat, level: usize) -> Result<ProbePoint> {
    ProbePoint::new(w, level).map_err(|e| match e {
        Error::DomainViolation(msg) => {
            Error::DomainViolation(format!("iterate left the upper half-plane: {msg}"))
        }
        other => other,
    })
}

/// Outcome of a fixed-point solve.
#[derive(Debug, Clone, PartialEq)]
pub struct InversionResult {
    pub value: Mat,
    pub iterations: usize,
    pub residual: f64,
}

/// `phi(b) = F^{<-1>}(b) - b` by iterating `w <- b - (F(w) - w)` from `w = b`
/// until `||F(w) - b|| < tol`.
pub fn voiculescu_via_inversion<P: CauchyProvider + ?Sized>(
    mu: &P,
    b: &ProbePoint,
    tol: f64,
) -> Result<InversionResult> {
    check_probe_dim(mu.dim(), b)?;
    let k = b.level();
    let target = b.value();
    let mut w = target.clone();
    let mut theta = 1.0;
    let mut f = f_transform(mu, b)?;
    let mut residual = op_norm(&(&f - target));
    for it in 0..MAX_ITERATIONS {
        if residual < tol {
            return Ok(InversionResult {
                value: w - target,
                iterations: it,
                residual,
            });
        }
        let candidate = &w + (target - &f) * crate::linalg::c64(theta, 0.0);
        let f_new = f_transform(mu, &probe(candidate.clone(), k)?)?;
        let new_residual = op_norm(&(&f_new - target));
        if new_residual > residual {
            theta = 0.5;
        }
        w = candidate;
        f = f_new;
        residual = new_residual;
    }
    if residual < tol {
        return Ok(InversionResult {
            value: w - target,
            iterations: MAX_ITERATIONS,
            residual,
        });
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITERATIONS,
        residual,
    })
}

/// The subordination solve for `mu_1 boxplus mu_2` at `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Subordination {
    /// `G_1(omega_1) = G_{mu_1 boxplus mu_2}(b)`
    pub value: Mat,
    pub omega1: Mat,
    pub omega2: Mat,
    pub iterations: usize,
    /// `||F_1(omega_1) - F_2(omega_2)||`
    pub f_defect: f64,
    /// `||omega_1 + omega_2 - F_1(omega_1) - b||`
    pub sum_defect: f64,
}

/// Fixed point of `w -> b + h_2(b + h_1(w))`, `h_i = F_i - id`, started at `w = b`.
pub fn subordination_convolve<P, Q>(g1: &P, g2: &Q, b: &ProbePoint, tol: f64) -> Result<Subordination>
where
    P: CauchyProvider + ?Sized,
    Q: CauchyProvider + ?Sized,
{
    check_probe_dim(g1.dim(), b)?;
    check_probe_dim(g2.dim(), b)?;
    let k = b.level();
    let bv = b.value();
    let h = |g: &dyn Fn(&ProbePoint) -> Result<Mat>, w: &Mat| -> Result<Mat> {
        let f = invert(&g(&probe(w.clone(), k)?)?)?;
        Ok(f - w)
    };
    let c1 = |p: &ProbePoint| g1.cauchy(p);
    let c2 = |p: &ProbePoint| g2.cauchy(p);
    let mut w = bv.clone();
    let mut theta = 1.0;
    let mut last_step = f64::INFINITY;
    for it in 1..=MAX_ITERATIONS {
        let omega2 = bv + h(&c1, &w)?;
        let next = bv + h(&c2, &omega2)?;
        let step = op_norm(&(&next - &w));
        if step > last_step {
            theta = 0.5;
        }
        last_step = step;
        w = &w + (next - &w) * crate::linalg::c64(theta, 0.0);
        if step < tol {
            let p1 = probe(w.clone(), k)?;
            let value = g1.cauchy(&p1)?;
            let f1 = invert(&value)?;
            let omega2 = bv + &f1 - &w;
            let f2 = f_transform(g2, &probe(omega2.clone(), k)?)?;
            let f_defect = op_norm(&(&f1 - f2));
            let sum_defect = op_norm(&(&w + &omega2 - &f1 - bv));
            return Ok(Subordination {
                value,
                omega1: w,
                omega2,
                iterations: it,
                f_defect,
                sum_defect,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITERATIONS,
        residual: last_step,
    })
}

/// Which transform a sweep row holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Cauchy,
    F,
    Voiculescu,
}

impl TransformKind {
    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Cauchy => "G",
            TransformKind::F => "F",
            TransformKind::Voiculescu => "phi",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub probe: usize,
    pub level: usize,
    pub kind: TransformKind,
    pub value: Mat,
    pub tail_bound: f64,
    pub iterations: usize,
}

/// Cauchy series at every probe, evaluated in parallel.
pub fn cauchy_sweep(mu: &TruncatedMoments, probes: &[ProbePoint], tail_order: usize) -> Result<Vec<SweepRow>> {
    probes
        .par_iter()
        .enumerate()
        .map(|(i, b)| {
            let s = cauchy_series(mu, b, tail_order)?;
            Ok(SweepRow {
                probe: i,
                level: b.level(),
                kind: TransformKind::Cauchy,
                value: s.value,
                tail_bound: s.tail_bound,
                iterations: 0,
            })
        })
        .collect()
}

/// Voiculescu series at every probe, evaluated in parallel.
pub fn voiculescu_sweep(kappa: &CumulantSequence, probes: &[ProbePoint], tail_order: usize) -> Result<Vec<SweepRow>> {
    probes
        .par_iter()
        .enumerate()
        .map(|(i, b)| {
            let s = voiculescu_series(kappa, b, tail_order)?;
            Ok(SweepRow {
                probe: i,
                level: b.level(),
                kind: TransformKind::Voiculescu,
                value: s.value,
                tail_bound: s.tail_bound,
                iterations: 0,
            })
        })
        .collect()
}

/// Columns: probe, level, convention, transform, `re_i_j`/`im_i_j` per entry,
/// tail_bound, iterations. All rows must share one matrix size.
pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let n = rows.first().map_or(0, |r| r.value.nrows());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "probe".to_string(),
        "level".into(),
        "convention".into(),
        "transform".into(),
    ];
    for i in 0..n {
        for j in 0..n {
            header.push(format!("re_{i}_{j}"));
            header.push(format!("im_{i}_{j}"));
        }
    }
    header.push("tail_bound".into());
    header.push("iterations".into());
    w.write_record(&header).map_err(csv_error)?;
    for r in rows {
        if r.value.nrows() != n {
            return Err(Error::DimensionMismatch("sweep rows differ in size".into()));
        }
        let mut rec = vec![
            r.probe.to_string(),
            r.level.to_string(),
            CONVENTION.to_string(),
            r.kind.name().to_string(),
        ];
        for i in 0..n {
            for j in 0..n {
                rec.push(format!("{:e}", r.value[(i, j)].re));
                rec.push(format!("{:e}", r.value[(i, j)].im));
            }
        }
        rec.push(format!("{:e}", r.tail_bound));
        rec.push(r.iterations.to_string());
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::Serialization(e.to_string()))?;
    Ok(())
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    Error::Serialization(e.to_string())
}

//! Divisibility experiments: probes, the finite Voiculescu embedding, triangular
//! arrays, the Steinitz-driven selection, and checks on candidate distributions.

mod checks;

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checks::{
    check_complete_positivity, check_tracial_conditions, forge_flipped_covariance,
    forge_negative_variance, forge_non_tracial, ConditionResult, PositivityReport, TracialReport,
};

use crate::dist::{
    conjugation_map, convolution_power, free_convolve, moments_from_cumulants, point_mass,
    CumulantSequence,
};
use crate::error::{Error, Result};
use crate::linalg::{
    amplify, c64, is_self_adjoint, matrix_unit, op_norm, random_hermitian_with_norm,
    scalar, zeros, Mat, ProbePoint,
};
use crate::multilinear::Multilinear;
use crate::steinitz::{subset_select, SelectionResult, SteinitzInstance};
use crate::transforms::{csv_error, voiculescu_series};

/// Probes `c_n = d_n + i lambda I` with self-adjoint `||d_n|| <= 1` and `lambda > 16 M`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    dim: usize,
    lambda: f64,
    bound: f64,
    offsets: Vec<Mat>,
    probes: Vec<ProbePoint>,
}

/// Self-adjoint basis of `M_d(C)` with unit-norm elements: `E_aa`,
/// `E_ab + E_ba` and `i (E_ab - E_ba)` for `a < b`.
pub fn hermitian_basis(d: usize) -> Vec<Mat> {
    let mut out = Vec::with_capacity(d * d);
    for a in 0..d {
        out.push(matrix_unit(d, a, a));
    }
    for a in 0..d {
        for b in a + 1..d {
            out.push(matrix_unit(d, a, b) + matrix_unit(d, b, a));
            out.push((matrix_unit(d, a, b) - matrix_unit(d, b, a)) * c64(0.0, 1.0));
        }
    }
    out
}

/// The first `min(count, d^2)` offsets run through `hermitian_basis`, the rest are
/// drawn from `seed` with norm at most one.
pub fn build_probes(dim: usize, count: usize, bound: f64, lambda: f64, seed: u64) -> Result<ProbeSet> {
    if dim == 0 || count == 0 {
        return Err(Error::InvalidArgument("probe count and dimension must be positive".into()));
    }
    if !(bound >= 0.0 && bound.is_finite()) {
        return Err(Error::InvalidArgument(format!("bound must be finite and nonnegative, got {bound}")));
    }
    if !(lambda > 16.0 * bound) {
        return Err(Error::InvalidArgument(format!(
            "lambda = {lambda} must exceed 16 M = {}",
            16.0 * bound
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut offsets = hermitian_basis(dim);
    offsets.truncate(count);
    while offsets.len() < count {
        let norm = rand::Rng::gen_range(&mut rng, 0.0..=1.0);
        offsets.push(random_hermitian_with_norm(&mut rng, dim, norm));
    }
    let probes = offsets
        .iter()
        .map(|d| ProbePoint::new(d + scalar(dim, c64(0.0, lambda)), 1))
        .collect::<Result<Vec<_>>>()?;
    for p in &probes {
        let r = p.inverse_norm()?;
        if bound > 0.0 && r >= 1.0 / (16.0 * bound) {
            return Err(Error::InvalidArgument(format!(
                "probe has ||c^-1|| = {r} >= 1/(16 M)"
            )));
        }
    }
    Ok(ProbeSet {
        dim,
        lambda,
        bound,
        offsets,
        probes,
    })
}

impl ProbeSet {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn len(&self) -> usize {
        self.probes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probes.is_empty()
    }

    pub fn offsets(&self) -> &[Mat] {
        &self.offsets
    }

    pub fn probes(&self) -> &[ProbePoint] {
        &self.probes
    }

    /// Level-2 probes `[[c_n, s I], [0, c_{n+1}]]` with `s = lambda / 2`, at most `limit` of them.
    pub fn level_two(&self, limit: usize) -> Result<Vec<ProbePoint>> {
        let d = self.dim;
        let p = self.probes.len();
        let count = limit.min(p.max(2) - 1).max(1);
        let coupling = scalar(d, c64(0.5 * self.lambda, 0.0));
        (0..count)
            .map(|n| {
                let a = self.probes[n % p].value().clone();
                let b = self.probes[(n + 1) % p].value().clone();
                let m = amplify(&[vec![a, coupling.clone()], vec![zeros(d), b]])?;
                ProbePoint::new(m, 2)
            })
            .collect()
    }

    /// Vector length of `phi_embed`.
    pub fn embedding_len(&self) -> usize {
        2 * self.dim * self.dim * self.probes.len()
    }
}

/// `phi_embed` together with the largest series tail over the probes.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub tail_bound: f64,
}

fn push_matrix(out: &mut Vec<f64>, m: &Mat) {
    let d = m.nrows();
    for r in 0..d {
        for c in 0..d {
            out.push(m[(r, c)].re);
            out.push(m[(r, c)].im);
        }
    }
}

/// Re/Im of every entry (row-major) of `phi_mu(c_n)`, concatenated over probes.
pub fn phi_embed_with_tail(mu: &CumulantSequence, probes: &ProbeSet, tail_order: usize) -> Result<Embedding> {
    if mu.dim() != probes.dim {
        return Err(Error::DimensionMismatch(format!(
            "distribution over M_{} with probes over M_{}",
            mu.dim(),
            probes.dim
        )));
    }
    let mut vector = Vec::with_capacity(probes.embedding_len());
    let mut tail_bound = 0.0f64;
    for b in &probes.probes {
        let s = voiculescu_series(mu, b, tail_order)?;
        push_matrix(&mut vector, &s.value);
        tail_bound = tail_bound.max(s.tail_bound);
    }
    Ok(Embedding { vector, tail_bound })
}

pub fn phi_embed(mu: &CumulantSequence, probes: &ProbeSet, tail_order: usize) -> Result<Vec<f64>> {
    Ok(phi_embed_with_tail(mu, probes, tail_order)?.vector)
}

/// `phi_embed(delta_b)`: `b` repeated per probe.
pub fn phi_embed_point(b: &Mat, probes: &ProbeSet) -> Vec<f64> {
    let mut v = Vec::with_capacity(probes.embedding_len());
    for _ in 0..probes.len() {
        push_matrix(&mut v, b);
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayRow {
    pub entries: Vec<CumulantSequence>,
    pub shift: Mat,
}

/// Rows `mu_i = mu_{i1} boxplus ... boxplus mu_{i n_i} boxplus delta_{b_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangularArray {
    dim: usize,
    order: usize,
    /// Common `M` with every entry, row and the limit supported in `[-M, M]`.
    bound: f64,
    rows: Vec<ArrayRow>,
    /// The limit `mu` when known.
    limit: Option<CumulantSequence>,
    /// `lim b_i` when known.
    shift_limit: Option<Mat>,
}

impl TriangularArray {
    pub fn new(rows: Vec<ArrayRow>, bound: f64) -> Result<Self> {
        if !(bound >= 0.0 && bound.is_finite()) {
            return Err(Error::InvalidArgument(format!("bound must be finite and nonnegative, got {bound}")));
        }
        let first = rows
            .first()
            .and_then(|r| r.entries.first())
            .ok_or_else(|| Error::InvalidArgument("array needs a nonempty first row".into()))?;
        let (dim, order) = (first.dim(), first.order());
        for (i, row) in rows.iter().enumerate() {
            if row.entries.is_empty() {
                return Err(Error::InvalidArgument(format!("row {i} is empty")));
            }
            if row.entries.iter().any(|e| e.dim() != dim || e.order() != order) {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has entries of a different dimension or order"
                )));
            }
            if row.shift.nrows() != dim || !is_self_adjoint(&row.shift, 1e-10 * (1.0 + op_norm(&row.shift))) {
                return Err(Error::InvalidArgument(format!("row {i} shift must be self-adjoint in M_{dim}")));
            }
        }
        Ok(TriangularArray {
            dim,
            order,
            bound,
            rows,
            limit: None,
            shift_limit: None,
        })
    }

    pub fn with_limit(mut self, limit: CumulantSequence, shift_limit: Mat) -> Result<Self> {
        if limit.dim() != self.dim || limit.order() != self.order || shift_limit.nrows() != self.dim {
            return Err(Error::DimensionMismatch("limit does not match the array".into()));
        }
        self.limit = Some(limit);
        self.shift_limit = Some(shift_limit);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn rows(&self) -> &[ArrayRow] {
        &self.rows
    }

    pub fn limit(&self) -> Option<&CumulantSequence> {
        self.limit.as_ref()
    }

    pub fn shift_limit(&self) -> Option<&Mat> {
        self.shift_limit.as_ref()
    }

    /// Entries shifted to mean zero, their means added to the row shifts.
    pub fn centered(&self) -> TriangularArray {
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let mut shift = row.shift.clone();
                let entries = row
                    .entries
                    .iter()
                    .map(|e| {
                        let (c, m) = crate::dist::center(e);
                        shift += m;
                        c
                    })
                    .collect();
                ArrayRow { entries, shift }
            })
            .collect();
        TriangularArray {
            rows,
            ..self.clone()
        }
    }

    /// `mu_i` as a cumulant sequence.
    pub fn row_distribution(&self, i: usize) -> Result<CumulantSequence> {
        let row = self
            .rows
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("no row {i}")))?;
        let mut acc = point_mass(&row.shift, self.order)?;
        for e in &row.entries {
            acc = free_convolve(&acc, e)?;
        }
        Ok(acc.with_bound(self.bound))
    }
}

/// How the row shifts `b_i` are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum ShiftPlan {
    None,
    Constant(Mat),
    /// `b_i = base / (i + 1)`, limit zero.
    Harmonic(Mat),
    /// Explicit shifts with their declared limit; the distances to the limit may not grow.
    Explicit { shifts: Vec<Mat>, limit: Mat },
}

impl ShiftPlan {
    fn resolve(&self, rows: usize, dim: usize) -> Result<(Vec<Mat>, Mat)> {
        let check = |b: &Mat| -> Result<()> {
            if b.nrows() != dim || !is_self_adjoint(b, 1e-10 * (1.0 + op_norm(b))) {
                return Err(Error::InvalidArgument(format!("shift must be self-adjoint in M_{dim}")));
            }
            Ok(())
        };
        match self {
            ShiftPlan::None => Ok((vec![zeros(dim); rows], zeros(dim))),
            ShiftPlan::Constant(b) => {
                check(b)?;
                Ok((vec![b.clone(); rows], b.clone()))
            }
            ShiftPlan::Harmonic(base) => {
                check(base)?;
                let shifts = (0..rows).map(|i| base / c64((i + 1) as f64, 0.0)).collect();
                Ok((shifts, zeros(dim)))
            }
            ShiftPlan::Explicit { shifts, limit } => {
                if shifts.len() != rows {
                    return Err(Error::InvalidArgument(format!(
                        "{} shifts given for {rows} rows",
                        shifts.len()
                    )));
                }
                check(limit)?;
                let mut last = f64::INFINITY;
                for b in shifts {
                    check(b)?;
                    let dist = op_norm(&(b - limit));
                    if dist > last + 1e-12 {
                        return Err(Error::InvalidArgument(
                            "shift plan moves away from its limit".into(),
                        ));
                    }
                    last = dist;
                }
                Ok((shifts.clone(), limit.clone()))
            }
        }
    }
}

/// Row `i` holds `n_i` copies of `mu^{boxplus 1/n_i}`, each with `kappa_2` perturbed
/// by `(noise_scale / n_i^2) h b h` for a random self-adjoint `h`, `||h|| = 1`,
/// followed by the centering pass.
pub fn build_array_from_id(
    mu: &CumulantSequence,
    row_sizes: &[usize],
    shift_plan: &ShiftPlan,
    noise_scale: f64,
    seed: u64,
) -> Result<TriangularArray> {
    if row_sizes.is_empty() || row_sizes.contains(&0) {
        return Err(Error::InvalidArgument("row sizes must be positive".into()));
    }
    if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
        return Err(Error::InvalidArgument("noise scale must be nonnegative".into()));
    }
    if mu.order() < 2 && noise_scale > 0.0 {
        return Err(Error::InvalidArgument("noise needs order >= 2".into()));
    }
    let d = mu.dim();
    let (shifts, shift_limit) = shift_plan.resolve(row_sizes.len(), d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bound = mu.bound() + op_norm(&shift_limit);
    let mut rows = Vec::with_capacity(row_sizes.len());
    for (i, &n) in row_sizes.iter().enumerate() {
        let root = convolution_power(mu, 1.0 / n as f64)?.cumulants;
        let s = noise_scale / (n * n) as f64;
        bound = bound.max(mu.bound() + 2.0 * (n as f64 * s).sqrt() + op_norm(&shifts[i]));
        let entries = (0..n)
            .map(|_| {
                if s == 0.0 {
                    return Ok(root.clone());
                }
                let h = random_hermitian_with_norm(&mut rng, d, 1.0);
                let eta = conjugation_map(&h);
                let noise = Multilinear::from_basis_fn(d, 1, |digits| {
                    let e = digits[0];
                    crate::dist::apply_linear_map(&eta, &matrix_unit(d, e / d, e % d))
                })?;
                let mut e = root.clone();
                e.set_map(2, e.map(2)?.add(&noise.scale(s))?)?;
                // ||X|| grows by at most 2 sqrt(s) under a CP covariance of size s
                Ok(e.with_bound(root.bound() + 2.0 * s.sqrt()))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(ArrayRow {
            entries,
            shift: shifts[i].clone(),
        });
    }
    let limit = free_convolve(mu, &point_mass(&shift_limit, mu.order())?)?;
    let array = TriangularArray::new(rows, bound)?.centered();
    let mean = mu.mean();
    array.with_limit(limit, shift_limit + mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfinitesimalityReport {
    /// Per row, the largest basis-entry norm over all stored moment tensors of all entries.
    pub row_max: Vec<f64>,
    pub schedule: Vec<f64>,
    pub decreasing: bool,
    pub pass: bool,
}

/// PASS when the row maxima decrease and each lies below its scheduled tolerance.
pub fn infinitesimality_check(array: &TriangularArray, tol_schedule: &[f64]) -> Result<InfinitesimalityReport> {
    if tol_schedule.len() != array.rows.len() {
        return Err(Error::InvalidArgument(format!(
            "{} tolerances for {} rows",
            tol_schedule.len(),
            array.rows.len()
        )));
    }
    let row_max = array
        .rows
        .iter()
        .map(|row| {
            row.entries
                .par_iter()
                .map(|e| {
                    let m = moments_from_cumulants(e)?;
                    Ok(m.maps().iter().map(Multilinear::max_entry_norm).fold(0.0, f64::max))
                })
                .collect::<Result<Vec<f64>>>()
                .map(|v| v.into_iter().fold(0.0, f64::max))
        })
        .collect::<Result<Vec<f64>>>()?;
    let decreasing = row_max.windows(2).all(|w| w[1] < w[0]);
    let below = row_max.iter().zip(tol_schedule).all(|(m, t)| m <= t);
    Ok(InfinitesimalityReport {
        row_max,
        schedule: tol_schedule.to_vec(),
        decreasing,
        pass: decreasing && below,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Inconclusive,
}

/// A measured quantity and the bound it is certified against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounded {
    pub value: f64,
    pub budget: f64,
}

impl Bounded {
    pub fn within(&self) -> bool {
        self.value <= self.budget
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeDistance {
    pub probe: usize,
    pub level: usize,
    /// `||phi_nu(c) - t phi_mu(c)||`
    pub distance: Bounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowReport {
    pub row: usize,
    pub n: usize,
    pub subset: Vec<usize>,
    pub subset_size: usize,
    /// Largest `||phi_embed(mu_ij)||`.
    pub cap: f64,
    pub effective_dim: usize,
    /// Steinitz step: `||sum_sigma Phi(mu_ij) - t sum_j Phi(mu_ij)||`.
    pub selection: Bounded,
    /// `||Phi(nu_i) - t Phi(mu)||`
    pub phi_deviation: Bounded,
    pub probes: Vec<ProbeDistance>,
    /// `||kappa_{nu_i} - t kappa_mu||` (largest basis-entry norm over orders)
    pub cumulant_distance: Bounded,
    /// `||nu_i^{boxplus p} - mu||` on cumulants
    pub reconvolution: Bounded,
    pub series_tail: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub p: usize,
    pub t: f64,
    pub dim: usize,
    pub order: usize,
    pub probe_count: usize,
    pub lambda: f64,
    pub rows: Vec<RowReport>,
}

impl ExperimentReport {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.verdict == Verdict::Pass)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.rows {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n").map_err(|e| Error::Serialization(e.to_string()))?;
        }
        Ok(())
    }

    /// Columns: row, n_i, |sigma_i|, deviation, budget, verdict.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row", "n", "subset_size", "deviation", "budget", "verdict"])
            .map_err(csv_error)?;
        for r in &self.rows {
            let verdict = match r.verdict {
                Verdict::Pass => "PASS",
                Verdict::Inconclusive => "INCONCLUSIVE",
            };
            w.write_record([
                r.row.to_string(),
                r.n.to_string(),
                r.subset_size.to_string(),
                format!("{:e}", r.phi_deviation.value),
                format!("{:e}", r.phi_deviation.budget),
                verdict.to_string(),
            ])
            .map_err(csv_error)?;
        }
        w.flush().map_err(|e| Error::Serialization(e.to_string()))?;
        Ok(())
    }
}

fn vec_sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn vec_norm(a: &[f64]) -> f64 {
    crate::steinitz::norm(a)
}

/// Rounding allowance added to every budget.
const ROUNDING: f64 = 1e-9;

/// Selects `sigma_i` by Steinitz on `Phi(mu_ij)` with `t = 1/p`, forms
/// `nu_i = boxplus_{sigma_i} mu_ij boxplus delta_{t b_i}` and measures it against `mu^{boxplus t}`.
///
/// The array is centered first. Budgets per row, with `r` the rank of the row
/// vectors, `eps` their largest norm and `bar` denoting row means:
///
/// ```text
/// Phi:       r eps + t ||Phi(mu_i) - Phi(mu)|| + sqrt(P d) (tail_nu + t tail_mu)
/// cumulants: (||sigma| - t n| bound) ||bar kappa|| + sum_j ||kappa_ij - bar kappa|| + t ||kappa_{mu_i} - kappa_mu||
///            with ||sigma| - t n| <= (r eps + sum_j ||Phi_ij - bar Phi||) / ||bar Phi||
/// ```
pub fn run_hinchin(array: &TriangularArray, p: usize, probes: &ProbeSet, tail_order: usize) -> Result<ExperimentReport> {
    if p == 0 {
        return Err(Error::InvalidArgument("p must be at least 1".into()));
    }
    if probes.dim != array.dim {
        return Err(Error::DimensionMismatch("probes and array differ in dimension".into()));
    }
    let t = 1.0 / p as f64;
    let array = array.centered();
    let last = array.rows.len() - 1;
    let mu = match &array.limit {
        Some(m) => m.clone(),
        None => array.row_distribution(last)?,
    };
    let order = array.order;
    let target = mu.scaled(t);
    let phi_mu = phi_embed_with_tail(&mu, probes, tail_order)?;
    let level_two = probes.level_two(4)?;
    let d = array.dim as f64;
    let tail_scale = (probes.len() as f64 * d).sqrt();

    let rows = array
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| -> Result<RowReport> {
            let n = row.entries.len();
            let embeds = row
                .entries
                .par_iter()
                .map(|e| phi_embed_with_tail(e, probes, tail_order))
                .collect::<Result<Vec<_>>>()?;
            let tail_entries: f64 = embeds.iter().map(|e| e.tail_bound).sum();
            let vectors: Vec<Vec<f64>> = embeds.into_iter().map(|e| e.vector).collect();
            let inst = SteinitzInstance::new(vectors.clone())?;
            let sel: SelectionResult = subset_select(&inst, t)?;

            // nu_i and its transforms
            let mut nu = point_mass(&(&row.shift * c64(t, 0.0)), order)?;
            for &j in &sel.indices {
                nu = free_convolve(&nu, &row.entries[j])?;
            }
            // adding centered free entries does not decrease the norm, so boxplus_sigma mu_ij boxplus
            // delta_{b_i} stays within M; nu differs from it by delta_{(t-1) b_i}
            let nu = nu.with_bound(array.bound + (1.0 - t) * op_norm(&row.shift));
            let phi_nu = phi_embed_with_tail(&nu, probes, tail_order)?;
            let phi_dev = vec_norm(&vec_sub(&phi_nu.vector, &phi_mu.vector.iter().map(|x| t * x).collect::<Vec<_>>()));

            // Phi(mu_i) = row sum + Phi(delta_{b_i})
            let mut phi_row: Vec<f64> = phi_embed_point(&row.shift, probes);
            for v in &vectors {
                phi_row.iter_mut().zip(v).for_each(|(a, b)| *a += b);
            }
            let drift = vec_norm(&vec_sub(&phi_row, &phi_mu.vector));
            let tails = tail_scale * (phi_nu.tail_bound + t * phi_mu.tail_bound + tail_entries);
            let phi_budget = sel.certified_bound + t * drift + tails + ROUNDING;

            let probes_out = probe_distances(&nu, &mu, t, probes, &level_two, tail_order, phi_budget)?;

            // cumulant budget
            let kbar = {
                let mut acc = CumulantSequence::zero(array.dim, order)?;
                for e in &row.entries {
                    acc = free_convolve(&acc, e)?;
                }
                acc.scaled(1.0 / n as f64)
            };
            let spread: f64 = row
                .entries
                .iter()
                .map(|e| e.distance(&kbar))
                .sum::<Result<f64>>()?;
            let phibar: Vec<f64> = (0..vectors[0].len())
                .map(|c| vectors.iter().map(|v| v[c]).sum::<f64>() / n as f64)
                .collect();
            let phi_spread: f64 = vectors.iter().map(|v| vec_norm(&vec_sub(v, &phibar))).sum();
            let row_mu = array.row_distribution(i)?;
            let row_gap = row_mu.distance(&mu)?;
            let kbar_norm = kbar.max_entry_norm();
            let count_slack = if kbar_norm == 0.0 {
                0.0
            } else {
                let pn = vec_norm(&phibar);
                if pn > 0.0 {
                    (sel.certified_bound + phi_spread) / pn
                } else {
                    f64::INFINITY
                }
            };
            let cum_budget = count_slack * kbar_norm + spread + t * row_gap + ROUNDING;
            let cum_dist = nu.distance(&target)?;

            let mut power = nu.clone();
            for _ in 1..p {
                power = free_convolve(&power, &nu)?;
            }
            let recon = power.distance(&mu)?;

            let selection = Bounded {
                value: sel.achieved_deviation,
                budget: sel.certified_bound + crate::steinitz::CERTIFICATE_SLACK,
            };
            let phi_deviation = Bounded {
                value: phi_dev,
                budget: phi_budget,
            };
            let cumulant_distance = Bounded {
                value: cum_dist,
                budget: cum_budget,
            };
            let reconvolution = Bounded {
                value: recon,
                budget: p as f64 * cum_budget,
            };
            let all_within = selection.within()
                && phi_deviation.within()
                && cumulant_distance.within()
                && reconvolution.within()
                && probes_out.iter().all(|p| p.distance.within());
            Ok(RowReport {
                row: i,
                n,
                subset_size: sel.indices.len(),
                subset: sel.indices.clone(),
                cap: inst.cap(),
                effective_dim: sel.effective_dim,
                selection,
                phi_deviation,
                probes: probes_out,
                cumulant_distance,
                reconvolution,
                series_tail: tails,
                verdict: if all_within {
                    Verdict::Pass
                } else {
                    Verdict::Inconclusive
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ExperimentReport {
        p,
        t,
        dim: array.dim,
        order,
        probe_count: probes.len(),
        lambda: probes.lambda,
        rows,
    })
}

/// Level-1 distances are bounded by the whole-vector budget; level-2 distances
/// by `sum_n ||kappa_nu - t kappa_mu|| (d^2 ||C^{-1}||)^{n-1}` plus tails.
fn probe_distances(
    nu: &CumulantSequence,
    mu: &CumulantSequence,
    t: f64,
    probes: &ProbeSet,
    level_two: &[ProbePoint],
    tail_order: usize,
    phi_budget: f64,
) -> Result<Vec<ProbeDistance>> {
    let mut out = Vec::with_capacity(probes.len() + level_two.len());
    for (k, c) in probes.probes.iter().enumerate() {
        let a = voiculescu_series(nu, c, tail_order)?;
        let b = voiculescu_series(mu, c, tail_order)?;
        let diff = op_norm(&(a.value - b.value * c64(t, 0.0)));
        out.push(ProbeDistance {
            probe: k,
            level: 1,
            distance: Bounded {
                value: diff,
                budget: phi_budget + a.tail_bound + t * b.tail_bound,
            },
        });
    }
    let d2 = (probes.dim * probes.dim) as f64;
    let delta = nu.distance(&mu.scaled(t))?;
    for (k, c) in level_two.iter().enumerate() {
        let a = voiculescu_series(nu, c, tail_order)?;
        let b = voiculescu_series(mu, c, tail_order)?;
        let diff = op_norm(&(a.value - b.value * c64(t, 0.0)));
        let beta = c.inverse_norm()?;
        let growth: f64 = (0..nu.order()).map(|n| (d2 * beta).powi(n as i32)).sum();
        out.push(ProbeDistance {
            probe: k,
            level: 2,
            distance: Bounded {
                value: diff,
                budget: delta * growth + a.tail_bound + t * b.tail_bound + ROUNDING,
            },
        });
    }
    Ok(out)
}

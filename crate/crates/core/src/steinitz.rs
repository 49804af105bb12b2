//! Steinitz rearrangement and subset selection for finite families of real vectors.
//!
//! The rearrangement follows the vertex descent of Grinberg and Sevastyanov:
//! with `n` the dimension of the span, keep weights `lambda in [0,1]^A` with
//! `sum lambda = |A| - n` and `sum lambda_i v_i = 0`; a vertex of that polytope
//! has at most `n + 1` fractional weights, so after rescaling the sum by one
//! some weight vanishes and its vector is placed last among `A`.

use std::io::Read;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BOUND_TOL: f64 = 1e-12;
/// Slack allowed on top of certified bounds when checking them.
pub const CERTIFICATE_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteinitzInstance {
    dim: usize,
    vectors: Vec<Vec<f64>>,
    #[serde(skip)]
    cap: f64,
    #[serde(skip)]
    sum: Vec<f64>,
}

#[derive(Deserialize)]
struct InstanceJson {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

impl<'de> Deserialize<'de> for SteinitzInstance {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let j = InstanceJson::deserialize(de)?;
        SteinitzInstance::with_dim(j.dim, j.vectors).map_err(serde::de::Error::custom)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    for (y, x) in acc.iter_mut().zip(x) {
        *y += a * x;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl SteinitzInstance {
    /// Dimension taken from the first vector.
    pub fn new(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let dim = vectors
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidArgument("instance has no vectors".into()))?;
        Self::with_dim(dim, vectors)
    }

    pub fn with_dim(dim: usize, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        let mut sum = vec![0.0; dim];
        let mut cap = 0.0f64;
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "vector {i} has length {}, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument(format!("vector {i} has a non-finite entry")));
            }
            cap = cap.max(norm(v));
            axpy(&mut sum, 1.0, v);
        }
        Ok(SteinitzInstance {
            dim,
            vectors,
            cap,
            sum,
        })
    }

    /// One vector per line, comma separated; `#` starts a comment line.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let mut vectors = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Serialization(e.to_string()))?;
            let v = rec
                .iter()
                .filter(|f| !f.is_empty())
                .map(|f| {
                    f.parse::<f64>().map_err(|e| {
                        Error::Serialization(format!("record {}: {f:?}: {e}", line + 1))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if !v.is_empty() {
                vectors.push(v);
            }
        }
        Self::new(vectors)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    /// `max ||v_i||`.
    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn sum(&self) -> &[f64] {
        &self.sum
    }

    /// Dimension of the span of the vectors.
    pub fn rank(&self) -> usize {
        orthonormal_basis(&self.vectors, self.cap).len()
    }

    /// Largest prefix-sum norm along `order`.
    pub fn max_prefix_norm(&self, order: &[usize]) -> f64 {
        let mut acc = vec![0.0; self.dim];
        let mut worst = 0.0f64;
        for &i in order {
            axpy(&mut acc, 1.0, &self.vectors[i]);
            worst = worst.max(norm(&acc));
        }
        worst
    }

    /// `||sum_{i in subset} v_i - t sum v||`.
    pub fn subset_deviation(&self, subset: &[usize], t: f64) -> f64 {
        let mut acc: Vec<f64> = self.sum.iter().map(|x| -t * x).collect();
        for &i in subset {
            axpy(&mut acc, 1.0, &self.vectors[i]);
        }
        norm(&acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionKind {
    Permutation,
    Subset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub kind: SelectionKind,
    pub indices: Vec<usize>,
    /// `rank * cap`: bound on the prefix norms (permutation) or on the
    /// deviation from `t sum v` (subset).
    pub certified_bound: f64,
    pub achieved_deviation: f64,
    /// Dimension of the span, which replaces the ambient dimension in the bound.
    pub effective_dim: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub t: Option<f64>,
}

impl SelectionResult {
    pub fn certified(&self) -> bool {
        self.achieved_deviation <= self.certified_bound + CERTIFICATE_SLACK
    }
}

/// Orthonormal basis of the span (modified Gram-Schmidt, twice), dropping
/// directions below `1e-10 * scale`.
fn orthonormal_basis(vectors: &[Vec<f64>], scale: f64) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let threshold = 1e-10 * scale.max(f64::MIN_POSITIVE);
    for v in vectors {
        let mut w = v.clone();
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &w);
                axpy(&mut w, -c, q);
            }
        }
        let n = norm(&w);
        if n > threshold {
            w.iter_mut().for_each(|x| *x /= n);
            basis.push(w);
        }
        if let Some(first) = vectors.first() {
            if basis.len() == first.len() {
                break;
            }
        }
    }
    basis
}

fn coordinates(vectors: &[Vec<f64>], basis: &[Vec<f64>]) -> Vec<Vec<f64>> {
    vectors
        .iter()
        .map(|v| basis.iter().map(|q| dot(q, v)).collect())
        .collect()
}

/// A nonzero solution of `a z = 0` for a wide matrix (`rows < cols`).
fn null_vector(mut a: Vec<Vec<f64>>, cols: usize) -> Vec<f64> {
    let rows = a.len();
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, x| m.max(x.abs()))
        .max(f64::MIN_POSITIVE);
    let mut pivots: Vec<usize> = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let (best, val) = (r..rows)
            .map(|i| (i, a[i][c].abs()))
            .fold((r, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if val <= 1e-12 * scale {
            continue;
        }
        a.swap(r, best);
        let p = a[r][c];
        for x in a[r].iter_mut() {
            *x /= p;
        }
        for i in 0..rows {
            if i != r {
                let f = a[i][c];
                if f != 0.0 {
                    for j in 0..cols {
                        a[i][j] -= f * a[r][j];
                    }
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    let free = (0..cols).find(|c| !pivots.contains(c)).expect("wide matrix has a free column");
    let mut z = vec![0.0; cols];
    z[free] = 1.0;
    for (row, &pc) in pivots.iter().enumerate() {
        z[pc] = -a[row][free];
    }
    let n = norm(&z);
    z.iter_mut().for_each(|x| *x /= n);
    z
}

/// Permutation of `0..k` whose prefix sums stay within `n * max ||v_i||`, for
/// coordinates in `R^n` summing to zero.
fn descend(coords: &[Vec<f64>], n: usize) -> Vec<usize> {
    let k = coords.len();
    if k <= n + 1 {
        return (0..k).collect();
    }
    let mut active: Vec<usize> = (0..k).collect();
    let mut lambda = vec![(k - n) as f64 / k as f64; k];
    let mut order = vec![usize::MAX; k];
    for t in ((n + 1)..=k).rev() {
        let target = (t - 1 - n) as f64;
        let ratio = target / (t - n) as f64;
        for &i in &active {
            lambda[i] *= ratio;
        }
        to_vertex(coords, n, &active, &mut lambda);
        // a weight vanishes at the vertex; take the smallest
        let (pos, &j) = active
            .iter()
            .enumerate()
            .min_by(|a, b| lambda[*a.1].total_cmp(&lambda[*b.1]).then(a.0.cmp(&b.0)))
            .expect("active set is nonempty");
        order[t - 1] = j;
        lambda[j] = 0.0;
        active.remove(pos);
    }
    for (p, &i) in active.iter().enumerate() {
        order[p] = i;
    }
    order
}

/// Moves `lambda` (restricted to `active`) to a vertex of
/// `{sum lambda v = const, sum lambda = const, 0 <= lambda <= 1}`.
fn to_vertex(coords: &[Vec<f64>], n: usize, active: &[usize], lambda: &mut [f64]) {
    loop {
        let frac: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&i| lambda[i] > BOUND_TOL && lambda[i] < 1.0 - BOUND_TOL)
            .take(n + 2)
            .collect();
        if frac.len() <= n + 1 {
            for &i in active {
                if lambda[i] <= BOUND_TOL {
                    lambda[i] = 0.0;
                } else if lambda[i] >= 1.0 - BOUND_TOL {
                    lambda[i] = 1.0;
                }
            }
            return;
        }
        // rows: n coordinates and the all-ones constraint
        let cols = frac.len();
        let mut a = vec![vec![0.0; cols]; n + 1];
        for (c, &i) in frac.iter().enumerate() {
            for r in 0..n {
                a[r][c] = coords[i][r];
            }
            a[n][c] = 1.0;
        }
        let z = null_vector(a, cols);
        // largest step along z keeping every weight in [0, 1]
        let mut alpha = f64::INFINITY;
        let mut hit = 0;
        for (c, &i) in frac.iter().enumerate() {
            let step = if z[c] > 0.0 {
                (1.0 - lambda[i]) / z[c]
            } else if z[c] < 0.0 {
                -lambda[i] / z[c]
            } else {
                f64::INFINITY
            };
            if step < alpha {
                alpha = step;
                hit = c;
            }
        }
        for (c, &i) in frac.iter().enumerate() {
            lambda[i] = (lambda[i] + alpha * z[c]).clamp(0.0, 1.0);
        }
        let i = frac[hit];
        lambda[i] = if z[hit] > 0.0 { 1.0 } else { 0.0 };
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("t must lie in [0, 1], got {t}")));
    }
    Ok(())
}

/// Reorders a zero-sum family so every prefix sum has norm at most
/// `rank * max ||v_i||`.
pub fn rearrange_zero_sum(vs: &SteinitzInstance) -> Result<SelectionResult> {
    let s = norm(&vs.sum);
    if s > 1e-9 * vs.cap.max(1.0) {
        return Err(Error::InfeasibleInput(format!(
            "vectors must sum to zero, |sum| = {s:e}"
        )));
    }
    let basis = orthonormal_basis(&vs.vectors, vs.cap);
    let n = basis.len();
    let order = descend(&coordinates(&vs.vectors, &basis), n);
    Ok(SelectionResult {
        kind: SelectionKind::Permutation,
        achieved_deviation: vs.max_prefix_norm(&order),
        indices: order,
        certified_bound: n as f64 * vs.cap,
        effective_dim: n,
        t: None,
    })
}

/// Subset whose sum is within `rank * max ||v_i||` of `t sum v`.
pub fn subset_select(vs: &SteinitzInstance, t: f64) -> Result<SelectionResult> {
    check_t(t)?;
    let k = vs.len();
    let basis = orthonormal_basis(&vs.vectors, vs.cap);
    let rank = basis.len();
    let certified_bound = rank as f64 * vs.cap;
    let finish = |indices: Vec<usize>| SelectionResult {
        kind: SelectionKind::Subset,
        achieved_deviation: vs.subset_deviation(&indices, t),
        indices,
        certified_bound,
        effective_dim: rank,
        t: Some(t),
    };
    if t == 1.0 {
        return Ok(finish((0..k).collect()));
    }
    let coords = coordinates(&vs.vectors, &basis);
    let total: Vec<f64> = (0..rank).map(|r| coords.iter().map(|c| c[r]).sum()).collect();
    let length = norm(&total);
    // split each vector into its component along the sum and the rest
    let (along, rest): (Vec<f64>, Vec<Vec<f64>>) = if length > 1e-14 * vs.cap.max(1.0) {
        let u: Vec<f64> = total.iter().map(|x| x / length).collect();
        coords
            .iter()
            .map(|c| {
                let x = dot(c, &u);
                let mut w = c.clone();
                axpy(&mut w, -x, &u);
                (x, w)
            })
            .unzip()
    } else {
        (vec![0.0; k], coords.clone())
    };
    let rest_basis = orthonormal_basis(&rest, vs.cap);
    let order = descend(&coordinates(&rest, &rest_basis), rest_basis.len());
    let goal = t * length;
    let mut best = (goal.abs(), 0);
    let mut acc = 0.0;
    for (m, &i) in order.iter().enumerate() {
        acc += along[i];
        let gap = (acc - goal).abs();
        if gap < best.0 {
            best = (gap, m + 1);
        }
    }
    let mut indices: Vec<usize> = order[..best.1].to_vec();
    indices.sort_unstable();
    Ok(finish(indices))
}

/// One row of `array_select`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSelection {
    pub row: usize,
    pub cap: f64,
    /// `||row sum - v||`
    pub drift: f64,
    /// `||sum_{sigma} v_ij - t v||`
    pub deviation: f64,
    /// `rank * cap + t * drift`
    pub budget: f64,
    pub selection: SelectionResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArraySelection {
    pub limit: Vec<f64>,
    pub rows: Vec<std::result::Result<RowSelection, String>>,
    pub caps_decreasing: bool,
    pub drift_decreasing: bool,
}

impl ArraySelection {
    pub fn deviations(&self) -> Vec<Option<f64>> {
        self.rows
            .iter()
            .map(|r| r.as_ref().ok().map(|s| s.deviation))
            .collect()
    }
}

/// Per-row `subset_select` against a common limit `v` (the last row sum when
/// not given). Row failures are recorded, not propagated.
pub fn array_select(rows: &[SteinitzInstance], t: f64, limit: Option<&[f64]>) -> Result<ArraySelection> {
    check_t(t)?;
    let last = rows
        .last()
        .ok_or_else(|| Error::InvalidArgument("array has no rows".into()))?;
    let v: Vec<f64> = limit.map_or_else(|| last.sum.clone(), <[f64]>::to_vec);
    if rows.iter().any(|r| r.dim != v.len()) {
        return Err(Error::DimensionMismatch("rows differ in dimension from the limit".into()));
    }
    let out: Vec<std::result::Result<RowSelection, String>> = rows
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let sel = subset_select(inst, t).map_err(|e| e.to_string())?;
            let mut diff = inst.sum.clone();
            axpy(&mut diff, -1.0, &v);
            let drift = norm(&diff);
            let mut acc: Vec<f64> = v.iter().map(|x| -t * x).collect();
            for &j in &sel.indices {
                axpy(&mut acc, 1.0, &inst.vectors[j]);
            }
            Ok(RowSelection {
                row: i,
                cap: inst.cap,
                drift,
                deviation: norm(&acc),
                budget: sel.certified_bound + t * drift,
                selection: sel,
            })
        })
        .collect();
    let caps: Vec<f64> = rows.iter().map(|r| r.cap).collect();
    let drifts: Vec<f64> = out.iter().filter_map(|r| r.as_ref().ok().map(|s| s.drift)).collect();
    Ok(ArraySelection {
        limit: v,
        caps_decreasing: caps.windows(2).all(|w| w[1] <= w[0]),
        drift_decreasing: drifts.windows(2).all(|w| w[1] <= w[0] + 1e-12),
        rows: out,
    })
}

#[cfg(test)]
mod tests;

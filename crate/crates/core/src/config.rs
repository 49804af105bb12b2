//! Experiment configs read by the command line tool (TOML or JSON).

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dist::{
    conjugation_map, free_convolve, point_mass, semicircular, CumulantSequence, Distribution, DistributionJson,
};
use crate::error::{Error, Result};
use crate::hinchin::{
    build_probes, infinitesimality_check, run_hinchin, ExperimentReport, InfinitesimalityReport, ShiftPlan, TriangularArray,
};
use crate::linalg::{c64, is_self_adjoint, op_norm, Mat, ProbePoint};

/// A real matrix given by rows.
pub type Rows = Vec<Vec<f64>>;

pub fn matrix_from_rows(dim: usize, rows: &Rows) -> Result<Mat> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::InvalidArgument(format!("expected a {dim}x{dim} matrix")));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("matrix entries must be finite".into()));
    }
    Ok(Mat::from_fn(dim, dim, |r, c| c64(rows[r][c], 0.0)))
}

fn symmetric_from_rows(dim: usize, rows: &Rows) -> Result<Mat> {
    let m = matrix_from_rows(dim, rows)?;
    if !is_self_adjoint(&m, 1e-12 * (1.0 + op_norm(&m))) {
        return Err(Error::InvalidArgument("matrix must be symmetric".into()));
    }
    Ok(m)
}

/// One term of a completely positive covariance; the terms are summed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceTerm {
    /// `b -> scale b`
    Identity { scale: f64 },
    /// `b -> scale tr(b) I` with the normalized trace
    Trace { scale: f64 },
    /// `b -> scale h b h` for a real symmetric `h`
    Conjugation { matrix: Rows, scale: f64 },
}

impl CovarianceTerm {
    fn linear_map(&self, d: usize) -> Result<Mat> {
        let (m, scale) = match self {
            CovarianceTerm::Identity { scale } => (conjugation_map(&Mat::identity(d, d)), *scale),
            CovarianceTerm::Trace { scale } => {
                // vec(I) vec(I)^T / d
                let m = Mat::from_fn(d * d, d * d, |r, c| {
                    if r % (d + 1) == 0 && c % (d + 1) == 0 {
                        c64(1.0 / d as f64, 0.0)
                    } else {
                        c64(0.0, 0.0)
                    }
                });
                (m, *scale)
            }
            CovarianceTerm::Conjugation { matrix, scale } => {
                (conjugation_map(&symmetric_from_rows(d, matrix)?), *scale)
            }
        };
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("covariance scale must be nonnegative, got {scale}")));
        }
        Ok(m * c64(scale, 0.0))
    }
}

/// A distribution named in a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistSpec {
    /// Semicircular with the summed covariance, shifted by `mean`.
    Semicircular {
        covariance: Vec<CovarianceTerm>,
        #[serde(default)]
        mean: Option<Rows>,
    },
    PointMass { value: Rows },
    /// A distribution document; relative paths resolve against the config file.
    File { path: PathBuf },
}

impl DistSpec {
    pub fn build(&self, dim: usize, order: usize, base: &Path) -> Result<CumulantSequence> {
        match self {
            DistSpec::Semicircular { covariance, mean } => {
                let mut eta = Mat::zeros(dim * dim, dim * dim);
                for term in covariance {
                    eta += term.linear_map(dim)?;
                }
                let s = semicircular(&eta, order)?;
                match mean {
                    Some(rows) => free_convolve(&s, &point_mass(&symmetric_from_rows(dim, rows)?, order)?),
                    None => Ok(s),
                }
            }
            DistSpec::PointMass { value } => point_mass(&symmetric_from_rows(dim, value)?, order),
            DistSpec::File { path } => {
                let k = read_distribution(&base.join(path))?.to_cumulants()?;
                if k.dim() != dim {
                    return Err(Error::DimensionMismatch(format!(
                        "{} holds a distribution over M_{}, config says M_{dim}",
                        path.display(),
                        k.dim()
                    )));
                }
                if k.order() != order {
                    return Err(Error::InvalidArgument(format!(
                        "{} stores order {}, config asks for {order}",
                        path.display(),
                        k.order()
                    )));
                }
                Ok(k)
            }
        }
    }

    fn file_order(&self, base: &Path) -> Result<Option<usize>> {
        match self {
            DistSpec::File { path } => Ok(Some(read_json::<DistributionJson>(&base.join(path))?.order)),
            _ => Ok(None),
        }
    }
}

pub fn read_distribution(path: &Path) -> Result<Distribution> {
    Distribution::try_from(&read_json::<DistributionJson>(path)?)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Parses TOML, or JSON when the file ends in `.json`.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
    parse(&text, path.extension().is_some_and(|e| e == "json"))
}

pub fn parse<T: DeserializeOwned>(text: &str, json: bool) -> Result<T> {
    if json {
        Ok(serde_json::from_str(text)?)
    } else {
        toml::from_str(text).map_err(|e| Error::Serialization(e.to_string()))
    }
}

/// `z I`, or an explicit matrix for level-`k` probes (`dim = k d`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProbeSpec {
    Scalar { z: [f64; 2] },
    Matrix { re: Rows, im: Rows },
}

impl ProbeSpec {
    pub fn build(&self, dim: usize) -> Result<ProbePoint> {
        match self {
            ProbeSpec::Scalar { z } => ProbePoint::scalar(dim, c64(z[0], z[1])),
            ProbeSpec::Matrix { re, im } => {
                let n = re.len();
                if n == 0 || n % dim != 0 {
                    return Err(Error::DimensionMismatch(format!("probe size {n} is not a multiple of {dim}")));
                }
                let m = matrix_from_rows(n, re)? + matrix_from_rows(n, im)? * c64(0.0, 1.0);
                ProbePoint::new(m, n / dim)
            }
        }
    }
}

fn default_tol() -> f64 {
    crate::transforms::DEFAULT_TOL
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive, got {x}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvolveConfig {
    pub dim: usize,
    /// Defaults to the order of a file operand, else 8.
    #[serde(default)]
    pub order: Option<usize>,
    pub left: DistSpec,
    pub right: DistSpec,
    #[serde(default)]
    pub probes: Vec<ProbeSpec>,
    #[serde(default)]
    pub tail_order: Option<usize>,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

impl ConvolveConfig {
    pub fn resolve_order(&self, base: &Path) -> Result<usize> {
        let files = [self.left.file_order(base)?, self.right.file_order(base)?];
        let order = self
            .order
            .or(files[0])
            .or(files[1])
            .unwrap_or(crate::dist::DEFAULT_ORDER);
        if order == 0 {
            return Err(Error::InvalidArgument("order must be positive".into()));
        }
        Ok(order)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument("dim must be positive".into()));
        }
        positive("tol", self.tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteinitzConfig {
    /// CSV of vectors, one per line.
    pub input: PathBuf,
    #[serde(default)]
    pub t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShiftSpec {
    None,
    Constant { value: Rows },
    /// `b_i = base / (i + 1)`
    Harmonic { base: Rows },
    Explicit { shifts: Vec<Rows>, limit: Rows },
}

impl ShiftSpec {
    pub fn plan(&self, dim: usize) -> Result<ShiftPlan> {
        Ok(match self {
            ShiftSpec::None => ShiftPlan::None,
            ShiftSpec::Constant { value } => ShiftPlan::Constant(symmetric_from_rows(dim, value)?),
            ShiftSpec::Harmonic { base } => ShiftPlan::Harmonic(symmetric_from_rows(dim, base)?),
            ShiftSpec::Explicit { shifts, limit } => ShiftPlan::Explicit {
                shifts: shifts
                    .iter()
                    .map(|s| symmetric_from_rows(dim, s))
                    .collect::<Result<_>>()?,
                limit: symmetric_from_rows(dim, limit)?,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// Defaults to `d^2`.
    #[serde(default)]
    pub count: Option<usize>,
    /// Defaults to `17 M`.
    #[serde(default)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HinchinConfig {
    pub dim: usize,
    #[serde(default = "default_hinchin_order")]
    pub order: usize,
    pub target: DistSpec,
    pub rows: Vec<usize>,
    pub p: usize,
    #[serde(default = "default_shift")]
    pub shift: ShiftSpec,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub probes: Option<ProbeConfig>,
    #[serde(default)]
    pub tail_order: Option<usize>,
    /// Per-row tolerances for the infinitesimality check; defaults to `2 / n_i`
    /// times the largest moment-tensor entry of the target.
    #[serde(default)]
    pub tol_schedule: Option<Vec<f64>>,
}

fn default_hinchin_order() -> usize {
    4
}

fn default_shift() -> ShiftSpec {
    ShiftSpec::None
}

impl HinchinConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.order == 0 {
            return Err(Error::InvalidArgument("dim and order must be positive".into()));
        }
        if self.p == 0 {
            return Err(Error::InvalidArgument("p must be at least 1".into()));
        }
        if self.rows.is_empty() || self.rows.contains(&0) {
            return Err(Error::InvalidArgument("rows must be nonempty and positive".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidArgument("noise must be nonnegative".into()));
        }
        if let Some(s) = &self.tol_schedule {
            if s.len() != self.rows.len() {
                return Err(Error::InvalidArgument("tol_schedule needs one entry per row".into()));
            }
            for &x in s {
                positive("tol_schedule entry", x)?;
            }
        }
        Ok(())
    }

    pub fn build_array(&self, base: &Path) -> Result<TriangularArray> {
        let mu = self.target.build(self.dim, self.order, base)?;
        crate::hinchin::build_array_from_id(&mu, &self.rows, &self.shift.plan(self.dim)?, self.noise, self.seed)
    }

    /// Builds the array and probes, then runs the infinitesimality check and the experiment.
    pub fn run(&self, base: &Path) -> Result<HinchinRun> {
        self.validate()?;
        let array = self.build_array(base)?;
        let m = array.bound();
        let cfg = self.probes.clone().unwrap_or(ProbeConfig {
            count: None,
            lambda: None,
        });
        let count = cfg.count.unwrap_or(self.dim * self.dim);
        let lambda = cfg.lambda.unwrap_or(17.0 * m.max(1.0));
        let probes = build_probes(self.dim, count, m, lambda, self.seed)?;
        let schedule = match &self.tol_schedule {
            Some(s) => s.clone(),
            None => {
                let scale = 1.0 + array.limit().map(|l| l.max_entry_norm()).unwrap_or(0.0);
                self.rows.iter().map(|&n| 2.0 * scale / n as f64).collect()
            }
        };
        let infinitesimality = infinitesimality_check(&array, &schedule)?;
        let report = run_hinchin(&array, self.p, &probes, self.tail_order.unwrap_or(self.order))?;
        Ok(HinchinRun {
            report,
            infinitesimality,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HinchinRun {
    pub report: ExperimentReport,
    pub infinitesimality: InfinitesimalityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    /// Distribution document.
    pub input: PathBuf,
    /// `M` for condition (1); defaults to the stored bound.
    #[serde(default)]
    pub bound: Option<f64>,
    #[serde(default = "default_degree")]
    pub degree: usize,
}

fn default_degree() -> usize {
    3
}

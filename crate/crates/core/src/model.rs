//! Shared domain types: couplings, spectra, detuning schedules, tanglemeter
//! matrices and run configuration.
//!
//! Units: hbar = 1, so time and energy are reciprocal dimensionless numbers.

use std::{fmt, path::Path, str::FromStr};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative asymmetry allowed by strict validation.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Fixed physical parameters of the dipole medium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConfig {
    /// Dipole matrix element.
    pub mu: f64,
    /// `c` in the angular factor `1 - c cos^2(theta)`.
    pub angular_coefficient: f64,
    /// Sampling region. Only the unit cube is supported.
    pub region: Region,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Region {
    #[default]
    UnitCube,
}

impl Default for PhysicalConfig {
    fn default() -> Self {
        PhysicalConfig { mu: 1.0, angular_coefficient: 2.0, region: Region::UnitCube }
    }
}

impl PhysicalConfig {
    pub fn new(mu: f64, angular_coefficient: f64) -> Result<Self> {
        let cfg = PhysicalConfig { mu, angular_coefficient, region: Region::UnitCube };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::Validation(format!("mu must be positive and finite, got {}", self.mu)));
        }
        if !self.angular_coefficient.is_finite() {
            return Err(Error::Validation("angular coefficient must be finite".into()));
        }
        Ok(())
    }
}

/// How `validate_coupling` treats an asymmetric input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    /// Reject asymmetry beyond [`SYMMETRY_TOLERANCE`].
    #[default]
    Strict,
    /// Replace the matrix by its symmetric part.
    Lenient,
}

/// Non-fatal adjustments made while validating a coupling matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum ValidationWarning {
    DiagonalZeroed { max_abs: f64 },
    Symmetrized { max_asymmetry: f64 },
}

/// Real symmetric pairwise coupling `V_ij` with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    values: DMatrix<f64>,
}

impl CouplingMatrix {
    /// Validates a square array, returning the matrix and any warnings.
    pub fn validate(
        raw: &DMatrix<f64>,
        strictness: Strictness,
    ) -> Result<(CouplingMatrix, Vec<ValidationWarning>)> {
        let n = raw.nrows();
        if raw.ncols() != n {
            return Err(Error::Validation(format!(
                "coupling must be square, got {}x{}",
                raw.nrows(),
                raw.ncols()
            )));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("coupling has non-finite entries".into()));
        }
        let mut warnings = Vec::new();
        let mut values = raw.clone();

        let max_diag = (0..n).map(|i| raw[(i, i)].abs()).fold(0.0, f64::max);
        if max_diag > 0.0 {
            for i in 0..n {
                values[(i, i)] = 0.0;
            }
            warnings.push(ValidationWarning::DiagonalZeroed { max_abs: max_diag });
        }

        let mut max_asym = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (values[(i, j)], values[(j, i)]);
                let scale = a.abs().max(b.abs()).max(1.0);
                max_asym = max_asym.max((a - b).abs() / scale);
            }
        }
        if max_asym > 0.0 {
            match strictness {
                Strictness::Strict if max_asym > SYMMETRY_TOLERANCE => {
                    return Err(Error::Validation(format!(
                        "coupling is asymmetric (relative defect {max_asym:e})"
                    )));
                }
                _ => {
                    for i in 0..n {
                        for j in (i + 1)..n {
                            let m = 0.5 * (values[(i, j)] + values[(j, i)]);
                            values[(i, j)] = m;
                            values[(j, i)] = m;
                        }
                    }
                    if max_asym > SYMMETRY_TOLERANCE {
                        warnings.push(ValidationWarning::Symmetrized { max_asymmetry: max_asym });
                    }
                }
            }
        }
        Ok((CouplingMatrix { values }, warnings))
    }

    /// Builds from row vectors, strict mode.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<CouplingMatrix> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Validation("coupling rows must form a square array".into()));
        }
        let raw = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Ok(Self::validate(&raw, Strictness::Strict)?.0)
    }

    /// Constant all-to-all pair coupling `V_ij = pair` for `i != j`.
    pub fn collective(n: usize, pair: f64) -> CouplingMatrix {
        let values = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { pair });
        CouplingMatrix { values }
    }

    pub fn zeros(n: usize) -> CouplingMatrix {
        CouplingMatrix { values: DMatrix::zeros(n, n) }
    }

    /// Wraps a matrix already known to satisfy the invariants.
    pub(crate) fn from_trusted(values: DMatrix<f64>) -> CouplingMatrix {
        debug_assert!(values.is_square());
        CouplingMatrix { values }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn scaled(&self, factor: f64) -> CouplingMatrix {
        CouplingMatrix { values: &self.values * factor }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.norm()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Eigenvalues `V_m` (ascending) and orthonormal modes `C` (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl SpectralDecomposition {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `C diag(V_m) C^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let c = &self.eigenvectors;
        let n = self.n();
        let mut scaled = c.clone();
        for (m, &v) in self.eigenvalues.iter().enumerate() {
            scaled.column_mut(m).scale_mut(v);
        }
        let out = scaled * c.transpose();
        debug_assert_eq!(out.nrows(), n);
        out
    }

    /// `|| C diag(V) C^T - V ||_F`.
    pub fn reconstruction_residual(&self, v: &CouplingMatrix) -> f64 {
        (self.reconstruct() - v.values()).norm()
    }

    /// `|| C^T C - I ||_F`.
    pub fn orthogonality_defect(&self) -> f64 {
        let n = self.n();
        (self.eigenvectors.transpose() * &self.eigenvectors - DMatrix::<f64>::identity(n, n)).norm()
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }
}

/// One constant-detuning piece of a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration: f64,
    pub alpha: f64,
}

/// Piecewise-constant, right-continuous detuning `alpha(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetuningSchedule {
    segments: Vec<Segment>,
    /// Start time of each segment, plus the total duration at the end.
    boundaries: Vec<f64>,
}

impl DetuningSchedule {
    pub fn new(segments: &[(f64, f64)]) -> Result<DetuningSchedule> {
        if segments.is_empty() {
            return Err(Error::Validation("schedule needs at least one segment".into()));
        }
        let mut boundaries = Vec::with_capacity(segments.len() + 1);
        let mut acc = 0.0;
        boundaries.push(acc);
        for (k, &(duration, alpha)) in segments.iter().enumerate() {
            if !(duration > 0.0 && duration.is_finite()) {
                return Err(Error::Validation(format!(
                    "segment {k} has non-positive duration {duration}"
                )));
            }
            if !alpha.is_finite() {
                return Err(Error::Validation(format!("segment {k} has non-finite alpha")));
            }
            acc += duration;
            boundaries.push(acc);
        }
        let segments = segments.iter().map(|&(duration, alpha)| Segment { duration, alpha }).collect();
        Ok(DetuningSchedule { segments, boundaries })
    }

    pub fn constant(alpha: f64, duration: f64) -> Result<DetuningSchedule> {
        Self::new(&[(duration, alpha)])
    }

    /// Switch protocol: `alpha` on `[0, t1)`, zero on `[t1, t2)`, `alpha` on
    /// `[t2, t_end]`. Empty pieces are dropped.
    pub fn switch(alpha: f64, t1: f64, t2: f64, t_end: f64) -> Result<DetuningSchedule> {
        if !(0.0 <= t1 && t1 <= t2 && t2 <= t_end) {
            return Err(Error::Validation(format!(
                "switch times must satisfy 0 <= t1 <= t2 <= t (got {t1}, {t2}, {t_end})"
            )));
        }
        let mut pieces: Vec<(f64, f64)> = Vec::with_capacity(3);
        for (d, a) in [(t1, alpha), (t2 - t1, 0.0), (t_end - t2, alpha)] {
            if d <= 0.0 {
                continue;
            }
            match pieces.last_mut() {
                Some(last) if last.1 == a => last.0 += d,
                _ => pieces.push((d, a)),
            }
        }
        if pieces.is_empty() {
            return Err(Error::Validation("switch schedule has zero total duration".into()));
        }
        Self::new(&pieces)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_duration(&self) -> f64 {
        *self.boundaries.last().unwrap()
    }

    /// `alpha(t)`; the last segment's value extends past the end.
    pub fn alpha_at(&self, t: f64) -> f64 {
        let k = self.boundaries[1..].partition_point(|&b| b <= t);
        self.segments[k.min(self.segments.len() - 1)].alpha
    }

    /// Closed-form `int_0^t alpha(s) ds`.
    pub fn integral(&self, t: f64) -> f64 {
        self.pieces_until(t).map(|s| s.duration * s.alpha).sum()
    }

    /// Constant pieces covering `[0, t]`, the last one truncated at `t`.
    pub fn pieces_until(&self, t: f64) -> impl Iterator<Item = Segment> + '_ {
        let n = self.segments.len();
        self.segments.iter().enumerate().filter_map(move |(k, seg)| {
            let start = self.boundaries[k];
            if start >= t {
                return None;
            }
            let end = if k + 1 == n { t.max(self.boundaries[k + 1]) } else { self.boundaries[k + 1] };
            let duration = end.min(t) - start;
            (duration > 0.0).then_some(Segment { duration, alpha: seg.alpha })
        })
    }
}

/// Complex symmetric matrix `W_ij` in the exponent of the collective state.
#[derive(Debug, Clone, PartialEq)]
pub struct TanglemeterMatrix {
    values: DMatrix<C64>,
}

impl TanglemeterMatrix {
    pub fn new(values: DMatrix<C64>) -> Result<TanglemeterMatrix> {
        if !values.is_square() {
            return Err(Error::Validation("tanglemeter matrix must be square".into()));
        }
        if values.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::Validation("tanglemeter matrix has non-finite entries".into()));
        }
        Ok(TanglemeterMatrix { values })
    }

    pub fn zeros(n: usize) -> TanglemeterMatrix {
        TanglemeterMatrix { values: DMatrix::zeros(n, n) }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<C64> {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.values[(i, j)]
    }

    /// `W W^+`.
    pub fn gram(&self) -> DMatrix<C64> {
        &self.values * self.values.adjoint()
    }

    /// `Tr W W^+`, the smallness diagnostic `|W|`.
    pub fn weight(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `|| W^T - W ||_F`.
    pub fn symmetry_defect(&self) -> f64 {
        (self.values.transpose() - &self.values).norm()
    }

    /// `|| W W^+ - W^+ W ||_F`.
    pub fn normality_defect(&self) -> f64 {
        let a = self.values.adjoint();
        (&self.values * &a - &a * &self.values).norm()
    }
}

/// Inclusive linear grid `start:stop:count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearGrid {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl LinearGrid {
    pub fn new(start: f64, stop: f64, count: usize) -> Result<LinearGrid> {
        if count == 0 || !start.is_finite() || !stop.is_finite() || stop < start {
            return Err(Error::Validation(format!("invalid grid {start}:{stop}:{count}")));
        }
        if count == 1 && stop != start {
            return Err(Error::Validation("a one-point grid needs start == stop".into()));
        }
        Ok(LinearGrid { start, stop, count })
    }

    pub fn point(start: f64) -> LinearGrid {
        LinearGrid { start, stop: start, count: 1 }
    }

    pub fn step(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.stop - self.start) / (self.count - 1) as f64
        }
    }

    pub fn value(&self, k: usize) -> f64 {
        if k + 1 == self.count {
            self.stop
        } else {
            self.start + k as f64 * self.step()
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.count).map(|k| self.value(k)).collect()
    }
}

impl FromStr for LinearGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<LinearGrid> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let num = |p: &str| -> Result<f64> {
            p.parse::<f64>().map_err(|_| Error::Validation(format!("bad number '{p}' in grid '{s}'")))
        };
        match parts.as_slice() {
            [x] => Ok(LinearGrid::point(num(x)?)),
            [a, b, n] => {
                let count = n
                    .parse::<usize>()
                    .map_err(|_| Error::Validation(format!("bad count '{n}' in grid '{s}'")))?;
                LinearGrid::new(num(a)?, num(b)?, count)
            }
            _ => Err(Error::Validation(format!("grid must be 'start:stop:count', got '{s}'"))),
        }
    }
}

impl fmt::Display for LinearGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.stop, self.count)
    }
}

/// Key/value run configuration read from a JSON or TOML file. Every field is
/// optional; command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n: Option<usize>,
    pub samples: Option<usize>,
    pub bins: Option<usize>,
    pub seed: Option<u64>,
    pub mu: Option<f64>,
    pub angular_coefficient: Option<f64>,
    pub alpha: Option<f64>,
    /// `[duration, alpha]` pairs.
    pub schedule: Option<Vec<(f64, f64)>>,
    pub t: Option<f64>,
    pub t_range: Option<String>,
    pub v_range: Option<String>,
    pub alpha_range: Option<String>,
    pub range: Option<(f64, f64)>,
    pub nv: Option<f64>,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub t1_range: Option<String>,
    pub dt_range: Option<String>,
    pub t_offset: Option<f64>,
    pub scales: Option<Vec<f64>>,
    pub tol: Option<f64>,
    pub tau_range: Option<String>,
    pub density_file: Option<String>,
    pub v_scale: Option<f64>,
    pub normalization: Option<String>,
    pub averaged: Option<bool>,
    pub coupling: Option<String>,
    pub pair_convention: Option<String>,
    pub scaled_axes: Option<bool>,
    pub raw: Option<bool>,
    pub fit: Option<String>,
}

impl RunConfig {
    /// Parses `.json` files as JSON and anything else as TOML.
    pub fn from_path(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        Self::parse(&text, is_json)
    }

    pub fn parse(text: &str, json: bool) -> Result<RunConfig> {
        if json {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
        }
    }

    pub fn physical(&self) -> Result<PhysicalConfig> {
        let d = PhysicalConfig::default();
        PhysicalConfig::new(
            self.mu.unwrap_or(d.mu),
            self.angular_coefficient.unwrap_or(d.angular_coefficient),
        )
    }
}

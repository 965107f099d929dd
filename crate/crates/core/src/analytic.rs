//! Closed-form dynamics at constant detuning.
//!
//! Every mode `V_m` of the coupling evolves independently. With
//! `z^2 = alpha (alpha + 2 V)` the mode amplitude is
//!
//! ```text
//! w(t) = V s / (i c - (V + alpha) s),   c = cos(z t),  s = sin(z t) / z
//! ```
//!
//! and both `c` and `s` are entire in `z^2`, so nothing depends on which square
//! root is taken. The mode population `|w|^2 / (1 - |w|^2)` collapses to
//! `V^2 s^2`.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{
    error::{Error, Result},
    model::{LinearGrid, PhysicalConfig, SpectralDecomposition, TanglemeterMatrix},
    media,
};

/// Below this `|z t|` the trigonometric factors are taken from their series.
pub const SERIES_THRESHOLD: f64 = 1e-4;

/// Fraction of `N` at which `Tr W W^+` is no longer considered small.
pub const VALIDITY_FRACTION: f64 = 0.1;

/// Imaginary part of `z t` beyond which `tan(z t)` is replaced by `+-i`.
const TAN_SATURATION: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub alpha: f64,
    pub t: f64,
}

impl KernelParams {
    pub fn new(alpha: f64, t: f64) -> Result<KernelParams> {
        if !(t >= 0.0 && t.is_finite()) || !alpha.is_finite() {
            return Err(Error::Validation(format!("need finite alpha and t >= 0 (alpha = {alpha}, t = {t})")));
        }
        Ok(KernelParams { alpha, t })
    }
}

/// `(cos(z t), sin(z t) / z)` for a given root `z`.
fn even_factors(z: C64, t: f64) -> (C64, C64) {
    let x = z * t;
    if x.norm() < SERIES_THRESHOLD {
        let u = x * x;
        let c = 1.0 - u / 2.0 + u * u / 24.0;
        let s = t * (1.0 - u / 6.0 + u * u / 120.0);
        (c, s)
    } else {
        (x.cos(), x.sin() / z)
    }
}

/// Principal root of `alpha (alpha + 2 V)`.
pub fn mode_frequency(v: f64, alpha: f64) -> C64 {
    C64::new(alpha * (alpha + 2.0 * v), 0.0).sqrt()
}

/// Mode amplitude evaluated with an explicit choice of root `z`.
pub fn kernel_w_with_root(v: f64, p: KernelParams, z: C64) -> Result<C64> {
    if p.t == 0.0 || v == 0.0 {
        return Ok(C64::new(0.0, 0.0));
    }
    let i = C64::i();
    let shift = v + p.alpha;
    let x = z * p.t;
    let w = if x.im.abs() > TAN_SATURATION {
        // c grows like e^{|Im x|}; divide it out: tan(x) -> i sgn(Im x)
        let tan = C64::new(0.0, x.im.signum());
        let tau = tan / z;
        v * tau / (i - shift * tau)
    } else {
        let (c, s) = even_factors(z, p.t);
        let den = i * c - shift * s;
        if !(den.norm() > 1e-300) {
            return Err(Error::Divergence { coupling: v, alpha: p.alpha, t: p.t });
        }
        v * s / den
    };
    if !(w.re.is_finite() && w.im.is_finite()) {
        return Err(Error::Divergence { coupling: v, alpha: p.alpha, t: p.t });
    }
    Ok(w)
}

/// Tanglemeter eigenvalue `w(V; alpha, t)` of a single coupling mode.
pub fn kernel_w(v: f64, p: KernelParams) -> Result<C64> {
    kernel_w_with_root(v, p, mode_frequency(v, p.alpha))
}

/// `sin(t sqrt(q)) / sqrt(q)` for real `q`, continued through `q = 0`.
pub fn sin_over_root(q: f64, t: f64) -> f64 {
    let u = q * t * t;
    if u.abs() < SERIES_THRESHOLD * SERIES_THRESHOLD {
        t * (1.0 - u / 6.0 + u * u / 120.0)
    } else if q > 0.0 {
        let r = q.sqrt();
        (r * t).sin() / r
    } else {
        let r = (-q).sqrt();
        (r * t).sinh() / r
    }
}

/// `V^2 sin^2(z t) / z^2` for one mode.
pub fn mode_population(v: f64, p: KernelParams) -> f64 {
    let s = sin_over_root(p.alpha * (p.alpha + 2.0 * v), p.t);
    v * v * s * s
}

/// `W = C diag(w_m) C^T`.
pub fn tanglemeter_matrix(sd: &SpectralDecomposition, p: KernelParams) -> Result<TanglemeterMatrix> {
    let n = sd.n();
    let w: Vec<C64> = sd.eigenvalues.iter().map(|&v| kernel_w(v, p)).collect::<Result<_>>()?;
    let c = &sd.eigenvectors;
    let mut out = DMatrix::<C64>::zeros(n, n);
    for (m, wm) in w.iter().enumerate() {
        if *wm == C64::new(0.0, 0.0) {
            continue;
        }
        for j in 0..n {
            let cj = c[(j, m)] * *wm;
            for i in 0..n {
                out[(i, j)] += c[(i, m)] * cj;
            }
        }
    }
    TanglemeterMatrix::new(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationResult {
    /// Expected number of qutrits in the upper level.
    pub n1: f64,
    /// `<Psi_W | Psi_W>`.
    pub norm: f64,
    /// `Tr W W^+`.
    pub w_trace: f64,
    /// False once `Tr W W^+ >= 0.1 N`.
    pub valid: bool,
}

impl PopulationResult {
    /// Assembles the result from per-mode `|w_m|^2`.
    pub fn from_mode_weights(weights: &[f64]) -> Result<PopulationResult> {
        let radius = weights.iter().copied().fold(0.0, f64::max);
        if radius >= 1.0 {
            return Err(Error::SingularPopulation { radius });
        }
        let w_trace: f64 = weights.iter().sum();
        let n1 = weights.iter().map(|l| l / (1.0 - l)).sum();
        Ok(PopulationResult {
            n1,
            norm: w_trace.exp(),
            w_trace,
            valid: w_trace < VALIDITY_FRACTION * weights.len() as f64,
        })
    }
}

/// Norm `exp(Tr W W^+)` and population `Tr W W^+ / (1 - W W^+)`.
pub fn norm_and_population(w: &TanglemeterMatrix) -> Result<PopulationResult> {
    if w.n() == 0 {
        return Ok(PopulationResult { n1: 0.0, norm: 1.0, w_trace: 0.0, valid: true });
    }
    let gram = w.gram();
    let eig = gram
        .try_symmetric_eigen(f64::EPSILON, 10_000)
        .ok_or(Error::EigenNonConvergence { n: w.n(), max_iterations: 10_000 })?;
    // WW^+ is positive semidefinite; clip rounding noise below zero
    let weights: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let mut r = PopulationResult::from_mode_weights(&weights)?;
    r.w_trace = w.weight();
    r.norm = r.w_trace.exp();
    r.valid = r.w_trace < VALIDITY_FRACTION * w.n() as f64;
    Ok(r)
}

/// `sum_m V_m^2 sin^2(t z_m) / z_m^2` for a bare list of mode couplings.
pub fn population_from_spectrum(eigenvalues: &[f64], p: KernelParams) -> f64 {
    eigenvalues.iter().map(|&v| mode_population(v, p)).sum()
}

/// Trace formula for the upper-level population.
pub fn population_analytic(sd: &SpectralDecomposition, p: KernelParams) -> f64 {
    population_from_spectrum(&sd.eigenvalues, p)
}

/// Upper-level population for all-to-all coupling with collective strength
/// `nv`:
///
/// ```text
/// n1 = (NV)^2 sin^2(t sqrt(alpha (2 NV + alpha))) / (alpha (2 NV + alpha))
/// ```
///
/// Written out separately from [`mode_population`] so the two can check each
/// other.
pub fn population_collective(nv: f64, alpha: f64, t: f64) -> f64 {
    let q = alpha * (2.0 * nv + alpha);
    let x2 = q * t * t;
    let ratio = if x2.abs() < 1e-8 {
        // sin^2(x)/x^2 = 1 - x^2/3 + 2 x^4/45
        t * t * (1.0 - x2 / 3.0 + 2.0 * x2 * x2 / 45.0)
    } else if q > 0.0 {
        let y = (q.sqrt() * t).sin();
        y * y / q
    } else {
        let y = ((-q).sqrt() * t).sinh();
        y * y / (-q)
    };
    nv * nv * ratio
}

/// True while the collective population is small compared with `N`.
pub fn collective_is_valid(n1: f64, n_qutrits: usize) -> bool {
    n1 < VALIDITY_FRACTION * n_qutrits as f64
}

/// Spectrum assigned to the all-to-all coupling of strength `nv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CollectiveConvention {
    /// One mode at `NV`, all others zero.
    #[default]
    RankOne,
    /// Physical zero-diagonal matrix with pair coupling `NV / N`: one mode at
    /// `(N - 1) V` and `N - 1` modes at `-V`.
    ZeroDiagonal,
}

pub fn collective_spectrum(n: usize, nv: f64, convention: CollectiveConvention) -> Vec<f64> {
    if n == 0 {
        return vec![];
    }
    let mut ev = match convention {
        CollectiveConvention::RankOne => {
            let mut e = vec![0.0; n];
            e[n - 1] = nv;
            e
        }
        CollectiveConvention::ZeroDiagonal => {
            let pair = nv / n as f64;
            let mut e = vec![-pair; n];
            e[n - 1] = (n as f64 - 1.0) * pair;
            e
        }
    };
    ev.sort_by(f64::total_cmp);
    ev
}

/// A rectangular numeric table with named columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Table {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: vec![] }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

/// `n1` surface over a grid of collective coupling and detuning
/// at fixed `t`, using the closed collective formula.
pub fn sweep_collective(v_grid: &LinearGrid, alpha_grid: &LinearGrid, t: f64) -> Result<Table> {
    KernelParams::new(0.0, t)?;
    let mut table = Table::new(&["v", "alpha", "n1"]);
    for v in v_grid.values() {
        for a in alpha_grid.values() {
            table.rows.push(vec![v, a, population_collective(v, a, t)]);
        }
    }
    Ok(table)
}

/// Ensemble specification for the random-media sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub n_dipoles: usize,
    pub n_samples: usize,
    pub seed: u64,
    /// Read the grids as `t mu^2 N^{3/2}` and `alpha / (mu^2 N^{3/2})`.
    pub scaled_axes: bool,
}

/// Sample-averaged `n1` over a grid of time and detuning.
pub fn sweep_ensemble(
    spec: &EnsembleSpec,
    cfg: &PhysicalConfig,
    t_grid: &LinearGrid,
    alpha_grid: &LinearGrid,
) -> Result<Table> {
    if spec.n_samples == 0 {
        return Err(Error::Validation("n_samples must be at least 1".into()));
    }
    let spectra = media::sample_spectra(spec.n_dipoles, spec.n_samples, spec.seed, cfg)?;
    let scale = if spec.scaled_axes { media::cooperative_scale(spec.n_dipoles, cfg.mu) } else { 1.0 };
    let points: Vec<(f64, f64)> = t_grid
        .values()
        .into_iter()
        .flat_map(|t| alpha_grid.values().into_iter().map(move |a| (t, a)))
        .collect();
    let rows: Vec<Vec<f64>> = points
        .par_iter()
        .map(|&(ts, as_)| {
            let p = KernelParams::new(as_ * scale, ts / scale)?;
            let total: f64 = spectra.iter().map(|ev| population_from_spectrum(ev, p)).sum();
            Ok(vec![ts, as_, total / spectra.len() as f64])
        })
        .collect::<Result<_>>()?;
    let header: &[&str] = if spec.scaled_axes { &["t_scaled", "alpha_scaled", "n1"] } else { &["t", "alpha", "n1"] };
    let mut table = Table::new(header);
    table.rows = rows;
    Ok(table)
}

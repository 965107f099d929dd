//! Random dipole media: uniform positions in the unit cube, `1/r^3` couplings,
//! their spectra and the ensemble eigenvalue density.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{
    error::{Error, Result},
    model::{CouplingMatrix, PhysicalConfig, SpectralDecomposition},
};

/// Smallest allowed pair separation; closer draws are resampled.
pub const MIN_SEPARATION: f64 = 1e-3;

const MAX_RESAMPLES: usize = 10_000;
const EIGEN_MAX_SWEEPS: usize = 10_000;

/// Generator for sample `stream` of an ensemble seeded with `master`.
///
/// Streams are independent ChaCha keystreams, so sample `k` is the same no
/// matter which worker draws it or in what order.
pub fn ensemble_rng(master: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometrySample {
    pub positions: Vec<[f64; 3]>,
    pub seed: u64,
}

impl GeometrySample {
    /// Wraps caller-supplied positions; coordinates must lie in `[0, 1]`.
    pub fn from_positions(positions: Vec<[f64; 3]>) -> Result<GeometrySample> {
        if positions.is_empty() {
            return Err(Error::Validation("geometry needs at least one dipole".into()));
        }
        if positions.iter().flatten().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Validation("positions must lie in the unit cube".into()));
        }
        Ok(GeometrySample { positions, seed: 0 })
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn min_separation(&self) -> f64 {
        let p = &self.positions;
        let mut best = f64::INFINITY;
        for i in 0..p.len() {
            for j in (i + 1)..p.len() {
                best = best.min(dist(&p[i], &p[j]));
            }
        }
        best
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Uniform i.i.d. positions in the unit cube, deterministic in `seed`.
pub fn sample_geometry(n_dipoles: usize, seed: u64) -> Result<GeometrySample> {
    sample_with(n_dipoles, seed, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn sample_with(n_dipoles: usize, seed: u64, rng: &mut impl Rng) -> Result<GeometrySample> {
    if n_dipoles == 0 {
        return Err(Error::Validation("n_dipoles must be at least 1".into()));
    }
    let mut positions: Vec<[f64; 3]> = Vec::with_capacity(n_dipoles);
    while positions.len() < n_dipoles {
        let mut tries = 0;
        loop {
            let p = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
            if positions.iter().all(|q| dist(&p, q) >= MIN_SEPARATION) {
                positions.push(p);
                break;
            }
            tries += 1;
            if tries > MAX_RESAMPLES {
                return Err(Error::Validation(format!(
                    "could not place {n_dipoles} dipoles with separation >= {MIN_SEPARATION}"
                )));
            }
        }
    }
    Ok(GeometrySample { positions, seed })
}

/// `V_ij = mu^2 (1 - c cos^2 theta_ij) / r_ij^3`, with `theta` measured from z.
pub fn coupling_from_geometry(g: &GeometrySample, cfg: &PhysicalConfig) -> Result<CouplingMatrix> {
    cfg.check()?;
    let n = g.n();
    let mu2 = cfg.mu * cfg.mu;
    let mut v = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (&g.positions[i], &g.positions[j]);
            let r = dist(a, b);
            if r == 0.0 {
                return Err(Error::Validation(format!("dipoles {i} and {j} coincide")));
            }
            let cos2 = ((a[2] - b[2]) / r).powi(2);
            let value = mu2 * (1.0 - cfg.angular_coefficient * cos2) / (r * r * r);
            v[(i, j)] = value;
            v[(j, i)] = value;
        }
    }
    Ok(CouplingMatrix::from_trusted(v))
}

/// Full symmetric eigendecomposition with eigenvalues ascending.
pub fn eigen_decompose(v: &CouplingMatrix) -> Result<SpectralDecomposition> {
    let n = v.n();
    if n == 0 {
        return Ok(SpectralDecomposition { eigenvalues: vec![], eigenvectors: DMatrix::zeros(0, 0) });
    }
    let eig = v
        .values()
        .clone()
        .try_symmetric_eigen(f64::EPSILON, EIGEN_MAX_SWEEPS)
        .ok_or(Error::EigenNonConvergence { n, max_iterations: EIGEN_MAX_SWEEPS })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let eigenvectors = DMatrix::from_fn(n, n, |i, m| eig.eigenvectors[(i, order[m])]);
    Ok(SpectralDecomposition { eigenvalues, eigenvectors })
}

/// Eigenvalues only, ascending.
pub fn eigenvalues(v: &CouplingMatrix) -> Vec<f64> {
    let mut ev: Vec<f64> = v.values().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// The cooperative energy `mu^2 N^{3/2}` used to scale spectra and detunings.
pub fn cooperative_scale(n_dipoles: usize, mu: f64) -> f64 {
    mu * mu * (n_dipoles as f64).powf(1.5)
}

/// Units of the eigenvalue axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EnergyUnits {
    /// `V_m / (mu^2 N^{3/2})`.
    #[default]
    Cooperative,
    Raw,
}

impl EnergyUnits {
    pub fn scale(self, n_dipoles: usize, mu: f64) -> f64 {
        match self {
            EnergyUnits::Cooperative => cooperative_scale(n_dipoles, mu),
            EnergyUnits::Raw => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityParams {
    pub n_dipoles: usize,
    pub n_samples: usize,
    pub bins: usize,
    pub range: (f64, f64),
    pub seed: u64,
    pub units: EnergyUnits,
}

impl DensityParams {
    pub fn new(n_dipoles: usize, n_samples: usize, seed: u64) -> DensityParams {
        DensityParams { n_dipoles, n_samples, bins: 201, range: (-25.0, 25.0), seed, units: EnergyUnits::default() }
    }
}

/// Power sums of pooled eigenvalues, merged in sample order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PooledMoments {
    pub count: usize,
    pub sum: f64,
    pub sum2: f64,
    pub sum3: f64,
}

impl PooledMoments {
    fn add(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.sum2 += x * x;
        self.sum3 += x * x * x;
    }

    fn merge(&mut self, o: &PooledMoments) {
        self.count += o.count;
        self.sum += o.sum;
        self.sum2 += o.sum2;
        self.sum3 += o.sum3;
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }

    /// Population skewness `m3 / m2^{3/2}`.
    pub fn skewness(&self) -> f64 {
        let n = self.count as f64;
        let mu = self.mean();
        let m2 = self.sum2 / n - mu * mu;
        let m3 = self.sum3 / n - 3.0 * mu * self.sum2 / n + 2.0 * mu.powi(3);
        m3 / m2.powf(1.5)
    }

    /// Normal-theory standard error of the sample skewness.
    pub fn skewness_standard_error(&self) -> f64 {
        let n = self.count as f64;
        (6.0 * n * (n - 1.0) / ((n - 2.0) * (n + 1.0) * (n + 3.0))).sqrt()
    }
}

/// Ensemble-averaged eigenvalue histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenvalueHistogram {
    pub bin_edges: Vec<f64>,
    /// Counts per bin averaged over samples.
    pub counts: Vec<f64>,
    pub n_samples: usize,
    pub n_dipoles: usize,
    /// Energy divided out of the eigenvalues before binning.
    pub energy_scale: f64,
    /// Average number per matrix falling below / above the binned range.
    pub underflow: f64,
    pub overflow: f64,
    /// Largest `|sum_m V_m| / ||V||_F` over samples.
    pub max_trace_defect: f64,
    pub moments: PooledMoments,
}

impl EigenvalueHistogram {
    pub fn bin_width(&self, k: usize) -> f64 {
        self.bin_edges[k + 1] - self.bin_edges[k]
    }

    /// Centers of the uniform bins, exact at zero for symmetric ranges.
    pub fn bin_centers(&self) -> Vec<f64> {
        let bins = self.counts.len();
        let (lo, hi) = (self.bin_edges[0], self.bin_edges[bins]);
        (0..bins).map(|k| lo + (hi - lo) * (2 * k + 1) as f64 / (2 * bins) as f64).collect()
    }

    /// Per-matrix density of eigenvalues per unit energy.
    pub fn density(&self) -> Vec<f64> {
        self.counts.iter().enumerate().map(|(k, c)| c / self.bin_width(k)).collect()
    }

    /// Builds a histogram from tabulated `(center, density)` pairs with a
    /// uniform bin width, e.g. read back from a `spectrum` CSV.
    pub fn from_density(centers: &[f64], density: &[f64], n_dipoles: usize) -> Result<EigenvalueHistogram> {
        if centers.len() != density.len() || centers.is_empty() {
            return Err(Error::Validation("density table is empty or ragged".into()));
        }
        let width = if centers.len() > 1 { centers[1] - centers[0] } else { 1.0 };
        if !(width > 0.0) {
            return Err(Error::Validation("bin centers must increase".into()));
        }
        let mut edges: Vec<f64> = centers.iter().map(|c| c - 0.5 * width).collect();
        edges.push(centers[centers.len() - 1] + 0.5 * width);
        Ok(EigenvalueHistogram {
            bin_edges: edges,
            counts: density.iter().map(|d| d * width).collect(),
            n_samples: 1,
            n_dipoles,
            energy_scale: 1.0,
            underflow: 0.0,
            overflow: 0.0,
            max_trace_defect: 0.0,
            moments: PooledMoments::default(),
        })
    }
}

struct SampleStats {
    counts: Vec<u64>,
    under: u64,
    over: u64,
    trace_defect: f64,
    moments: PooledMoments,
}

/// Raw coupling spectrum of ensemble sample `k`.
pub fn sample_spectrum(n_dipoles: usize, master_seed: u64, k: u64, cfg: &PhysicalConfig) -> Result<(Vec<f64>, f64)> {
    let g = sample_with(n_dipoles, master_seed, &mut ensemble_rng(master_seed, k))?;
    let v = coupling_from_geometry(&g, cfg)?;
    let ev = eigenvalues(&v);
    Ok((ev, v.frobenius_norm()))
}

/// Raw spectra of `n_samples` ensemble members, in sample order.
pub fn sample_spectra(n_dipoles: usize, n_samples: usize, seed: u64, cfg: &PhysicalConfig) -> Result<Vec<Vec<f64>>> {
    (0..n_samples as u64)
        .into_par_iter()
        .map(|k| sample_spectrum(n_dipoles, seed, k, cfg).map(|(ev, _)| ev))
        .collect()
}

/// Eigenvalue density of random unit-cube media averaged over samples.
pub fn eigenvalue_density(p: &DensityParams, cfg: &PhysicalConfig) -> Result<EigenvalueHistogram> {
    if p.n_samples == 0 {
        return Err(Error::Validation("n_samples must be at least 1".into()));
    }
    if p.bins == 0 || !(p.range.0 < p.range.1) {
        return Err(Error::Validation(format!("bad histogram binning {} over {:?}", p.bins, p.range)));
    }
    let (lo, hi) = p.range;
    let width = (hi - lo) / p.bins as f64;
    let scale = p.units.scale(p.n_dipoles, cfg.mu);

    let per_sample: Vec<SampleStats> = (0..p.n_samples as u64)
        .into_par_iter()
        .map(|k| {
            let (ev, norm) = sample_spectrum(p.n_dipoles, p.seed, k, cfg)?;
            let trace: f64 = ev.iter().sum();
            let trace_defect = if norm > 0.0 { trace.abs() / norm } else { trace.abs() };
            let mut s = SampleStats {
                counts: vec![0; p.bins],
                under: 0,
                over: 0,
                trace_defect,
                moments: PooledMoments::default(),
            };
            for x in ev.iter().map(|v| v / scale) {
                s.moments.add(x);
                if x < lo {
                    s.under += 1;
                } else if x >= hi {
                    s.over += 1;
                } else {
                    let b = (((x - lo) / width) as usize).min(p.bins - 1);
                    s.counts[b] += 1;
                }
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;

    let mut counts = vec![0u64; p.bins];
    let (mut under, mut over, mut defect) = (0u64, 0u64, 0.0f64);
    let mut moments = PooledMoments::default();
    for s in &per_sample {
        for (c, x) in counts.iter_mut().zip(&s.counts) {
            *c += x;
        }
        under += s.under;
        over += s.over;
        defect = defect.max(s.trace_defect);
        moments.merge(&s.moments);
    }
    let ns = p.n_samples as f64;
    let bin_edges = (0..=p.bins).map(|k| lo + (hi - lo) * k as f64 / p.bins as f64).collect();
    Ok(EigenvalueHistogram {
        bin_edges,
        counts: counts.iter().map(|&c| c as f64 / ns).collect(),
        n_samples: p.n_samples,
        n_dipoles: p.n_dipoles,
        energy_scale: scale,
        underflow: under as f64 / ns,
        overflow: over as f64 / ns,
        max_trace_defect: defect,
        moments,
    })
}

/// Placement of the exponential and hyperbolic-cosine factors in the
/// heuristic density fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FitGrouping {
    /// `N / (4|V| e^{sqrt(pi/2)} cosh(ln(4|V|)/sqrt(pi)))`.
    #[default]
    Denominator,
    /// `N / (4|V|) * e^{sqrt(pi/2)} * cosh(ln(4|V|)/sqrt(pi))`, read left to right.
    Literal,
}

/// Heuristic fit of the eigenvalue density, symmetric in `V`.
pub fn heuristic_fit_density(v: f64, n_dipoles: usize, grouping: FitGrouping) -> Result<f64> {
    if v == 0.0 || !v.is_finite() {
        return Err(Error::Validation(format!("fit density has a pole at V = {v}")));
    }
    let a = v.abs();
    let n = n_dipoles as f64;
    let e = (PI / 2.0).sqrt().exp();
    let ch = ((4.0 * a).ln() / PI.sqrt()).cosh();
    Ok(match grouping {
        FitGrouping::Denominator => n / (4.0 * a * e * ch),
        FitGrouping::Literal => n / (4.0 * a) * e * ch,
    })
}

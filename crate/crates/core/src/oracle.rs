//! Exact evolution on the full `3^N` product space.
//!
//! Site levels `{-1, 0, +1}` are stored as base-3 digits `{0, 1, 2}`, site 0
//! least significant. In the rotating frame both outer levels sit `alpha`
//! above the middle one, and the pair interaction
//!
//! ```text
//! H_int = sum_{i != j} V_ji (u_j^+ + t_j^-)(u_i^- + t_i^+)
//! ```
//!
//! raises the digit of site `i` and lowers the digit of site `j`, each with
//! matrix element one.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{
    analytic::{self, KernelParams},
    error::{Error, Result},
    media::{self, eigen_decompose},
    model::{CouplingMatrix, DetuningSchedule, PhysicalConfig, SpectralDecomposition, TanglemeterMatrix},
    schedule,
};

/// Hard cap on the number of qutrits.
pub const MAX_QUTRITS: usize = 12;
/// Size up to which the dense cross-check is available.
pub const DENSE_MAX_QUTRITS: usize = 6;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    Lower,
    Middle,
    Upper,
}

impl Level {
    pub fn digit(self) -> usize {
        match self {
            Level::Lower => 0,
            Level::Middle => 1,
            Level::Upper => 2,
        }
    }

    pub fn from_digit(d: usize) -> Level {
        match d {
            0 => Level::Lower,
            1 => Level::Middle,
            2 => Level::Upper,
            _ => panic!("level digit out of range: {d}"),
        }
    }
}

pub fn dimension(n: usize) -> usize {
    3usize.pow(n as u32)
}

fn powers_of_three(n: usize) -> Vec<usize> {
    (0..n).map(|k| 3usize.pow(k as u32)).collect()
}

pub fn encode(levels: &[Level]) -> usize {
    levels.iter().rev().fold(0, |acc, l| acc * 3 + l.digit())
}

pub fn decode(mut index: usize, n: usize) -> Vec<Level> {
    (0..n)
        .map(|_| {
            let d = index % 3;
            index /= 3;
            Level::from_digit(d)
        })
        .collect()
}

fn digits(mut index: usize, out: &mut [u8]) {
    for d in out.iter_mut() {
        *d = (index % 3) as u8;
        index /= 3;
    }
}

fn check_size(n: usize) -> Result<()> {
    if n > MAX_QUTRITS {
        return Err(Error::TooLarge { n, max: MAX_QUTRITS });
    }
    Ok(())
}

/// Dense amplitudes over the product basis. Not necessarily normalised.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n: usize,
    amps: Vec<C64>,
}

impl StateVector {
    pub fn zeros(n: usize) -> Result<StateVector> {
        check_size(n)?;
        Ok(StateVector { n, amps: vec![ZERO; dimension(n)] })
    }

    pub fn basis(levels: &[Level]) -> Result<StateVector> {
        let mut s = Self::zeros(levels.len())?;
        s.amps[encode(levels)] = C64::new(1.0, 0.0);
        Ok(s)
    }

    /// All qutrits in the middle level.
    pub fn vacuum(n: usize) -> Result<StateVector> {
        Self::basis(&vec![Level::Middle; n])
    }

    pub fn from_amplitudes(n: usize, amps: Vec<C64>) -> Result<StateVector> {
        check_size(n)?;
        if amps.len() != dimension(n) {
            return Err(Error::Dimension { expected: dimension(n), got: amps.len() });
        }
        Ok(StateVector { n, amps })
    }

    pub fn n_qutrits(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn amplitude(&self, levels: &[Level]) -> C64 {
        self.amps[encode(levels)]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `<self | other>`.
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum()
    }

    fn vacuum_index(&self) -> usize {
        (dimension(self.n) - 1) / 2
    }
}

/// `|Psi_W> = exp(sum_ij W_ij u_j^+ t_i^+) |O>`, expanded until the nilpotent
/// series terminates.
pub fn build_state_from_w(w: &TanglemeterMatrix) -> Result<StateVector> {
    let n = w.n();
    let mut state = StateVector::vacuum(n)?;
    let pow3 = powers_of_three(n);
    let mut term = state.amps.clone();
    let mut buf = vec![0u8; n];
    for k in 1..=n / 2 {
        let mut next = vec![ZERO; term.len()];
        for (idx, amp) in term.iter().enumerate() {
            if *amp == ZERO {
                continue;
            }
            digits(idx, &mut buf);
            for i in 0..n {
                if buf[i] != 1 {
                    continue;
                }
                for j in 0..n {
                    if j == i || buf[j] != 1 {
                        continue;
                    }
                    // t_i^+ lifts site i to +1, u_j^+ drops site j to -1
                    next[idx + pow3[i] - pow3[j]] += w.get(i, j) * amp;
                }
            }
        }
        let inv = 1.0 / k as f64;
        next.iter_mut().for_each(|a| *a *= inv);
        if next.iter().all(|a| *a == ZERO) {
            break;
        }
        for (s, t) in state.amps.iter_mut().zip(&next) {
            *s += t;
        }
        term = next;
    }
    Ok(state)
}

/// How the ordered pair sum of the interaction is weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PairConvention {
    /// Sum over ordered pairs as written.
    #[default]
    Verbatim,
    /// Halve every coupling (unordered-pair reading).
    Halved,
}

impl PairConvention {
    pub fn factor(self) -> f64 {
        match self {
            PairConvention::Verbatim => 1.0,
            PairConvention::Halved => 0.5,
        }
    }
}

/// Matrix-free rotating-frame Hamiltonian.
#[derive(Debug, Clone)]
pub struct Hamiltonian {
    n: usize,
    coupling: DMatrix<f64>,
    alpha: f64,
}

impl Hamiltonian {
    pub fn new(v: &CouplingMatrix, alpha: f64) -> Result<Hamiltonian> {
        check_size(v.n())?;
        Ok(Hamiltonian { n: v.n(), coupling: v.values().clone(), alpha })
    }

    /// Gershgorin bound on the spectral radius.
    pub fn norm_bound(&self) -> f64 {
        let off: f64 = self.coupling.iter().map(|x| x.abs()).sum();
        self.alpha.abs() * self.n as f64 + off
    }

    pub fn apply_into(&self, psi: &[C64], out: &mut [C64]) {
        let n = self.n;
        let pow3 = powers_of_three(n);
        let v = &self.coupling;
        let alpha = self.alpha;
        out.par_iter_mut().enumerate().with_min_len(256).for_each_init(
            || vec![0u8; n],
            |buf, (k, slot)| {
                digits(k, buf);
                let excited = buf.iter().filter(|&&d| d != 1).count() as f64;
                let mut acc = psi[k] * (alpha * excited);
                for i in 0..n {
                    if buf[i] == 0 {
                        continue;
                    }
                    for j in 0..n {
                        if j == i || buf[j] == 2 {
                            continue;
                        }
                        let vji = v[(j, i)];
                        if vji != 0.0 {
                            acc += psi[k - pow3[i] + pow3[j]] * vji;
                        }
                    }
                }
                *slot = acc;
            },
        );
    }

    pub fn apply(&self, psi: &StateVector) -> Result<StateVector> {
        if psi.n != self.n {
            return Err(Error::Dimension { expected: self.n, got: psi.n });
        }
        let mut out = vec![ZERO; psi.amps.len()];
        self.apply_into(&psi.amps, &mut out);
        Ok(StateVector { n: self.n, amps: out })
    }
}

/// `H |psi>` for coupling `v` and detuning `alpha`.
pub fn build_rwa_hamiltonian_apply(psi: &StateVector, v: &CouplingMatrix, alpha: f64) -> Result<StateVector> {
    if psi.n != v.n() {
        return Err(Error::Dimension { expected: v.n(), got: psi.n });
    }
    Hamiltonian::new(v, alpha)?.apply(psi)
}

/// Dense Hamiltonian assembled from single-site ladder matrices by Kronecker
/// embedding; shares no code with the matrix-free path.
pub fn dense_hamiltonian(v: &CouplingMatrix, alpha: f64) -> Result<DMatrix<f64>> {
    let n = v.n();
    if n > DENSE_MAX_QUTRITS {
        return Err(Error::TooLarge { n, max: DENSE_MAX_QUTRITS });
    }
    // row = new digit, column = old digit
    let raise = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    let lower = raise.transpose();
    let excited = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.0, 1.0]));
    let id = DMatrix::<f64>::identity(3, 3);
    // site 0 is the least significant digit, i.e. the rightmost factor
    let embed = |ops: &[(usize, &DMatrix<f64>)]| -> DMatrix<f64> {
        let mut acc = DMatrix::<f64>::identity(1, 1);
        for site in (0..n).rev() {
            let op = ops.iter().find(|(s, _)| *s == site).map(|(_, m)| *m).unwrap_or(&id);
            acc = acc.kronecker(op);
        }
        acc
    };
    let dim = dimension(n);
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..n {
        h += embed(&[(i, &excited)]) * alpha;
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && v.get(j, i) != 0.0 {
                h += embed(&[(i, &raise), (j, &lower)]) * v.get(j, i);
            }
        }
    }
    Ok(h)
}

/// Result of an exact evolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Evolution {
    pub state: StateVector,
    /// Relative change of the norm over the run.
    pub drift: f64,
    pub steps: usize,
}

/// Taylor order cap per step.
const MAX_TAYLOR_TERMS: usize = 60;
/// Largest `||H|| dt` per step.
const STEP_NORM: f64 = 0.5;

/// `exp(-i H t) |psi0>` under a piecewise-constant detuning, matrix-free.
pub fn evolve_exact(
    psi0: &StateVector,
    v: &CouplingMatrix,
    sched: &DetuningSchedule,
    t: f64,
    tol: f64,
) -> Result<Evolution> {
    if psi0.n != v.n() {
        return Err(Error::Dimension { expected: v.n(), got: psi0.n });
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Validation(format!("evolution time must be finite and >= 0, got {t}")));
    }
    let norm0 = psi0.norm_sqr().sqrt();
    if norm0 == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let mut psi = psi0.amps.clone();
    let mut hpsi = vec![ZERO; psi.len()];
    let mut term = vec![ZERO; psi.len()];
    let mut steps = 0;
    let mut elapsed = 0.0;
    for seg in sched.pieces_until(t) {
        let h = Hamiltonian::new(v, seg.alpha)?;
        let bound = h.norm_bound();
        let n_steps = ((seg.duration * bound / STEP_NORM).ceil() as usize).max(1);
        let dt = seg.duration / n_steps as f64;
        for _ in 0..n_steps {
            term.copy_from_slice(&psi);
            let mut converged = false;
            for k in 1..=MAX_TAYLOR_TERMS {
                h.apply_into(&term, &mut hpsi);
                let factor = C64::new(0.0, -dt / k as f64);
                let mut size = 0.0;
                for (tk, hk) in term.iter_mut().zip(&hpsi) {
                    *tk = hk * factor;
                    size += tk.norm_sqr();
                }
                psi.iter_mut().zip(&term).for_each(|(p, tk)| *p += tk);
                if size.sqrt() <= 1e-17 * norm0 {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::Integrator {
                    t: elapsed,
                    reason: format!("Taylor series did not converge in {MAX_TAYLOR_TERMS} terms"),
                });
            }
            elapsed += dt;
            steps += 1;
        }
    }
    let norm = psi.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    let drift = (norm - norm0).abs() / norm0;
    if drift > tol {
        return Err(Error::Integrator { t, reason: format!("unitarity drift {drift:e} exceeds {tol:e}") });
    }
    Ok(Evolution { state: StateVector { n: psi0.n, amps: psi }, drift, steps })
}

/// Same evolution by diagonalising the dense Hamiltonian of each piece.
pub fn evolve_dense(psi0: &StateVector, v: &CouplingMatrix, sched: &DetuningSchedule, t: f64) -> Result<StateVector> {
    if psi0.n != v.n() {
        return Err(Error::Dimension { expected: v.n(), got: psi0.n });
    }
    let dim = psi0.amps.len();
    let mut psi = nalgebra::DVector::from_vec(psi0.amps.clone());
    for seg in sched.pieces_until(t) {
        let h = dense_hamiltonian(v, seg.alpha)?;
        let eig = h
            .try_symmetric_eigen(f64::EPSILON, 100_000)
            .ok_or(Error::EigenNonConvergence { n: dim, max_iterations: 100_000 })?;
        let u = eig.eigenvectors.map(|x| C64::new(x, 0.0));
        let mut coeffs = u.transpose() * &psi;
        for (c, &e) in coeffs.iter_mut().zip(eig.eigenvalues.iter()) {
            *c *= C64::new(0.0, -e * seg.duration).exp();
        }
        psi = u * coeffs;
    }
    StateVector::from_amplitudes(psi0.n, psi.iter().copied().collect())
}

/// Expected number of qutrits on each level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelPopulations {
    pub upper: f64,
    pub middle: f64,
    pub lower: f64,
}

pub fn measure_populations(psi: &StateVector) -> Result<LevelPopulations> {
    let norm = psi.norm_sqr();
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let mut counts = [0.0f64; 3];
    let mut buf = vec![0u8; psi.n];
    for (idx, amp) in psi.amps.iter().enumerate() {
        let p = amp.norm_sqr();
        if p == 0.0 {
            continue;
        }
        digits(idx, &mut buf);
        for &d in &buf {
            counts[d as usize] += p;
        }
    }
    Ok(LevelPopulations { upper: counts[2] / norm, middle: counts[1] / norm, lower: counts[0] / norm })
}

/// Leading-order inversion of the collective state: `W_ij` is the amplitude
/// of (site `i` up, site `j` down) relative to the all-middle amplitude.
pub fn extract_w_estimate(psi: &StateVector) -> Result<DMatrix<C64>> {
    let n = psi.n;
    let vac = psi.vacuum_index();
    let reference = psi.amps[vac];
    if reference.norm() < 1e-300 {
        return Err(Error::VanishingReference { amplitude: reference.norm() });
    }
    let pow3 = powers_of_three(n);
    Ok(DMatrix::from_fn(n, n, |i, j| if i == j { ZERO } else { psi.amps[vac + pow3[i] - pow3[j]] / reference }))
}

/// Source of the coupling matrix in an oracle comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum CouplingSpec {
    /// All-to-all pair coupling `nv / N` (zero diagonal).
    Collective { nv: f64 },
    /// Random unit-cube geometry, normalised to unit spectral radius.
    Geometry { seed: u64 },
    /// Explicit matrix rows.
    Matrix { rows: Vec<Vec<f64>> },
}

impl CouplingSpec {
    pub fn build(&self, n: usize, cfg: &PhysicalConfig) -> Result<CouplingMatrix> {
        match self {
            CouplingSpec::Collective { nv } => Ok(CouplingMatrix::collective(n, nv / n as f64)),
            CouplingSpec::Geometry { seed } => {
                let g = media::sample_geometry(n, *seed)?;
                let v = media::coupling_from_geometry(&g, cfg)?;
                let radius = media::eigenvalues(&v).iter().fold(0.0f64, |m, x| m.max(x.abs()));
                Ok(if radius > 0.0 { v.scaled(1.0 / radius) } else { v })
            }
            CouplingSpec::Matrix { rows } => {
                let v = CouplingMatrix::from_rows(rows)?;
                if v.n() != n {
                    return Err(Error::Dimension { expected: n, got: v.n() });
                }
                Ok(v)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareParams {
    pub n: usize,
    pub coupling: CouplingSpec,
    /// `[duration, alpha]` pieces; a single piece means constant detuning.
    pub schedule: Vec<(f64, f64)>,
    pub t: f64,
    pub scales: Vec<f64>,
    pub tol: f64,
    #[serde(default)]
    pub pair_convention: PairConvention,
}

/// Exact-versus-analytic comparison at one coupling scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRow {
    pub scale: f64,
    pub n1_exact: f64,
    pub n1_analytic: f64,
    pub relative_error: f64,
    /// `<Psi_W|Psi_W>` of the state built from the analytic `W`.
    pub norm_exact: f64,
    /// `exp(Tr W W^+)`.
    pub norm_formula: f64,
    /// Largest off-diagonal `|W_extracted - W_analytic|`.
    pub w_discrepancy: f64,
    pub w_trace: f64,
    pub unitarity_drift: f64,
    /// Closed collective formula at the same point, when applicable.
    pub n1_collective_formula: Option<f64>,
    pub w_extracted: Vec<Vec<[f64; 2]>>,
    pub w_analytic: Vec<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub params: CompareParams,
    pub rows: Vec<ScaleRow>,
    /// `log(e_k / e_{k+1}) / log(s_k / s_{k+1})` for consecutive scales.
    pub convergence_orders: Vec<f64>,
}

impl OracleReport {
    pub fn min_order(&self) -> Option<f64> {
        self.convergence_orders.iter().copied().reduce(f64::min)
    }

    pub fn errors_shrink(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].relative_error <= w[0].relative_error)
    }
}

fn to_pairs(m: &DMatrix<C64>) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect()
}

fn tanglemeter_for_schedule(sd: &SpectralDecomposition, sched: &DetuningSchedule, t: f64) -> Result<TanglemeterMatrix> {
    if let [seg] = sched.segments() {
        return analytic::tanglemeter_matrix(sd, KernelParams::new(seg.alpha, t)?);
    }
    let n = sd.n();
    let w: Vec<C64> = sd.eigenvalues.iter().map(|&v| schedule::mode_amplitude(v, sched, t)).collect::<Result<_>>()?;
    let c = &sd.eigenvectors;
    let values = DMatrix::from_fn(n, n, |i, j| (0..n).map(|m| w[m] * (c[(i, m)] * c[(j, m)])).sum());
    TanglemeterMatrix::new(values)
}

/// Runs the exact evolution against the analytic formulas at each coupling
/// scale and estimates the convergence order of the population error.
pub fn compare_report(params: &CompareParams, cfg: &PhysicalConfig) -> Result<OracleReport> {
    check_size(params.n)?;
    if params.scales.is_empty() {
        return Err(Error::Validation("at least one coupling scale is required".into()));
    }
    let sched = DetuningSchedule::new(&params.schedule)?;
    let base = params.coupling.build(params.n, cfg)?;
    let mut rows = Vec::with_capacity(params.scales.len());
    for &s in &params.scales {
        let v = base.scaled(s);
        let exact_v = v.scaled(params.pair_convention.factor());
        let evo = evolve_exact(&StateVector::vacuum(params.n)?, &exact_v, &sched, params.t, params.tol)?;
        let n1_exact = measure_populations(&evo.state)?.upper;

        let sd = eigen_decompose(&v)?;
        let constant = match sched.segments() {
            [seg] => Some(seg.alpha),
            _ => None,
        };
        let n1_analytic = match constant {
            Some(alpha) => analytic::population_analytic(&sd, KernelParams::new(alpha, params.t)?),
            None => schedule::population_schedule(&sd, &sched, params.t, params.tol.max(1e-12))?.n1,
        };
        let w = tanglemeter_for_schedule(&sd, &sched, params.t)?;
        let w_extracted = extract_w_estimate(&evo.state)?;
        let mut w_discrepancy = 0.0f64;
        for i in 0..params.n {
            for j in 0..params.n {
                if i != j {
                    w_discrepancy = w_discrepancy.max((w_extracted[(i, j)] - w.get(i, j)).norm());
                }
            }
        }
        let built = build_state_from_w(&w)?;
        let relative_error = if n1_exact == 0.0 && n1_analytic == 0.0 {
            0.0
        } else {
            (n1_exact - n1_analytic).abs() / n1_exact.abs().max(n1_analytic.abs())
        };
        let n1_collective_formula = match (&params.coupling, constant) {
            (CouplingSpec::Collective { nv }, Some(alpha)) => Some(analytic::population_collective(nv * s, alpha, params.t)),
            _ => None,
        };
        rows.push(ScaleRow {
            scale: s,
            n1_exact,
            n1_analytic,
            relative_error,
            norm_exact: built.norm_sqr(),
            norm_formula: w.weight().exp(),
            w_discrepancy,
            w_trace: w.weight(),
            unitarity_drift: evo.drift,
            n1_collective_formula,
            w_extracted: to_pairs(&w_extracted),
            w_analytic: to_pairs(w.values()),
        });
    }
    let convergence_orders = rows
        .windows(2)
        .filter(|w| w[0].relative_error > 0.0 && w[1].relative_error > 0.0)
        .map(|w| (w[0].relative_error / w[1].relative_error).ln() / (w[0].scale / w[1].scale).ln())
        .collect();
    Ok(OracleReport { params: params.clone(), rows, convergence_orders })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Level::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn encoding_round_trip() {
        for n in [1, 3, 5] {
            for idx in 0..dimension(n) {
                assert_eq!(encode(&decode(idx, n)), idx);
            }
        }
        assert_eq!(encode(&[Upper, Lower]), 2);
        assert_eq!(encode(&[Lower, Upper]), 6);
    }

    #[test]
    fn size_cap() {
        assert!(matches!(StateVector::zeros(13), Err(Error::TooLarge { .. })));
        assert!(StateVector::vacuum(MAX_QUTRITS).is_ok());
    }

    #[test]
    fn zero_tanglemeter_gives_vacuum() {
        let psi = build_state_from_w(&TanglemeterMatrix::zeros(3)).unwrap();
        assert_eq!(psi, StateVector::vacuum(3).unwrap());
    }

    #[test]
    fn single_pair_expansion() {
        let w12 = c(0.3, -0.2);
        let values = DMatrix::from_fn(2, 2, |i, j| if (i, j) == (0, 1) { w12 } else { ZERO });
        let psi = build_state_from_w(&TanglemeterMatrix::new(values).unwrap()).unwrap();
        assert_eq!(psi.amplitude(&[Middle, Middle]), c(1.0, 0.0));
        assert_eq!(psi.amplitude(&[Upper, Lower]), w12);
        assert!((psi.norm_sqr() - (1.0 + w12.norm_sqr())).abs() < 1e-15);
        let nonzero = psi.amplitudes().iter().filter(|a| **a != ZERO).count();
        assert_eq!(nonzero, 2);
    }

    #[test]
    fn diagonal_tanglemeter_is_annihilated() {
        let values = DMatrix::from_fn(3, 3, |i, j| if i == j { c(0.5, 0.1) } else { ZERO });
        let psi = build_state_from_w(&TanglemeterMatrix::new(values).unwrap()).unwrap();
        assert_eq!(psi, StateVector::vacuum(3).unwrap());
    }

    #[test]
    fn two_pair_term_for_four_sites() {
        // W_01 and W_23 only: exp gives 1 + A + A^2/2 with A^2/2 = W01 W23 |+,-,+,->
        let a = c(0.2, 0.1);
        let b = c(-0.1, 0.3);
        let values = DMatrix::from_fn(4, 4, |i, j| match (i, j) {
            (0, 1) => a,
            (2, 3) => b,
            _ => ZERO,
        });
        let psi = build_state_from_w(&TanglemeterMatrix::new(values).unwrap()).unwrap();
        assert!((psi.amplitude(&[Upper, Lower, Upper, Lower]) - a * b).norm() < 1e-15);
    }

    #[test]
    fn hamiltonian_on_vacuum_pair() {
        let v12 = 0.37;
        let v = CouplingMatrix::from_rows(&[vec![0.0, v12], vec![v12, 0.0]]).unwrap();
        let out = build_rwa_hamiltonian_apply(&StateVector::vacuum(2).unwrap(), &v, 0.9).unwrap();
        assert_eq!(out.amplitude(&[Upper, Lower]), c(v12, 0.0));
        assert_eq!(out.amplitude(&[Lower, Upper]), c(v12, 0.0));
        let support = out.amplitudes().iter().filter(|a| **a != ZERO).count();
        assert_eq!(support, 2);
    }

    #[test]
    fn hamiltonian_without_coupling_is_diagonal() {
        let v = CouplingMatrix::zeros(3);
        let psi = StateVector::basis(&[Upper, Middle, Lower]).unwrap();
        let out = build_rwa_hamiltonian_apply(&psi, &v, 0.7).unwrap();
        assert_eq!(out.amplitude(&[Upper, Middle, Lower]), c(1.4, 0.0));
        assert_eq!(out.norm_sqr(), 1.4 * 1.4);
    }

    #[test]
    fn dimension_mismatch() {
        let v = CouplingMatrix::zeros(3);
        assert!(matches!(
            build_rwa_hamiltonian_apply(&StateVector::vacuum(2).unwrap(), &v, 0.0),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn matrix_free_equals_dense_hamiltonian() {
        let g = media::sample_geometry(4, 2).unwrap();
        let v = media::coupling_from_geometry(&g, &PhysicalConfig::default()).unwrap().scaled(0.01);
        let dense = dense_hamiltonian(&v, 0.6).unwrap();
        assert!((dense.transpose() - &dense).norm() == 0.0);
        let h = Hamiltonian::new(&v, 0.6).unwrap();
        for idx in [0, 7, 40, 80] {
            let mut e = StateVector::zeros(4).unwrap();
            e.amps[idx] = c(1.0, 0.0);
            let col = h.apply(&e).unwrap();
            for k in 0..dimension(4) {
                assert!((col.amps[k].re - dense[(k, idx)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn evolution_at_zero_time_and_without_coupling() {
        let psi = StateVector::basis(&[Upper, Middle, Lower]).unwrap();
        let v = CouplingMatrix::zeros(3);
        let s = DetuningSchedule::constant(0.8, 2.0).unwrap();
        let e = evolve_exact(&psi, &v, &s, 0.0, 1e-9).unwrap();
        assert_eq!(e.state, psi);
        let e = evolve_exact(&psi, &v, &s, 2.0, 1e-9).unwrap();
        // two excitations, each picking up exp(-i alpha t)
        let expected = C64::new(0.0, -2.0 * 0.8 * 2.0).exp();
        assert!((e.state.amplitude(&[Upper, Middle, Lower]) - expected).norm() < 1e-13);
        let p = measure_populations(&e.state).unwrap();
        assert!((p.upper - 1.0).abs() < 1e-13 && (p.lower - 1.0).abs() < 1e-13);
    }

    #[test]
    fn populations_of_basis_states() {
        let p = measure_populations(&StateVector::vacuum(4).unwrap()).unwrap();
        assert_eq!((p.upper, p.middle, p.lower), (0.0, 4.0, 0.0));
        let p = measure_populations(&StateVector::basis(&[Upper, Lower]).unwrap()).unwrap();
        assert_eq!((p.upper, p.middle, p.lower), (1.0, 0.0, 1.0));
        assert!(matches!(measure_populations(&StateVector::zeros(2).unwrap()), Err(Error::ZeroNorm)));
    }

    #[test]
    fn small_w_population_is_trace() {
        let values = DMatrix::from_fn(3, 3, |i, j| if i == j { ZERO } else { c(1e-3 * (i + 1) as f64, -1e-3 * j as f64) });
        let w = TanglemeterMatrix::new(values).unwrap();
        let p = measure_populations(&build_state_from_w(&w).unwrap()).unwrap();
        assert!((p.upper - w.weight()).abs() < 1e-3 * w.weight());
    }

    #[test]
    fn extraction_inverts_construction() {
        let values = DMatrix::from_fn(2, 2, |i, j| if i == j { ZERO } else { c(0.1 + i as f64, -0.3 * j as f64) });
        let w = TanglemeterMatrix::new(values.clone()).unwrap();
        let est = extract_w_estimate(&build_state_from_w(&w).unwrap()).unwrap();
        assert!((est - values).norm() < 1e-15);
        let est = extract_w_estimate(&StateVector::vacuum(3).unwrap()).unwrap();
        assert_eq!(est.norm(), 0.0);
        let psi = StateVector::basis(&[Upper, Lower]).unwrap();
        assert!(matches!(extract_w_estimate(&psi), Err(Error::VanishingReference { .. })));
    }

    #[test]
    fn zero_coupling_report_has_no_error() {
        let params = CompareParams {
            n: 3,
            coupling: CouplingSpec::Collective { nv: 0.0 },
            schedule: vec![(1.0, 1.0)],
            t: 1.0,
            scales: vec![0.2, 0.1],
            tol: 1e-9,
            pair_convention: PairConvention::Verbatim,
        };
        let r = compare_report(&params, &PhysicalConfig::default()).unwrap();
        assert!(r.rows.iter().all(|row| row.relative_error == 0.0 && row.n1_exact == 0.0));
    }
}

//! Built-in invariant checks with measured defects.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{
    analytic::{self, KernelParams},
    error::Result,
    media::{self, ensemble_rng},
    model::{CouplingMatrix, DetuningSchedule, PhysicalConfig, Strictness},
    oracle::{self, Hamiltonian, StateVector},
    schedule,
};

/// Mode-amplitude implementation under test: `(V, params, root) -> w`.
pub type Kernel = dyn Fn(f64, KernelParams, C64) -> Result<C64> + Sync;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn check(name: &str, measured: Result<f64>, tolerance: f64) -> CheckResult {
    match measured {
        Ok(m) => CheckResult { name: name.into(), passed: m <= tolerance, measured: m, tolerance },
        Err(_) => CheckResult { name: name.into(), passed: false, measured: f64::NAN, tolerance },
    }
}

fn rel(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn random_symmetric(rng: &mut impl Rng, n: usize, scale: f64) -> Result<CouplingMatrix> {
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let x = scale * (2.0 * rng.random::<f64>() - 1.0);
            m[(i, j)] = x;
            m[(j, i)] = x;
        }
    }
    Ok(CouplingMatrix::validate(&m, Strictness::Strict)?.0)
}

fn random_state(rng: &mut impl Rng, n: usize) -> Result<StateVector> {
    let amps = (0..oracle::dimension(n))
        .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect();
    StateVector::from_amplitudes(n, amps)
}

/// Runs every check with the shipped mode kernel.
pub fn validate_suite(seed: u64) -> ValidationReport {
    validate_suite_with(seed, &analytic::kernel_w_with_root)
}

/// Runs every check, using `kernel` wherever a mode amplitude is evaluated
/// with an explicit root.
pub fn validate_suite_with(seed: u64, kernel: &Kernel) -> ValidationReport {
    let mut checks = Vec::new();

    checks.push(check(
        "resonance-identity",
        (|| {
            let mut worst = 0.0f64;
            for k in 0..=60 {
                let t = 3.0 * k as f64 / 60.0;
                let n1 = analytic::population_collective(1.0, -1.0, t);
                worst = worst.max(rel(n1, t.sinh().powi(2)));
            }
            Ok(worst)
        })(),
        1e-12,
    ));

    checks.push(check(
        "branch-invariance",
        (|| {
            let mut rng = ensemble_rng(seed, 1);
            let mut worst = 0.0f64;
            for _ in 0..200 {
                let v = 4.0 * rng.random::<f64>() - 2.0;
                let alpha = 6.0 * rng.random::<f64>() - 3.0;
                let p = KernelParams::new(alpha, 3.0 * rng.random::<f64>())?;
                let z = analytic::mode_frequency(v, alpha);
                let a = kernel(v, p, z)?;
                let b = kernel(v, p, -z)?;
                worst = worst.max((a - b).norm() / a.norm().max(1.0));
            }
            Ok(worst)
        })(),
        1e-12,
    ));

    checks.push(check(
        "population-composition",
        (|| {
            let mut rng = ensemble_rng(seed, 2);
            let mut worst = 0.0f64;
            for _ in 0..20 {
                let v = random_symmetric(&mut rng, 10, 0.1)?;
                let sd = media::eigen_decompose(&v)?;
                let p = KernelParams::new(2.0 * rng.random::<f64>() - 1.0, 2.0 * rng.random::<f64>())?;
                let direct = analytic::population_analytic(&sd, p);
                let composed = analytic::norm_and_population(&analytic::tanglemeter_matrix(&sd, p)?)?.n1;
                worst = worst.max(rel(direct, composed));
            }
            Ok(worst)
        })(),
        1e-10,
    ));

    checks.push(check(
        "eigen-reconstruction",
        (|| {
            let g = media::sample_geometry(60, seed)?;
            let v = media::coupling_from_geometry(&g, &PhysicalConfig::default())?;
            let sd = media::eigen_decompose(&v)?;
            let scale = v.frobenius_norm();
            Ok((sd.reconstruction_residual(&v) / scale)
                .max(sd.orthogonality_defect())
                .max(sd.trace().abs() / scale))
        })(),
        1e-10,
    ));

    checks.push(check(
        "hamiltonian-hermiticity",
        (|| {
            let mut rng = ensemble_rng(seed, 3);
            let v = random_symmetric(&mut rng, 4, 1.0)?;
            let h = Hamiltonian::new(&v, 0.7)?;
            let mut worst = 0.0f64;
            for _ in 0..5 {
                let a = random_state(&mut rng, 4)?;
                let b = random_state(&mut rng, 4)?;
                let lhs = a.inner(&h.apply(&b)?);
                let rhs = b.inner(&h.apply(&a)?).conj();
                worst = worst.max((lhs - rhs).norm() / lhs.norm().max(1.0));
            }
            Ok(worst)
        })(),
        1e-12,
    ));

    checks.push(check(
        "unitarity-drift",
        (|| {
            let mut rng = ensemble_rng(seed, 4);
            let v = random_symmetric(&mut rng, 4, 0.5)?;
            let sched = DetuningSchedule::new(&[(0.7, 1.0), (1.3, -0.5)])?;
            let psi = random_state(&mut rng, 4)?;
            Ok(oracle::evolve_exact(&psi, &v, &sched, 2.0, 1.0)?.drift)
        })(),
        1e-9,
    ));

    checks.push(check(
        "matrix-free-vs-dense",
        (|| {
            let mut rng = ensemble_rng(seed, 5);
            let v = random_symmetric(&mut rng, 3, 0.8)?;
            let sched = DetuningSchedule::new(&[(0.5, 0.3), (1.0, -1.1)])?;
            let psi = random_state(&mut rng, 3)?;
            let a = oracle::evolve_exact(&psi, &v, &sched, 1.5, 1e-9)?.state;
            let b = oracle::evolve_dense(&psi, &v, &sched, 1.5)?;
            let diff: f64 = a.amplitudes().iter().zip(b.amplitudes()).map(|(x, y)| (x - y).norm_sqr()).sum();
            Ok(diff.sqrt() / psi.norm_sqr().sqrt())
        })(),
        1e-9,
    ));

    checks.push(check(
        "basis-round-trip",
        (|| {
            let mut failures = 0usize;
            for n in 1..=8 {
                for idx in (0..oracle::dimension(n)).step_by(7) {
                    if oracle::encode(&oracle::decode(idx, n)) != idx {
                        failures += 1;
                    }
                }
            }
            Ok(failures as f64)
        })(),
        0.0,
    ));

    checks.push(check(
        "constant-schedule-vs-kernel",
        (|| {
            let mut rng = ensemble_rng(seed, 6);
            let mut worst = 0.0f64;
            for _ in 0..20 {
                let v = 0.6 * rng.random::<f64>() - 0.3;
                let alpha = 2.0 * rng.random::<f64>() - 1.0;
                let t = 3.0 * rng.random::<f64>();
                let sched = DetuningSchedule::constant(alpha, t)?;
                let a = schedule::mode_evolve(v, &sched, t, schedule::DEFAULT_TOLERANCE)?;
                let p = KernelParams::new(alpha, t)?;
                let b = kernel(v, p, analytic::mode_frequency(v, alpha))?;
                worst = worst.max((a - b).norm());
            }
            Ok(worst)
        })(),
        10.0 * schedule::DEFAULT_TOLERANCE,
    ));

    checks.push(check(
        "mobius-determinant",
        (|| {
            let sched = DetuningSchedule::new(&[(0.4, 1.0), (2.0, -0.3), (1.0, 0.0)])?;
            let mut worst = 0.0f64;
            for v in [-1.0, -0.2, 0.1, 0.9] {
                worst = worst.max((schedule::mode_map(v, &sched, 3.4).determinant() - 1.0).norm());
            }
            Ok(worst)
        })(),
        1e-12,
    ));

    checks.push(check(
        "thread-independence",
        (|| {
            let params = media::DensityParams::new(20, 8, seed);
            let cfg = PhysicalConfig::default();
            let one = rayon::ThreadPoolBuilder::new()
                .num_threads(1)
                .build()
                .map_err(|e| crate::Error::Config(e.to_string()))?
                .install(|| media::eigenvalue_density(&params, &cfg))?;
            let many = media::eigenvalue_density(&params, &cfg)?;
            Ok(if one == many { 0.0 } else { 1.0 })
        })(),
        0.0,
    ));

    ValidationReport { seed, checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let r = validate_suite(7);
        for c in &r.checks {
            assert!(c.passed, "{} measured {} > {}", c.name, c.measured, c.tolerance);
        }
    }

    #[test]
    fn suite_is_repeatable() {
        let a = serde_json::to_string(&validate_suite(3)).unwrap();
        let b = serde_json::to_string(&validate_suite(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn perturbed_kernel_fails_branch_check() {
        let mutant = |v: f64, p: KernelParams, z: C64| analytic::kernel_w_with_root(v, p, z).map(|w| w + 1e-6 * z);
        let r = validate_suite_with(7, &mutant);
        assert!(!r.check("branch-invariance").unwrap().passed);
        assert!(!r.all_passed());
    }
}

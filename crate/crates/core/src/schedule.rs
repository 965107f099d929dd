//! Mode dynamics under a piecewise-constant detuning `alpha(t)`.
//!
//! Each coupling mode obeys the Riccati equation
//!
//! ```text
//! dw/dt = -i [ V (1 + w)^2 + 2 alpha(t) w ],   w(0) = 0
//! ```
//!
//! which is solved two ways: adaptively with an embedded Runge-Kutta pair, and
//! in closed form by composing the linear-fractional maps of the constant
//! pieces. On a constant piece of length `tau` the map is `exp(tau K)` with
//! `K = -i [[V + alpha, V], [-V, -(V + alpha)]]`.

use std::f64::consts::TAU as TWO_PI;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{
    analytic::{sin_over_root, PopulationResult, Table},
    error::{Error, Result},
    media::EigenvalueHistogram,
    model::{DetuningSchedule, LinearGrid, SpectralDecomposition},
};

/// Default absolute tolerance on `w` for the adaptive integrator.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// `|w|` beyond which the Riccati solution is treated as running into a pole.
const BLOW_UP: f64 = 1e8;
const MAX_STEPS: usize = 10_000_000;

/// `w -> (a w + b) / (c w + d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobiusMap {
    pub a: C64,
    pub b: C64,
    pub c: C64,
    pub d: C64,
}

impl MobiusMap {
    pub fn identity() -> MobiusMap {
        let (one, zero) = (C64::new(1.0, 0.0), C64::new(0.0, 0.0));
        MobiusMap { a: one, b: zero, c: zero, d: one }
    }

    /// Propagator of one mode across a constant-detuning piece.
    pub fn segment(v: f64, alpha: f64, tau: f64) -> MobiusMap {
        let q = alpha * (alpha + 2.0 * v);
        let s = sin_over_root(q, tau);
        // cos(z tau), continued to imaginary z
        let c = if q >= 0.0 { (q.sqrt() * tau).cos() } else { ((-q).sqrt() * tau).cosh() };
        let i = C64::i();
        let shift = v + alpha;
        MobiusMap {
            a: C64::new(c, -shift * s),
            b: -i * v * s,
            c: i * v * s,
            d: C64::new(c, shift * s),
        }
    }

    /// `self` applied after `first`.
    pub fn after(&self, first: &MobiusMap) -> MobiusMap {
        MobiusMap {
            a: self.a * first.a + self.b * first.c,
            b: self.a * first.b + self.b * first.d,
            c: self.c * first.a + self.d * first.c,
            d: self.c * first.b + self.d * first.d,
        }
    }

    pub fn apply(&self, w: C64) -> C64 {
        (self.a * w + self.b) / (self.c * w + self.d)
    }

    pub fn determinant(&self) -> C64 {
        self.a * self.d - self.b * self.c
    }

    /// `|w|^2 / (1 - |w|^2)` for the image of `w = 0`.
    ///
    /// Every piece has unit determinant and the form `[[A, B], [B*, A*]]`, so
    /// `|D|^2 - |B|^2 = 1` and the population reduces to `|B|^2` with no
    /// cancellation even when `|w| -> 1`.
    pub fn population_from_vacuum(&self) -> f64 {
        self.b.norm_sqr() / self.determinant().norm()
    }
}

/// Closed-form map for a mode from time 0 to `t`.
pub fn mode_map(v: f64, sched: &DetuningSchedule, t: f64) -> MobiusMap {
    sched
        .pieces_until(t)
        .fold(MobiusMap::identity(), |acc, seg| MobiusMap::segment(v, seg.alpha, seg.duration).after(&acc))
}

/// Closed-form mode amplitude `w(t)` from `w(0) = 0`.
pub fn mode_amplitude(v: f64, sched: &DetuningSchedule, t: f64) -> Result<C64> {
    check_time(t)?;
    let w = mode_map(v, sched, t).apply(C64::new(0.0, 0.0));
    if !(w.re.is_finite() && w.im.is_finite()) {
        return Err(Error::Divergence { coupling: v, alpha: sched.alpha_at(t), t });
    }
    Ok(w)
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Validation(format!("evolution time must be finite and >= 0, got {t}")));
    }
    Ok(())
}

fn riccati(v: f64, alpha: f64, w: C64) -> C64 {
    let one_plus = 1.0 + w;
    -C64::i() * (v * one_plus * one_plus + 2.0 * alpha * w)
}

// Dormand-Prince 5(4) tableau
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Statistics of one adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IntegratorStats {
    pub accepted: usize,
    pub rejected: usize,
}

/// Integrates the Riccati equation across one constant piece, keeping the
/// local error below `tol_rate` per unit time.
fn integrate_piece(
    v: f64,
    alpha: f64,
    mut w: C64,
    t0: f64,
    duration: f64,
    tol_rate: f64,
    stats: &mut IntegratorStats,
) -> Result<C64> {
    let f = |w: C64| riccati(v, alpha, w);
    let rate = v.abs() * 4.0 + 2.0 * alpha.abs() + 1e-12;
    let mut h = (0.1 / rate).min(duration);
    let mut t = 0.0;
    let mut k1 = f(w);
    while t < duration {
        if stats.accepted + stats.rejected > MAX_STEPS {
            return Err(Error::Integrator { t: t0 + t, reason: "step budget exhausted".into() });
        }
        let last = t + h >= duration;
        if last {
            h = duration - t;
        }
        let k2 = f(w + h * A21 * k1);
        let k3 = f(w + h * (A31 * k1 + A32 * k2));
        let k4 = f(w + h * (A41 * k1 + A42 * k2 + A43 * k3));
        let k5 = f(w + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4));
        let k6 = f(w + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5));
        let next = w + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6);
        let k7 = f(next);
        let err = (h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)).norm() / (tol_rate * h);
        if !err.is_finite() || next.norm() > BLOW_UP {
            return Err(Error::Divergence { coupling: v, alpha, t: t0 + t + h });
        }
        if err <= 1.0 {
            stats.accepted += 1;
            t = if last { duration } else { t + h };
            w = next;
            k1 = k7;
        } else {
            stats.rejected += 1;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.25)).clamp(0.2, 5.0) };
        h *= factor;
        if h < 1e-14 * duration.max(1.0) {
            return Err(Error::Integrator { t: t0 + t, reason: format!("step size underflow (h = {h:e})") });
        }
    }
    Ok(w)
}

/// Adaptive Runge-Kutta solution `w(t)` with absolute tolerance `tol`.
pub fn mode_evolve_ode(v: f64, sched: &DetuningSchedule, t: f64, tol: f64) -> Result<(C64, IntegratorStats)> {
    check_time(t)?;
    if !(tol > 0.0) {
        return Err(Error::Validation(format!("tolerance must be positive, got {tol}")));
    }
    let mut stats = IntegratorStats::default();
    let mut w = C64::new(0.0, 0.0);
    let mut start = 0.0;
    let tol_rate = tol / t.max(f64::MIN_POSITIVE);
    for seg in sched.pieces_until(t) {
        w = integrate_piece(v, seg.alpha, w, start, seg.duration, tol_rate, &mut stats)?;
        start += seg.duration;
    }
    Ok((w, stats))
}

/// Mode amplitude by both routes; fails if they disagree by more than
/// `10 tol`. Returns the closed-form value.
pub fn mode_evolve(v: f64, sched: &DetuningSchedule, t: f64, tol: f64) -> Result<C64> {
    let closed = mode_amplitude(v, sched, t)?;
    let (ode, _) = mode_evolve_ode(v, sched, t, tol)?;
    let gap = (closed - ode).norm();
    if gap > 10.0 * tol {
        return Err(Error::Integrator {
            t,
            reason: format!("integrator and closed form disagree by {gap:e} (tol {tol:e})"),
        });
    }
    Ok(closed)
}

/// `w(t)` of one mode sampled on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeTrajectory {
    pub coupling: f64,
    pub times: Vec<f64>,
    pub w: Vec<C64>,
}

pub fn mode_trajectory(v: f64, sched: &DetuningSchedule, times: &[f64]) -> Result<ModeTrajectory> {
    let w = times.iter().map(|&t| mode_amplitude(v, sched, t)).collect::<Result<_>>()?;
    Ok(ModeTrajectory { coupling: v, times: times.to_vec(), w })
}

/// `|w|^2 / (1 - |w|^2)` for one mode under a schedule.
pub fn mode_population_schedule(v: f64, sched: &DetuningSchedule, t: f64) -> Result<f64> {
    check_time(t)?;
    let n = mode_map(v, sched, t).population_from_vacuum();
    if !n.is_finite() {
        return Err(Error::Divergence { coupling: v, alpha: sched.alpha_at(t), t });
    }
    Ok(n)
}

/// Population of the whole assembly from per-mode amplitudes.
pub fn population_schedule(
    sd: &SpectralDecomposition,
    sched: &DetuningSchedule,
    t: f64,
    tol: f64,
) -> Result<PopulationResult> {
    let weights: Vec<f64> = sd
        .eigenvalues
        .iter()
        .map(|&v| mode_evolve(v, sched, t, tol).map(|w| w.norm_sqr()))
        .collect::<Result<_>>()?;
    PopulationResult::from_mode_weights(&weights)
}

/// Thresholds used to flag the asymptotic regimes.
pub const WEAK_COUPLING: f64 = 0.1;
pub const SHORT_SWITCH: f64 = 0.3;
pub const LONG_SWITCH: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShortSwitchEstimate {
    pub n1: f64,
    /// `|V / alpha| <= 0.1`.
    pub weak_coupling: bool,
    /// `|alpha dt| <= 0.3`.
    pub short_switch: bool,
}

/// `n1 ~ (V / alpha)^2 sin^2((V + alpha)(t - dt))`, for weak coupling and a
/// short zero-detuning window.
pub fn asymptotic_small_dt(v: f64, alpha: f64, t: f64, delta_t: f64) -> Result<ShortSwitchEstimate> {
    if alpha == 0.0 {
        return Err(Error::Validation("short-switch estimate needs alpha != 0".into()));
    }
    let n1 = (v / alpha).powi(2) * ((v + alpha) * (t - delta_t)).sin().powi(2);
    Ok(ShortSwitchEstimate {
        n1,
        weak_coupling: (v / alpha).abs() <= WEAK_COUPLING,
        short_switch: (alpha * delta_t).abs() <= SHORT_SWITCH,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongSwitchEstimate {
    /// `V^2 dt^2 {1 + 2 [1 - cos V (t - t2)] [1 + cos alpha (t1 + t2)]}`.
    pub raw: f64,
    /// Same with the fast `alpha` bracket averaged out.
    pub averaged: f64,
    pub weak_coupling: bool,
    /// `|alpha dt| >= 10`.
    pub long_switch: bool,
}

/// Long zero-detuning window estimate, valid for `t >= t2`.
pub fn asymptotic_large_dt(v: f64, alpha: f64, t: f64, t1: f64, t2: f64) -> Result<LongSwitchEstimate> {
    if t < t2 || t2 < t1 {
        return Err(Error::Validation(format!("need t1 <= t2 <= t (got {t1}, {t2}, {t})")));
    }
    let dt = t2 - t1;
    let base = v * v * dt * dt;
    let beat = 1.0 - (v * (t - t2)).cos();
    Ok(LongSwitchEstimate {
        raw: base * (1.0 + 2.0 * beat * (1.0 + (alpha * (t1 + t2)).cos())),
        averaged: base * (1.0 + 2.0 * beat),
        weak_coupling: alpha != 0.0 && (v / alpha).abs() <= WEAK_COUPLING,
        long_switch: (alpha * dt).abs() >= LONG_SWITCH,
    })
}

/// Mean of `f` over one period `2 pi / |alpha|` centred on `t`, midpoint rule.
pub fn period_average(f: impl Fn(f64) -> Result<f64>, t: f64, alpha: f64, points: usize) -> Result<f64> {
    if alpha == 0.0 || points == 0 {
        return f(t);
    }
    let period = TWO_PI / alpha.abs();
    let h = period / points as f64;
    let mut acc = 0.0;
    for k in 0..points {
        acc += f(t - 0.5 * period + (k as f64 + 0.5) * h)?;
    }
    Ok(acc / points as f64)
}

/// Collective-mode population with the detuning switched off on `[t1, t2)`
/// divided by the unswitched population, both at time `t`.
pub fn beat_ratio(nv: f64, alpha: f64, t1: f64, t2: f64, t: f64, tol: f64) -> Result<f64> {
    if !(0.0 <= t1 && t1 <= t2 && t2 <= t) {
        return Err(Error::Validation(format!("need 0 <= t1 <= t2 <= t (got {t1}, {t2}, {t})")));
    }
    if t == 0.0 {
        return Err(Error::Degenerate("beat ratio at t = 0 is 0/0".into()));
    }
    let reference = DetuningSchedule::constant(alpha, t)?;
    let den = mode_population_from_amplitude(mode_evolve(nv, &reference, t, tol)?);
    if !(den > 1e-300) {
        return Err(Error::Degenerate(format!("unswitched population vanishes (NV = {nv}, t = {t})")));
    }
    if t2 == t1 {
        return Ok(1.0);
    }
    let switched = DetuningSchedule::switch(alpha, t1, t2, t)?;
    let num = mode_population_from_amplitude(mode_evolve(nv, &switched, t, tol)?);
    Ok(num / den)
}

fn mode_population_from_amplitude(w: C64) -> f64 {
    let s = w.norm_sqr();
    s / (1.0 - s)
}

/// Ratio map over `(t1, t2 - t1)` at `t = t2 + t_offset`.
pub fn beat_map(
    nv: f64,
    alpha: f64,
    t1_grid: &LinearGrid,
    dt_grid: &LinearGrid,
    t_offset: f64,
    tol: f64,
) -> Result<Table> {
    let points: Vec<(f64, f64)> = t1_grid
        .values()
        .into_iter()
        .flat_map(|t1| dt_grid.values().into_iter().map(move |dt| (t1, dt)))
        .collect();
    let rows = points
        .par_iter()
        .map(|&(t1, dt)| {
            let t2 = t1 + dt;
            beat_ratio(nv, alpha, t1, t2, t2 + t_offset, tol).map(|r| vec![t1, dt, r])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = Table::new(&["t1", "t2_minus_t1", "ratio"]);
    table.rows = rows;
    Ok(table)
}

/// How a density-weighted integral is normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DensityNormalization {
    /// `int f g dV`.
    #[default]
    Total,
    /// `int f g dV / int g dV`.
    PerMode,
}

/// `int f(V) g(V) dV` over the histogram support. The density is constant on
/// each bin and `f` is integrated across the bin with the trapezoidal rule.
pub fn average_over_density(
    observable: impl Fn(f64) -> Result<f64> + Sync,
    density: &EigenvalueHistogram,
    normalization: DensityNormalization,
) -> Result<f64> {
    if density.counts.is_empty() {
        return Err(Error::Validation("density histogram has no bins".into()));
    }
    let at_edges: Vec<f64> = density.bin_edges.par_iter().map(|&v| observable(v)).collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut mass = 0.0;
    for (k, count) in density.counts.iter().enumerate() {
        total += count * 0.5 * (at_edges[k] + at_edges[k + 1]);
        mass += count;
    }
    match normalization {
        DensityNormalization::Total => Ok(total),
        DensityNormalization::PerMode if mass > 0.0 => Ok(total / mass),
        DensityNormalization::PerMode => Err(Error::Validation("density has zero mass".into())),
    }
}

/// Coupling entering the quantum-beat curve.
#[derive(Debug, Clone)]
pub enum BeatCoupling<'a> {
    /// A single collective mode.
    Single(f64),
    /// Average over a mode density with `V = v_scale * bin value`.
    Density { histogram: &'a EigenvalueHistogram, v_scale: f64, normalization: DensityNormalization },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeatCurveSpec {
    pub alpha: f64,
    pub t1: f64,
    pub t2: f64,
    /// Average over one `2 pi / alpha` period.
    pub averaged: bool,
}

/// Points per period used by the rapid-oscillation average.
pub const AVERAGING_POINTS: usize = 64;

/// Population after the detuning is restored, as a function of `t - t2`.
pub fn beat_curve(coupling: &BeatCoupling<'_>, spec: &BeatCurveSpec, tau_grid: &LinearGrid) -> Result<Table> {
    let (t1, t2) = (spec.t1, spec.t2);
    if !(0.0 <= t1 && t1 <= t2) || tau_grid.start < 0.0 {
        return Err(Error::Validation(format!("need 0 <= t1 <= t2 and t - t2 >= 0 (t1 = {t1}, t2 = {t2})")));
    }
    let pad = if spec.averaged && spec.alpha != 0.0 { TWO_PI / spec.alpha.abs() } else { 0.0 };
    let t_end = t2 + tau_grid.stop + pad;
    let sched = if t_end > 0.0 {
        DetuningSchedule::switch(spec.alpha, t1, t2, t_end.max(t2))?
    } else {
        return Err(Error::Validation("beat curve spans zero time".into()));
    };
    let single = |v: f64, t: f64| -> Result<f64> { mode_population_schedule(v, &sched, t.max(0.0)) };
    let at = |v: f64, tau: f64| -> Result<f64> {
        let t = t2 + tau;
        if spec.averaged {
            period_average(|s| single(v, s), t, spec.alpha, AVERAGING_POINTS)
        } else {
            single(v, t)
        }
    };
    let taus = tau_grid.values();
    let rows = taus
        .par_iter()
        .map(|&tau| {
            let n1 = match coupling {
                BeatCoupling::Single(v) => at(*v, tau)?,
                BeatCoupling::Density { histogram, v_scale, normalization } => {
                    average_over_density(|x| at(v_scale * x, tau), histogram, *normalization)?
                }
            };
            Ok(vec![tau, n1])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = Table::new(&["t_minus_t2", "n1"]);
    table.rows = rows;
    Ok(table)
}

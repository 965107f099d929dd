//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fails.

use std::{
    fs,
    path::{Path, PathBuf},
    process::Command,
    time::{Duration, Instant},
};

use nalgebra::DMatrix;
use qutrit_core::{
    analytic::{self, kernel_w, kernel_w_with_root, mode_frequency, KernelParams},
    media::{self, ensemble_rng},
    oracle::{build_state_from_w, compare_report, CompareParams, CouplingSpec, PairConvention},
    schedule::{asymptotic_large_dt, asymptotic_small_dt, mode_evolve, period_average, DEFAULT_TOLERANCE},
    Complex64 as C64, CouplingMatrix, DetuningSchedule, PhysicalConfig, TanglemeterMatrix,
};
use rand::Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_qutrit")
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_cli(args: &[&str], threads: Option<usize>) -> Result<(), String> {
    let mut cmd = Command::new(bin());
    if let Some(t) = threads {
        cmd.arg("--threads").arg(t.to_string());
    }
    let out = cmd.args(args).env_remove("QUTRIT_SEED").output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{:?} exited {:?}: {}", args, out.status.code(), String::from_utf8_lossy(&out.stderr)))
    }
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    (header, rows)
}

fn rel(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

fn criterion_1() -> Outcome {
    let mut worst = 0.0f64;
    for nv in [0.1, 0.3, 1.0, 2.5] {
        for k in 0..=300 {
            let x = 3.0 * k as f64 / 300.0;
            let t = x / nv;
            worst = worst.max(rel(analytic::population_collective(nv, -nv, t), x.sinh().powi(2)));
        }
    }
    outcome(worst <= 1e-12, format!("max relative deviation from sinh^2 {worst:.2e} (tol 1e-12)"))
}

fn criterion_2() -> Outcome {
    let dir = scratch("c2");
    let csv = dir.join("collective.csv");
    let args = ["collective", "--t", "3", "--v-range", "0:2:81", "--alpha-range", "-3:1:161", "--out", csv.to_str().unwrap()];
    if let Err(e) = run_cli(&args, None) {
        return outcome(false, e);
    }
    let (_, rows) = read_csv(&csv);
    let cell = 4.0 / 160.0;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for vk in 0..81 {
        let v = 2.0 * vk as f64 / 80.0;
        if v < 0.5 {
            continue;
        }
        let slice: Vec<&Vec<f64>> = rows.iter().filter(|r| (r[0] - v).abs() < 1e-9).collect();
        let best = slice.iter().max_by(|a, b| a[2].total_cmp(&b[2])).unwrap();
        worst = worst.max((best[1] + v).abs());
        checked += 1;
    }
    outcome(
        worst <= cell + 1e-9 && checked == 61,
        format!("{checked} v-slices, max |argmax alpha + v| = {worst:.4} (cell {cell})"),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ensemble_rng(3, 0);
    let mut worst_pop = 0.0f64;
    let mut worst_branch = 0.0f64;
    for _ in 0..100 {
        let n = 10;
        let mut rows = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let x = 0.2 * (2.0 * rng.random::<f64>() - 1.0);
                rows[i][j] = x;
                rows[j][i] = x;
            }
        }
        let v = CouplingMatrix::from_rows(&rows).unwrap();
        let sd = media::eigen_decompose(&v).unwrap();
        let p = KernelParams::new(4.0 * rng.random::<f64>() - 2.0, 2.0 * rng.random::<f64>()).unwrap();
        let direct = analytic::population_analytic(&sd, p);
        let w = analytic::tanglemeter_matrix(&sd, p).unwrap();
        match analytic::norm_and_population(&w) {
            Ok(r) => worst_pop = worst_pop.max(rel(direct, r.n1)),
            Err(e) => return outcome(false, format!("composition failed: {e}")),
        }
        for &vm in &sd.eigenvalues {
            let z = mode_frequency(vm, p.alpha);
            let a = kernel_w_with_root(vm, p, z).unwrap();
            let b = kernel_w_with_root(vm, p, -z).unwrap();
            worst_branch = worst_branch.max((a - b).norm() / a.norm().max(1e-300).max(1.0));
        }
    }
    outcome(
        worst_pop <= 1e-10 && worst_branch <= 1e-12,
        format!("population composition {worst_pop:.2e} (tol 1e-10), branch flip {worst_branch:.2e} (tol 1e-12)"),
    )
}

fn criterion_4() -> Outcome {
    let dir = scratch("c4");
    let csv = dir.join("spectrum.csv");
    if let Err(e) = run_cli(&["spectrum", "--n", "300", "--samples", "100", "--out", csv.to_str().unwrap()], None) {
        return outcome(false, e);
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("spectrum.manifest.json")).unwrap()).unwrap();
    let s = &manifest["summary"];
    let skew = s["skewness"].as_f64().unwrap();
    let se = s["skewness_standard_error"].as_f64().unwrap();
    let trace = s["max_trace_defect"].as_f64().unwrap();
    let (_, rows) = read_csv(&csv);
    let nearest = |v: f64| rows.iter().min_by(|a, b| (a[0] - v).abs().total_cmp(&(b[0] - v).abs())).unwrap()[1];
    let mut by_distance: Vec<&Vec<f64>> = rows.iter().collect();
    by_distance.sort_by(|a, b| a[0].abs().total_cmp(&b[0].abs()));
    let peak = by_distance.iter().take(3).map(|r| r[1]).fold(f64::INFINITY, f64::min);
    let wing = 0.5 * (nearest(5.0) + nearest(-5.0));
    let passed = skew.abs() <= 3.0 * se && trace <= 1e-8 && peak >= 5.0 * wing;
    outcome(
        passed,
        format!(
            "skewness {skew:.2e} (3 SE = {:.2e}), trace defect {trace:.1e}, inner/|V|=5 density {peak:.1}/{wing:.3} = {:.0}x",
            3.0 * se,
            peak / wing
        ),
    )
}

fn criterion_5() -> Outcome {
    let cfg = PhysicalConfig::default();
    let params = CompareParams {
        n: 4,
        coupling: CouplingSpec::Geometry { seed: 1 },
        schedule: vec![(1.0, 1.0)],
        t: 1.0,
        scales: vec![0.2, 0.1, 0.05],
        tol: 1e-9,
        pair_convention: PairConvention::Verbatim,
    };
    let r = match compare_report(&params, &cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let errors: Vec<f64> = r.rows.iter().map(|x| x.relative_error).collect();
    let order = r.min_order().unwrap_or(f64::NAN);
    let (nv, t) = (0.1, 3.0);
    let window = (nv * t as f64).sinh().powi(2);
    let collective = CompareParams {
        n: 4,
        coupling: CouplingSpec::Collective { nv },
        schedule: vec![(t, -nv)],
        t,
        scales: vec![1.0],
        tol: 1e-9,
        pair_convention: PairConvention::Verbatim,
    };
    let c = match compare_report(&collective, &cfg) {
        Ok(c) => c.rows[0].relative_error,
        Err(e) => return outcome(false, e.to_string()),
    };
    outcome(
        r.errors_shrink() && order >= 1.0 && window <= 0.05 * 4.0 && c <= 0.1,
        format!(
            "errors {:?}, min order {order:.3}; collective NV={nv} t={t} (sinh^2 = {window:.3}) error {:.2}%",
            errors.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>(),
            100.0 * c
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ensemble_rng(6, 0);
    let n = 3;
    let base = DMatrix::from_fn(n, n, |_, _| C64::new(0.0, 0.0));
    let mut shape = base.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let z = C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            shape[(i, j)] = z;
            shape[(j, i)] = z;
        }
    }
    let norm = shape.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let defect = |s: f64| {
        let w = TanglemeterMatrix::new(shape.map(|z| z * (s / norm))).unwrap();
        let exact = build_state_from_w(&w).unwrap().norm_sqr();
        (exact - w.weight().exp()).abs() / exact
    };
    let mut orders = Vec::new();
    for s in [0.1, 0.05, 0.025] {
        orders.push((defect(s) / defect(s / 2.0)).log2());
    }
    let min = orders.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(min >= 4.0 - 1e-2, format!("orders {:?} (need >= 4 within 0.01)", orders.iter().map(|o| format!("{o:.3}")).collect::<Vec<_>>()))
}

fn mode_pop(v: f64, sched: &DetuningSchedule, t: f64) -> f64 {
    let w = mode_evolve(v, sched, t, DEFAULT_TOLERANCE).unwrap().norm_sqr();
    w / (1.0 - w)
}

fn criterion_7a() -> Outcome {
    let (alpha, v): (f64, f64) = (1.0, 0.01);
    let dt = 0.1 / alpha;
    let scale = (v / alpha).powi(2);
    let mut worst = 0.0f64;
    for k in 0..=200 {
        let x = std::f64::consts::PI * k as f64 / 200.0;
        let t = dt + x / (v + alpha);
        let sched = DetuningSchedule::new(&[(dt, 0.0), (t - dt + 1.0, alpha)]).unwrap();
        let n = mode_pop(v, &sched, t);
        let n13 = asymptotic_small_dt(v, alpha, t, dt).unwrap().n1;
        worst = worst.max((n - n13).abs() / scale);
    }
    outcome(worst <= 0.05, format!("max |n - short-switch estimate| / (V/alpha)^2 = {:.2}% (tol 5%)", 100.0 * worst))
}

fn criterion_7b() -> Outcome {
    let (alpha, v): (f64, f64) = (1.0, 0.01);
    let (t1, dt) = (1.0, 20.0 / alpha);
    let t2 = t1 + dt;
    let horizon = std::f64::consts::PI / v;
    let sched = DetuningSchedule::switch(alpha, t1, t2, t2 + horizon + 10.0).unwrap();
    let mut worst = 0.0f64;
    for k in 1..=40 {
        let t = t2 + 10.0 + (horizon - 10.0) * k as f64 / 40.0;
        let n = period_average(|s| Ok(mode_pop(v, &sched, s)), t, alpha, 64).unwrap();
        let estimate = asymptotic_large_dt(v, alpha, t, t1, t2).unwrap().averaged;
        worst = worst.max(rel(n, estimate));
    }
    outcome(worst <= 0.1, format!("max relative deviation from averaged long-switch estimate {:.1}% (tol 10%)", 100.0 * worst))
}

fn criterion_7c() -> Outcome {
    let mut worst = 0.0f64;
    for &(v, alpha) in &[(0.3, 1.0), (-0.2, 0.5), (0.5, -0.5), (0.1, 0.0), (0.4, -2.0)] {
        for k in 1..=20 {
            let t = 0.2 * k as f64;
            let sched = DetuningSchedule::constant(alpha, t).unwrap();
            let a = mode_evolve(v, &sched, t, DEFAULT_TOLERANCE).unwrap();
            let b = kernel_w(v, KernelParams::new(alpha, t).unwrap()).unwrap();
            worst = worst.max((a - b).norm());
        }
    }
    let tol = 10.0 * DEFAULT_TOLERANCE;
    outcome(worst <= tol, format!("max |w_schedule - w_closed| {worst:.2e} (tol {tol:.0e})"))
}

fn beats_args(csv: &Path) -> Vec<String> {
    ["beats", "--nv", "0.3", "--alpha", "-0.3", "--t-offset", "0.9", "--t1-range", "0:10:41", "--dt-range", "0:10:41", "--out"]
        .iter()
        .map(|s| s.to_string())
        .chain([csv.display().to_string()])
        .collect()
}

fn criterion_8() -> Outcome {
    let dir = scratch("c8");
    let csv = dir.join("beats.csv");
    let args = beats_args(&csv);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    if let Err(e) = run_cli(&args, None) {
        return outcome(false, e);
    }
    let (_, rows) = read_csv(&csv);
    let axis = rows.iter().filter(|r| r[1] == 0.0).map(|r| (r[2] - 1.0).abs()).fold(0.0, f64::max);
    let non_monotone = |column: usize| {
        (0..41)
            .filter(|&k| {
                let x = 10.0 * k as f64 / 40.0;
                let slice: Vec<f64> = rows.iter().filter(|r| (r[column] - x).abs() < 1e-9).map(|r| r[2]).collect();
                let diffs: Vec<f64> = slice.windows(2).map(|w| w[1] - w[0]).filter(|d| d.abs() > 1e-12).collect();
                diffs.windows(2).any(|d| d[0].signum() != d[1].signum())
            })
            .count()
    };
    let along_dt = non_monotone(0);
    let along_t1 = non_monotone(1);
    outcome(
        axis <= 1e-9 && along_dt > 0,
        format!(
            "|ratio - 1| on t2 = t1 axis {axis:.1e}; non-monotone fixed-t1 slices {along_dt}/41 (fixed-dt slices {along_t1}/41)"
        ),
    )
}

fn criterion_9() -> Outcome {
    let dir = scratch("c9");
    let mut mismatches = Vec::new();
    let jobs: Vec<(&str, Vec<String>)> = vec![
        ("collective", vec!["collective".into(), "--t".into(), "3".into()]),
        ("spectrum", ["spectrum", "--n", "300", "--samples", "100", "--seed", "42"].map(String::from).to_vec()),
        ("random-media", ["random-media", "--n", "60", "--samples", "8", "--scaled-axes", "--seed", "42"].map(String::from).to_vec()),
        ("oracle", ["oracle", "--n", "4", "--coupling", "geometry:1", "--alpha", "1", "--t", "1"].map(String::from).to_vec()),
        ("beats", beats_args(Path::new(""))[..11].to_vec()),
    ];
    for (name, base) in &jobs {
        let mut outputs = Vec::new();
        for threads in [Some(1), Some(4), None, Some(1)] {
            let csv = dir.join(format!("{name}-{}.csv", threads.map_or("default".to_string(), |t| t.to_string())));
            let mut args: Vec<&str> = base.iter().map(String::as_str).collect();
            let out = csv.display().to_string();
            args.extend(["--out", out.as_str()]);
            if let Err(e) = run_cli(&args, threads) {
                return outcome(false, e);
            }
            outputs.push(fs::read(&csv).unwrap());
        }
        if outputs.iter().any(|o| o != &outputs[0]) {
            mismatches.push(*name);
        }
    }
    outcome(
        mismatches.is_empty(),
        format!("{} commands x threads {{1, 4, default, 1}}; mismatching: {:?}", jobs.len(), mismatches),
    )
}

fn main() {
    let criteria: Vec<(&str, Duration, fn() -> Outcome)> = vec![
        ("1", Duration::from_secs(1), criterion_1),
        ("2", Duration::from_secs(5), criterion_2),
        ("3", Duration::from_secs(10), criterion_3),
        ("4", Duration::from_secs(300), criterion_4),
        ("5", Duration::from_secs(120), criterion_5),
        ("6", Duration::from_secs(30), criterion_6),
        ("7a", Duration::from_secs(60), criterion_7a),
        ("7b", Duration::from_secs(60), criterion_7b),
        ("7c", Duration::from_secs(60), criterion_7c),
        ("8", Duration::from_secs(60), criterion_8),
        ("9", Duration::from_secs(600), criterion_9),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    for (name, budget, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| x == name) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        let elapsed = start.elapsed();
        let passed = o.passed && elapsed <= budget;
        println!(
            "criterion {name:<3} {}  {}  [{:.2} s, budget {} s]",
            if passed { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
        if !passed {
            failed.push(name);
        }
    }
    if !failed.is_empty() {
        println!("acceptance: {} failing: {}", failed.len(), failed.join(", "));
        std::process::exit(1);
    }
    println!("acceptance: all criteria pass");
}

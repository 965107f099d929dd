use std::path::{Path, PathBuf};

use chrono::Utc;
use serde_json::json;

use qutrit_core::{
    analytic::{self, EnsembleSpec},
    media::{self, FitGrouping},
    oracle::{self, CompareParams, CouplingSpec, PairConvention},
    schedule::{self, BeatCoupling, BeatCurveSpec, DensityNormalization},
    validation, DensityParams, EigenvalueHistogram, EnergyUnits, LinearGrid, RunConfig, Table,
};

use crate::{
    output::{emit_table, manifest_path, sibling, write_file, RunManifest},
    BeatsArgs, Cli, CliError, CollectiveArgs, Command, Common, OracleArgs, RandomMediaArgs, SpectrumArgs, ValidateArgs,
    DEFAULT_SEED, SEED_ENV,
};

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Collective(a) => collective(a),
        Command::Spectrum(a) => spectrum(a),
        Command::RandomMedia(a) => random_media(a),
        Command::Beats(a) => beats(a),
        Command::Oracle(a) => oracle_cmd(a),
        Command::Validate(a) => validate(a),
    }
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    match &common.config {
        Some(path) => Ok(RunConfig::from_path(path)?),
        None => Ok(RunConfig::default()),
    }
}

fn resolve_seed(flag: Option<u64>, cfg: &RunConfig) -> Result<u64, CliError> {
    if let Some(s) = flag.or(cfg.seed) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| CliError::Usage(format!("{SEED_ENV} is not an unsigned integer: {v:?}"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn grid(text: &str, name: &str) -> Result<LinearGrid, CliError> {
    text.parse().map_err(|e: qutrit_core::Error| CliError::Usage(format!("--{name}: {e}")))
}

fn parse_pair(text: &str, name: &str) -> Result<(f64, f64), CliError> {
    let bad = || CliError::Usage(format!("--{name} expects lo:hi, got {text:?}"));
    let (a, b) = text.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn parse_schedule(text: &str) -> Result<Vec<(f64, f64)>, CliError> {
    text.split(',').map(|piece| parse_pair(piece, "schedule")).collect()
}

fn parse_list(text: &str, name: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|x| x.trim().parse().map_err(|_| CliError::Usage(format!("--{name}: bad number {x:?}"))))
        .collect()
}

fn output_path(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn finish(manifest: RunManifest, csv: &Path) -> Result<(), CliError> {
    let m = manifest.write(&manifest_path(csv))?;
    println!("wrote {} ({})", csv.display(), m.display());
    Ok(())
}

fn emit(table: &Table, path: &Path, manifest: &mut RunManifest) -> Result<(), CliError> {
    manifest.outputs.push(emit_table(&table.header, &table.rows, path)?);
    Ok(())
}

fn collective(a: CollectiveArgs) -> Result<(), CliError> {
    let started = Utc::now();
    let cfg = load_config(&a.common)?;
    let t = a.t.or(cfg.t).unwrap_or(3.0);
    let v = grid(&a.v_range.or(cfg.v_range).unwrap_or_else(|| "0:2:81".into()), "v-range")?;
    let alpha = grid(&a.alpha_range.or(cfg.alpha_range).unwrap_or_else(|| "-3:1:161".into()), "alpha-range")?;
    let table = analytic::sweep_collective(&v, &alpha, t)?;
    let path = output_path(&a.common, "collective.csv");
    let params = json!({ "t": t, "v_range": v.to_string(), "alpha_range": alpha.to_string() });
    let mut manifest = RunManifest::new("collective", params, None, started);
    emit(&table, &path, &mut manifest)?;
    finish(manifest, &path)
}

fn spectrum(a: SpectrumArgs) -> Result<(), CliError> {
    let started = Utc::now();
    let cfg = load_config(&a.common)?;
    let seed = resolve_seed(a.common.seed, &cfg)?;
    let mut phys_cfg = cfg.clone();
    phys_cfg.mu = a.mu.or(cfg.mu);
    phys_cfg.angular_coefficient = a.angular_coefficient.or(cfg.angular_coefficient);
    let phys = phys_cfg.physical()?;
    let n = a.n.or(cfg.n).unwrap_or(300);
    let samples = a.samples.or(cfg.samples).unwrap_or(100);
    let raw = a.raw || cfg.raw.unwrap_or(false);
    let mut p = DensityParams::new(n, samples, seed);
    p.bins = a.bins.or(cfg.bins).unwrap_or(p.bins);
    p.range = match a.range {
        Some(r) => parse_pair(&r, "range")?,
        None => cfg.range.unwrap_or(p.range),
    };
    p.units = if raw { EnergyUnits::Raw } else { EnergyUnits::Cooperative };
    let grouping = match a.fit.or(cfg.fit).as_deref() {
        None | Some("denominator") => FitGrouping::Denominator,
        Some("literal") => FitGrouping::Literal,
        Some(other) => return Err(CliError::Usage(format!("--fit expects denominator or literal, got {other:?}"))),
    };
    let hist = media::eigenvalue_density(&p, &phys)?;
    let mut table = Table::new(&["bin_center", "density", "fit_value"]);
    for (c, d) in hist.bin_centers().into_iter().zip(hist.density()) {
        let fit = media::heuristic_fit_density(c, n, grouping).unwrap_or(f64::NAN);
        table.rows.push(vec![c, d, fit]);
    }
    let path = output_path(&a.common, "spectrum.csv");
    let params = json!({
        "n": n, "samples": samples, "bins": p.bins, "range": [p.range.0, p.range.1],
        "units": if raw { "raw" } else { "cooperative" }, "fit": format!("{grouping:?}").to_lowercase(),
        "mu": phys.mu, "angular_coefficient": phys.angular_coefficient,
    });
    let mut manifest = RunManifest::new("spectrum", params, Some(seed), started);
    emit(&table, &path, &mut manifest)?;
    manifest.summary = Some(json!({
        "energy_scale": hist.energy_scale,
        "skewness": hist.moments.skewness(),
        "skewness_standard_error": hist.moments.skewness_standard_error(),
        "max_trace_defect": hist.max_trace_defect,
        "underflow_per_matrix": hist.underflow,
        "overflow_per_matrix": hist.overflow,
    }));
    finish(manifest, &path)
}

fn random_media(a: RandomMediaArgs) -> Result<(), CliError> {
    let started = Utc::now();
    let cfg = load_config(&a.common)?;
    let seed = resolve_seed(a.common.seed, &cfg)?;
    let mut phys_cfg = cfg.clone();
    phys_cfg.mu = a.mu.or(cfg.mu);
    phys_cfg.angular_coefficient = a.angular_coefficient.or(cfg.angular_coefficient);
    let phys = phys_cfg.physical()?;
    let spec = EnsembleSpec {
        n_dipoles: a.n.or(cfg.n).unwrap_or(100),
        n_samples: a.samples.or(cfg.samples).unwrap_or(20),
        seed,
        scaled_axes: a.scaled_axes || cfg.scaled_axes.unwrap_or(false),
    };
    let t = grid(&a.t_range.or(cfg.t_range).unwrap_or_else(|| "0:3:61".into()), "t-range")?;
    let alpha = grid(&a.alpha_range.or(cfg.alpha_range).unwrap_or_else(|| "-3:3:61".into()), "alpha-range")?;
    let table = analytic::sweep_ensemble(&spec, &phys, &t, &alpha)?;
    let path = output_path(&a.common, "random-media.csv");
    let params = json!({
        "n": spec.n_dipoles, "samples": spec.n_samples, "scaled_axes": spec.scaled_axes,
        "t_range": t.to_string(), "alpha_range": alpha.to_string(),
        "mu": phys.mu, "angular_coefficient": phys.angular_coefficient,
    });
    let mut manifest = RunManifest::new("random-media", params, Some(seed), started);
    emit(&table, &path, &mut manifest)?;
    finish(manifest, &path)
}

fn read_density(path: &Path) -> Result<EigenvalueHistogram, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').map(str::trim).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| CliError::Usage(format!("{}: missing column {name:?}", path.display())))
    };
    let (ci, di) = (col("bin_center")?, col("density")?);
    let mut centers = Vec::new();
    let mut density = Vec::new();
    for (k, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cells: Vec<&str> = line.split(',').collect();
        let get = |i: usize| -> Result<f64, CliError> {
            cells
                .get(i)
                .and_then(|c| c.trim().parse().ok())
                .ok_or_else(|| CliError::Usage(format!("{}: bad value on data line {}", path.display(), k + 1)))
        };
        centers.push(get(ci)?);
        density.push(get(di)?);
    }
    Ok(EigenvalueHistogram::from_density(&centers, &density, 0)?)
}

fn beats(a: BeatsArgs) -> Result<(), CliError> {
    let started = Utc::now();
    let cfg = load_config(&a.common)?;
    let nv = a.nv.or(cfg.nv).unwrap_or(0.3);
    let alpha = a.alpha.or(cfg.alpha).unwrap_or(-0.3);
    let tol = a.tol.or(cfg.tol).unwrap_or(schedule::DEFAULT_TOLERANCE);
    let t2 = a.t2.or(cfg.t2);
    let path = output_path(&a.common, "beats.csv");
    let (table, params) = match t2 {
        None => {
            let t1 = grid(&a.t1_range.or(cfg.t1_range).unwrap_or_else(|| "0:10:41".into()), "t1-range")?;
            let dt = grid(&a.dt_range.or(cfg.dt_range).unwrap_or_else(|| "0:10:41".into()), "dt-range")?;
            let offset = a.t_offset.or(cfg.t_offset).unwrap_or(0.9);
            let table = schedule::beat_map(nv, alpha, &t1, &dt, offset, tol)?;
            let params = json!({
                "mode": "map", "nv": nv, "alpha": alpha, "t1_range": t1.to_string(),
                "dt_range": dt.to_string(), "t_offset": offset, "tol": tol,
            });
            (table, params)
        }
        Some(t2) => {
            let t1 = a.t1.or(cfg.t1).unwrap_or(0.0);
            let tau = grid(&a.tau_range.or(cfg.tau_range).unwrap_or_else(|| "0:20:201".into()), "tau-range")?;
            let averaged = a.averaged || cfg.averaged.unwrap_or(false);
            let spec = BeatCurveSpec { alpha, t1, t2, averaged };
            let density_file = a.density_file.or(cfg.density_file.map(PathBuf::from));
            let normalization = match a.normalization.or(cfg.normalization).as_deref() {
                None | Some("per-mode") => DensityNormalization::PerMode,
                Some("total") => DensityNormalization::Total,
                Some(other) => {
                    return Err(CliError::Usage(format!("--normalization expects total or per-mode, got {other:?}")))
                }
            };
            let v_scale = a.v_scale.or(cfg.v_scale).unwrap_or(1.0);
            let table = match &density_file {
                None => schedule::beat_curve(&BeatCoupling::Single(nv), &spec, &tau)?,
                Some(file) => {
                    let histogram = read_density(file)?;
                    schedule::beat_curve(&BeatCoupling::Density { histogram: &histogram, v_scale, normalization }, &spec, &tau)?
                }
            };
            let params = json!({
                "mode": "curve", "nv": nv, "alpha": alpha, "t1": t1, "t2": t2, "tau_range": tau.to_string(),
                "averaged": averaged, "density_file": density_file.map(|p| p.display().to_string()),
                "v_scale": v_scale, "normalization": format!("{normalization:?}"),
            });
            (table, params)
        }
    };
    let mut manifest = RunManifest::new("beats", params, None, started);
    emit(&table, &path, &mut manifest)?;
    finish(manifest, &path)
}

fn parse_coupling(text: &str, seed: u64) -> Result<CouplingSpec, CliError> {
    let bad = || CliError::Usage(format!("--coupling expects collective:<nv> or geometry[:<seed>], got {text:?}"));
    match text.split_once(':') {
        Some(("collective", v)) => Ok(CouplingSpec::Collective { nv: v.trim().parse().map_err(|_| bad())? }),
        Some(("geometry", s)) => Ok(CouplingSpec::Geometry { seed: s.trim().parse().map_err(|_| bad())? }),
        None if text == "geometry" => Ok(CouplingSpec::Geometry { seed }),
        _ => Err(bad()),
    }
}

fn oracle_cmd(a: OracleArgs) -> Result<(), CliError> {
    let started = Utc::now();
    let cfg = load_config(&a.common)?;
    let seed = resolve_seed(a.common.seed, &cfg)?;
    let phys = cfg.physical()?;
    let n = a.n.or(cfg.n).unwrap_or(4);
    let t = a.t.or(cfg.t).unwrap_or(1.0);
    let coupling = parse_coupling(&a.coupling.or(cfg.coupling).unwrap_or_else(|| "geometry".into()), seed)?;
    let schedule = match (a.schedule, a.alpha) {
        (Some(s), _) => parse_schedule(&s)?,
        (None, Some(alpha)) => vec![(t.max(f64::MIN_POSITIVE), alpha)],
        (None, None) => match cfg.schedule {
            Some(s) => s,
            None => vec![(t.max(f64::MIN_POSITIVE), cfg.alpha.unwrap_or(1.0))],
        },
    };
    let scales = match a.scales {
        Some(s) => parse_list(&s, "scales")?,
        None => cfg.scales.unwrap_or_else(|| vec![0.2, 0.1, 0.05]),
    };
    let pair_convention = match a.pair_convention.or(cfg.pair_convention).as_deref() {
        None | Some("verbatim") => PairConvention::Verbatim,
        Some("halved") => PairConvention::Halved,
        Some(other) => return Err(CliError::Usage(format!("--pair-convention expects verbatim or halved, got {other:?}"))),
    };
    if n > oracle::MAX_QUTRITS {
        return Err(CliError::Usage(format!("--n {n} exceeds the cap of {}", oracle::MAX_QUTRITS)));
    }
    let params = CompareParams { n, coupling, schedule, t, scales, tol: a.tol.or(cfg.tol).unwrap_or(1e-9), pair_convention };
    let report = oracle::compare_report(&params, &phys)?;

    let path = output_path(&a.common, "oracle.csv");
    let mut table = Table::new(&[
        "scale",
        "n1_exact",
        "n1_analytic",
        "relative_error",
        "norm_exact",
        "norm_formula",
        "w_discrepancy",
        "w_trace",
        "unitarity_drift",
    ]);
    for r in &report.rows {
        table.rows.push(vec![
            r.scale,
            r.n1_exact,
            r.n1_analytic,
            r.relative_error,
            r.norm_exact,
            r.norm_formula,
            r.w_discrepancy,
            r.w_trace,
            r.unitarity_drift,
        ]);
    }
    let echo = serde_json::to_value(&params).map_err(|e| CliError::Io(e.to_string()))?;
    let mut manifest = RunManifest::new("oracle", echo, Some(seed), started);
    emit(&table, &path, &mut manifest)?;
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    manifest.outputs.push(write_file(&sibling(&path, "json"), text.as_bytes())?);
    manifest.summary = Some(json!({ "convergence_orders": report.convergence_orders }));
    for r in &report.rows {
        println!("scale {:<8} n1_exact {:.6e} n1_analytic {:.6e} rel_err {:.3e}", r.scale, r.n1_exact, r.n1_analytic, r.relative_error);
    }
    if !report.convergence_orders.is_empty() {
        println!("convergence orders {:?}", report.convergence_orders);
    }
    finish(manifest, &path)
}

fn validate(a: ValidateArgs) -> Result<(), CliError> {
    let started = Utc::now();
    let cfg = load_config(&a.common)?;
    let seed = resolve_seed(a.common.seed, &cfg)?;
    let report = validation::validate_suite(seed);
    for c in &report.checks {
        println!(
            "{} {:<28} measured {:.3e} tolerance {:.1e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.tolerance
        );
    }
    let path = output_path(&a.common, "validate.json");
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    let mut manifest = RunManifest::new("validate", json!({}), Some(seed), started);
    manifest.outputs.push(write_file(&path, text.as_bytes())?);
    manifest.write(&manifest_path(&path))?;
    if report.all_passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        Err(CliError::Numerical(format!("invariant checks failed: {}", failed.join(", "))))
    }
}

//! `qutrit` command-line front end.

mod commands;
mod output;

use std::{path::PathBuf, process::ExitCode};

use clap::{Args, Parser, Subcommand};

/// Default master seed when neither a flag, a config entry nor `QUTRIT_SEED`
/// supplies one.
pub const DEFAULT_SEED: u64 = 20_240_601;
pub const SEED_ENV: &str = "QUTRIT_SEED";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numerical(String),
    Io(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<qutrit_core::Error> for CliError {
    fn from(e: qutrit_core::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "qutrit", version, about = "Cooperative dynamics of dipole-coupled qutrits", arg_required_else_help = true)]
pub struct Cli {
    /// Worker threads (affects speed only).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Population of the all-to-all coupled assembly over a (v, alpha) grid.
    Collective(CollectiveArgs),
    /// Ensemble eigenvalue density of random dipole media.
    Spectrum(SpectrumArgs),
    /// Ensemble-averaged population of random media over a (t, alpha) grid.
    RandomMedia(RandomMediaArgs),
    /// Detuning-switch beats: ratio map, or population curve when --t2 is set.
    Beats(BeatsArgs),
    /// Exact product-space evolution compared with the analytic population.
    Oracle(OracleArgs),
    /// Runs the built-in invariant checks.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON (.json) or TOML configuration; explicit flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output CSV path; the manifest is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed (default from QUTRIT_SEED).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct CollectiveArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub t: Option<f64>,
    /// Grid `start:stop:count` over v = NV.
    #[arg(long, allow_hyphen_values = true)]
    pub v_range: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha_range: Option<String>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Histogram range `lo:hi`.
    #[arg(long, allow_hyphen_values = true)]
    pub range: Option<String>,
    /// Fit grouping: `denominator` or `literal`.
    #[arg(long)]
    pub fit: Option<String>,
    /// Bin raw eigenvalues instead of cooperative units.
    #[arg(long)]
    pub raw: bool,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub angular_coefficient: Option<f64>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct RandomMediaArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub t_range: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha_range: Option<String>,
    /// Read the grids in cooperative units.
    #[arg(long)]
    pub scaled_axes: bool,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub angular_coefficient: Option<f64>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct BeatsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub nv: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub t1: Option<f64>,
    /// Selects the population curve instead of the ratio map.
    #[arg(long)]
    pub t2: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub t1_range: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub dt_range: Option<String>,
    /// Map mode evaluates at t = t2 + offset.
    #[arg(long)]
    pub t_offset: Option<f64>,
    /// Curve mode grid over t - t2.
    #[arg(long, allow_hyphen_values = true)]
    pub tau_range: Option<String>,
    /// Density CSV from `spectrum` to average the curve over.
    #[arg(long)]
    pub density_file: Option<PathBuf>,
    /// Coupling per density unit when averaging over a density file.
    #[arg(long)]
    pub v_scale: Option<f64>,
    /// `total` or `per-mode`.
    #[arg(long)]
    pub normalization: Option<String>,
    /// Average over one detuning period.
    #[arg(long)]
    pub averaged: bool,
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct OracleArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub n: Option<usize>,
    /// `collective:<nv>` or `geometry:<seed>`.
    #[arg(long)]
    pub coupling: Option<String>,
    #[arg(long, conflicts_with = "schedule")]
    pub alpha: Option<f64>,
    /// Pieces `duration:alpha,duration:alpha,...`.
    #[arg(long, allow_hyphen_values = true)]
    pub schedule: Option<String>,
    #[arg(long)]
    pub t: Option<f64>,
    /// Comma-separated coupling scales.
    #[arg(long)]
    pub scales: Option<String>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// `verbatim` or `halved`.
    #[arg(long)]
    pub pair_convention: Option<String>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub common: Common,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn dispatch<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match commands::run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("qutrit: {e}");
            e.exit_code()
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(dispatch(std::env::args_os()))
}

#[cfg(test)]
mod tests {
    use std::{fs, path::PathBuf};

    use super::*;

    fn scratch(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("qutrit-cli-{}-{name}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn run(args: &[&str]) -> u8 {
        dispatch(std::iter::once("qutrit").chain(args.iter().copied()))
    }

    fn manifest(csv: &std::path::Path) -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(output::manifest_path(csv)).unwrap()).unwrap()
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(&[]), 2);
        assert_eq!(run(&["collective", "--bogus", "1"]), 2);
        assert_eq!(run(&["frobnicate"]), 2);
        assert_eq!(run(&["collective", "--v-range", "1:0:5"]), 2);
        assert_eq!(run(&["oracle", "--n", "13"]), 2);
        assert_eq!(run(&["oracle", "--alpha", "1", "--schedule", "1:1"]), 2);
    }

    #[test]
    fn help_exits_0() {
        assert_eq!(run(&["--help"]), 0);
    }

    #[test]
    fn numerical_failure_exits_1() {
        let out = scratch("numerical").join("b.csv");
        assert_eq!(run(&["beats", "--nv", "0", "--out", out.to_str().unwrap()]), 1);
    }

    #[test]
    fn flags_override_config() {
        let dir = scratch("config");
        let cfg = dir.join("run.toml");
        fs::write(&cfg, "t = 1.0\nv_range = \"0:1:3\"\nalpha_range = \"-1:0:3\"\n").unwrap();
        let out = dir.join("c.csv");
        let code = run(&["collective", "--config", cfg.to_str().unwrap(), "--t", "2", "--out", out.to_str().unwrap()]);
        assert_eq!(code, 0);
        let m = manifest(&out);
        assert_eq!(m["params"]["t"], 2.0);
        assert_eq!(m["params"]["v_range"], "0:1:3");
        assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 10);
        assert_eq!(m["outputs"][0]["path"], out.display().to_string());
    }

    #[test]
    fn json_config_and_unknown_keys() {
        let dir = scratch("json");
        let good = dir.join("run.json");
        fs::write(&good, r#"{"nv": 0.2, "alpha": -0.2, "t1_range": "0:1:2", "dt_range": "0:1:2"}"#).unwrap();
        let out = dir.join("b.csv");
        assert_eq!(run(&["beats", "--config", good.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);
        assert_eq!(manifest(&out)["params"]["nv"], 0.2);
        let bad = dir.join("bad.toml");
        fs::write(&bad, "colour = 3\n").unwrap();
        assert_eq!(run(&["collective", "--config", bad.to_str().unwrap()]), 2);
    }

    #[test]
    fn seed_flag_and_environment_agree() {
        let dir = scratch("seed");
        let a = dir.join("a.csv");
        let b = dir.join("b.csv");
        let common = ["spectrum", "--n", "20", "--samples", "4", "--bins", "11"];
        let mut args: Vec<&str> = common.to_vec();
        args.extend(["--seed", "5", "--out", a.to_str().unwrap()]);
        assert_eq!(run(&args), 0);
        std::env::set_var(SEED_ENV, "5");
        let mut args: Vec<&str> = common.to_vec();
        args.extend(["--out", b.to_str().unwrap()]);
        let code = run(&args);
        std::env::remove_var(SEED_ENV);
        assert_eq!(code, 0);
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(manifest(&b)["master_seed"], 5);
    }

    #[test]
    fn oracle_writes_report_and_table() {
        let dir = scratch("oracle");
        let out = dir.join("o.csv");
        let code = run(&["oracle", "--n", "3", "--coupling", "collective:0.2", "--alpha", "-0.2", "--t", "1", "--scales", "1,0.5", "--out", out.to_str().unwrap()]);
        assert_eq!(code, 0);
        let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("o.json")).unwrap()).unwrap();
        assert_eq!(report["rows"].as_array().unwrap().len(), 2);
        assert_eq!(manifest(&out)["outputs"].as_array().unwrap().len(), 2);
    }
}

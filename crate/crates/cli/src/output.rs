use std::{
    fs,
    io::Write,
    path::{Path, PathBuf},
};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

const SIGNIFICANT: i32 = 12;

/// `%.12g`-style formatting.
pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", (SIGNIFICANT - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if (-5..SIGNIFICANT).contains(&exp) {
        let decimals = (SIGNIFICANT - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim_zeros(mantissa), sign, exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn render_table(header: &[String], rows: &[Vec<f64>]) -> Result<String, CliError> {
    let mut out = header.join(",");
    out.push('\n');
    for (k, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(CliError::Usage(format!("row {k} has {} columns, header has {}", row.len(), header.len())));
        }
        let cells: Vec<String> = row.iter().map(|&x| format_number(x)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputDigest {
    pub path: String,
    pub sha256: String,
}

/// Writes `contents` to `path` and returns its digest.
pub fn write_file(path: &Path, contents: &[u8]) -> Result<OutputDigest, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    let mut f = fs::File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    f.write_all(contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(OutputDigest { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(contents)) })
}

/// CSV with a header line, 12 significant digits and LF line endings.
pub fn emit_table(header: &[String], rows: &[Vec<f64>], path: &Path) -> Result<OutputDigest, CliError> {
    write_file(path, render_table(header, rows)?.as_bytes())
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub params: serde_json::Value,
    pub master_seed: Option<u64>,
    pub code_version: String,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<OutputDigest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<serde_json::Value>,
}

impl RunManifest {
    pub fn new(command: &str, params: serde_json::Value, master_seed: Option<u64>, started: DateTime<Utc>) -> RunManifest {
        RunManifest {
            command: command.into(),
            params,
            master_seed,
            code_version: env!("CARGO_PKG_VERSION").into(),
            started: started.to_rfc3339_opts(SecondsFormat::Millis, true),
            finished: String::new(),
            outputs: Vec::new(),
            summary: None,
        }
    }

    pub fn write(mut self, path: &Path) -> Result<PathBuf, CliError> {
        self.finished = Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true);
        let mut text = serde_json::to_string_pretty(&self).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        write_file(path, text.as_bytes())?;
        Ok(path.to_path_buf())
    }
}

/// `out.csv` -> `out.manifest.json`.
pub fn manifest_path(csv: &Path) -> PathBuf {
    sibling(csv, "manifest.json")
}

pub fn sibling(path: &Path, extension: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}.{extension}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(format_number(0.0), "0");
        assert_eq!(format_number(-0.0), "0");
        assert_eq!(format_number(1.0), "1");
        assert_eq!(format_number(-2.5), "-2.5");
        assert_eq!(format_number(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_number(2.0 / 3.0 * 1e6), "666666.666667");
        assert_eq!(format_number(123456789012.0), "123456789012");
        assert_eq!(format_number(1234567890123.0), "1.23456789012e+12");
        assert_eq!(format_number(1.5e-7), "1.5e-07");
        assert_eq!(format_number(0.0001), "0.0001");
        assert_eq!(format_number(f64::NAN), "nan");
    }

    #[test]
    fn empty_table_is_header_only() {
        let header = vec!["a".to_string(), "b".to_string()];
        assert_eq!(render_table(&header, &[]).unwrap(), "a,b\n");
    }

    #[test]
    fn ragged_rows_rejected() {
        let header = vec!["a".to_string()];
        assert!(render_table(&header, &[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn identical_inputs_identical_bytes() {
        let header = vec!["x".to_string()];
        let rows = vec![vec![0.1], vec![1e-300]];
        assert_eq!(render_table(&header, &rows).unwrap(), render_table(&header, &rows).unwrap());
    }

    #[test]
    fn manifest_sibling_name() {
        assert_eq!(manifest_path(Path::new("out/surface.csv")), PathBuf::from("out/surface.manifest.json"));
    }
}

//! CSV tables and the run manifest.

use std::path::PathBuf;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::run::RunReport;

/// Formats `x` rounded to 12 significant digits, in the shortest form that
/// reads back to the rounded value.
pub fn num(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("round trip of formatted float");
    format!("{rounded:?}")
}

/// One CSV table; the last column is always the config hash.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: &'static str,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Artifact {
    pub fn new(name: &'static str, columns: &[&str]) -> Self {
        let mut header: Vec<String> = columns.iter().map(|c| c.to_string()).collect();
        header.push("config_hash".to_string());
        Self {
            name,
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, mut row: Vec<String>, hash: &str) {
        row.push(hash.to_string());
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    mode: &'a str,
    config_hash: String,
    seeds: &'a [u64],
    replications: usize,
    files: Vec<&'static str>,
    converged: bool,
    unconverged: &'a [String],
    /// Canonical form of the configuration that produced the files.
    config: String,
}

/// `{prefix}{name}` for every artifact plus `{prefix}manifest.toml`; the
/// prefix may name a directory (trailing `/`) or a file stem.
pub fn write_outputs(prefix: &str, config: &ExperimentConfig, mode: &str, report: &RunReport) -> std::io::Result<Vec<PathBuf>> {
    let path = |name: &str| PathBuf::from(format!("{prefix}{name}"));
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        mode,
        config_hash: config.hash(),
        seeds: &report.seeds,
        replications: report.seeds.len(),
        files: report.artifacts.iter().map(|a| a.name).collect(),
        converged: report.unconverged.is_empty(),
        unconverged: &report.unconverged,
        config: config.to_toml(),
    };
    let mut written = Vec::new();
    let mut files: Vec<(PathBuf, String)> = report.artifacts.iter().map(|a| (path(a.name), a.to_csv())).collect();
    files.push((path("manifest.toml"), toml::to_string(&manifest).expect("manifest serializes")));
    for (p, contents) in files {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&p, contents)?;
        written.push(p);
    }
    Ok(written)
}

/// Reads `EHDL_THREADS`, falling back to the available parallelism.
pub fn thread_count(var: Option<&str>) -> Result<usize, String> {
    match var {
        Some(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(format!("EHDL_THREADS must be a positive integer, got {v:?}")),
        },
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(num(0.1), "0.1");
        assert_eq!(num(1.0 / 3.0), "0.333333333333");
        assert_eq!(num(2.0 / 3.0), "0.666666666667");
        assert_eq!(num(123456789.123456789), "123456789.123");
        assert_eq!(num(1.234567890123456e-9), "1.23456789012e-9");
        assert_eq!(num(-0.0), "0");
        assert_eq!(num(10.0), "10.0");
    }

    #[test]
    fn csv_has_hash_column() {
        let mut a = Artifact::new("x.csv", &["a", "b"]);
        a.push(vec!["1".into(), "2".into()], "abc");
        assert_eq!(a.to_csv(), "a,b,config_hash\n1,2,abc\n");
    }

    #[test]
    fn thread_variable() {
        assert_eq!(thread_count(Some("8")), Ok(8));
        assert!(thread_count(Some("0")).is_err());
        assert!(thread_count(Some("many")).is_err());
        assert!(thread_count(None).unwrap() >= 1);
    }
}

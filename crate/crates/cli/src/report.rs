//! Run reports: pass/fail checks, metric tables, and deterministic
//! output files.
//!
//! `summary.json` carries a schema version so downstream readers can
//! detect format changes. Timing is reported on stderr only; everything
//! written under the output directory is a pure function of the config
//! and seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

pub const SCHEMA_VERSION: u32 = 1;

/// One pass/fail comparison against a configured tolerance.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    /// Comparison applied to (value, threshold): `<=`, `>=`, or `==`.
    pub op: String,
    pub pass: bool,
}

impl Check {
    pub fn le(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            op: "<=".into(),
            pass: value <= threshold,
        }
    }

    pub fn ge(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            op: ">=".into(),
            pass: value >= threshold,
        }
    }

    pub fn eq(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            op: "==".into(),
            pass: value == threshold,
        }
    }
}

/// A metric table destined for one CSV file.
#[derive(Clone, Debug)]
pub struct CsvTable {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(name: &str, header: &[&str]) -> Self {
        CsvTable {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Shortest round-trip decimal form; used for every float cell so CSV
/// output is reproducible bit-for-bit.
pub fn fmt(v: f64) -> String {
    format!("{v}")
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub tables: Vec<CsvTable>,
    /// Soft findings that do not fail the run unless strict mode is on.
    pub warnings: Vec<String>,
    /// Extra files already written by the scenario, relative to the
    /// output directory.
    pub artifacts: Vec<String>,
}

impl RunReport {
    pub fn new(scenario: &str, seed: u64) -> Self {
        RunReport {
            scenario: scenario.into(),
            seed,
            metrics: BTreeMap::new(),
            checks: Vec::new(),
            tables: Vec::new(),
            warnings: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        self.warnings.push(message.into());
    }

    pub fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    pub fn check(&mut self, check: Check) {
        self.metrics.insert(check.name.clone(), check.value);
        self.checks.push(check);
    }

    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Names of checks that failed.
    pub fn failures(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.name.as_str())
            .collect()
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    schema_version: u32,
    scenario: &'a str,
    seed: u64,
    pass: bool,
    metrics: &'a BTreeMap<String, f64>,
    checks: &'a [Check],
    warnings: &'a [String],
    artifacts: &'a [String],
}

/// Writes `summary.json` plus one CSV per table; returns the files
/// written, relative to `out_dir`.
pub fn write_outputs(report: &RunReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    let mut written = Vec::new();
    for table in &report.tables {
        let name = format!("{}.csv", table.name);
        fs::write(out_dir.join(&name), table.render())?;
        written.push(PathBuf::from(name));
    }
    let mut artifacts: Vec<String> = report.artifacts.clone();
    artifacts.extend(written.iter().map(|p| p.display().to_string()));
    artifacts.sort();
    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        scenario: &report.scenario,
        seed: report.seed,
        pass: report.pass(),
        metrics: &report.metrics,
        checks: &report.checks,
        warnings: &report.warnings,
        artifacts: &artifacts,
    };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    fs::write(out_dir.join("summary.json"), text)?;
    written.push(PathBuf::from("summary.json"));
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checks_compare_as_named() {
        assert!(Check::le("a", 1.0, 2.0).pass);
        assert!(!Check::le("a", 3.0, 2.0).pass);
        assert!(Check::ge("b", 2.0, 2.0).pass);
        assert!(Check::eq("c", 0.0, 0.0).pass);
    }

    #[test]
    fn float_cells_round_trip() {
        for v in [0.1, 1.0 / 3.0, 2.5e-13, -4.0] {
            assert_eq!(fmt(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn report_pass_requires_every_check() {
        let mut r = RunReport::new("x", 0);
        r.check(Check::le("ok", 1.0, 2.0));
        assert!(r.pass());
        r.check(Check::le("bad", 3.0, 2.0));
        assert!(!r.pass());
        assert_eq!(r.failures(), vec!["bad"]);
    }
}

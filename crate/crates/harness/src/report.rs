use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::ExperimentConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// A rectangular table; one row per scale, replicate or order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len(), "table {}", self.name);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<&Value>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| &r[i]).collect())
    }

    fn to_csv(&self) -> String {
        let cell = |v: &Value| match v {
            Value::String(s) => s.clone(),
            Value::Null => String::new(),
            other => other.to_string(),
        };
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.iter().map(cell).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
}

/// One asserted tolerance: `value <= threshold` or `value >= threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub comparison: Comparison,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            comparison: Comparison::AtMost,
            threshold,
            passed: value <= threshold,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            comparison: Comparison::AtLeast,
            threshold,
            passed: value >= threshold,
        }
    }

    /// Re-derives the verdict from the stored numbers.
    pub fn recompute(&self) -> bool {
        match self.comparison {
            Comparison::AtMost => self.value <= self.threshold,
            Comparison::AtLeast => self.value >= self.threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    pub value: f64,
    pub stderr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub artifact_version: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub tables: Vec<Table>,
    pub estimates: Vec<Estimate>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    pub wall_clock_seconds: f64,
}

impl ExperimentReport {
    pub fn new(config: &ExperimentConfig) -> Self {
        ExperimentReport {
            schema_version: SCHEMA_VERSION,
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            config_hash: config.hash(),
            tables: Vec::new(),
            estimates: Vec::new(),
            checks: Vec::new(),
            notes: Vec::new(),
            wall_clock_seconds: 0.0,
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn estimate(&mut self, name: impl Into<String>, value: f64, stderr: Option<f64>) {
        self.estimates.push(Estimate {
            name: name.into(),
            value,
            stderr,
        });
    }

    pub fn note(&mut self, note: impl Into<String>) {
        let note = note.into();
        if !self.notes.contains(&note) {
            self.notes.push(note);
        }
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// One line per check.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "{} [{}] {} in {:.1}s\n",
            self.config.experiment,
            self.config_hash,
            if self.passed() { "PASS" } else { "FAIL" },
            self.wall_clock_seconds
        );
        for c in &self.checks {
            let op = match c.comparison {
                Comparison::AtMost => "<=",
                Comparison::AtLeast => ">=",
            };
            out.push_str(&format!(
                "  [{}] {}: {:.6e} {op} {:.6e}\n",
                if c.passed { "ok" } else { "FAIL" },
                c.name,
                c.value,
                c.threshold
            ));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

/// Writes the report under `dir`. JSON produces
/// `<experiment>-<hash>.json`; CSV writes one `<experiment>-<hash>-<table>.csv`
/// per table plus `<experiment>-<hash>-checks.csv`. Returns the paths written.
pub fn emit_report(report: &ExperimentReport, dir: &Path, formats: &[Format]) -> anyhow::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let stem = format!("{}-{}", report.config.experiment, report.config_hash);
    let mut written = Vec::new();
    let mut put = |name: String, bytes: &[u8]| -> anyhow::Result<()> {
        let path = dir.join(name);
        dimprof_core::atomic::write_file(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
        Ok(())
    };
    for format in formats {
        match format {
            Format::Json => put(format!("{stem}.json"), &serde_json::to_vec_pretty(report)?)?,
            Format::Csv => {
                for t in &report.tables {
                    put(format!("{stem}-{}.csv", t.name), t.to_csv().as_bytes())?;
                }
                let mut checks = Table::new("checks", &["name", "value", "comparison", "threshold", "passed"]);
                for c in &report.checks {
                    checks.push(vec![
                        c.name.clone().into(),
                        c.value.into(),
                        serde_json::to_value(c.comparison)?,
                        c.threshold.into(),
                        c.passed.into(),
                    ]);
                }
                put(format!("{stem}-checks.csv"), checks.to_csv().as_bytes())?;
            }
        }
    }
    Ok(written)
}

//! Flat key-value experiment configuration.
//!
//! A config file is TOML restricted to top-level keys. Every key is
//! optional; missing keys take the defaults of the chosen experiment (see
//! [`ExperimentConfig::defaults`]). Command-line overrides `key=value` are
//! parsed as TOML values, falling back to a bare string.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Context};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dimprof_core::fbm::Method;
use dimprof_core::{KernelOrder, SolverOptions};

use crate::sets::SetSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    VerifyZ2,
    VerifyEntropyIdentity,
    ProfileCurve,
    VerifyMainTheorem,
    VerifyFbmTheorem,
    VerifyLb1,
    VerifySandwich,
    VerifyProjection,
    VerifyFbmCovariance,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::VerifyZ2 => "verify-z2",
            Experiment::VerifyEntropyIdentity => "verify-entropy-identity",
            Experiment::ProfileCurve => "profile-curve",
            Experiment::VerifyMainTheorem => "verify-main-theorem",
            Experiment::VerifyFbmTheorem => "verify-fbm-theorem",
            Experiment::VerifyLb1 => "verify-lb1",
            Experiment::VerifySandwich => "verify-sandwich",
            Experiment::VerifyProjection => "verify-projection",
            Experiment::VerifyFbmCovariance => "verify-fbm-covariance",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        <Experiment as ValueEnum>::from_str(s, true).map_err(|e| anyhow::anyhow!(e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub sets: Vec<SetSpec>,
    pub s_values: Vec<KernelOrder>,
    pub hurst: Vec<f64>,
    /// Dimension of the fBM target space.
    pub d: usize,
    /// fBM grid steps (a power of two).
    pub n_grid: usize,
    pub method: Method,
    pub replicates: usize,
    /// Battery size for the game and identity checks; projection count for
    /// the projection experiment; random measures for the sandwich.
    pub trials: usize,
    pub seed: u64,
    /// Geometric base of scale schedules; 0 picks the set's own ratio.
    pub schedule_base: f64,
    pub schedule_coarsest: f64,
    /// Finest scale sits this many powers above the cloud resolution.
    pub schedule_finest_offset: u32,
    /// Ratio of the schedules fitted on fBM images.
    pub image_schedule_ratio: f64,
    pub quantile: f64,
    pub solver_tol: f64,
    /// Lattice points per round of the grid oracle.
    pub grid_budget: u64,
    pub grid_rounds: usize,
    /// Cell count for the sandwich experiment.
    pub cells: usize,
    /// Time grid edge for covariance checks.
    pub cov_grid: usize,
    pub tol_gap: f64,
    pub tol_grid: f64,
    pub tol_identity: f64,
    pub tol_collapse: f64,
    pub tol_single: f64,
    pub tol_cross: f64,
    pub tol_mc: f64,
    pub tol_slope: f64,
    pub tol_sandwich: f64,
    pub max_z: f64,
    pub output_dir: PathBuf,
}

fn orders(values: &[f64]) -> Vec<KernelOrder> {
    values.iter().map(|&s| KernelOrder::Finite(s)).collect()
}

fn sets(specs: &[&str]) -> Vec<SetSpec> {
    specs.iter().map(|s| s.parse().expect("built-in set spec")).collect()
}

impl ExperimentConfig {
    /// Defaults for `experiment`; these reproduce the documented runs.
    pub fn defaults(experiment: Experiment) -> Self {
        let mut c = ExperimentConfig {
            experiment,
            sets: sets(&["cantor:1/3:10"]),
            s_values: orders(&[0.2, 0.4, 0.63, 1.0, 2.0]),
            hurst: vec![0.5],
            d: 1,
            n_grid: 1 << 15,
            method: Method::Circulant,
            replicates: 10,
            trials: 60,
            seed: 20_240_601,
            schedule_base: 0.0,
            schedule_coarsest: 0.07,
            schedule_finest_offset: 1,
            image_schedule_ratio: std::f64::consts::SQRT_2,
            quantile: dimprof_core::profiles::DEFAULT_QUANTILE,
            solver_tol: 1e-6,
            grid_budget: 10_000,
            grid_rounds: 12,
            cells: 27,
            cov_grid: 10,
            tol_gap: 2e-6,
            tol_grid: 1e-3,
            tol_identity: 1e-4,
            tol_collapse: 0.05,
            tol_single: 0.07,
            tol_cross: 0.1,
            tol_mc: 0.12,
            tol_slope: 0.15,
            tol_sandwich: 1e-6,
            max_z: 4.0,
            output_dir: PathBuf::from("dimprof-out"),
        };
        match experiment {
            Experiment::VerifyZ2 => {
                c.s_values = vec![
                    KernelOrder::Finite(0.5),
                    KernelOrder::Finite(1.0),
                    KernelOrder::Finite(2.0),
                    KernelOrder::Finite(4.0),
                    KernelOrder::Infinity,
                ];
            }
            Experiment::VerifyEntropyIdentity => {
                c.trials = 12;
            }
            Experiment::ProfileCurve => {
                c.sets = sets(&["cantor:1/3:10", "interval:10"]);
            }
            Experiment::VerifyMainTheorem => {
                c.sets = sets(&["cantor:1/3:10", "cantor:1/5:8"]);
                c.s_values = orders(&[0.3, 0.4307, 0.6309, 1.5]);
                c.s_values.push(KernelOrder::Infinity);
            }
            Experiment::VerifyFbmTheorem => {
                c.sets = sets(&["cantor:1/3:7"]);
                c.hurst = vec![0.3, 0.7];
                c.schedule_finest_offset = 0;
            }
            Experiment::VerifyLb1 => {
                c.sets = sets(&["cantor:1/3:8"]);
                c.d = 2;
                c.replicates = 20;
                c.schedule_coarsest = 0.2;
            }
            Experiment::VerifySandwich => {
                c.sets = sets(&["cantor:1/3:6"]);
                c.s_values = orders(&[0.5, 1.0, 2.0]);
                c.trials = 100;
            }
            Experiment::VerifyProjection => {
                c.sets = sets(&["cantor-product:1/3:5"]);
                c.s_values = orders(&[1.0]);
                c.trials = 20;
                c.schedule_coarsest = 0.2;
                c.schedule_finest_offset = 0;
            }
            Experiment::VerifyFbmCovariance => {
                c.hurst = vec![0.3, 0.5, 0.7];
                c.n_grid = 1 << 12;
                c.replicates = 2000;
            }
        }
        c
    }

    /// Reads `text` over the defaults of its experiment. The experiment
    /// comes from the file or, failing that, from `fallback`.
    pub fn from_toml(text: &str, fallback: Option<Experiment>, overrides: &[String]) -> anyhow::Result<Self> {
        let mut table: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .with_context(|| format!("override '{item}' is not key=value"))?;
            let key = key.trim();
            let value = value.trim();
            let parsed: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {value}")) {
                Ok(mut t) => t.remove("v").expect("key present"),
                Err(_) => toml::Value::String(value.to_string()),
            };
            table.insert(key.to_string(), parsed);
        }
        for (key, value) in &table {
            if value.is_table() {
                bail!("config key '{key}' is a table; only flat keys are allowed");
            }
        }
        let from_file = match table.get("experiment") {
            Some(v) => Some(v.clone().try_into::<Experiment>().context("bad experiment name")?),
            None => None,
        };
        let experiment = match (from_file, fallback) {
            (Some(a), Some(b)) if a != b => bail!("config is for {a} but {b} was requested"),
            (Some(a), _) | (None, Some(a)) => a,
            (None, None) => bail!("config names no experiment"),
        };
        let mut base = toml::Table::try_from(Self::defaults(experiment))?;
        for (k, v) in table {
            base.insert(k, v);
        }
        let cfg: ExperimentConfig = base.try_into().context("invalid config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.sets.is_empty() {
            bail!("no sets configured");
        }
        if self.hurst.iter().any(|h| !(*h > 0.0 && *h < 1.0)) {
            bail!("Hurst indices must lie in (0, 1)");
        }
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            bail!("quantile must lie in (0, 1)");
        }
        if self.schedule_base != 0.0 && !(self.schedule_base > 1.0) {
            bail!("schedule_base must be 0 or above 1");
        }
        if !(self.schedule_coarsest > 0.0) || !(self.image_schedule_ratio > 1.0) {
            bail!("schedule parameters must be positive");
        }
        if self.d == 0 || !self.n_grid.is_power_of_two() {
            bail!("need d ≥ 1 and a power-of-two n_grid");
        }
        Ok(())
    }

    pub fn solver(&self) -> SolverOptions {
        SolverOptions::with_tol(self.solver_tol)
    }

    pub fn base_for(&self, set: &SetSpec) -> f64 {
        if self.schedule_base > 0.0 {
            self.schedule_base
        } else {
            set.natural_base()
        }
    }

    /// Hex SHA-256 of the canonical JSON form, truncated to 16 digits.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        for e in Experiment::value_variants() {
            let cfg = ExperimentConfig::defaults(*e);
            let text = toml::to_string(&cfg).unwrap();
            let back = ExperimentConfig::from_toml(&text, None, &[]).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn file_and_overrides_layer_over_defaults() {
        let text = "experiment = \"verify-sandwich\"\ncells = 9\ns_values = [1.0, \"inf\"]\n";
        let cfg = ExperimentConfig::from_toml(text, None, &["seed=7".into(), "sets=[\"cantor:1/3:5\"]".into()]).unwrap();
        assert_eq!(cfg.cells, 9);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.s_values, vec![KernelOrder::Finite(1.0), KernelOrder::Infinity]);
        assert_eq!(cfg.sets[0].to_string(), "cantor:1/3:5");
        assert_eq!(cfg.trials, 100);
        let cfg = ExperimentConfig::from_toml("", Some(Experiment::VerifyLb1), &["output_dir=runs/a".into()]).unwrap();
        assert_eq!(cfg.output_dir, PathBuf::from("runs/a"));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_toml("", None, &[]).is_err());
        assert!(ExperimentConfig::from_toml("colour = 3", Some(Experiment::VerifyZ2), &[]).is_err());
        assert!(ExperimentConfig::from_toml("experiment = \"verify-z2\"", Some(Experiment::VerifyLb1), &[]).is_err());
        assert!(ExperimentConfig::from_toml("[section]\na = 1", Some(Experiment::VerifyZ2), &[]).is_err());
        assert!(ExperimentConfig::from_toml("hurst = [1.5]", Some(Experiment::VerifyLb1), &[]).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::defaults(Experiment::VerifyZ2);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }
}

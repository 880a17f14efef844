//! Experiment configuration: JSON, schema-validated (unknown keys rejected),
//! with command-line flags overriding file values. Every run writes the
//! fully-resolved configuration back next to its artifacts, and a sidecar
//! records (command, resolved config) so `replay` can reproduce any report
//! byte-for-byte.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const ENV_SEED: &str = "MFL_SEED";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub hurst: f64,
    pub horizon: f64,
    pub steps: usize,
    pub eps: f64,
    pub delta: Option<f64>,
    pub eps_schedule: Vec<f64>,
    /// δ/ε ratios for the two-scale experiment.
    pub scale_ratios: Vec<f64>,
    pub n_mc: usize,
    pub n_outer: usize,
    pub n_inner: usize,
    /// Number of sample paths written by the path-generation command.
    pub paths: usize,
    pub dim: usize,
    pub seed: u64,
    /// 0 = library default thread count.
    pub jobs: usize,
    pub alpha: f64,
    pub p_order: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: "case1-ou".into(),
            hurst: 0.75,
            horizon: 1.0,
            steps: 256,
            eps: 1e-2,
            delta: None,
            eps_schedule: vec![1e-1, 3e-2, 1e-2, 3e-3, 1e-3],
            scale_ratios: vec![1.0, 0.1, 0.01],
            n_mc: 1000,
            n_outer: 16,
            n_inner: 64,
            paths: 1,
            dim: 1,
            seed: 0,
            jobs: 0,
            alpha: 0.4,
            p_order: 2.0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&raw)
            .with_context(|| format!("invalid config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hurst > 0.5 && self.hurst < 1.0) {
            bail!("hurst = {} outside the admissible domain H > 1/2 (and H < 1)", self.hurst);
        }
        if self.steps == 0 || self.horizon <= 0.0 {
            bail!("grid needs positive horizon and step count");
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            bail!("eps = {} outside (0, 1]", self.eps);
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d <= self.eps) {
                bail!("delta = {d} must lie in (0, eps = {}]", self.eps);
            }
        }
        if self.eps_schedule.iter().any(|&e| e <= 0.0 || e > 1.0) {
            bail!("eps_schedule entries must lie in (0, 1]");
        }
        Ok(())
    }

    /// Statistical commands refuse single-replica runs.
    pub fn validate_statistical(&self) -> Result<()> {
        self.validate()?;
        if self.n_mc < 2 {
            bail!("statistical commands need n_mc >= 2, got {}", self.n_mc);
        }
        Ok(())
    }
}

/// Sidecar: everything needed to reproduce a run byte-for-byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub command: String,
    pub config: ExperimentConfig,
    /// Checksums of the driver paths written by the run, keyed by filename.
    #[serde(default)]
    pub driver_checksums: Vec<(String, String)>,
}

pub fn default_seed() -> u64 {
    std::env::var(ENV_SEED).ok().and_then(|s| s.parse().ok()).unwrap_or(0)
}

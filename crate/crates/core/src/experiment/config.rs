use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SorError};
use crate::sor::{PenaltyMode, DEFAULT_THRESHOLD};

/// Environment variable naming the output directory of the harness.
pub const OUT_DIR_ENV: &str = "SOR_OUT_DIR";

/// Settings of the two-stage Noise-and-Box protocol and of the grid over it.
///
/// Every field has a default, so a JSON file only needs the fields it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub filters: Vec<usize>,
    pub noise_ub: Vec<f64>,
    pub train_size: Vec<usize>,
    pub lambda1: Vec<f64>,
    /// Group lasso coefficient as a multiple of `lambda1`.
    pub lambda2_ratio: f64,
    pub seeds: Vec<u64>,
    pub master_seed: u64,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub batch_size: usize,
    pub test_size: usize,
    pub threshold: f64,
    pub penalty_mode: PenaltyMode,
    /// Worker threads for the grid; `None` uses every core.
    pub workers: Option<usize>,
    /// Fill the `wall_ms` column. Off by default so reruns are byte-identical.
    pub wall_time: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            filters: vec![3, 10],
            noise_ub: vec![0.1, 1.0],
            train_size: vec![10, 100, 1000],
            lambda1: vec![0.05, 0.5, 5.0],
            lambda2_ratio: 0.1,
            seeds: (1..=30).collect(),
            master_seed: 0,
            epochs_stage1: 100,
            epochs_stage2: 100,
            batch_size: 32,
            test_size: 1000,
            threshold: DEFAULT_THRESHOLD,
            penalty_mode: PenaltyMode::default(),
            workers: None,
            wall_time: false,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SorError::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let nonempty = [
            ("filters", self.filters.is_empty()),
            ("noise_ub", self.noise_ub.is_empty()),
            ("train_size", self.train_size.is_empty()),
            ("lambda1", self.lambda1.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ];
        if let Some((name, _)) = nonempty.iter().find(|(_, empty)| *empty) {
            return Err(SorError::invalid(format!("{name} must list at least one value")));
        }
        if self.filters.contains(&0) {
            return Err(SorError::invalid("filters must be at least 1"));
        }
        if self.noise_ub.iter().any(|&u| !(u > 0.0 && u.is_finite())) {
            return Err(SorError::invalid("noise_ub values must be finite and > 0"));
        }
        if self.train_size.contains(&0) || self.test_size == 0 {
            return Err(SorError::invalid("train and test sizes must be at least 1"));
        }
        if self.lambda1.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(SorError::invalid("lambda1 values must be finite and >= 0"));
        }
        if !(self.lambda2_ratio >= 0.0 && self.lambda2_ratio.is_finite()) {
            return Err(SorError::invalid("lambda2_ratio must be finite and >= 0"));
        }
        if self.batch_size == 0 {
            return Err(SorError::invalid("batch_size must be at least 1"));
        }
        if !(self.threshold > 0.0) {
            return Err(SorError::invalid("threshold must be > 0"));
        }
        if self.workers == Some(0) {
            return Err(SorError::invalid("workers must be at least 1"));
        }
        Ok(())
    }

    pub fn lambda2(&self, lambda1: f64) -> f64 {
        self.lambda2_ratio * lambda1
    }
}

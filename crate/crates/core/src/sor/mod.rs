//! Structured output regularization.
//!
//! The workflow on a trained model:
//!
//! 1. split the layers into blocks ([`define_blocks`]),
//! 2. freeze the leading blocks up to `i_c` ([`freeze`]),
//! 3. put a gate after every frozen block before `i_c` ([`insert_gates`]),
//! 4. train against the task loss plus an L1 penalty on the gates and a group
//!    lasso penalty on the weights that read each remaining block output
//!    ([`ObjectiveConfig`]),
//! 5. zero whatever fell under the removal threshold and cut those channels
//!    out of the network ([`prune`]).
//!
//! [`apply_sor`] performs steps 1 to 4 from a [`SorConfig`].

pub mod checks;
pub mod gates;
pub mod partition;
pub mod penalty;
pub mod prune;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use checks::{check_assumption2, check_condition1};
pub use gates::{gate_backward, gate_forward, insert_gates, insert_gates_at, GateSet};
pub use partition::{define_blocks, define_blocks_at, freeze, toy_layer_blocks, BlockPartition};
pub use penalty::{
    group_lasso_penalty, group_lasso_value, l1_penalty, l1_value, objective, penalty_value, GroupSpec,
    ObjectiveConfig, PenaltyMode, PenaltyValue,
};
pub use prune::{prune, removed_fraction, ChannelRef, PruneReport, DEFAULT_THRESHOLD};

use crate::error::{Result, SorError};
use crate::nn::model::ModelGraph;

/// Partition and objective stored alongside a gated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SorMeta {
    pub partition: BlockPartition,
    pub objective: ObjectiveConfig,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

/// SOR configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SorConfig {
    /// Block index (1-based) of every layer of the ungated model.
    pub layer_blocks: Vec<usize>,
    /// `i_c`: blocks `1..=i_c` are frozen.
    pub frozen_through: usize,
    /// Blocks to gate; `None` gates every frozen block before `i_c`.
    #[serde(default)]
    pub gate_blocks: Option<Vec<usize>>,
    pub lambda1: f64,
    /// Explicit group lasso coefficient.
    #[serde(default)]
    pub lambda2: Option<f64>,
    /// Couples the group lasso coefficient to `lambda2_ratio * lambda1`.
    #[serde(default)]
    pub lambda2_ratio: Option<f64>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub mode: PenaltyMode,
}

impl SorConfig {
    /// Settings for the two-convolution toy model: freeze both convolution
    /// blocks, gate block one, group lasso at `0.1 * lambda1` on the dense layer.
    pub fn toy(lambda1: f64) -> Self {
        SorConfig {
            layer_blocks: toy_layer_blocks(),
            frozen_through: 2,
            gate_blocks: None,
            lambda1,
            lambda2: None,
            lambda2_ratio: Some(0.1),
            threshold: DEFAULT_THRESHOLD,
            mode: PenaltyMode::default(),
        }
    }

    pub fn lambda2(&self) -> Result<f64> {
        match (self.lambda2, self.lambda2_ratio) {
            (Some(v), None) => Ok(v),
            (None, Some(r)) => Ok(r * self.lambda1),
            (Some(_), Some(_)) => Err(SorError::invalid("set either lambda2 or lambda2_ratio, not both")),
            (None, None) => Err(SorError::invalid("one of lambda2 or lambda2_ratio is required")),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SorError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Partitions, freezes and gates `model` and builds the objective.
pub fn apply_sor(model: &ModelGraph, cfg: &SorConfig) -> Result<(ModelGraph, SorMeta)> {
    if !(cfg.threshold > 0.0) {
        return Err(SorError::invalid("threshold must be > 0"));
    }
    let mut base = model.clone();
    let mut partition = define_blocks(&base, cfg.layer_blocks.clone())?;
    freeze(&mut base, &mut partition, cfg.frozen_through)?;
    let (gated, partition, gates) = match &cfg.gate_blocks {
        None => insert_gates(&base, &partition)?,
        Some(blocks) => insert_gates_at(&base, &partition, blocks)?,
    };
    let objective =
        ObjectiveConfig::new(&gated, &partition, gates, cfg.lambda1, cfg.lambda2()?)?.with_mode(cfg.mode);
    Ok((gated, SorMeta { partition, objective }))
}

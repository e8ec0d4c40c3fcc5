//! Zeroing sub-threshold gates and groups, then excising the dead channels.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SorError};
use crate::nn::model::ModelGraph;
use crate::sor::gates::GateSet;
use crate::sor::partition::BlockPartition;
use crate::sor::penalty::{build_groups, ObjectiveConfig};
use crate::sor::SorMeta;

/// Removal threshold used when none is configured.
pub const DEFAULT_THRESHOLD: f64 = 1e-3;

/// A regularized output channel: block `block`, channel `channel`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChannelRef {
    pub block: usize,
    pub channel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub threshold: f64,
    pub removed_gates: Vec<ChannelRef>,
    pub removed_groups: Vec<ChannelRef>,
    pub total_gates: usize,
    pub total_groups: usize,
    pub removed_fraction: f64,
    pub params_before: usize,
    pub params_after: usize,
    /// Number of parameters removed.
    pub parameter_delta: usize,
    /// Blocks left with no output channels.
    pub degenerate_blocks: Vec<usize>,
}

impl PruneReport {
    pub fn is_degenerate(&self) -> bool {
        !self.degenerate_blocks.is_empty()
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(SorError::invalid(format!("threshold must be > 0, got {threshold}")));
    }
    Ok(())
}

/// Gates with `|beta| < threshold`.
pub fn gates_below(model: &ModelGraph, gates: &GateSet, threshold: f64) -> Vec<ChannelRef> {
    let mut out = Vec::new();
    for (block, l) in gates.iter() {
        for (channel, b) in model.layers[l].params[0].value.data().iter().enumerate() {
            if b.abs() < threshold {
                out.push(ChannelRef { block, channel });
            }
        }
    }
    out
}

/// Groups whose largest absolute weight is below `threshold`.
pub fn groups_below(model: &ModelGraph, cfg: &ObjectiveConfig, threshold: f64) -> Vec<ChannelRef> {
    cfg.groups
        .iter()
        .filter(|g| {
            cfg.group_weights(model, g)
                .iter()
                .fold(0.0f64, |m, w| m.max(w.abs()))
                < threshold
        })
        .map(|g| ChannelRef {
            block: g.block,
            channel: g.channel,
        })
        .collect()
}

/// Fraction of regularized outputs (gate entries plus groups) under `threshold`.
pub fn removed_fraction(model: &ModelGraph, cfg: &ObjectiveConfig, threshold: f64) -> Result<f64> {
    check_threshold(threshold)?;
    let total = cfg.gates.total(model) + cfg.groups.len();
    if total == 0 {
        return Ok(0.0);
    }
    let removed = gates_below(model, &cfg.gates, threshold).len() + groups_below(model, cfg, threshold).len();
    Ok(removed as f64 / total as f64)
}

/// Phase one: sets every sub-threshold gate and group exactly to zero.
pub fn zero_below_threshold(model: &mut ModelGraph, cfg: &ObjectiveConfig, threshold: f64) -> Result<()> {
    check_threshold(threshold)?;
    for r in gates_below(model, &cfg.gates, threshold) {
        let l = cfg.gates.layer_of(r.block).expect("gate block");
        model.layers[l].params[0].value.data_mut()[r.channel] = 0.0;
    }
    for r in groups_below(model, cfg, threshold) {
        let g = cfg
            .groups
            .iter()
            .find(|g| g.block == r.block && g.channel == r.channel)
            .expect("group exists");
        let layer = &mut model.layers[g.layer];
        let axis = layer.input_axis().expect("weighted");
        layer.params[0].value.for_each_in_slice(axis, g.channel, |w| *w = 0.0);
    }
    Ok(())
}

/// Phase two: removes every channel whose gate is exactly zero or whose group
/// is entirely zero, together with the producing filter, the gate entry and
/// the consuming weights. Model outputs are unchanged.
pub fn remove_dead_channels(
    model: &ModelGraph,
    partition: &BlockPartition,
    cfg: &ObjectiveConfig,
) -> Result<(ModelGraph, ObjectiveConfig, Vec<ChannelRef>, Vec<ChannelRef>)> {
    let mut dead: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    let mut dead_gates = Vec::new();
    for (block, l) in cfg.gates.iter() {
        for (channel, &b) in model.layers[l].params[0].value.data().iter().enumerate() {
            if b == 0.0 {
                dead.entry(block).or_default().insert(channel);
                dead_gates.push(ChannelRef { block, channel });
            }
        }
    }
    let mut dead_groups = Vec::new();
    for g in &cfg.groups {
        if cfg.group_weights(model, g).iter().all(|&w| w == 0.0) {
            dead.entry(g.block).or_default().insert(g.channel);
            dead_groups.push(ChannelRef {
                block: g.block,
                channel: g.channel,
            });
        }
    }

    let mut pruned = model.clone();
    for (&block, channels) in &dead {
        let total = partition.block_channels(model, block)?;
        let keep: Vec<usize> = (0..total).filter(|c| !channels.contains(c)).collect();
        let producer = partition
            .producer(model, block)
            .ok_or_else(|| SorError::invalid(format!("block {block} has no producing layer")))?;
        let consumer = partition
            .consumer(model, block)
            .ok_or_else(|| SorError::invalid(format!("block {block} output is not consumed")))?;
        pruned.layers[producer].keep_outputs(&keep);
        for l in producer + 1..partition.layers_of(block).end {
            pruned.layers[l].keep_outputs(&keep);
        }
        pruned.layers[consumer].keep_inputs(&keep);
    }
    let pruned = ModelGraph::from_layers(model.input_shape().to_vec(), pruned.layers)?;
    let groups = build_groups(&pruned, partition, &cfg.omega_zero())?;
    let new_cfg = ObjectiveConfig {
        groups,
        ..cfg.clone()
    };
    Ok((pruned, new_cfg, dead_gates, dead_groups))
}

/// Zero phase followed by removal; returns the pruned model, its metadata and a report.
pub fn prune(model: &ModelGraph, meta: &SorMeta, threshold: f64) -> Result<(ModelGraph, SorMeta, PruneReport)> {
    check_threshold(threshold)?;
    let cfg = &meta.objective;
    let total_gates = cfg.gates.total(model);
    let total_groups = cfg.groups.len();
    let mut zeroed = model.clone();
    zero_below_threshold(&mut zeroed, cfg, threshold)?;
    let (pruned, new_cfg, removed_gates, removed_groups) = remove_dead_channels(&zeroed, &meta.partition, cfg)?;

    let mut degenerate_blocks = Vec::new();
    for block in 1..meta.partition.num_blocks() {
        if meta.partition.block_channels(&pruned, block)? == 0 {
            degenerate_blocks.push(block);
        }
    }
    let total = total_gates + total_groups;
    let removed_fraction = if total == 0 {
        0.0
    } else {
        (removed_gates.len() + removed_groups.len()) as f64 / total as f64
    };
    let params_before = model.param_count();
    let params_after = pruned.param_count();
    let report = PruneReport {
        threshold,
        removed_gates,
        removed_groups,
        total_gates,
        total_groups,
        removed_fraction,
        params_before,
        params_after,
        parameter_delta: params_before - params_after,
        degenerate_blocks,
    };
    let meta = SorMeta {
        partition: meta.partition.clone(),
        objective: new_cfg,
    };
    Ok((pruned, meta, report))
}

//! The regularized objective: task loss + L1 on gates + group lasso on the
//! weights that consume each regularized block output.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SorError};
use crate::nn::model::ModelGraph;
use crate::sor::gates::GateSet;
use crate::sor::partition::BlockPartition;

/// Group norms at or below this get a zero subgradient.
pub const GROUP_NORM_EPS: f64 = 1e-12;

/// One group: every weight of `layer` that reads input channel `channel`,
/// which is output channel `channel` of block `block`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupSpec {
    pub block: usize,
    pub layer: usize,
    pub channel: usize,
}

/// How the non-smooth penalty terms enter each optimizer step.
///
/// With plain subgradients a gate whose data gradient has vanished keeps
/// jumping across zero by `lr * lambda1` per step and never settles below a
/// small removal threshold. The proximal step lands on exact zeros instead,
/// which is why it is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyMode {
    /// Penalty subgradients are added to the data gradient.
    Subgradient,
    /// The step uses the data gradient only, then applies the penalties'
    /// proximal maps (soft thresholding for gates, block soft thresholding
    /// for groups).
    #[default]
    Proximal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub gates: GateSet,
    pub groups: Vec<GroupSpec>,
    #[serde(default)]
    pub mode: PenaltyMode,
}

/// Penalty values at the current parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PenaltyValue {
    pub l1: f64,
    pub group: f64,
}

impl PenaltyValue {
    pub fn total(&self) -> f64 {
        self.l1 + self.group
    }
}

impl ObjectiveConfig {
    /// Gates on `gates`' blocks and group lasso on every other block `i < L`
    /// whose successor is trainable.
    pub fn new(
        model: &ModelGraph,
        partition: &BlockPartition,
        gates: GateSet,
        lambda1: f64,
        lambda2: f64,
    ) -> Result<Self> {
        let gated: BTreeSet<usize> = gates.blocks().collect();
        let omega_zero: Vec<usize> = (1..partition.num_blocks())
            .filter(|b| !gated.contains(b) && !partition.is_frozen(b + 1))
            .collect();
        let groups = build_groups(model, partition, &omega_zero)?;
        let cfg = ObjectiveConfig {
            lambda1,
            lambda2,
            gates,
            groups,
            mode: PenaltyMode::default(),
        };
        cfg.validate(model)?;
        Ok(cfg)
    }

    pub fn with_mode(mut self, mode: PenaltyMode) -> Self {
        self.mode = mode;
        self
    }

    /// Blocks regularized by gates.
    pub fn omega_new(&self) -> Vec<usize> {
        self.gates.blocks().collect()
    }

    /// Blocks regularized by group lasso.
    pub fn omega_zero(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.groups.iter().map(|g| g.block).collect();
        set.into_iter().collect()
    }

    pub fn validate(&self, model: &ModelGraph) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SorError::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        let new: BTreeSet<usize> = self.gates.blocks().collect();
        if let Some(b) = self.omega_zero().into_iter().find(|b| new.contains(b)) {
            return Err(SorError::invalid(format!(
                "block {b} is regularized by both a gate and group lasso"
            )));
        }
        let mut seen = BTreeSet::new();
        for g in &self.groups {
            if !seen.insert((g.layer, g.channel)) {
                return Err(SorError::invalid(format!(
                    "weights of layer {} input channel {} appear in two groups",
                    g.layer, g.channel
                )));
            }
            let layer = model
                .layers
                .get(g.layer)
                .ok_or_else(|| SorError::invalid(format!("group refers to missing layer {}", g.layer)))?;
            let axis = layer
                .input_axis()
                .ok_or_else(|| SorError::invalid(format!("layer {} has no weights to group", g.layer)))?;
            if g.channel >= layer.params[0].value.shape()[axis] {
                return Err(SorError::invalid(format!(
                    "layer {} has no input channel {}",
                    g.layer, g.channel
                )));
            }
        }
        for (b, l) in self.gates.iter() {
            match model.layers.get(l) {
                Some(layer) if matches!(layer.spec, crate::nn::LayerSpec::Gate { .. }) => {}
                _ => return Err(SorError::invalid(format!("gate for block {b} is not at layer {l}"))),
            }
        }
        Ok(())
    }

    /// Weights of one group, in storage order.
    pub fn group_weights(&self, model: &ModelGraph, group: &GroupSpec) -> Vec<f64> {
        let layer = &model.layers[group.layer];
        let axis = layer.input_axis().expect("validated weighted layer");
        layer.params[0].value.slice_values(axis, group.channel)
    }
}

/// One group per input channel of the first weighted layer of block `i + 1`,
/// for each `i` in `omega_zero`.
pub fn build_groups(model: &ModelGraph, partition: &BlockPartition, omega_zero: &[usize]) -> Result<Vec<GroupSpec>> {
    let mut groups = Vec::new();
    for &block in omega_zero {
        let layer = partition
            .consumer(model, block)
            .ok_or_else(|| SorError::invalid(format!("block {block} has no consuming layer")))?;
        let axis = model.layers[layer].input_axis().expect("consumer is weighted");
        let channels = model.layers[layer].params[0].value.shape()[axis];
        groups.extend((0..channels).map(|channel| GroupSpec { block, layer, channel }));
    }
    Ok(groups)
}

/// `lambda1 * sum |beta|`.
pub fn l1_value<'a>(betas: impl IntoIterator<Item = &'a f64>, lambda1: f64) -> Result<f64> {
    if !(lambda1 >= 0.0) {
        return Err(SorError::invalid(format!("lambda1 must be >= 0, got {lambda1}")));
    }
    Ok(lambda1 * betas.into_iter().map(|b| b.abs()).sum::<f64>())
}

/// L1 penalty over every gate of the model.
pub fn l1_penalty(model: &ModelGraph, gates: &GateSet, lambda1: f64) -> Result<f64> {
    let all = gates
        .iter()
        .flat_map(|(_, l)| model.layers[l].params[0].value.data().iter());
    l1_value(all, lambda1)
}

/// `lambda2 * sum_k ||w_k||_2` over explicit groups of weights.
pub fn group_lasso_value(groups: &[Vec<f64>], lambda2: f64) -> Result<f64> {
    if !(lambda2 >= 0.0) {
        return Err(SorError::invalid(format!("lambda2 must be >= 0, got {lambda2}")));
    }
    Ok(lambda2 * groups.iter().map(|g| norm(g)).sum::<f64>())
}

/// Group lasso penalty over the configured groups of the model.
pub fn group_lasso_penalty(model: &ModelGraph, cfg: &ObjectiveConfig) -> Result<f64> {
    let groups: Vec<Vec<f64>> = cfg.groups.iter().map(|g| cfg.group_weights(model, g)).collect();
    group_lasso_value(&groups, cfg.lambda2)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn penalty_value(model: &ModelGraph, cfg: &ObjectiveConfig) -> Result<PenaltyValue> {
    Ok(PenaltyValue {
        l1: l1_penalty(model, &cfg.gates, cfg.lambda1)?,
        group: group_lasso_penalty(model, cfg)?,
    })
}

/// `psi = data_loss + l1 + group lasso`.
pub fn objective(data_loss: f64, model: &ModelGraph, cfg: &ObjectiveConfig) -> Result<f64> {
    Ok(data_loss + penalty_value(model, cfg)?.total())
}

/// Adds `lambda1 * sign(beta)` (sign(0) = 0) to gate gradients and
/// `lambda2 * w_k / ||w_k||` to group weights whose norm exceeds [`GROUP_NORM_EPS`].
pub fn add_penalty_subgradients(model: &mut ModelGraph, cfg: &ObjectiveConfig) -> Result<()> {
    for (_, l) in cfg.gates.iter() {
        let p = &mut model.layers[l].params[0];
        for (g, &b) in p.grad.data_mut().iter_mut().zip(p.value.data()) {
            *g += cfg.lambda1 * sign(b);
        }
    }
    for group in &cfg.groups {
        let n = norm(&cfg.group_weights(model, group));
        if n <= GROUP_NORM_EPS {
            continue;
        }
        let layer = &mut model.layers[group.layer];
        let axis = layer.input_axis().expect("weighted");
        let scale = cfg.lambda2 / n;
        let w = layer.params[0].value.slice_values(axis, group.channel);
        let mut it = w.into_iter();
        layer.params[0]
            .grad
            .for_each_in_slice(axis, group.channel, |g| *g += scale * it.next().expect("same slice"));
    }
    Ok(())
}

/// Applies the proximal maps of both penalty terms for step size `lr`.
pub fn apply_proximal(model: &mut ModelGraph, cfg: &ObjectiveConfig, lr: f64) {
    let t1 = lr * cfg.lambda1;
    for (_, l) in cfg.gates.iter() {
        for b in model.layers[l].params[0].value.data_mut() {
            *b = sign(*b) * (b.abs() - t1).max(0.0);
        }
    }
    let t2 = lr * cfg.lambda2;
    for group in &cfg.groups {
        let n = norm(&cfg.group_weights(model, group));
        let scale = if n <= t2 { 0.0 } else { 1.0 - t2 / n };
        let layer = &mut model.layers[group.layer];
        let axis = layer.input_axis().expect("weighted");
        layer.params[0].value.for_each_in_slice(axis, group.channel, |w| *w *= scale);
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ops::Activation;
    use crate::nn::{Layer, LayerSpec};
    use crate::rng::stream;
    use crate::sor::gates::insert_gates;
    use crate::sor::partition::{define_blocks, freeze, toy_layer_blocks};
    use crate::tensor::Tensor;

    fn gated_toy(filters: usize) -> (ModelGraph, ObjectiveConfig) {
        let mut model = ModelGraph::toy_cnn([12, 12, 1], filters, &mut stream(4)).unwrap();
        let mut p = define_blocks(&model, toy_layer_blocks()).unwrap();
        freeze(&mut model, &mut p, 2).unwrap();
        let (gated, gp, gates) = insert_gates(&model, &p).unwrap();
        let cfg = ObjectiveConfig::new(&gated, &gp, gates, 0.5, 0.05).unwrap();
        (gated, cfg)
    }

    #[test]
    fn l1_hand_sum() {
        assert_eq!(l1_value(&[1.0, -2.0, 0.0], 0.5).unwrap(), 1.5);
        assert_eq!(l1_value(&[1.0, -2.0, 0.0], 0.0).unwrap(), 0.0);
        assert!(l1_value(&[1.0], -0.1).is_err());
    }

    #[test]
    fn fresh_gates_cost_lambda_times_count() {
        let (model, cfg) = gated_toy(6);
        assert_eq!(l1_penalty(&model, &cfg.gates, 0.25).unwrap(), 0.25 * 6.0);
    }

    #[test]
    fn group_lasso_three_four_five() {
        assert_eq!(group_lasso_value(&[vec![3.0, 4.0]], 1.0).unwrap(), 5.0);
        assert_eq!(group_lasso_value(&[vec![0.0; 4], vec![0.0]], 2.0).unwrap(), 0.0);
    }

    #[test]
    fn toy_groups_are_dense_rows() {
        let (model, cfg) = gated_toy(4);
        assert_eq!(cfg.omega_new(), vec![1]);
        assert_eq!(cfg.omega_zero(), vec![2]);
        assert_eq!(cfg.groups.len(), 4);
        assert!(cfg.groups.iter().all(|g| g.layer == 7 && g.block == 2));
        let w = model.layers[7].params[0].value.data().to_vec();
        for g in &cfg.groups {
            assert_eq!(cfg.group_weights(&model, g), vec![w[g.channel]]);
        }
    }

    #[test]
    fn overlapping_or_double_regularized_configs_are_rejected() {
        let (model, cfg) = gated_toy(3);
        let mut dup = cfg.clone();
        dup.groups.push(dup.groups[0]);
        assert!(dup.validate(&model).is_err());

        let mut twice = cfg.clone();
        twice.groups.push(GroupSpec {
            block: 1,
            layer: 4,
            channel: 0,
        });
        let err = twice.validate(&model).unwrap_err();
        assert!(err.to_string().contains("both"), "{err}");

        let mut neg = cfg;
        neg.lambda1 = -1.0;
        assert!(neg.validate(&model).is_err());
    }

    #[test]
    fn zero_groups_have_zero_subgradient() {
        let (mut model, mut cfg) = gated_toy(3);
        cfg.lambda1 = 0.0;
        model.layers[7].params[0].value.fill(0.0);
        model.zero_grads();
        add_penalty_subgradients(&mut model, &cfg).unwrap();
        assert!(model.layers[7].params[0].grad.data().iter().all(|&g| g == 0.0));
        assert_eq!(group_lasso_penalty(&model, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn group_value_matches_per_group_loop_on_conv_consumer() {
        // regularize block 1's output through conv2's input slices
        let mut rng = stream(21);
        let mut model = ModelGraph::toy_cnn([12, 12, 1], 8, &mut rng).unwrap();
        let mut p = define_blocks(&model, toy_layer_blocks()).unwrap();
        freeze(&mut model, &mut p, 1).unwrap();
        let cfg = ObjectiveConfig::new(&model, &p, GateSet::default(), 0.0, 0.3).unwrap();
        assert_eq!(cfg.omega_zero(), vec![1, 2]);
        let w = model.layers[3].params[0].value.clone();
        let mut oracle = 0.0;
        for k in 0..8 {
            let mut sq = 0.0;
            for dy in 0..3 {
                for dx in 0..3 {
                    for co in 0..8 {
                        let v = w.data()[((dy * 3 + dx) * 8 + k) * 8 + co];
                        sq += v * v;
                    }
                }
            }
            oracle += sq.sqrt();
        }
        let dense = model.layers[6].params[0].value.data();
        for k in 0..8 {
            oracle += dense[k].abs();
        }
        let got = group_lasso_penalty(&model, &cfg).unwrap();
        assert!((got - 0.3 * oracle).abs() < 1e-12);
    }

    #[test]
    fn proximal_maps_reach_exact_zero() {
        let layer = Layer::with_params(LayerSpec::dense(2, 1, Activation::Sigmoid), vec![
            Tensor::new(vec![2, 1], vec![0.05, -3.0]).unwrap(),
            Tensor::zeros(&[1]),
        ])
        .unwrap();
        let model = ModelGraph::from_layers(vec![2], vec![layer]).unwrap();
        let cfg = ObjectiveConfig {
            lambda1: 0.0,
            lambda2: 1.0,
            gates: GateSet::default(),
            groups: vec![
                GroupSpec { block: 1, layer: 0, channel: 0 },
                GroupSpec { block: 1, layer: 0, channel: 1 },
            ],
            mode: PenaltyMode::Proximal,
        };
        let mut m = model.clone();
        apply_proximal(&mut m, &cfg, 0.1);
        let w = m.layers[0].params[0].value.data();
        assert_eq!(w[0], 0.0);
        assert!((w[1] + 2.9).abs() < 1e-15);
    }
}

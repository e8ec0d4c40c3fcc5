//! Scalar gates on block output channels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SorError};
use crate::nn::layer::{Layer, LayerSpec};
use crate::nn::model::ModelGraph;
use crate::sor::partition::BlockPartition;
use crate::tensor::Tensor;

/// Which blocks carry gates (the set Omega_new) and the layer holding each gate.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateSet {
    gates: BTreeMap<usize, usize>,
}

impl GateSet {
    pub fn blocks(&self) -> impl Iterator<Item = usize> + '_ {
        self.gates.keys().copied()
    }

    pub fn layer_of(&self, block: usize) -> Option<usize> {
        self.gates.get(&block).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.gates.iter().map(|(&b, &l)| (b, l))
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    /// Gate values of `block`.
    pub fn betas<'m>(&self, model: &'m ModelGraph, block: usize) -> Option<&'m [f64]> {
        let l = self.layer_of(block)?;
        Some(model.layers[l].params[0].value.data())
    }

    /// Total number of gate scalars.
    pub fn total(&self, model: &ModelGraph) -> usize {
        self.gates.values().map(|&l| model.layers[l].params[0].value.len()).sum()
    }

    pub(crate) fn from_map(gates: BTreeMap<usize, usize>) -> Self {
        GateSet { gates }
    }
}

/// `out[.., j] = beta[j] * a[.., j]`.
pub fn gate_forward(a: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let c = beta.len();
    if a.channels() != c || a.rank() == 0 {
        return Err(SorError::dim(format!(
            "gate of length {c} applied to tensor of shape {:?}",
            a.shape()
        )));
    }
    let mut out = a.clone();
    if c > 0 {
        for px in out.data_mut().chunks_exact_mut(c) {
            for (v, &b) in px.iter_mut().zip(beta.data()) {
                *v *= b;
            }
        }
    }
    Ok(out)
}

/// Returns the input gradient and `d beta[j] = sum over positions of grad * a` on channel j.
pub fn gate_backward(a: &Tensor, beta: &Tensor, grad: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    let c = beta.len();
    if a.shape() != grad.shape() || a.channels() != c {
        return Err(SorError::dim("gate backward shape mismatch"));
    }
    let mut gin = grad.clone();
    let mut dbeta = vec![0.0; c];
    if c > 0 {
        for (gpx, apx) in gin.data_mut().chunks_exact_mut(c).zip(a.data().chunks_exact(c)) {
            for j in 0..c {
                dbeta[j] += gpx[j] * apx[j];
                gpx[j] *= beta.data()[j];
            }
        }
    }
    Ok((gin, dbeta))
}

/// Adds a gate after every frozen block `i < i_c`.
pub fn insert_gates(model: &ModelGraph, partition: &BlockPartition) -> Result<(ModelGraph, BlockPartition, GateSet)> {
    let blocks: Vec<usize> = (1..partition.frozen_through()).collect();
    insert_gates_at(model, partition, &blocks)
}

/// Adds a gate after each listed block. Only frozen blocks before `i_c` may be
/// gated: `i_c`'s output is regularized through the next block's weights, and
/// gating it as well would add a parameter with no purpose.
pub fn insert_gates_at(
    model: &ModelGraph,
    partition: &BlockPartition,
    blocks: &[usize],
) -> Result<(ModelGraph, BlockPartition, GateSet)> {
    let ic = partition.frozen_through();
    if ic == 0 && !blocks.is_empty() {
        return Err(SorError::invalid("freeze blocks before inserting gates"));
    }
    let mut sorted = blocks.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for &b in &sorted {
        if b == ic {
            return Err(SorError::invalid(format!(
                "block {b} is i_c; its output is regularized by group lasso on block {}, a gate would be redundant",
                b + 1
            )));
        }
        if b == 0 || b > ic {
            return Err(SorError::invalid(format!("block {b} is not frozen and cannot be gated")));
        }
        if partition
            .layers_of(b)
            .any(|l| matches!(model.layers[l].spec, LayerSpec::Gate { .. }))
        {
            return Err(SorError::invalid(format!("block {b} already has a gate")));
        }
    }

    let channels = sorted
        .iter()
        .map(|&b| partition.block_channels(model, b))
        .collect::<Result<Vec<_>>>()?;
    let mut layers = model.layers.clone();
    let mut partition = partition.clone();
    let mut positions = Vec::with_capacity(sorted.len());
    for (&b, &c) in sorted.iter().zip(&channels) {
        let at = partition.layers_of(b).end;
        let gate = Layer::with_params(LayerSpec::Gate { channels: c }, vec![Tensor::full(&[c], 1.0)])?;
        layers.insert(at, gate);
        partition.insert_layer(at, b);
        positions.push((b, at));
    }
    let gated = ModelGraph::from_layers(model.input_shape().to_vec(), layers)?;
    let gates = GateSet::from_map(positions.into_iter().collect());
    Ok((gated, partition, gates))
}

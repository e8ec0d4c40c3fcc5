//! Empirical checks of the structural properties pruning relies on.

use rand::RngCore;

use crate::error::{Result, SorError};
use crate::nn::model::ModelGraph;
use crate::rng::uniform;
use crate::sor::partition::BlockPartition;
use crate::tensor::Tensor;

fn random_tensor(shape: &[usize], rng: &mut impl RngCore) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| uniform(rng, -1.0, 1.0)).collect()).expect("sized")
}

fn zero_channel(t: &mut Tensor, channel: usize) {
    let axis = t.rank() - 1;
    t.for_each_in_slice(axis, channel, |v| *v = 0.0);
}

/// Zeroes every weight of block `i + 1` that reads channel `k` of block `i`'s
/// output, then checks on `trials` random block inputs that the model output
/// no longer depends on that channel.
pub fn check_assumption2(
    model: &ModelGraph,
    partition: &BlockPartition,
    block: usize,
    channel: usize,
    trials: usize,
    rng: &mut impl RngCore,
) -> Result<bool> {
    let consumer = partition
        .consumer(model, block)
        .ok_or_else(|| SorError::invalid(format!("block {} does not exist", block + 1)))?;
    let mut probe = model.clone();
    let layer = &mut probe.layers[consumer];
    let axis = layer.input_axis().expect("consumer is weighted");
    if channel >= layer.params[0].value.shape()[axis] {
        return Err(SorError::invalid(format!("block {block} has no output channel {channel}")));
    }
    layer.params[0].value.for_each_in_slice(axis, channel, |w| *w = 0.0);

    let start = partition.layers_of(block + 1).start;
    let shape = probe.shape_before(start)?;
    let range = start..probe.len();
    for _ in 0..trials {
        let z = random_tensor(&shape, rng);
        let mut zeroed = z.clone();
        zero_channel(&mut zeroed, channel);
        if probe.forward_range(range.clone(), &z)? != probe.forward_range(range.clone(), &zeroed)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Zeroes the parameters of the subfunction producing channel `j` of block
/// `i` and checks on `trials` random model inputs whether that channel is
/// then identically zero.
pub fn check_condition1(
    model: &ModelGraph,
    partition: &BlockPartition,
    block: usize,
    channel: usize,
    trials: usize,
    rng: &mut impl RngCore,
) -> Result<bool> {
    let producer = partition
        .producer(model, block)
        .ok_or_else(|| SorError::invalid(format!("block {block} has no producing layer")))?;
    let mut probe = model.clone();
    let layer = &mut probe.layers[producer];
    let axis = layer.output_axis().expect("producer is weighted");
    if channel >= layer.params[0].value.shape()[axis] {
        return Err(SorError::invalid(format!("block {block} has no output channel {channel}")));
    }
    layer.params[0].value.for_each_in_slice(axis, channel, |w| *w = 0.0);
    layer.params[1].value.data_mut()[channel] = 0.0;

    let end = partition.layers_of(block).end;
    let shape = probe.input_shape().to_vec();
    for _ in 0..trials {
        let x = random_tensor(&shape, rng);
        let out = probe.forward_range(0..end, &x)?;
        let axis = out.rank() - 1;
        if out.slice_values(axis, channel).iter().any(|&v| v != 0.0) {
            return Ok(false);
        }
    }
    Ok(true)
}

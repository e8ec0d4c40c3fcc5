//! Block partitions and freezing.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SorError};
use crate::nn::layer::LayerSpec;
use crate::nn::model::ModelGraph;

/// Assignment of every model layer to a contiguous block `1..=L`, plus the
/// index `i_c` of the last frozen block (0 while nothing is frozen).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    layer_blocks: Vec<usize>,
    frozen_through: usize,
}

impl BlockPartition {
    pub fn num_blocks(&self) -> usize {
        self.layer_blocks.last().copied().unwrap_or(0)
    }

    pub fn layer_blocks(&self) -> &[usize] {
        &self.layer_blocks
    }

    pub fn block_of(&self, layer: usize) -> usize {
        self.layer_blocks[layer]
    }

    /// Layer indices of block `block` (1-based).
    pub fn layers_of(&self, block: usize) -> Range<usize> {
        let start = self.layer_blocks.iter().position(|&b| b == block).unwrap_or(0);
        let end = self.layer_blocks.iter().rposition(|&b| b == block).map_or(0, |e| e + 1);
        start..end
    }

    /// `i_c`, the last frozen block.
    pub fn frozen_through(&self) -> usize {
        self.frozen_through
    }

    pub fn is_frozen(&self, block: usize) -> bool {
        block >= 1 && block <= self.frozen_through
    }

    /// Last weighted layer of `block`; it produces the block's output channels.
    pub fn producer(&self, model: &ModelGraph, block: usize) -> Option<usize> {
        self.layers_of(block).rev().find(|&l| model.layers[l].spec.is_weighted())
    }

    /// First weighted layer of the block after `block`; it consumes `block`'s
    /// output channels one-to-one.
    pub fn consumer(&self, model: &ModelGraph, block: usize) -> Option<usize> {
        if block >= self.num_blocks() {
            return None;
        }
        self.layers_of(block + 1).find(|&l| model.layers[l].spec.is_weighted())
    }

    /// Number of output channels of `block`.
    pub fn block_channels(&self, model: &ModelGraph, block: usize) -> Result<usize> {
        let end = self.layers_of(block).end;
        Ok(model.shape_before(end)?.last().copied().unwrap_or(0))
    }

    /// Records a gate layer inserted at `layer` (appended to `block`).
    pub(crate) fn insert_layer(&mut self, layer: usize, block: usize) {
        self.layer_blocks.insert(layer, block);
    }
}

/// Splits `model` into blocks. `layer_blocks[l]` is the 1-based block of layer `l`.
///
/// Rejects partitions that are not contiguous, have fewer than two blocks,
/// separate an activation or gate from the layer feeding it, contain a block
/// without weights, or contain a block that forwards its own input unchanged
/// (zeroing weights could then never silence one of its input channels).
pub fn define_blocks(model: &ModelGraph, layer_blocks: Vec<usize>) -> Result<BlockPartition> {
    if layer_blocks.len() != model.len() {
        return Err(SorError::invalid(format!(
            "partition covers {} layers but the model has {}",
            layer_blocks.len(),
            model.len()
        )));
    }
    if layer_blocks.first() != Some(&1) {
        return Err(SorError::invalid("the first layer must belong to block 1"));
    }
    for (l, pair) in layer_blocks.windows(2).enumerate() {
        if pair[1] != pair[0] && pair[1] != pair[0] + 1 {
            return Err(SorError::invalid(format!(
                "blocks must be contiguous and ordered; layer {} jumps from block {} to {}",
                l + 1,
                pair[0],
                pair[1]
            )));
        }
    }
    let partition = BlockPartition {
        layer_blocks,
        frozen_through: 0,
    };
    let blocks = partition.num_blocks();
    if blocks < 2 {
        return Err(SorError::invalid("at least two blocks are required"));
    }
    for block in 1..=blocks {
        let range = partition.layers_of(block);
        let first = &model.layers[range.start].spec;
        if block > 1 && matches!(first, LayerSpec::Activation { .. } | LayerSpec::Gate { .. }) {
            return Err(SorError::invalid(format!(
                "block {block} starts at layer {} ({}), splitting it from the layer that produces its input",
                range.start,
                first.name()
            )));
        }
        if partition.producer(model, block).is_none() {
            return Err(SorError::invalid(format!("block {block} contains no weighted layer")));
        }
        if block > 1 {
            // Track whether the raw block input still reaches the block output.
            let mut raw = true;
            for l in range.clone() {
                match model.layers[l].spec {
                    LayerSpec::Dense { concat_input: true, .. } => {
                        if raw {
                            return Err(SorError::invalid(format!(
                                "block {block}: layer {l} forwards its input unchanged, so zeroing \
                                 the weights touching an input channel cannot remove it"
                            )));
                        }
                    }
                    ref s if s.is_weighted() => raw = false,
                    _ => {}
                }
            }
        }
    }
    Ok(partition)
}

/// Builds a partition from the first layer index of each block.
pub fn define_blocks_at(model: &ModelGraph, starts: &[usize]) -> Result<BlockPartition> {
    if starts.first() != Some(&0) {
        return Err(SorError::invalid("the first block must start at layer 0"));
    }
    let mut layer_blocks = vec![0; model.len()];
    for (b, &s) in starts.iter().enumerate() {
        let end = starts.get(b + 1).copied().unwrap_or(model.len());
        if s >= end || end > model.len() {
            return Err(SorError::invalid(format!("bad block boundaries {starts:?}")));
        }
        layer_blocks[s..end].iter_mut().for_each(|v| *v = b + 1);
    }
    define_blocks(model, layer_blocks)
}

/// Freezes blocks `1..=i_c` and unfreezes the rest. Gate layers stay trainable.
pub fn freeze(model: &mut ModelGraph, partition: &mut BlockPartition, frozen_through: usize) -> Result<()> {
    let blocks = partition.num_blocks();
    if frozen_through < 1 || frozen_through >= blocks {
        return Err(SorError::invalid(format!(
            "i_c must satisfy 1 <= i_c < L = {blocks}, got {frozen_through}"
        )));
    }
    if partition.layer_blocks.len() != model.len() {
        return Err(SorError::invalid("partition does not match the model"));
    }
    for (l, layer) in model.layers.iter_mut().enumerate() {
        let is_gate = matches!(layer.spec, LayerSpec::Gate { .. });
        layer.frozen = !is_gate && partition.layer_blocks[l] <= frozen_through;
    }
    partition.frozen_through = frozen_through;
    Ok(())
}

/// Block split used for the two-convolution toy model:
/// `[conv, relu, pool] [conv, relu, gap] [dense]`.
pub fn toy_layer_blocks() -> Vec<usize> {
    vec![1, 1, 1, 2, 2, 2, 3]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ops::Activation;
    use crate::rng::stream;

    fn toy() -> ModelGraph {
        ModelGraph::toy_cnn([12, 12, 1], 3, &mut stream(2)).unwrap()
    }

    #[test]
    fn toy_split_is_accepted() {
        let model = toy();
        let p = define_blocks(&model, toy_layer_blocks()).unwrap();
        assert_eq!(p.num_blocks(), 3);
        assert_eq!(p.layers_of(2), 3..6);
        assert_eq!(p.producer(&model, 1), Some(0));
        assert_eq!(p.consumer(&model, 1), Some(3));
        assert_eq!(p.consumer(&model, 2), Some(6));
        assert_eq!(p.block_channels(&model, 2).unwrap(), 3);
        assert_eq!(define_blocks_at(&model, &[0, 3, 6]).unwrap(), p);
    }

    #[test]
    fn single_block_is_rejected() {
        let model = toy();
        assert!(define_blocks(&model, vec![1; 7]).is_err());
    }

    #[test]
    fn boundary_inside_a_conv_layer_is_rejected() {
        let model = toy();
        // conv2 in block 1, its relu in block 2
        let err = define_blocks(&model, vec![1, 1, 1, 1, 2, 2, 3]).unwrap_err();
        assert!(err.to_string().contains("splitting"), "{err}");
    }

    #[test]
    fn non_contiguous_is_rejected() {
        let model = toy();
        assert!(define_blocks(&model, vec![1, 1, 1, 3, 3, 3, 4]).is_err());
        assert!(define_blocks(&model, vec![1, 1, 2, 1, 2, 2, 3]).is_err());
        assert!(define_blocks(&model, vec![1, 1, 1]).is_err());
    }

    #[test]
    fn pass_through_block_is_rejected() {
        let specs = vec![
            LayerSpec::dense(4, 3, Activation::Relu),
            LayerSpec::Dense {
                inputs: 3,
                units: 2,
                activation: Activation::Relu,
                concat_input: true,
            },
            LayerSpec::dense(5, 1, Activation::Sigmoid),
        ];
        let model = ModelGraph::new(vec![4], specs, &mut stream(1)).unwrap();
        let err = define_blocks(&model, vec![1, 2, 3]).unwrap_err();
        assert!(err.to_string().contains("forwards its input"), "{err}");
        // merging the pass-through layer into the previous block is fine
        assert!(define_blocks(&model, vec![1, 1, 2]).is_ok());
    }

    #[test]
    fn freezing_marks_leading_blocks() {
        let mut model = toy();
        let mut p = define_blocks(&model, toy_layer_blocks()).unwrap();
        freeze(&mut model, &mut p, 2).unwrap();
        assert_eq!(p.frozen_through(), 2);
        let frozen: Vec<bool> = model.layers.iter().map(|l| l.frozen).collect();
        assert_eq!(frozen, vec![true, true, true, true, true, true, false]);
        assert!(freeze(&mut model, &mut p, 3).is_err());
        assert!(freeze(&mut model, &mut p, 0).is_err());
    }
}

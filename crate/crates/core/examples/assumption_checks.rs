//! Empirical checks of the two structural properties pruning relies on:
//! cutting a channel's consumer weights makes the output ignore that
//! channel, and zeroing a producer's parameters silences its channel.

use sor::nn::{Activation, LayerSpec, ModelGraph};
use sor::rng::stream;
use sor::sor::{check_assumption2, check_condition1, define_blocks, toy_layer_blocks, BlockPartition};

fn main() -> sor::Result<()> {
    let mut rng = stream(11);
    let model = ModelGraph::toy_cnn([16, 16, 1], 4, &mut rng)?;
    let partition = define_blocks(&model, toy_layer_blocks())?;

    for block in 1..=2 {
        let a2 = check_assumption2(&model, &partition, block, 0, 20, &mut rng)?;
        let c1 = check_condition1(&model, &partition, block, 0, 20, &mut rng)?;
        println!("toy block {block}: consumer cut removes channel {a2}, zero filter gives zero channel {c1}");
    }
    // sigmoid(0) = 0.5, so a zeroed dense unit still emits a constant
    let c1 = check_condition1(&model, &partition, 3, 0, 20, &mut rng)?;
    println!("toy block 3 (sigmoid dense): zero unit gives zero output {c1}");

    // The middle layer forwards its own input next to its outputs, so cutting
    // its weights for an input channel does not remove that channel.
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
    let skip = ModelGraph::new(vec![4], specs, &mut rng)?;
    match define_blocks(&skip, vec![1, 2, 3]) {
        Ok(_) => println!("pass-through split accepted"),
        Err(e) => println!("pass-through split rejected: {e}"),
    }
    let forced: BlockPartition = serde_json::from_value(serde_json::json!({
        "layer_blocks": [1, 2, 3],
        "frozen_through": 0
    }))?;
    let a2 = check_assumption2(&skip, &forced, 1, 0, 20, &mut rng)?;
    println!("pass-through block: consumer cut removes channel {a2}");
    Ok(())
}

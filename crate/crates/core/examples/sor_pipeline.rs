//! Walks through the regularization setup on the toy CNN: blocks, freezing,
//! gates, the penalty terms and what training does to the gates.

use sor::nn::ModelGraph;
use sor::noisebox::{generate, Standardizer};
use sor::optim::{train, LrSchedule, OptimizerState, TrainConfig};
use sor::rng::{stream, uniform};
use sor::sor::{define_blocks, freeze, insert_gates, penalty_value, toy_layer_blocks, ObjectiveConfig};
use sor::Tensor;

fn main() -> sor::Result<()> {
    let mut rng = stream(1);
    let mut model = ModelGraph::toy_cnn([32, 32, 1], 6, &mut rng)?;

    // [conv relu pool] [conv relu gap] [dense]
    let mut partition = define_blocks(&model, toy_layer_blocks())?;
    freeze(&mut model, &mut partition, 2)?;
    let (gated, partition, gates) = insert_gates(&model, &partition)?;
    for (l, layer) in gated.layers.iter().enumerate() {
        println!(
            "layer {l} block {} {:<14} frozen={} params={}",
            partition.block_of(l),
            layer.spec.name(),
            layer.frozen,
            layer.param_count()
        );
    }

    // Unit gates change nothing.
    let x = Tensor::new(vec![32, 32, 1], (0..1024).map(|_| uniform(&mut rng, -2.0, 2.0)).collect())?;
    assert_eq!(model.forward(&x)?, gated.forward(&x)?);

    let cfg = ObjectiveConfig::new(&gated, &partition, gates, 0.5, 0.05)?;
    println!("gated blocks {:?}, group lasso blocks {:?}", cfg.omega_new(), cfg.omega_zero());
    let p = penalty_value(&gated, &cfg)?;
    println!("initial penalties: l1 {:.4}, group {:.4}", p.l1, p.group);

    // Short SOR stage on freshly generated data.
    let raw = generate(64, 0.1, 3)?;
    let data = Standardizer::fit(&raw)?.apply(&raw);
    let mut trained = gated.clone();
    let tcfg = TrainConfig {
        epochs: 30,
        batch_size: 32,
        schedule: Some(LrSchedule::step_decay()),
    };
    let history = train(&mut trained, Some(&cfg), &data, &mut OptimizerState::sgd(0.1), &tcfg, &mut rng)?;
    for rec in history.epochs.iter().step_by(10) {
        println!(
            "epoch {:>2} lr {:.3} loss {:.4} l1 {:.4} group {:.4} psi {:.4}",
            rec.epoch, rec.lr, rec.data_loss, rec.l1_penalty, rec.gl_penalty, rec.psi
        );
    }
    let betas = cfg.gates.betas(&trained, 1).unwrap_or(&[]);
    println!("gates after training: {betas:.3?}");
    Ok(())
}

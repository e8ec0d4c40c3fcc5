mod common;

use common::{conv_group_oracle, max_output_diff, random_inputs, toy, toy_removed_params, toy_sor};
use sor::nn::loss::bce_loss;
use sor::nn::{Activation, LayerSpec, ModelGraph};
use sor::noisebox::{generate, Standardizer};
use sor::optim::{train, LrSchedule, OptimizerState, TrainConfig};
use sor::rng::stream;
use sor::sor::penalty::{group_lasso_penalty, objective, penalty_value};
use sor::sor::prune::zero_below_threshold;
use sor::sor::{
    check_assumption2, define_blocks, define_blocks_at, freeze, insert_gates, prune, removed_fraction,
    toy_layer_blocks, ObjectiveConfig, DEFAULT_THRESHOLD,
};

#[test]
fn unit_gates_leave_outputs_bit_identical() {
    let (base, gated, _) = toy_sor(10, 3, 0.5);
    assert_eq!(gated.len(), base.len() + 1);
    let inputs = random_inputs(&[32, 32, 1], 100, 4);
    for x in &inputs {
        assert_eq!(base.forward(x).unwrap(), gated.forward(x).unwrap());
    }
}

#[test]
fn pruned_model_matches_zeroed_model_exactly() {
    let filters = 10;
    let (_, mut gated, meta) = toy_sor(filters, 11, 0.5);
    let gl = meta.objective.gates.layer_of(1).unwrap();
    let betas = gated.layers[gl].params[0].value.data_mut();
    betas[2] = 5e-4;
    betas[5] = -3e-4;
    betas[8] = 2e-3; // stays
    let dense = gated.len() - 1;
    for &c in &[1usize, 5, 7] {
        gated.layers[dense].params[0].value.data_mut()[c] = 1e-4 * (c as f64);
    }
    let t = DEFAULT_THRESHOLD;
    let before = removed_fraction(&gated, &meta.objective, t).unwrap();

    let mut zeroed = gated.clone();
    zero_below_threshold(&mut zeroed, &meta.objective, t).unwrap();
    let (pruned, pruned_meta, report) = prune(&gated, &meta, t).unwrap();

    let inputs = random_inputs(&[32, 32, 1], 100, 12);
    assert_eq!(max_output_diff(&zeroed, &pruned, &inputs), 0.0);
    assert_eq!(report.removed_gates.len(), 2);
    assert_eq!(report.removed_groups.len(), 3);
    assert_eq!(report.parameter_delta, toy_removed_params(filters, 1, 2, 3));
    assert_eq!(report.params_after, pruned.param_count());
    assert_eq!(report.removed_fraction, before);
    assert_eq!(before, 5.0 / 20.0);
    assert!(!report.is_degenerate());
    // the pruned model's metadata describes the smaller model
    assert_eq!(pruned_meta.objective.groups.len(), 7);
    assert_eq!(pruned_meta.objective.gates.total(&pruned), 8);
}

#[test]
fn removing_one_rgb_filter_removes_its_28_parameters() {
    let specs = vec![
        LayerSpec::conv2d(3, 3, 4),
        LayerSpec::relu(),
        LayerSpec::maxpool(2),
        LayerSpec::conv2d(3, 4, 2),
        LayerSpec::relu(),
        LayerSpec::GlobalAvgPool,
        LayerSpec::dense(2, 1, Activation::Sigmoid),
    ];
    let mut model = ModelGraph::new(vec![12, 12, 3], specs, &mut stream(5)).unwrap();
    let mut partition = define_blocks(&model, toy_layer_blocks()).unwrap();
    freeze(&mut model, &mut partition, 2).unwrap();
    let (mut gated, partition, gates) = insert_gates(&model, &partition).unwrap();
    let cfg = ObjectiveConfig::new(&gated, &partition, gates, 0.1, 0.01).unwrap();
    let gl = cfg.gates.layer_of(1).unwrap();
    gated.layers[gl].params[0].value.data_mut()[0] = 0.0;
    let meta = sor::sor::SorMeta {
        partition,
        objective: cfg,
    };
    let (pruned, _, report) = prune(&gated, &meta, DEFAULT_THRESHOLD).unwrap();
    // filter: 3*3*3 weights + 1 bias; its gate; its 3x3 slice in each of the 2 consumer filters
    assert_eq!(report.parameter_delta, 28 + 1 + 9 * 2);
    let inputs = random_inputs(&[12, 12, 3], 100, 6);
    assert_eq!(max_output_diff(&gated, &pruned, &inputs), 0.0);
}

#[test]
fn fresh_sor_model_loses_nothing() {
    let (_, gated, meta) = toy_sor(3, 1, 5.0);
    let (pruned, _, report) = prune(&gated, &meta, DEFAULT_THRESHOLD).unwrap();
    assert_eq!(report.parameter_delta, 0);
    assert_eq!(pruned, gated);
}

#[test]
fn all_channels_removed_is_flagged_degenerate() {
    let (_, mut gated, meta) = toy_sor(3, 1, 5.0);
    let gl = meta.objective.gates.layer_of(1).unwrap();
    gated.layers[gl].params[0].value.fill(0.0);
    let (pruned, _, report) = prune(&gated, &meta, DEFAULT_THRESHOLD).unwrap();
    assert_eq!(report.degenerate_blocks, vec![1]);
    assert!(report.is_degenerate());
    let inputs = random_inputs(&[32, 32, 1], 10, 2);
    assert_eq!(max_output_diff(&gated, &pruned, &inputs), 0.0);
}

#[test]
fn bad_threshold_is_rejected() {
    let (_, gated, meta) = toy_sor(3, 1, 5.0);
    assert!(prune(&gated, &meta, 0.0).is_err());
    assert!(prune(&gated, &meta, -1e-3).is_err());
}

fn small_train_set() -> sor::noisebox::Dataset {
    let ds = generate(40, 0.1, 9).unwrap();
    Standardizer::fit(&ds).unwrap().apply(&ds)
}

#[test]
fn frozen_parameters_survive_training_bit_identical() {
    let (_, gated, meta) = toy_sor(4, 2, 0.5);
    let mut model = gated.clone();
    let data = small_train_set();
    let mut opt = OptimizerState::sgd(0.1);
    let cfg = TrainConfig {
        epochs: 50,
        batch_size: 20,
        schedule: Some(LrSchedule::step_decay()),
    };
    train(&mut model, Some(&meta.objective), &data, &mut opt, &cfg, &mut stream(1)).unwrap();
    assert_eq!(opt.steps(), 100);
    for (before, after) in gated.layers.iter().zip(&model.layers) {
        if before.frozen {
            assert_eq!(before.params, after.params);
        }
    }
    let dense = model.len() - 1;
    assert_ne!(gated.layers[dense].params, model.layers[dense].params);
}

#[test]
fn fixed_unit_gates_do_not_change_the_training_trajectory() {
    let data = small_train_set();
    let base = toy(4, 7);

    let mut ungated = base.clone();
    let mut partition = define_blocks(&ungated, toy_layer_blocks()).unwrap();
    freeze(&mut ungated, &mut partition, 2).unwrap();

    let (mut gated, _, gates) = insert_gates(&ungated, &partition).unwrap();
    gated.layers[gates.layer_of(1).unwrap()].frozen = true;

    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 8,
        schedule: Some(LrSchedule::step_decay()),
    };
    let h1 = train(&mut ungated, None, &data, &mut OptimizerState::sgd(0.1), &cfg, &mut stream(3)).unwrap();
    let h2 = train(&mut gated, None, &data, &mut OptimizerState::sgd(0.1), &cfg, &mut stream(3)).unwrap();
    let (a, b) = (h1.last().unwrap().data_loss, h2.last().unwrap().data_loss);
    assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    let d = ungated.len() - 1;
    assert_eq!(ungated.layers[d].params, gated.layers[gated.len() - 1].params);
}

#[test]
fn zero_lambdas_make_psi_the_data_loss() {
    let (_, gated, meta) = toy_sor(5, 4, 0.0);
    let cfg = &meta.objective;
    assert_eq!((cfg.lambda1, cfg.lambda2), (0.0, 0.0));
    let data = small_train_set();
    let preds: Vec<f64> = (0..data.len())
        .map(|i| gated.forward(&data.image(i)).unwrap().data()[0])
        .collect();
    let loss = bce_loss(&preds, data.labels()).unwrap();
    let psi = objective(loss, &gated, cfg).unwrap();
    assert_eq!(psi.to_bits(), loss.to_bits());
    assert_eq!(penalty_value(&gated, cfg).unwrap().total(), 0.0);
}

#[test]
fn group_lasso_matches_brute_force_oracle() {
    // conv-relu-pool | conv-relu | conv-relu-gap | dense, frozen through 1:
    // groups on the block 2 conv and the block 3 conv and the dense layer
    let specs = vec![
        LayerSpec::conv2d(3, 1, 3),
        LayerSpec::relu(),
        LayerSpec::maxpool(2),
        LayerSpec::conv2d(3, 3, 5),
        LayerSpec::relu(),
        LayerSpec::conv2d(3, 5, 4),
        LayerSpec::relu(),
        LayerSpec::GlobalAvgPool,
        LayerSpec::dense(4, 2, Activation::Sigmoid),
    ];
    let mut model = ModelGraph::new(vec![14, 14, 1], specs, &mut stream(21)).unwrap();
    let mut partition = define_blocks_at(&model, &[0, 3, 5, 8]).unwrap();
    freeze(&mut model, &mut partition, 1).unwrap();
    let (gated, partition, gates) = insert_gates(&model, &partition).unwrap();
    assert!(gates.is_empty());
    let lambda2 = 0.37;
    let cfg = ObjectiveConfig::new(&gated, &partition, gates, 0.0, lambda2).unwrap();
    assert_eq!(cfg.omega_zero(), vec![1, 2, 3]);

    let w = |l: usize| gated.layers[l].params[0].value.data().to_vec();
    let mut oracle = conv_group_oracle(&w(3), 3, 3, 3, 5) + conv_group_oracle(&w(5), 3, 3, 5, 4);
    let d = w(8);
    for k in 0..4 {
        oracle += (d[2 * k] * d[2 * k] + d[2 * k + 1] * d[2 * k + 1]).sqrt();
    }
    let got = group_lasso_penalty(&gated, &cfg).unwrap();
    assert!((got - lambda2 * oracle).abs() <= 1e-12, "{got} vs {}", lambda2 * oracle);
}

#[test]
fn toy_channels_satisfy_assumption_two() {
    let (_, gated, meta) = toy_sor(4, 8, 0.5);
    let mut rng = stream(1);
    for block in [1, 2] {
        for channel in 0..4 {
            assert!(check_assumption2(&gated, &meta.partition, block, channel, 20, &mut rng).unwrap());
        }
    }
}

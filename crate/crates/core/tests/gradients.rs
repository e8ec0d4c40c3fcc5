mod common;

use common::{gated_objective_model, small_cnn, unit_inputs as random_inputs};
use sor::nn::gradcheck::{compare_with_numeric, gradient_check, CheckProblem};
use sor::nn::loss::LossKind;
use sor::nn::{Activation, LayerSpec, ModelGraph};
use sor::rng::stream;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const INSTANCES: u64 = 20;

#[test]
fn cnn_with_bce_matches_central_differences() {
    let mut checked = 0;
    for seed in 0..INSTANCES {
        let model = small_cnn(seed);
        let inputs = random_inputs(&[10, 10, 2], 3, 100 + seed);
        let targets = vec![vec![1.0], vec![0.0], vec![1.0]];
        let problem = CheckProblem {
            inputs: &inputs,
            targets: &targets,
            loss: LossKind::Bce,
            penalty: None,
        };
        let report = gradient_check(&model, &problem, H, TOL).unwrap();
        assert!(report.passed(), "seed {seed}: {:?}", report.failures);
        checked += report.checked;
    }
    // every weight, bias of 3 weighted layers, every instance
    assert_eq!(checked as u64, INSTANCES * (2 * 9 * 3 + 3 + 3 * 9 * 4 + 4 + 4 + 1));
}

#[test]
fn dense_stack_with_squared_error_matches_central_differences() {
    for seed in 0..INSTANCES {
        let specs = vec![
            LayerSpec::dense(5, 4, Activation::Relu),
            LayerSpec::dense(4, 3, Activation::Sigmoid),
            LayerSpec::dense(3, 2, Activation::Identity),
        ];
        let model = ModelGraph::new(vec![5], specs, &mut stream(seed)).unwrap();
        let inputs = random_inputs(&[5], 4, 200 + seed);
        let targets: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64 * 0.3, 1.0 - i as f64 * 0.2]).collect();
        let problem = CheckProblem {
            inputs: &inputs,
            targets: &targets,
            loss: LossKind::SquaredError,
            penalty: None,
        };
        let report = gradient_check(&model, &problem, H, TOL).unwrap();
        assert!(report.passed(), "seed {seed}: {:?}", report.failures);
    }
}

#[test]
fn full_objective_with_penalties_matches_central_differences() {
    for seed in 0..INSTANCES {
        let (model, cfg) = gated_objective_model(seed);
        assert_eq!(cfg.omega_new(), vec![1]);
        assert_eq!(cfg.omega_zero(), vec![2, 3]);
        let inputs = random_inputs(&[14, 14, 1], 3, 300 + seed);
        let targets = vec![vec![0.0], vec![1.0], vec![1.0]];
        let problem = CheckProblem {
            inputs: &inputs,
            targets: &targets,
            loss: LossKind::Bce,
            penalty: Some(&cfg),
        };
        let report = gradient_check(&model, &problem, H, TOL).unwrap();
        assert!(report.passed(), "seed {seed}: {:?}", report.failures);
        // gates (3) + block 3 conv (3*9*4 + 4) + dense (4 + 1)
        assert_eq!(report.checked, 3 + 112 + 5);
    }
}

#[test]
fn corrupted_gradient_is_reported() {
    let model = small_cnn(5);
    let inputs = random_inputs(&[10, 10, 2], 2, 9);
    let targets = vec![vec![1.0], vec![0.0]];
    let problem = CheckProblem {
        inputs: &inputs,
        targets: &targets,
        loss: LossKind::Bce,
        penalty: None,
    };
    let mut work = model.clone();
    problem.analytic(&mut work).unwrap();
    let g = &mut work.layers[3].params[0].grad.data_mut()[7];
    assert!(g.abs() > 1e-8, "pick a weight with a nonzero gradient");
    *g *= 2.0;
    let report = compare_with_numeric(&work, &problem, H, TOL).unwrap();
    assert_eq!(report.failures.len(), 1);
    assert_eq!((report.failures[0].layer, report.failures[0].index), (3, 7));
}

#[test]
fn linear_model_with_quadratic_loss_is_exact_to_rounding() {
    let model = ModelGraph::new(vec![3], vec![LayerSpec::dense(3, 2, Activation::Identity)], &mut stream(1)).unwrap();
    let inputs = random_inputs(&[3], 5, 2);
    let targets: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, -(i as f64)]).collect();
    let problem = CheckProblem {
        inputs: &inputs,
        targets: &targets,
        loss: LossKind::SquaredError,
        penalty: None,
    };
    let report = gradient_check(&model, &problem, H, TOL).unwrap();
    assert!(report.max_rel_error < 1e-8, "{}", report.max_rel_error);
}

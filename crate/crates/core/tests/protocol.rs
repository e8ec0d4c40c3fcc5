//! Single-seed runs of the full-size protocol (10 filters, 100 training
//! images, 100 + 100 epochs).

use sor::experiment::{make_split, run_baseline, run_sor_stage, ExperimentConfig, RunKey};
use sor::nn::io::model_to_json;
use sor::rng::stream;
use sor::sor::{check_condition1, DEFAULT_THRESHOLD};

fn key(noise_ub: f64) -> RunKey {
    RunKey {
        filters: 10,
        noise_ub,
        train_size: 100,
        seed: 1,
    }
}

#[test]
fn low_noise_protocol() {
    let cfg = ExperimentConfig::default();
    let key = key(0.1);
    let split = make_split(&cfg, &key).unwrap();
    let base = run_baseline(&cfg, &key, &split).unwrap();
    assert!(base.accuracy > 0.97, "baseline test accuracy {}", base.accuracy);
    assert!(base.history.last().unwrap().train_acc > 0.99);

    let again = run_baseline(&cfg, &key, &split).unwrap();
    assert_eq!(
        model_to_json(&base.model, None).unwrap(),
        model_to_json(&again.model, None).unwrap()
    );

    // no penalty: gates stay away from zero and nothing is removed
    let control = run_sor_stage(&cfg, &key, 0.0, &base.model, &split).unwrap();
    assert_eq!(control.reduced_fraction, 0.0);
    let betas = control.meta.objective.gates.betas(&control.model, 1).unwrap();
    assert!(betas.iter().all(|b| (b - 1.0).abs() < 0.5), "{betas:?}");

    let mild = run_sor_stage(&cfg, &key, 0.05, &base.model, &split).unwrap();
    assert!(mild.accuracy >= 0.97, "{}", mild.accuracy);
    assert!(mild.reduced_fraction <= 0.2, "{}", mild.reduced_fraction);

    let strong = run_sor_stage(&cfg, &key, 5.0, &base.model, &split).unwrap();
    assert!(strong.reduced_fraction >= 0.95, "{}", strong.reduced_fraction);
    assert!((0.35..=0.65).contains(&strong.accuracy), "{}", strong.accuracy);
    let (_, _, report) = strong.prune(DEFAULT_THRESHOLD).unwrap();
    assert!(report.is_degenerate());
    assert!(report.parameter_delta > 1000);

    // a zeroed conv filter followed by ReLU gives an all-zero channel
    let mut rng = stream(4);
    assert!(check_condition1(&strong.model, &strong.meta.partition, 1, 0, 10, &mut rng).unwrap());
}

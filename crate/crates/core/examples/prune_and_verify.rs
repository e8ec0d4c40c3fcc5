//! Prunes a gated toy model with a few dead channels, checks that the smaller
//! model computes the same function and round-trips both through model files.

use sor::experiment::verify_models;
use sor::nn::io::{load_model, save_model};
use sor::nn::ModelGraph;
use sor::rng::stream;
use sor::sor::prune::zero_below_threshold;
use sor::sor::{apply_sor, prune, SorConfig, DEFAULT_THRESHOLD};

fn main() -> sor::Result<()> {
    let base = ModelGraph::toy_cnn([32, 32, 1], 10, &mut stream(3))?;
    let (mut gated, meta) = apply_sor(&base, &SorConfig::toy(0.5))?;

    // Push two gates and one dense group under the threshold.
    let gl = meta.objective.gates.layer_of(1).expect("block 1 is gated");
    gated.layers[gl].params[0].value.data_mut()[3] = 2e-4;
    gated.layers[gl].params[0].value.data_mut()[6] = 0.0;
    let dense = gated.len() - 1;
    gated.layers[dense].params[0].value.data_mut()[9] = -1e-4;

    let mut zeroed = gated.clone();
    zero_below_threshold(&mut zeroed, &meta.objective, DEFAULT_THRESHOLD)?;
    let (pruned, pruned_meta, report) = prune(&gated, &meta, DEFAULT_THRESHOLD)?;
    println!("{}", serde_json::to_string_pretty(&report)?);

    let dir = std::env::temp_dir().join("sor-prune-example");
    std::fs::create_dir_all(&dir).map_err(|e| sor::SorError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    save_model(dir.join("zeroed.json"), &zeroed, Some(&meta))?;
    save_model(dir.join("pruned.json"), &pruned, Some(&pruned_meta))?;
    let (zeroed, _) = load_model(dir.join("zeroed.json"))?;
    let (pruned, _) = load_model(dir.join("pruned.json"))?;

    let same = verify_models(&zeroed, &pruned, 100, 0.0, 1)?;
    println!("zeroed vs pruned: max diff {:e}, passed {}", same.max_abs_diff, same.passed);
    let different = verify_models(&base, &pruned, 100, 0.0, 1)?;
    println!("original vs pruned: max diff {:e}, passed {}", different.max_abs_diff, different.passed);
    println!("model files in {}", dir.display());
    Ok(())
}

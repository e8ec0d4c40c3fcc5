//! A small seeded grid: two noise levels, three penalty strengths, three
//! seeds, shortened training. Prints results.csv and summary.csv to stdout.
//!
//! ```text
//! cargo run --release --example grid
//! ```

use sor::experiment::{run_grid, summarize, write_rows, ExperimentConfig};

fn main() -> sor::Result<()> {
    let cfg = ExperimentConfig {
        filters: vec![10],
        noise_ub: vec![0.1, 1.0],
        train_size: vec![100],
        seeds: vec![1, 2, 3],
        epochs_stage1: 40,
        epochs_stage2: 40,
        test_size: 300,
        ..Default::default()
    };
    let grid = run_grid(&cfg, Some(&|k| eprintln!("done: noise {} seed {}", k.noise_ub, k.seed)))?;
    write_rows(&grid.records, std::io::stdout())?;
    println!();
    write_rows(&summarize(&grid.records), std::io::stdout())?;
    for e in &grid.errors {
        eprintln!("failed: {e:?}");
    }
    Ok(())
}

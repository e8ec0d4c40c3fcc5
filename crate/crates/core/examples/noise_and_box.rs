//! One seed of the two-stage Noise-and-Box protocol, at every lambda.
//!
//! ```text
//! cargo run --release --example noise_and_box -- --noise-ub 1.0 --seeds 1,2,3
//! ```

use clap::Parser;
use sor::experiment::{make_split, run_baseline, run_sor_stage, ExperimentConfig, RunKey};
use sor::sor::PenaltyMode;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 10)]
    filters: usize,
    #[arg(long, default_value_t = 0.1)]
    noise_ub: f64,
    #[arg(long, default_value_t = 100)]
    train_size: usize,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.5,5")]
    lambda1: Vec<f64>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Mode {
    Subgradient,
    Proximal,
}

fn main() -> sor::Result<()> {
    let args = Args::parse();
    let mut cfg = ExperimentConfig::default();
    if let Some(m) = args.mode {
        cfg.penalty_mode = match m {
            Mode::Subgradient => PenaltyMode::Subgradient,
            Mode::Proximal => PenaltyMode::Proximal,
        };
    }
    if let Some(e) = args.epochs {
        cfg.epochs_stage1 = e;
        cfg.epochs_stage2 = e;
    }
    for &seed in &args.seeds {
        let key = RunKey {
            filters: args.filters,
            noise_ub: args.noise_ub,
            train_size: args.train_size,
            seed,
        };
        let t = std::time::Instant::now();
        let split = make_split(&cfg, &key)?;
        let base = run_baseline(&cfg, &key, &split)?;
        println!(
            "seed {seed}: baseline test accuracy {:.4} ({:.1}s)",
            base.accuracy,
            t.elapsed().as_secs_f64()
        );
        for &lambda1 in &args.lambda1 {
            let t = std::time::Instant::now();
            let out = run_sor_stage(&cfg, &key, lambda1, &base.model, &split)?;
            let betas = out.meta.objective.gates.betas(&out.model, 1).unwrap_or(&[]).to_vec();
            let (_, _, report) = out.prune(cfg.threshold)?;
            println!(
                "  lambda1 {lambda1}: accuracy {:.4}, reduced {:.3} ({} gates, {} groups), params {} -> {} ({:.1}s)",
                out.accuracy,
                out.reduced_fraction,
                report.removed_gates.len(),
                report.removed_groups.len(),
                report.params_before,
                report.params_after,
                t.elapsed().as_secs_f64()
            );
            let shown: Vec<String> = betas.iter().map(|b| format!("{b:.1e}")).collect();
            println!("    gates: {}", shown.join(" "));
        }
    }
    Ok(())
}

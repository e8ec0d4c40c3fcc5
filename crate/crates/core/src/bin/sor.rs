//! Command-line harness for the Noise-and-Box protocol.
//!
//! Exit codes: 0 success, 1 I/O or other runtime failure, 2 invalid input,
//! 3 verification failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sor::experiment::{
    load_rows, make_split, run_baseline, run_grid, run_sor_stage, save_rows, summarize, verify_models,
    ExperimentConfig, RunKey, RunRecord, SummaryRow, OUT_DIR_ENV,
};
use sor::nn::io::{load_model, save_model};
use sor::noisebox::{export_csv, generate, save_dataset};
use sor::sor::{prune, PenaltyMode};
use sor::SorError;

#[derive(Parser)]
#[command(name = "sor", about = "Structured output regularization on the Noise-and-Box task")]
struct Cli {
    /// Directory for every file the command writes.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a Noise-and-Box dataset file.
    GenerateData {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        noise_ub: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also write a CSV copy for inspection.
        #[arg(long)]
        csv: bool,
    },
    /// Train the baseline CNN for one cell and seed.
    Baseline {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run the SOR stage on a baseline model file.
    Sor {
        #[arg(long)]
        model: PathBuf,
        /// Also prune the trained model at the configured threshold.
        #[arg(long)]
        prune: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run every cell and seed; write results.csv and summary.csv.
    Grid {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Zero and remove sub-threshold structures of a SOR model file.
    Prune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = sor::sor::DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Compare the outputs of two model files on random inputs.
    Verify {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 100)]
        n_inputs: usize,
        #[arg(long, default_value_t = 0.0)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Recompute summary.csv from a results.csv.
    Report {
        #[arg(long)]
        results: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Subgradient,
    Proximal,
}

/// Experiment configuration: an optional JSON file, then flag overrides.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    filters: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    noise_ub: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    train_size: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    lambda1: Option<Vec<f64>>,
    #[arg(long)]
    lambda2_ratio: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    master_seed: Option<u64>,
    #[arg(long)]
    epochs_stage1: Option<usize>,
    #[arg(long)]
    epochs_stage2: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_enum)]
    penalty_mode: Option<Mode>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    wall_time: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> sor::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    cfg.$f = v.clone();
                }
            )*};
        }
        set!(filters, noise_ub, train_size, lambda1, seeds);
        set!(lambda2_ratio, master_seed, epochs_stage1, epochs_stage2, batch_size, test_size, threshold);
        if let Some(m) = self.penalty_mode {
            cfg.penalty_mode = match m {
                Mode::Subgradient => PenaltyMode::Subgradient,
                Mode::Proximal => PenaltyMode::Proximal,
            };
        }
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        cfg.wall_time |= self.wall_time;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn single<T: Copy>(name: &str, values: &[T]) -> sor::Result<T> {
    match values {
        [v] => Ok(*v),
        _ => Err(SorError::Validation(format!("{name} needs exactly one value for this command"))),
    }
}

fn single_key(cfg: &ExperimentConfig) -> sor::Result<RunKey> {
    Ok(RunKey {
        filters: single("filters", &cfg.filters)?,
        noise_ub: single("noise-ub", &cfg.noise_ub)?,
        train_size: single("train-size", &cfg.train_size)?,
        seed: single("seeds", &cfg.seeds)?,
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> sor::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| SorError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

enum Outcome {
    Ok,
    VerifyFailed,
}

fn run(cli: Cli) -> sor::Result<Outcome> {
    let out = &cli.out_dir;
    std::fs::create_dir_all(out).map_err(|e| SorError::Io {
        path: out.display().to_string(),
        source: e,
    })?;
    match cli.cmd {
        Cmd::GenerateData { n, noise_ub, seed, csv } => {
            let ds = generate(n, noise_ub, seed)?;
            let path = out.join("data.nbx");
            save_dataset(&ds, &path)?;
            println!("wrote {}", path.display());
            if csv {
                let path = out.join("data.csv");
                let file = std::fs::File::create(&path).map_err(|e| SorError::Io {
                    path: path.display().to_string(),
                    source: e,
                })?;
                export_csv(&ds, std::io::BufWriter::new(file))?;
                println!("wrote {}", path.display());
            }
        }
        Cmd::Baseline { cfg } => {
            let cfg = cfg.resolve()?;
            let key = single_key(&cfg)?;
            let split = make_split(&cfg, &key)?;
            let base = run_baseline(&cfg, &key, &split)?;
            save_model(out.join("baseline.json"), &base.model, None)?;
            base.history.save_csv(out.join("baseline_history.csv"))?;
            println!("baseline test accuracy {}", base.accuracy);
        }
        Cmd::Sor { model, prune: do_prune, cfg } => {
            let cfg = cfg.resolve()?;
            let key = single_key(&cfg)?;
            let lambda1 = single("lambda1", &cfg.lambda1)?;
            let (baseline, meta) = load_model(&model)?;
            if meta.is_some() {
                return Err(SorError::Validation("expected a baseline model, got a SOR model".into()));
            }
            let split = make_split(&cfg, &key)?;
            let res = run_sor_stage(&cfg, &key, lambda1, &baseline, &split)?;
            save_model(out.join("sor.json"), &res.model, Some(&res.meta))?;
            res.history.save_csv(out.join("sor_history.csv"))?;
            let record = RunRecord {
                filters: key.filters,
                lambda1,
                lambda2: cfg.lambda2(lambda1),
                noise_ub: key.noise_ub,
                train_size: key.train_size,
                seed: key.seed,
                batch_size: cfg.batch_size,
                threshold: cfg.threshold,
                accuracy: res.accuracy,
                reduced_fraction: res.reduced_fraction,
                wall_ms: None,
            };
            save_rows(&[record], out.join("record.csv"))?;
            let (pruned, pruned_meta, report) = res.prune(cfg.threshold)?;
            write_json(&out.join("prune_report.json"), &report)?;
            if do_prune {
                save_model(out.join("pruned.json"), &pruned, Some(&pruned_meta))?;
            }
            println!(
                "accuracy {} reduced_fraction {} parameter_delta {}",
                res.accuracy, res.reduced_fraction, report.parameter_delta
            );
        }
        Cmd::Grid { cfg } => {
            let cfg = cfg.resolve()?;
            let total = cfg.filters.len() * cfg.noise_ub.len() * cfg.train_size.len() * cfg.seeds.len();
            let done = std::sync::atomic::AtomicUsize::new(0);
            let progress = |k: &RunKey| {
                let d = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
                eprintln!(
                    "[{d}/{total}] filters={} noise_ub={} train_size={} seed={}",
                    k.filters, k.noise_ub, k.train_size, k.seed
                );
            };
            let grid = run_grid(&cfg, Some(&progress))?;
            save_rows(&grid.records, out.join("results.csv"))?;
            save_rows(&summarize(&grid.records), out.join("summary.csv"))?;
            let errors = out.join("errors.csv");
            if grid.errors.is_empty() {
                let _ = std::fs::remove_file(&errors);
            } else {
                save_rows(&grid.errors, &errors)?;
                eprintln!("{} runs failed, see {}", grid.errors.len(), errors.display());
            }
            println!("wrote {} records to {}", grid.records.len(), out.join("results.csv").display());
        }
        Cmd::Prune { model, threshold } => {
            let (m, meta) = load_model(&model)?;
            let meta = meta.ok_or_else(|| SorError::Validation("model file has no SOR metadata".into()))?;
            let (pruned, pruned_meta, report) = prune(&m, &meta, threshold)?;
            save_model(out.join("pruned.json"), &pruned, Some(&pruned_meta))?;
            write_json(&out.join("prune_report.json"), &report)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Cmd::Verify { a, b, n_inputs, tol, seed } => {
            let (ma, _) = load_model(&a)?;
            let (mb, _) = load_model(&b)?;
            let report = verify_models(&ma, &mb, n_inputs, tol, seed)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.passed {
                return Ok(Outcome::VerifyFailed);
            }
        }
        Cmd::Report { results } => {
            let records: Vec<RunRecord> = load_rows(&results)?;
            let summary: Vec<SummaryRow> = summarize(&records);
            save_rows(&summary, out.join("summary.csv"))?;
            println!("filters lambda1 noise_ub train_size n_seeds acc_mean acc_std red_mean red_std");
            for r in &summary {
                println!(
                    "{} {} {} {} {} {:.4} {:.4} {:.4} {:.4}",
                    r.filters, r.lambda1, r.noise_ub, r.train_size, r.n_seeds, r.acc_mean, r.acc_std, r.red_mean, r.red_std
                );
            }
        }
    }
    Ok(Outcome::Ok)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::VerifyFailed) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                SorError::Validation(_)
                | SorError::Dimension(_)
                | SorError::Parse { .. }
                | SorError::Version { .. }
                | SorError::Json(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SorError};
use crate::experiment::config::ExperimentConfig;
use crate::experiment::run::{make_split, run_baseline, run_sor_stage, RunKey};

/// One row of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub filters: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub noise_ub: f64,
    pub train_size: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub threshold: f64,
    pub accuracy: f64,
    pub reduced_fraction: f64,
    /// Baseline plus SOR stage time. Empty unless wall time recording is on.
    pub wall_ms: Option<u64>,
}

/// A run that failed. The grid keeps going and lists these separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunError {
    pub filters: usize,
    pub lambda1: f64,
    pub noise_ub: f64,
    pub train_size: usize,
    pub seed: u64,
    pub error: String,
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub filters: usize,
    pub lambda1: f64,
    pub noise_ub: f64,
    pub train_size: usize,
    pub n_seeds: usize,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub red_mean: f64,
    pub red_std: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GridOutput {
    pub records: Vec<RunRecord>,
    pub errors: Vec<RunError>,
}

/// Grid cells in output order: filters, noise, train size, then lambda.
pub fn cells(cfg: &ExperimentConfig) -> Vec<(usize, f64, usize, f64)> {
    let mut out = Vec::new();
    for &f in &cfg.filters {
        for &u in &cfg.noise_ub {
            for &n in &cfg.train_size {
                for &l in &cfg.lambda1 {
                    out.push((f, u, n, l));
                }
            }
        }
    }
    out
}

type JobOutput = Vec<std::result::Result<RunRecord, RunError>>;

/// Trains one baseline and then one SOR stage per lambda on top of it.
fn run_job(cfg: &ExperimentConfig, key: RunKey) -> JobOutput {
    let fail = |lambda1: f64, e: &SorError| RunError {
        filters: key.filters,
        lambda1,
        noise_ub: key.noise_ub,
        train_size: key.train_size,
        seed: key.seed,
        error: e.to_string(),
    };
    let t0 = Instant::now();
    let base = make_split(cfg, &key).and_then(|split| Ok((run_baseline(cfg, &key, &split)?, split)));
    let base_ms = t0.elapsed().as_millis() as u64;
    let (baseline, split) = match base {
        Ok(b) => b,
        Err(e) => return cfg.lambda1.iter().map(|&l| Err(fail(l, &e))).collect(),
    };
    cfg.lambda1
        .iter()
        .map(|&lambda1| {
            let t1 = Instant::now();
            let out = run_sor_stage(cfg, &key, lambda1, &baseline.model, &split).map_err(|e| fail(lambda1, &e))?;
            Ok(RunRecord {
                filters: key.filters,
                lambda1,
                lambda2: cfg.lambda2(lambda1),
                noise_ub: key.noise_ub,
                train_size: key.train_size,
                seed: key.seed,
                batch_size: cfg.batch_size,
                threshold: cfg.threshold,
                accuracy: out.accuracy,
                reduced_fraction: out.reduced_fraction,
                wall_ms: cfg.wall_time.then(|| base_ms + t1.elapsed().as_millis() as u64),
            })
        })
        .collect()
}

/// Runs every cell and seed of the grid.
///
/// Jobs run on a worker pool but the output is always in (cell, seed) order,
/// so two runs with the same configuration produce the same records.
/// `progress` is called after each finished baseline job.
pub fn run_grid(cfg: &ExperimentConfig, progress: Option<&(dyn Fn(&RunKey) + Sync)>) -> Result<GridOutput> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for &filters in &cfg.filters {
        for &noise_ub in &cfg.noise_ub {
            for &train_size in &cfg.train_size {
                for &seed in &cfg.seeds {
                    jobs.push(RunKey {
                        filters,
                        noise_ub,
                        train_size,
                        seed,
                    });
                }
            }
        }
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.workers {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| SorError::State(format!("cannot start worker pool: {e}")))?;
    let outputs: Vec<JobOutput> = pool.install(|| {
        jobs.par_iter()
            .map(|&key| {
                let out = run_job(cfg, key);
                if let Some(p) = progress {
                    p(&key);
                }
                out
            })
            .collect()
    });

    // jobs are ordered (filters, noise, train, seed) and each holds every lambda;
    // reorder to (filters, noise, train, lambda, seed).
    let n_seeds = cfg.seeds.len();
    let n_lambda = cfg.lambda1.len();
    let mut slots: Vec<Option<std::result::Result<RunRecord, RunError>>> = Vec::new();
    slots.resize_with(jobs.len() * n_lambda, || None);
    for (j, out) in outputs.into_iter().enumerate() {
        let (group, s) = (j / n_seeds, j % n_seeds);
        for (l, r) in out.into_iter().enumerate() {
            slots[(group * n_lambda + l) * n_seeds + s] = Some(r);
        }
    }
    let mut grid = GridOutput::default();
    for r in slots.into_iter().flatten() {
        match r {
            Ok(rec) => grid.records.push(rec),
            Err(e) => grid.errors.push(e),
        }
    }
    Ok(grid)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Groups records by (filters, lambda1, noise, train size) in order of first
/// appearance and reports mean and sample standard deviation (zero for a
/// single seed) of accuracy and reduced fraction.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut keys: Vec<(usize, f64, f64, usize)> = Vec::new();
    for r in records {
        let k = (r.filters, r.lambda1, r.noise_ub, r.train_size);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(filters, lambda1, noise_ub, train_size)| {
            let rows: Vec<&RunRecord> = records
                .iter()
                .filter(|r| (r.filters, r.lambda1, r.noise_ub, r.train_size) == (filters, lambda1, noise_ub, train_size))
                .collect();
            let acc: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
            let red: Vec<f64> = rows.iter().map(|r| r.reduced_fraction).collect();
            let (acc_mean, acc_std) = mean_std(&acc);
            let (red_mean, red_std) = mean_std(&red);
            SummaryRow {
                filters,
                lambda1,
                noise_ub,
                train_size,
                n_seeds: rows.len(),
                acc_mean,
                acc_std,
                red_mean,
                red_std,
            }
        })
        .collect()
}

pub fn write_rows<T: Serialize>(rows: &[T], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| SorError::io("csv output", e))?;
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(reader: impl Read) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize().map(|row| row.map_err(SorError::from)).collect()
}

pub fn save_rows<T: Serialize>(rows: &[T], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| SorError::io(path, e))?;
    write_rows(rows, std::io::BufWriter::new(file))
}

pub fn load_rows<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| SorError::io(path, e))?;
    read_rows(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(lambda1: f64, seed: u64, accuracy: f64, red: f64) -> RunRecord {
        RunRecord {
            filters: 10,
            lambda1,
            lambda2: 0.1 * lambda1,
            noise_ub: 0.1,
            train_size: 100,
            seed,
            batch_size: 32,
            threshold: 1e-3,
            accuracy,
            reduced_fraction: red,
            wall_ms: None,
        }
    }

    #[test]
    fn summary_mean_and_sample_std() {
        let rows = vec![rec(0.5, 1, 1.0, 0.2), rec(0.5, 2, 0.5, 0.4), rec(5.0, 1, 0.5, 1.0)];
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].n_seeds, 2);
        assert_eq!(s[0].acc_mean, 0.75);
        // sample std of {1, 0.5}: sqrt(0.125)
        assert!((s[0].acc_std - 0.125f64.sqrt()).abs() < 1e-15);
        assert_eq!(s[1].acc_std, 0.0);
        assert_eq!(s[1].red_mean, 1.0);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let rows = vec![rec(0.05, 1, 0.123456789012345, 1.0 / 3.0)];
        let mut buf = Vec::new();
        write_rows(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "filters,lambda1,lambda2,noise_ub,train_size,seed,batch_size,threshold,accuracy,reduced_fraction,wall_ms\n"
        ));
        let back: Vec<RunRecord> = read_rows(&buf[..]).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn cell_order() {
        let cfg = ExperimentConfig {
            filters: vec![3],
            noise_ub: vec![0.1],
            train_size: vec![10, 100],
            lambda1: vec![0.05, 5.0],
            ..Default::default()
        };
        assert_eq!(
            cells(&cfg),
            vec![(3, 0.1, 10, 0.05), (3, 0.1, 10, 5.0), (3, 0.1, 100, 0.05), (3, 0.1, 100, 5.0)]
        );
    }
}

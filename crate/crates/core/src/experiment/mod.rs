//! The two-stage Noise-and-Box protocol and the seeded experiment grid.
//!
//! A run trains the toy CNN from scratch with Adam (stage one), then freezes
//! both convolution blocks, gates the first and retrains the dense head with
//! SGD under the SOR penalties (stage two). The grid repeats this over filter
//! counts, noise levels, train sizes, penalty strengths and seeds.

mod config;
mod grid;
mod run;
mod verify;

pub use config::{ExperimentConfig, OUT_DIR_ENV};
pub use grid::{
    cells, load_rows, read_rows, run_grid, save_rows, summarize, write_rows, GridOutput, RunError, RunRecord,
    SummaryRow,
};
pub use run::{filters_of, make_split, run_baseline, run_sor_stage, BaselineOutcome, RunKey, SorOutcome, Split};
pub use verify::{verify_models, VerifyReport};

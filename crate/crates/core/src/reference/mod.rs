//! Ground truth and diagnostics: a finite-difference solver for the 1-D
//! kinetic Fokker--Planck tests, and evaluation utilities including the
//! L∞-in-time, L²-in-(x,v) error and conservation traces.

mod fd;
mod metrics;

pub use fd::{
    fd_solve_fp, fd_solve_fp_with_initial, read_fd_grid, suggested_steps, write_fd_grid, FdGrid,
};
pub use metrics::{
    conservation_traces, eval_error, l2_difference_at, ConservationTraces, ErrorReport, Reference,
    TraceProblem,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RefError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Diff(#[from] crate::diffnet::DiffError),
}

//! The finite-state chain: generators, exact simulation, the martingale part
//! of the semimartingale decomposition, and transition matrices.

mod document;
mod martingale;
mod path;
mod rate;
mod transition;

pub use document::{write_paths_csv, ChainDocument, SegmentDocument};
pub use martingale::{distribution_check, martingale_check, martingale_increments, MartingalePath};
pub use path::{ensemble_map, path_rng, simulate_ensemble, simulate_path, ChainPath};
pub use rate::{random_generator, RateMatrix, Segment};
pub use transition::{reachability, transition_matrix};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("segment {segment}: off-diagonal entry A[{row}][{col}] = {value} is negative")]
    NegativeOffDiagonal { segment: usize, row: usize, col: usize, value: f64 },
    #[error("segment {segment}: column {col} sums to {sum}, not 0")]
    ColumnSumNonZero { segment: usize, col: usize, sum: f64 },
    #[error("rate matrix has no segments")]
    EmptySegments,
    #[error("need at least two states, got {0}")]
    TooFewStates(usize),
    #[error("horizon must be positive and finite, got {0}")]
    InvalidHorizon(f64),
    #[error("segment {segment}: expected a {expected}x{expected} matrix")]
    DimensionMismatch { segment: usize, expected: usize },
    #[error("segment start times must begin at 0 and increase strictly inside [0, T)")]
    SegmentOrder,
    #[error("segment {0} contains a non-finite entry")]
    NonFinite(usize),
    #[error("state {state} out of range for {n_states} states")]
    InvalidState { state: usize, n_states: usize },
    #[error("time {0} outside [0, T]")]
    TimeOutOfRange(f64),
    #[error("invalid path: {0}")]
    InvalidPath(String),
}

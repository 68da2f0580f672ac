//! Markovian BSDE solver.
//!
//! With `Y_t = u(t)·X_t` and `Z_t = u(t)` the BSDE becomes the backward system
//! `du_i/dt = −f(t, e_i, u_i, u) − (A_t'u)_i`, `u(T) = g`, integrated with
//! classical RK4 on a grid that contains every generator switch.

mod closed_form;
mod doleans;
mod duality;
mod grid;
mod markovian;
mod terminal;

pub use closed_form::closed_form_linear;
pub use doleans::{doleans_exponential, DoleansKnot, DoleansPath};
pub use duality::{duality_check, duality_estimate, DualityEstimate};
pub use grid::{CellTable, Side, TimeGrid};
pub use markovian::{
    convergence_study, picard_probe, solve_interval, solve_markovian, solve_on_common_grid, solve_unchecked, BsdeSolution,
    ConvergenceStudy, PicardProbe,
};
pub use terminal::{TerminalCondition, TerminalDocument};

use thiserror::Error;

use crate::chain::ChainError;
use crate::driver::DriverError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("invalid interval [{start}, {end}]")]
    InvalidInterval { start: f64, end: f64 },
    #[error("accumulated residual {residual:e} exceeds {tolerance:e}; reduce the step")]
    StepTooLarge { residual: f64, tolerance: f64 },
    #[error("non-finite value at t = {time}")]
    NonFiniteValue { time: f64 },
    #[error("driver is not linear in y only: {0}")]
    NotLinear(String),
    #[error("assumption margin violated: l2·‖Ψ†‖·√(6m) = {product}")]
    AssumptionViolated { product: f64 },
    #[error("jump factor ΔV = {delta_v} at t = {time} breaks the bound |ΔV| ≤ 1")]
    JumpBoundViolated { time: f64, delta_v: f64 },
    #[error("invalid terminal condition: {0}")]
    InvalidTerminal(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Driver(#[from] DriverError),
}

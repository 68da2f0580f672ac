//! Backward stochastic differential equations driven by a finite-state
//! continuous-time Markov chain.
//!
//! The chain `X` lives on the unit vectors `e_1..e_N` and has the
//! decomposition `X_t = X_0 + ∫ A_s X_s ds + M_t`. A BSDE
//!
//! ```text
//! Y_t = ξ + ∫_t^T f(s, Y_s, Z_s) ds − ∫_t^T Z_s' dM_s
//! ```
//!
//! with a Markovian terminal value `ξ = g·X_T` is solved exactly through the
//! value function `Y_t = u(t)·X_t`, which turns the equation into a coupled
//! backward ODE system. On top of the solver the crate exposes the
//! `f`-expectation operators and a harness that checks comparison,
//! duality, and converse-comparison statements numerically.
//!
//! Module map:
//! - [`chain`]: generators, exact path simulation, martingale part, transition matrices.
//! - [`geometry`]: the covariation density `Ψ`, its pseudoinverse, the `‖·‖_X` seminorm.
//! - [`driver`]: the driver grammar with certified Lipschitz constants.
//! - [`solver`]: backward ODE solver, closed forms, Doléans-Dade exponential, duality.
//! - [`fexp`]: `f`-expectation operators and their property suite.
//! - [`harness`]: comparison and converse-comparison experiments.
//! - [`app`]: experiment configuration, orchestration and report emission.

pub mod app;
pub mod chain;
pub mod driver;
pub mod fexp;
pub mod geometry;
pub mod harness;
pub mod report;
pub mod solver;
pub mod stats;
pub mod tolerances;

pub use chain::{ChainPath, RateMatrix};
pub use driver::DriverSpec;
pub use report::{Verdict, VerdictReport};
pub use solver::{BsdeSolution, TerminalCondition};

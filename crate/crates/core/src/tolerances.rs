//! Numerical tolerances shared across the crate.

/// Column sums of a generator must vanish to this absolute tolerance.
pub const GENERATOR_COLUMN_SUM: f64 = 1e-12;

/// Symmetry tolerance for matrices handed to the pseudoinverse.
pub const SYMMETRY: f64 = 1e-12;

/// Relative eigenvalue cutoff of the pseudoinverse: `|λ| ≤ cutoff·max(1, |λ|_max)` is zero.
pub const PINV_CUTOFF: f64 = 1e-10;

/// Smallest eigenvalue of Ψ accepted as positive semidefinite is `-PSD`.
pub const PSD: f64 = 1e-10;

/// Elementwise tolerance for the four Moore–Penrose identities.
pub const MOORE_PENROSE: f64 = 1e-10;

/// Radicands of the seminorm down to `-SEMINORM_RADICAND` are clamped to zero.
pub const SEMINORM_RADICAND: f64 = 1e-12;

/// Slack allowed on the `‖C‖_X ≤ √(3m)|C|` bound.
pub const NORM_BOUND_SLACK: f64 = 1e-10;

/// Weak assumption margin: `|product − 1|` within this is classified as equality.
pub const MARGIN_EQUALITY: f64 = 1e-12;

/// Accuracy target of the backward solver at the default step.
pub const SOLVER: f64 = 1e-6;

/// Order violations in comparison experiments are counted beyond this.
pub const COMPARISON: f64 = 10.0 * SOLVER;

/// A gap is "strictly positive" when it exceeds this floor.
pub const STRICT_GAP: f64 = 1e-10;

/// Monte Carlo agreement is judged within this many standard errors.
pub const SE_MULTIPLIER: f64 = 4.0;

/// Driver ordering on a grid: `f2 − f1 ≥ −DRIVER_ORDER` counts as ordered.
pub const DRIVER_ORDER: f64 = 1e-12;

/// Lipschitz certification slack.
pub const LIPSCHITZ: f64 = 1e-10;

/// Differences `Y² − Y¹` at or below this are treated as zero in the linearization.
pub const LINEARIZATION_ZERO: f64 = 1e-12;

/// Witness inequality slack for the forward integrator.
pub const WITNESS: f64 = 1e-6;

/// Minimal `𝔈_{f1}(ξ) − 𝔈_{f2}(ξ)` that counts as a converse witness.
pub const CONVERSE_WITNESS_GAP: f64 = 1e-4;

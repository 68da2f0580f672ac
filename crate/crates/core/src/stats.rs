//! Sample mean and standard error with a fixed reduction order.

use serde::{Deserialize, Serialize};

/// Absolute slack on mean comparisons; absorbs rounding in degenerate samples.
const ROUNDING: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MeanSe {
    /// Two-pass estimate over `values` in their given order.
    pub fn from_slice(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, se: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Self { mean, se: 0.0, n };
        }
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        Self { mean, se: (var / n as f64).sqrt(), n }
    }

    /// `|mean − target| ≤ k·se`, with a tiny absolute floor for degenerate samples.
    pub fn agrees_with(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se + ROUNDING
    }

    /// Distance to `target` in standard errors after the rounding slack, so
    /// that `agrees_with(target, k)` holds whenever `z_score(target) ≤ k`.
    pub fn z_score(&self, target: f64) -> f64 {
        let d = ((self.mean - target).abs() - ROUNDING).max(0.0);
        if self.se > 0.0 {
            d / self.se
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::SolverError;
use crate::chain::RateMatrix;
use crate::driver::DriverSpec;

/// `ξ = g·X_T`, or `ξ = g·X_{τ∧T}` with `τ` the hitting time of `absorbing`.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalCondition {
    pub payoff: DVector<f64>,
    pub absorbing: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalDocument {
    pub g: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub absorbing: Vec<usize>,
}

impl TerminalCondition {
    pub fn new(payoff: DVector<f64>) -> Result<Self, SolverError> {
        if payoff.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::InvalidTerminal("payoff has a non-finite entry".into()));
        }
        Ok(Self { payoff, absorbing: Vec::new() })
    }

    pub fn from_slice(g: &[f64]) -> Result<Self, SolverError> {
        Self::new(DVector::from_column_slice(g))
    }

    /// Stopped variant; `absorbing` must be a nonempty proper subset of the states.
    pub fn stopped(payoff: DVector<f64>, absorbing: Vec<usize>) -> Result<Self, SolverError> {
        let mut out = Self::new(payoff)?;
        let n = out.payoff.len();
        let mut s = absorbing;
        s.sort_unstable();
        s.dedup();
        if s.is_empty() || s.len() >= n {
            return Err(SolverError::InvalidTerminal("absorbing set must be a nonempty proper subset".into()));
        }
        if let Some(&bad) = s.iter().find(|&&i| i >= n) {
            return Err(SolverError::InvalidTerminal(format!("absorbing state {bad} out of range")));
        }
        out.absorbing = s;
        Ok(out)
    }

    pub fn from_document(doc: &TerminalDocument) -> Result<Self, SolverError> {
        let g = DVector::from_column_slice(&doc.g);
        if doc.absorbing.is_empty() {
            Self::new(g)
        } else {
            Self::stopped(g, doc.absorbing.clone())
        }
    }

    pub fn to_document(&self) -> TerminalDocument {
        TerminalDocument { g: self.payoff.iter().copied().collect(), absorbing: self.absorbing.clone() }
    }

    pub fn is_stopped(&self) -> bool {
        !self.absorbing.is_empty()
    }

    pub fn len(&self) -> usize {
        self.payoff.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payoff.is_empty()
    }

    pub fn check_dim(&self, n: usize) -> Result<(), SolverError> {
        if self.payoff.len() != n {
            return Err(SolverError::DimensionMismatch { expected: n, got: self.payoff.len() });
        }
        Ok(())
    }

    /// Chain and driver after the absorbing transformation; unchanged for a
    /// plain terminal condition.
    pub fn effective(&self, f: &DriverSpec, a: &RateMatrix) -> (DriverSpec, RateMatrix) {
        if self.absorbing.is_empty() {
            (f.clone(), a.clone())
        } else {
            let chain = a.absorb(&self.absorbing);
            (f.with_inactive(&self.absorbing).rebind(&chain), chain)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(TerminalCondition::from_slice(&[1.0, f64::NAN]).is_err());
        let g = DVector::from_vec(vec![1.0, 0.0, 2.0]);
        assert!(TerminalCondition::stopped(g.clone(), vec![]).is_err());
        assert!(TerminalCondition::stopped(g.clone(), vec![0, 1, 2]).is_err());
        assert!(TerminalCondition::stopped(g.clone(), vec![5]).is_err());
        let t = TerminalCondition::stopped(g, vec![2, 2]).unwrap();
        assert_eq!(t.absorbing, vec![2]);
        assert_eq!(TerminalCondition::from_document(&t.to_document()).unwrap(), t);
    }
}

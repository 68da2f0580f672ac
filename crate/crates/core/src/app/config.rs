use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::AppError;
use crate::chain::{ChainDocument, RateMatrix};
use crate::driver::{parse_driver_value, DriverSpec};
use crate::solver::{TerminalCondition, TerminalDocument};

/// Top-level run description. Chains, drivers and terminal conditions are
/// named once and referenced by name from the experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub chains: BTreeMap<String, ChainDocument>,
    #[serde(default)]
    pub drivers: BTreeMap<String, Value>,
    #[serde(default)]
    pub terminals: BTreeMap<String, TerminalDocument>,
    pub experiments: Vec<ExperimentEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentEntry {
    pub name: String,
    #[serde(flatten)]
    pub experiment: Experiment,
}

/// Expected value of `u_state(0)` in a `solve` experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    pub state: usize,
    pub value: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParams {
    pub n_times: usize,
    pub n_y: usize,
    pub n_random_z: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    Solve {
        chain: String,
        driver: String,
        terminal: String,
        step: f64,
        #[serde(default)]
        expect: Vec<Expectation>,
    },
    Convergence {
        chain: String,
        driver: String,
        terminal: String,
        steps: Vec<f64>,
        ratio_min: f64,
        ratio_max: f64,
    },
    Geometry {
        chain: String,
        samples: usize,
        seed: u64,
    },
    GeometrySuite {
        generators: usize,
        min_states: usize,
        max_states: usize,
        samples: usize,
        seed: u64,
    },
    Bracket {
        chain: String,
        x0: usize,
        n_paths: usize,
        seed: u64,
    },
    Simulate {
        chain: String,
        x0: usize,
        n_paths: usize,
        seed: u64,
    },
    DriverOrder {
        chain: String,
        f1: String,
        f2: String,
        grid: GridParams,
    },
    Duality {
        chain: String,
        f1: String,
        f2: String,
        g1: String,
        g2: String,
        x0: usize,
        step: f64,
        n_paths: usize,
        seed: u64,
    },
    Comparison {
        chain: String,
        f1: String,
        f2: String,
        g1: String,
        g2: String,
        step: f64,
    },
    Equality {
        chain: String,
        f1: String,
        f2: String,
        g1: String,
        g2: String,
        step: f64,
    },
    ComparisonSweep {
        n_random: usize,
        n_strict: usize,
        step: f64,
        seed: u64,
    },
    Fexp {
        chain: String,
        driver: String,
        step: f64,
        cases: usize,
        seed: u64,
    },
    ConverseWitness {
        chain: String,
        f1: String,
        f2: String,
        delta: f64,
        y: f64,
        z: Vec<f64>,
        x0: usize,
        step: f64,
        n_paths: usize,
        seed: u64,
    },
    ConverseSearch {
        chain: String,
        f1: String,
        f2: String,
        family: Vec<String>,
        x0: usize,
        step: f64,
        grid: GridParams,
    },
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Solve { .. } => "solve",
            Experiment::Convergence { .. } => "convergence",
            Experiment::Geometry { .. } => "geometry",
            Experiment::GeometrySuite { .. } => "geometry_suite",
            Experiment::Bracket { .. } => "bracket",
            Experiment::Simulate { .. } => "simulate",
            Experiment::DriverOrder { .. } => "driver_order",
            Experiment::Duality { .. } => "duality",
            Experiment::Comparison { .. } => "comparison",
            Experiment::Equality { .. } => "equality",
            Experiment::ComparisonSweep { .. } => "comparison_sweep",
            Experiment::Fexp { .. } => "fexp",
            Experiment::ConverseWitness { .. } => "converse_witness",
            Experiment::ConverseSearch { .. } => "converse_search",
        }
    }

    fn chain(&self) -> Option<&str> {
        match self {
            Experiment::Solve { chain, .. }
            | Experiment::Convergence { chain, .. }
            | Experiment::Geometry { chain, .. }
            | Experiment::Bracket { chain, .. }
            | Experiment::Simulate { chain, .. }
            | Experiment::DriverOrder { chain, .. }
            | Experiment::Duality { chain, .. }
            | Experiment::Comparison { chain, .. }
            | Experiment::Equality { chain, .. }
            | Experiment::Fexp { chain, .. }
            | Experiment::ConverseWitness { chain, .. }
            | Experiment::ConverseSearch { chain, .. } => Some(chain),
            Experiment::GeometrySuite { .. } | Experiment::ComparisonSweep { .. } => None,
        }
    }

    fn drivers(&self) -> Vec<&str> {
        match self {
            Experiment::Solve { driver, .. } | Experiment::Convergence { driver, .. } | Experiment::Fexp { driver, .. } => {
                vec![driver]
            }
            Experiment::DriverOrder { f1, f2, .. }
            | Experiment::Duality { f1, f2, .. }
            | Experiment::Comparison { f1, f2, .. }
            | Experiment::Equality { f1, f2, .. }
            | Experiment::ConverseWitness { f1, f2, .. }
            | Experiment::ConverseSearch { f1, f2, .. } => vec![f1, f2],
            _ => Vec::new(),
        }
    }

    fn terminals(&self) -> Vec<&str> {
        match self {
            Experiment::Solve { terminal, .. } | Experiment::Convergence { terminal, .. } => vec![terminal],
            Experiment::Duality { g1, g2, .. } | Experiment::Comparison { g1, g2, .. } | Experiment::Equality { g1, g2, .. } => {
                vec![g1, g2]
            }
            Experiment::ConverseSearch { family, .. } => family.iter().map(String::as_str).collect(),
            _ => Vec::new(),
        }
    }

    fn steps(&self) -> Vec<f64> {
        match self {
            Experiment::Solve { step, .. }
            | Experiment::Duality { step, .. }
            | Experiment::Comparison { step, .. }
            | Experiment::Equality { step, .. }
            | Experiment::ComparisonSweep { step, .. }
            | Experiment::Fexp { step, .. }
            | Experiment::ConverseWitness { step, .. }
            | Experiment::ConverseSearch { step, .. } => vec![*step],
            Experiment::Convergence { steps, .. } => steps.clone(),
            _ => Vec::new(),
        }
    }
}

/// Chains and terminal conditions after validation.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub chains: BTreeMap<String, RateMatrix>,
    pub terminals: BTreeMap<String, TerminalCondition>,
}

fn invalid(msg: impl Into<String>) -> AppError {
    AppError::ConfigInvalid(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, AppError> {
        serde_json::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    /// Checks every reference and parameter, binding each driver to the
    /// chain of every experiment that uses it.
    pub fn validate(&self) -> Result<Resolved, AppError> {
        let mut chains = BTreeMap::new();
        for (name, doc) in &self.chains {
            let a = doc.clone().into_rate_matrix().map_err(|e| invalid(format!("chain '{name}': {e}")))?;
            chains.insert(name.clone(), a);
        }
        let mut terminals = BTreeMap::new();
        for (name, doc) in &self.terminals {
            let g = TerminalCondition::from_document(doc).map_err(|e| invalid(format!("terminal '{name}': {e}")))?;
            terminals.insert(name.clone(), g);
        }
        if self.workers == Some(0) {
            return Err(invalid("workers must be positive"));
        }
        let mut seen = BTreeSet::new();
        for entry in &self.experiments {
            let name = &entry.name;
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(invalid(format!("experiment name '{name}' must be nonempty and use [A-Za-z0-9_-]")));
            }
            if !seen.insert(name.clone()) {
                return Err(invalid(format!("duplicate experiment name '{name}'")));
            }
            let ex = &entry.experiment;
            for s in ex.steps() {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(invalid(format!("{name}: step {s} must be positive")));
                }
            }
            let chain = match ex.chain() {
                Some(c) => Some(chains.get(c).ok_or_else(|| invalid(format!("{name}: unknown chain '{c}'")))?),
                None => None,
            };
            for d in ex.drivers() {
                let doc = self.drivers.get(d).ok_or_else(|| invalid(format!("{name}: unknown driver '{d}'")))?;
                if let Some(a) = chain {
                    parse_driver_value(doc, a).map_err(|e| invalid(format!("{name}: driver '{d}': {e}")))?;
                }
            }
            for t in ex.terminals() {
                let g = terminals.get(t).ok_or_else(|| invalid(format!("{name}: unknown terminal '{t}'")))?;
                if let Some(a) = chain {
                    g.check_dim(a.n_states()).map_err(|e| invalid(format!("{name}: terminal '{t}': {e}")))?;
                }
            }
            match ex {
                Experiment::Convergence { steps, .. } if steps.len() < 3 => {
                    return Err(invalid(format!("{name}: convergence needs at least three steps")));
                }
                Experiment::GeometrySuite { min_states, max_states, .. } if *min_states < 2 || min_states > max_states => {
                    return Err(invalid(format!("{name}: need 2 ≤ min_states ≤ max_states")));
                }
                Experiment::ConverseWitness { z, .. } if Some(z.len()) != chain.map(RateMatrix::n_states) => {
                    return Err(invalid(format!("{name}: z has the wrong length")));
                }
                Experiment::ConverseSearch { family, .. } if family.is_empty() => {
                    return Err(invalid(format!("{name}: empty terminal family")));
                }
                _ => {}
            }
            if let (Some(a), Some(x0)) = (chain, start_state(ex)) {
                if x0 >= a.n_states() {
                    return Err(invalid(format!("{name}: x0 = {x0} out of range")));
                }
            }
        }
        Ok(Resolved { chains, terminals })
    }

    /// Binds a named driver to a chain; names are checked by [`Self::validate`].
    pub(super) fn driver(&self, name: &str, chain: &RateMatrix) -> Result<DriverSpec, AppError> {
        let doc = self.drivers.get(name).ok_or_else(|| invalid(format!("unknown driver '{name}'")))?;
        parse_driver_value(doc, chain).map_err(|e| invalid(format!("driver '{name}': {e}")))
    }
}

fn start_state(ex: &Experiment) -> Option<usize> {
    match ex {
        Experiment::Bracket { x0, .. }
        | Experiment::Simulate { x0, .. }
        | Experiment::Duality { x0, .. }
        | Experiment::ConverseWitness { x0, .. }
        | Experiment::ConverseSearch { x0, .. } => Some(*x0),
        _ => None,
    }
}

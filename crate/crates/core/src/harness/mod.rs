//! Numerical checks of the comparison theorem, its equality
//! characterization, and the converse construction.

mod converse;

pub use converse::{
    converse_search, converse_witness, witness_report, ConverseWitness, WitnessParams, WitnessPath,
};

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde_json::json;
use thiserror::Error;

use crate::chain::{path_rng, random_generator, reachability, ChainError, RateMatrix};
use crate::driver::{Bump, DriverDocument, DriverSpec};
use crate::fexp::FexpError;
use crate::geometry::{assumption_margin, MarginClass, PsiCache};
use crate::report::VerdictReport;
use crate::solver::{solve_on_common_grid, BsdeSolution, SolverError, TerminalCondition};
use crate::tolerances::{COMPARISON, DRIVER_ORDER, STRICT_GAP};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("hypothesis unmet: {0}")]
    HypothesisUnmet(String),
    #[error("no point with f2 ≤ f1 − δ found on the search grid")]
    NoViolationFound,
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Fexp(#[from] FexpError),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// Both solutions plus the largest breach of `f₁ ≤ f₂` along `(Y², Z²)`.
struct SolvedPair {
    sol1: BsdeSolution,
    sol2: BsdeSolution,
    hypothesis_gap: f64,
    /// `f₂ − f₁` along `(Y², Z²)` per node and state (minimum of both sides).
    driver_gap: Vec<DVector<f64>>,
}

fn solve_pair(
    f1: &DriverSpec,
    f2: &DriverSpec,
    g1: &TerminalCondition,
    g2: &TerminalCondition,
    a: &RateMatrix,
    step: f64,
) -> Result<SolvedPair, HarnessError> {
    if g1.absorbing != g2.absorbing {
        return Err(HarnessError::HypothesisUnmet("terminal conditions stop on different sets".into()));
    }
    let n = a.n_states();
    g1.check_dim(n)?;
    g2.check_dim(n)?;
    if let Some(i) = (0..n).find(|&i| g1.payoff[i] > g2.payoff[i]) {
        return Err(HarnessError::HypothesisUnmet(format!(
            "g1[{i}] = {} exceeds g2[{i}] = {}",
            g1.payoff[i], g2.payoff[i]
        )));
    }
    let margin = assumption_margin(a, f1.l2());
    if !margin.classification.admits_comparison() {
        return Err(HarnessError::HypothesisUnmet(format!("margin product {} exceeds 1", margin.product)));
    }
    let (sol1, sol2) = solve_on_common_grid(f1, g1, f2, g2, a, step)?;
    let (e1, chain) = g1.effective(f1, a);
    let (e2, _) = g2.effective(f2, a);
    let cache = PsiCache::new(&chain);
    let grid = sol2.grid();
    let mut worst = f64::INFINITY;
    let mut driver_gap = Vec::with_capacity(grid.times().len());
    for (k, &t) in grid.times().iter().enumerate() {
        let u = sol2.u(k);
        let mut segs = vec![grid.node_segment(k)];
        if k > 0 {
            segs.push(grid.cell_segment(k - 1));
        }
        let gap = DVector::from_fn(n, |i, _| {
            segs.iter()
                .map(|&seg| {
                    let psi = &cache.entry(seg, i).psi;
                    e2.value(t, i, u[i], u, psi) - e1.value(t, i, u[i], u, psi)
                })
                .fold(f64::INFINITY, f64::min)
        });
        worst = worst.min(gap.min());
        driver_gap.push(gap);
    }
    if worst < -DRIVER_ORDER {
        return Err(HarnessError::HypothesisUnmet(format!("f1 exceeds f2 by {} along the second solution", -worst)));
    }
    Ok(SolvedPair { sol1, sol2, hypothesis_gap: worst, driver_gap })
}

/// `u¹(t) ≤ u²(t)` at every grid time within `10×` the solver tolerance.
pub fn comparison_check(
    f1: &DriverSpec,
    f2: &DriverSpec,
    g1: &TerminalCondition,
    g2: &TerminalCondition,
    a: &RateMatrix,
    step: f64,
) -> Result<VerdictReport, HarnessError> {
    let pair = solve_pair(f1, f2, g1, g2, a, step)?;
    let mut min_gap = f64::INFINITY;
    let mut witness = None;
    for (k, &t) in pair.sol1.times().iter().enumerate() {
        let d = pair.sol2.u(k) - pair.sol1.u(k);
        let (i, v) = d.argmin();
        if v < min_gap {
            min_gap = v;
            if v < -COMPARISON {
                witness = Some(json!({"time": t, "state": i, "gap": v}));
            }
        }
    }
    let mut report = VerdictReport::new("comparison")
        .with_step(step)
        .tolerance("comparison", COMPARISON)
        .tolerance("driver_order", DRIVER_ORDER)
        .margin("min_gap", min_gap)
        .margin("hypothesis_gap", pair.hypothesis_gap);
    let d0 = pair.sol2.initial() - pair.sol1.initial();
    for (i, v) in d0.iter().enumerate() {
        report.push_row("gap_t0", i, *v, *v >= -COMPARISON);
    }
    Ok(report.conclude(min_gap >= -COMPARISON, "min_gap", min_gap, || witness.unwrap()))
}

/// Both directions of the equality characterization at `t = 0`: states that
/// can reach a disagreement show a strictly positive gap, the others none.
pub fn equality_characterization(
    f1: &DriverSpec,
    f2: &DriverSpec,
    g1: &TerminalCondition,
    g2: &TerminalCondition,
    a: &RateMatrix,
    step: f64,
) -> Result<VerdictReport, HarnessError> {
    let margin = assumption_margin(a, f1.l2());
    if margin.classification != MarginClass::Strict {
        return Err(HarnessError::HypothesisUnmet(format!("margin product {} is not strict", margin.product)));
    }
    let pair = solve_pair(f1, f2, g1, g2, a, step)?;
    let n = a.n_states();
    let chain = pair.sol1.chain().clone();
    let times = pair.sol1.times().to_vec();
    let horizon = *times.last().unwrap();

    // reached[i]: a disagreement is reachable from e_i at time 0
    let mut reached = vec![false; n];
    let terminal_reach = reachability(&chain, 0.0, horizon)?;
    for i in 0..n {
        reached[i] = (0..n).any(|j| terminal_reach[j][i] && g2.payoff[j] - g1.payoff[j] > DRIVER_ORDER);
    }
    for (k, gap) in pair.driver_gap.iter().enumerate() {
        if reached.iter().all(|&r| r) {
            break;
        }
        let hot: Vec<usize> = (0..n).filter(|&j| gap[j] > DRIVER_ORDER).collect();
        if hot.is_empty() {
            continue;
        }
        let r = reachability(&chain, 0.0, times[k])?;
        for (i, flag) in reached.iter_mut().enumerate() {
            *flag |= hot.iter().any(|&j| r[j][i]);
        }
    }

    let d0 = pair.sol2.initial() - pair.sol1.initial();
    let mut report = VerdictReport::new("equality")
        .with_step(step)
        .tolerance("equal", COMPARISON)
        .tolerance("strict_gap", STRICT_GAP)
        .margin("margin_product", margin.product);
    let mut ok = true;
    let mut worst = f64::INFINITY;
    let mut witness = None;
    for i in 0..n {
        let (pass, slack) = if reached[i] { (d0[i] > STRICT_GAP, d0[i] - STRICT_GAP) } else { (d0[i].abs() <= COMPARISON, COMPARISON - d0[i].abs()) };
        report.push_row(if reached[i] { "strict" } else { "equal" }, i, d0[i], pass);
        worst = worst.min(slack);
        if !pass && witness.is_none() {
            witness = Some(json!({"state": i, "gap": d0[i], "expected_strict": reached[i]}));
        }
        ok &= pass;
    }
    report = report.margin("min_slack", worst).margin("strict_states", reached.iter().filter(|&&r| r).count() as f64);
    Ok(report.conclude(ok, "min_slack", worst, || witness.unwrap()))
}

/// A random driver scaled so that its margin product is at most `target`.
fn random_driver<R: Rng>(rng: &mut R, a: &RateMatrix, target: f64) -> Result<DriverDocument, HarnessError> {
    let n = a.n_states();
    let lambda = rng.random::<f64>();
    let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let doc = DriverDocument::seminorm(lambda)
        .with_b_vec(b.clone())
        .with_beta(rng.random::<f64>() - 0.5)
        .with_mu(0.5 * (rng.random::<f64>() - 0.5))
        .with_per_state((0..n).map(|_| rng.random::<f64>() - 0.5).collect());
    let l2 = doc.bind(a).map_err(|e| HarnessError::HypothesisUnmet(e.to_string()))?.l2();
    let margin = assumption_margin(a, l2);
    let scale = if margin.product > 0.0 { (target / margin.product).min(1.0) } else { 1.0 };
    let mut out = doc.with_lambda(lambda * scale).with_b_vec(b.iter().map(|v| v * scale).collect());
    out.inactive_states.clear();
    Ok(out)
}

/// `n_random` hypothesis-satisfying triples on random chains (no order
/// violation allowed), followed by `n_strict` equality-characterization
/// cases with a strict terminal or driver gap.
pub fn comparison_sweep(n_random: usize, n_strict: usize, step: f64, seed: u64) -> Result<VerdictReport, HarnessError> {
    let cases: Vec<Result<(VerdictReport, bool), HarnessError>> = (0..n_random + n_strict)
        .into_par_iter()
        .map(|case| {
            let mut rng = path_rng(seed, case as u64);
            let n = rng.random_range(2..=4);
            let horizon = 0.5 + rng.random::<f64>();
            let a = RateMatrix::validate(vec![(0.0, random_generator(&mut rng, n, 0.2, 2.0, 0.0))], horizon)?;
            let strict = case >= n_random;
            let d1 = random_driver(&mut rng, &a, 0.9)?;
            let mut d2 = d1.clone();
            d2 = d2.with_lambda(d1.lambda + 0.2 * rng.random::<f64>());
            if rng.random::<f64>() < 0.5 {
                d2 = d2.with_bump(Bump {
                    start: 0.2 * horizon,
                    end: 0.6 * horizon,
                    height: 0.3 * rng.random::<f64>(),
                    states: Some(vec![rng.random_range(0..n)]),
                });
            }
            let g1: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let mut g2: Vec<f64> = g1.iter().map(|v| v + if rng.random::<f64>() < 0.5 { 0.5 * rng.random::<f64>() } else { 0.0 }).collect();
            if strict {
                let j = rng.random_range(0..n);
                g2[j] = g1[j] + 0.1 + rng.random::<f64>();
            }
            let bind = |d: &DriverDocument| d.bind(&a).map_err(|e| HarnessError::HypothesisUnmet(e.to_string()));
            let (f1, f2) = (bind(&d1)?, bind(&d2)?);
            let (t1, t2) = (TerminalCondition::from_slice(&g1)?, TerminalCondition::from_slice(&g2)?);
            let r = if strict {
                equality_characterization(&f1, &f2, &t1, &t2, &a, step)?
            } else {
                comparison_check(&f1, &f2, &t1, &t2, &a, step)?
            };
            Ok((r, strict))
        })
        .collect();

    let mut report = VerdictReport::new("comparison_sweep")
        .seed(seed)
        .with_step(step)
        .tolerance("comparison", COMPARISON)
        .tolerance("strict_gap", STRICT_GAP)
        .margin("random_cases", n_random as f64)
        .margin("strict_cases", n_strict as f64);
    let mut violations = 0usize;
    let mut strict_failures = 0usize;
    let mut min_gap = f64::INFINITY;
    let mut min_strict = f64::INFINITY;
    let mut witness = None;
    for (case, res) in cases.into_iter().enumerate() {
        let (r, strict) = res?;
        if strict {
            let v = r.margins["min_slack"];
            min_strict = min_strict.min(v);
            report.push_row("strict", case, v, r.is_pass());
            if !r.is_pass() {
                strict_failures += 1;
            }
        } else {
            let v = r.margins["min_gap"];
            min_gap = min_gap.min(v);
            report.push_row("order", case, v, r.is_pass());
            if !r.is_pass() {
                violations += 1;
            }
        }
        if !r.is_pass() && witness.is_none() {
            witness = Some(json!({"case": case, "report": r.witness}));
        }
    }
    report = report
        .margin("violations", violations as f64)
        .margin("strict_failures", strict_failures as f64)
        .margin("min_gap", min_gap)
        .margin("min_strict_slack", min_strict);
    Ok(report.conclude(violations == 0 && strict_failures == 0, "min_gap", min_gap, || witness.unwrap()))
}

//! `f`-expectations: `𝔈^f_{s,t}(g·X_t) = u(s)·X_s` for a normalized driver
//! under a strict assumption margin, and a randomized check of constancy,
//! monotonicity with strictness, the tower property, and locality.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde_json::json;
use thiserror::Error;

use crate::chain::{path_rng, reachability, RateMatrix};
use crate::driver::DriverSpec;
use crate::geometry::{assumption_margin, AssumptionMargin, MarginClass};
use crate::report::{CaseRow, VerdictReport};
use crate::solver::{solve_interval, SolverError, TerminalCondition};
use crate::tolerances::{COMPARISON, STRICT_GAP};

/// Exactness bound for constancy and monotonicity.
pub const EXACT: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FexpError {
    #[error("driver is not normalized: f(t, x, y, 0) must vanish")]
    NotNormalized,
    #[error("assumption margin is not strict: product {product}")]
    MarginViolated { product: f64 },
    #[error("need 0 ≤ s ≤ t ≤ T, got s = {s}, t = {t}")]
    InvalidTimes { s: f64, t: f64 },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone)]
pub struct FExpectationOperator {
    driver: DriverSpec,
    chain: RateMatrix,
    step: f64,
    margin: AssumptionMargin,
}

impl FExpectationOperator {
    pub fn new(driver: DriverSpec, chain: RateMatrix, step: f64) -> Result<Self, FexpError> {
        if !driver.is_normalized() {
            return Err(FexpError::NotNormalized);
        }
        let margin = assumption_margin(&chain, driver.l2());
        if margin.classification != MarginClass::Strict {
            return Err(FexpError::MarginViolated { product: margin.product });
        }
        if !(step > 0.0) {
            return Err(SolverError::InvalidStep(step).into());
        }
        Ok(Self { driver, chain, step, margin })
    }

    pub fn driver(&self) -> &DriverSpec {
        &self.driver
    }

    pub fn chain(&self) -> &RateMatrix {
        &self.chain
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn margin(&self) -> &AssumptionMargin {
        &self.margin
    }

    pub fn horizon(&self) -> f64 {
        self.chain.horizon()
    }

    /// The operator for terminal values frozen on hitting `absorbing`.
    pub fn stopped(&self, absorbing: &[usize]) -> Self {
        let chain = self.chain.absorb(absorbing);
        let driver = self.driver.with_inactive(absorbing).rebind(&chain);
        let margin = assumption_margin(&chain, driver.l2());
        Self { driver, chain, step: self.step, margin }
    }

    /// `u(s)` for `u(t) = g`.
    pub fn f_eval(&self, s: f64, t: f64, g: &TerminalCondition) -> Result<DVector<f64>, FexpError> {
        if !(0.0 <= s && s <= t && t <= self.horizon()) {
            return Err(FexpError::InvalidTimes { s, t });
        }
        let sol = solve_interval(&self.driver, g, &self.chain, s, t, self.step)?;
        Ok(sol.initial().clone())
    }

    /// `𝔈_f(g·X_T)` started from `e_{x0}`.
    pub fn f_expectation(&self, g: &TerminalCondition, x0: usize) -> Result<f64, FexpError> {
        self.chain.check_state(x0).map_err(SolverError::from)?;
        Ok(self.f_eval(0.0, self.horizon(), g)?[x0])
    }

    /// Value under the tagged chain: state `tag·N + k` carries `g_tag(k)`.
    fn tagged_eval(&self, s: f64, t: f64, g: impl Fn(usize, usize) -> f64) -> Result<DVector<f64>, FexpError> {
        let n = self.chain.n_states();
        let tagged = self.chain.tagged();
        let f = self.driver.lift_tagged(&tagged);
        let payoff = DVector::from_fn(n * n, |k, _| g(k / n, k % n));
        let sol = solve_interval(&f, &TerminalCondition::new(payoff)?, &tagged, s, t, self.step)?;
        Ok(sol.initial().clone())
    }

    /// Randomized property cases; `stopped` adds the same checks on the
    /// operator stopped at the hitting time of a random state set.
    pub fn property_suite(&self, cases: usize, seed: u64) -> Result<VerdictReport, FexpError> {
        let n = self.chain.n_states();
        let per_case: Vec<Result<Vec<CaseRow>, FexpError>> = (0..cases)
            .into_par_iter()
            .map(|case| {
                let mut rng = path_rng(seed, case as u64);
                let mut rows = self.case_rows(case, "", &mut rng)?;
                let mut states: Vec<usize> = (0..n).collect();
                states.shuffle(&mut rng);
                let k = rng.random_range(1..n);
                let stopped = self.stopped(&states[..k]);
                rows.extend(stopped.case_rows(case, "_stopped", &mut rng)?);
                Ok(rows)
            })
            .collect();

        let mut report = VerdictReport::new("fexp")
            .seed(seed)
            .with_step(self.step)
            .tolerance("exact", EXACT)
            .tolerance("tower", COMPARISON)
            .tolerance("locality", COMPARISON)
            .tolerance("strict_gap", STRICT_GAP)
            .margin("cases", cases as f64)
            .margin("margin_product", self.margin.product);
        let mut first_fail = None;
        for rows in per_case {
            for row in rows? {
                let key = format!("max_{}", row.item);
                let entry = report.margins.entry(key).or_insert(f64::NEG_INFINITY);
                *entry = entry.max(row.value);
                if !row.pass && first_fail.is_none() {
                    first_fail = Some(json!({"property": row.item, "case_id": row.case_id, "value": row.value}));
                }
                report.rows.push(row);
            }
        }
        let worst = report.margins.get("max_tower").copied().unwrap_or(0.0);
        Ok(report.conclude(first_fail.is_none(), "max_tower", worst, || first_fail.unwrap()))
    }

    fn case_rows<R: Rng>(&self, case: usize, tag: &str, rng: &mut R) -> Result<Vec<CaseRow>, FexpError> {
        let n = self.chain.n_states();
        let horizon = self.horizon();
        let mut rows = Vec::new();
        let mut push = |item: &str, value: f64, pass: bool| {
            rows.push(CaseRow { item: format!("{item}{tag}"), case_id: case, value, pass });
        };
        // t ≥ T/2 keeps strict gaps well above solver noise
        let t = horizon * (0.5 + 0.5 * rng.random::<f64>());
        let s = t * rng.random::<f64>();
        let r = s * rng.random::<f64>();
        let rand_vec = |rng: &mut R| DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let g = TerminalCondition::new(rand_vec(rng))?;

        // P1: constants, and data fixed at time s
        let c = rng.random::<f64>() * 4.0 - 2.0;
        let uc = self.f_eval(s, t, &TerminalCondition::new(DVector::from_element(n, c))?)?;
        let dev = uc.map(|v| (v - c).abs()).amax();
        push("constancy", dev, dev <= EXACT);
        let h = rand_vec(rng);
        let ut = self.tagged_eval(s, t, |tag, _| h[tag])?;
        let dev = (0..n).map(|i| (ut[i * n + i] - h[i]).abs()).fold(0.0, f64::max);
        push("constancy_measurable", dev, dev <= EXACT);
        let same = self.f_eval(t, t, &g)?;
        let dev = (same - &g.payoff).amax();
        push("identity", dev, dev <= EXACT);

        // P2: g1 ≥ g2, strict on a random subset
        let bump = DVector::from_fn(n, |_, _| if rng.random::<f64>() < 0.5 { 0.1 + rng.random::<f64>() } else { 0.0 });
        let g1 = TerminalCondition::new(&g.payoff + &bump)?;
        let u1 = self.f_eval(0.0, t, &g1)?;
        let u2 = self.f_eval(0.0, t, &g)?;
        let violation = (&u2 - &u1).max().max(0.0);
        push("monotonicity", violation, violation <= EXACT);
        let reach = reachability(&self.chain, 0.0, t).map_err(SolverError::from)?;
        let mut strict_ok = true;
        let mut min_strict = f64::INFINITY;
        for i in 0..n {
            let hits = (0..n).any(|j| reach[j][i] && bump[j] > 0.0);
            let gap = u1[i] - u2[i];
            if hits {
                min_strict = min_strict.min(gap);
                strict_ok &= gap > STRICT_GAP;
            } else {
                strict_ok &= gap.abs() <= EXACT;
            }
        }
        push("strictness", if min_strict.is_finite() { -min_strict } else { 0.0 }, strict_ok);
        let eq = (self.f_eval(0.0, t, &g)? - &u2).amax();
        push("equality", eq, eq <= EXACT);

        // P3: tower
        let inner = self.f_eval(s, t, &g)?;
        let outer = self.f_eval(r, s, &TerminalCondition::new(inner)?)?;
        let direct = self.f_eval(r, t, &g)?;
        let res = (outer - direct).amax();
        push("tower", res, res <= COMPARISON);

        // P4: on {X_s = e_i}, 𝔈(1_A ξ) = 𝔈(ξ)
        let i = rng.random_range(0..n);
        let masked = self.tagged_eval(s, t, |tag, k| if tag == i { g.payoff[k] } else { 0.0 })?;
        let plain = self.f_eval(s, t, &g)?;
        let mut dev = (masked[i * n + i] - plain[i]).abs();
        for j in (0..n).filter(|&j| j != i) {
            dev = dev.max(masked[j * n + j].abs());
        }
        push("locality", dev, dev <= COMPARISON);
        Ok(rows)
    }
}

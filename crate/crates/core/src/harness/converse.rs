use nalgebra::DVector;
use serde::Serialize;
use serde_json::json;

use super::HarnessError;
use crate::chain::{ensemble_map, ChainPath, RateMatrix};
use crate::driver::{driver_order_check, DriverSpec, OrderGrid};
use crate::fexp::FExpectationOperator;
use crate::geometry::{PsiCache, PsiMatrix};
use crate::report::VerdictReport;
use crate::solver::{TerminalCondition, TimeGrid};
use crate::tolerances::{COMPARISON, CONVERSE_WITNESS_GAP, WITNESS};

#[derive(Debug, Clone)]
pub struct WitnessParams {
    pub delta: f64,
    pub y: f64,
    pub z: DVector<f64>,
    pub x0: usize,
    pub step: f64,
    pub n_paths: usize,
    pub seed: u64,
}

/// One path of the forward construction on `[τ_δ, τ′_δ]`.
#[derive(Debug, Clone, Serialize)]
pub struct WitnessPath {
    pub tau_delta: f64,
    pub tau_prime: f64,
    pub y1: f64,
    pub y2: f64,
    /// `Y¹(τ′) − Y²(τ′)`.
    pub terminal_gap: f64,
    /// `−(δ/2)(τ′ − τ)`.
    pub bound: f64,
    /// Terminal gap from the halved-step rerun.
    pub rerun_gap: f64,
}

impl WitnessPath {
    pub fn active(&self) -> bool {
        self.tau_delta < self.tau_prime
    }

    pub fn satisfied(&self) -> bool {
        !self.active() || self.terminal_gap <= self.bound + WITNESS
    }
}

#[derive(Debug, Clone)]
pub struct ConverseWitness {
    pub params: WitnessParams,
    pub paths: Vec<WitnessPath>,
}

impl ConverseWitness {
    pub fn active_fraction(&self) -> f64 {
        self.paths.iter().filter(|p| p.active()).count() as f64 / self.paths.len().max(1) as f64
    }

    /// Largest `terminal_gap − bound` over active paths.
    pub fn max_excess(&self) -> f64 {
        self.paths.iter().filter(|p| p.active()).map(|p| p.terminal_gap - p.bound).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_rerun_diff(&self) -> f64 {
        self.paths.iter().map(|p| (p.terminal_gap - p.rerun_gap).abs()).fold(0.0, f64::max)
    }
}

struct Forward<'a> {
    f1: &'a DriverSpec,
    f2: &'a DriverSpec,
    chain: &'a RateMatrix,
    cache: PsiCache,
    z: &'a DVector<f64>,
    delta: f64,
}

impl Forward<'_> {
    fn psi(&self, t: f64, state: usize) -> &PsiMatrix {
        &self.cache.entry(self.chain.segment_index(t), state).psi
    }

    /// `dYⁱ/dt = −fᵢ(t, X, Yⁱ, z) − (A'z)_X` between jumps.
    fn rhs(&self, t: f64, seg: usize, state: usize, y: [f64; 2]) -> [f64; 2] {
        let psi = &self.cache.entry(seg, state).psi;
        let drift = self.chain.generator_action(seg, state, self.z);
        [-self.f1.value(t, state, y[0], self.z, psi) - drift, -self.f2.value(t, state, y[1], self.z, psi) - drift]
    }

    /// `f₂(Y²) − f₁(Y¹) + δ/2`; `τ′` is its first nonnegative time.
    fn stop_gap(&self, t: f64, seg: usize, state: usize, y: [f64; 2]) -> f64 {
        let psi = &self.cache.entry(seg, state).psi;
        self.f2.value(t, state, y[1], self.z, psi) - self.f1.value(t, state, y[0], self.z, psi) + 0.5 * self.delta
    }

    fn rk4(&self, t: f64, seg: usize, state: usize, y: [f64; 2], h: f64) -> [f64; 2] {
        let add = |a: [f64; 2], b: [f64; 2], s: f64| [a[0] + s * b[0], a[1] + s * b[1]];
        let k1 = self.rhs(t, seg, state, y);
        let k2 = self.rhs(t + 0.5 * h, seg, state, add(y, k1, 0.5 * h));
        let k3 = self.rhs(t + 0.5 * h, seg, state, add(y, k2, 0.5 * h));
        let k4 = self.rhs(t + h, seg, state, add(y, k3, h));
        [
            y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ]
    }

    /// First time on the merged grid/jump timeline where `f₂ ≤ f₁ − δ` at `(y, z)`.
    fn tau_delta(&self, path: &ChainPath, grid: &[f64], y: f64) -> f64 {
        let mut times: Vec<f64> = grid.to_vec();
        times.extend_from_slice(path.jump_times());
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for t in times {
            let x = path.state_at(t);
            let psi = self.psi(t, x);
            if self.f2.value(t, x, y, self.z, psi) <= self.f1.value(t, x, y, self.z, psi) - self.delta {
                return t;
            }
        }
        path.horizon()
    }

    /// Integrates from `τ_δ` until the stop condition or `T`.
    fn run(&self, path: &ChainPath, tau: f64, y: f64, step: f64, extra: &[f64]) -> (f64, [f64; 2]) {
        let horizon = path.horizon();
        let mut cuts: Vec<f64> = path.jump_times().iter().copied().filter(|&t| t > tau).collect();
        cuts.extend(self.chain.breakpoints_in(tau, horizon));
        cuts.extend(extra.iter().copied().filter(|&t| t > tau && t < horizon));
        cuts.push(horizon);
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup();

        let mut state = [y, y];
        let mut t = tau;
        for &end in &cuts {
            let x = path.state_at(t);
            let seg = self.chain.segment_index(0.5 * (t + end));
            if self.stop_gap(t, seg, x, state) >= 0.0 {
                return (t, state);
            }
            let cells = ((end - t) / step - 1e-9).ceil().max(1.0) as usize;
            let h = (end - t) / cells as f64;
            for c in 0..cells {
                let t0 = t + h * c as f64;
                let next = self.rk4(t0, seg, x, state, h);
                let t1 = if c + 1 == cells { end } else { t0 + h };
                if self.stop_gap(t1, seg, x, next) >= 0.0 {
                    // bisect the crossing on the RK4 substep
                    let (mut lo, mut hi) = (0.0, t1 - t0);
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        let y_mid = self.rk4(t0, seg, x, state, mid);
                        if self.stop_gap(t0 + mid, seg, x, y_mid) >= 0.0 {
                            hi = mid;
                        } else {
                            lo = mid;
                        }
                    }
                    return (t0 + hi, self.rk4(t0, seg, x, state, hi));
                }
                state = next;
            }
            t = end;
            if end < horizon && path.state_before(end) != path.state_at(end) {
                let (i, j) = (path.state_before(end), path.state_at(end));
                let jump = self.z[j] - self.z[i];
                state = [state[0] + jump, state[1] + jump];
            }
        }
        (horizon, state)
    }
}

/// Runs the forward witness construction on `n_paths` simulated paths.
pub fn converse_witness(
    f1: &DriverSpec,
    f2: &DriverSpec,
    a: &RateMatrix,
    params: &WitnessParams,
) -> Result<ConverseWitness, HarnessError> {
    let n = a.n_states();
    if params.z.len() != n {
        return Err(HarnessError::HypothesisUnmet(format!("z has length {}, expected {n}", params.z.len())));
    }
    if !(params.delta > 0.0) {
        return Err(HarnessError::HypothesisUnmet("delta must be positive".into()));
    }
    let grid = TimeGrid::build(a, 0.0, a.horizon(), params.step, &f1.breakpoints())
        .map_err(HarnessError::from)?
        .times()
        .to_vec();
    let fw = Forward { f1, f2, chain: a, cache: PsiCache::new(a), z: &params.z, delta: params.delta };

    let any_violation = grid.iter().any(|&t| {
        (0..n).any(|x| {
            let psi = fw.psi(t, x);
            f2.value(t, x, params.y, &params.z, psi) <= f1.value(t, x, params.y, &params.z, psi) - params.delta
        })
    });
    if !any_violation {
        return Err(HarnessError::NoViolationFound);
    }

    let mut extra = f1.breakpoints();
    extra.extend(f2.breakpoints());
    let paths = ensemble_map(a, params.x0, a.horizon(), params.n_paths, params.seed, |path| {
        let tau = fw.tau_delta(&path, &grid, params.y);
        let (tp, y) = fw.run(&path, tau, params.y, params.step, &extra);
        let (_, y_half) = fw.run(&path, tau, params.y, 0.5 * params.step, &extra);
        WitnessPath {
            tau_delta: tau,
            tau_prime: tp,
            y1: y[0],
            y2: y[1],
            terminal_gap: y[0] - y[1],
            bound: -0.5 * params.delta * (tp - tau),
            rerun_gap: y_half[0] - y_half[1],
        }
    })?;
    Ok(ConverseWitness { params: params.clone(), paths })
}

/// Pass iff some path is active, every active path satisfies the witness
/// inequality, and the halved-step rerun agrees to the witness tolerance.
pub fn witness_report(w: &ConverseWitness) -> VerdictReport {
    let active = w.active_fraction();
    let excess = w.max_excess();
    let rerun = w.max_rerun_diff();
    let failing: Vec<usize> = (0..w.paths.len()).filter(|&k| !w.paths[k].satisfied()).collect();
    let ok = active > 0.0 && failing.is_empty() && rerun <= WITNESS;
    let report = VerdictReport::new("converse_witness")
        .seed(w.params.seed)
        .with_step(w.params.step)
        .tolerance("witness", WITNESS)
        .margin("delta", w.params.delta)
        .margin("active_fraction", active)
        .margin("max_excess", if excess.is_finite() { excess } else { 0.0 })
        .margin("max_rerun_diff", rerun)
        .margin("n_paths", w.paths.len() as f64);
    let mut report = report;
    for (k, p) in w.paths.iter().enumerate().take(20) {
        report.push_row("terminal_gap_minus_bound", k, p.terminal_gap - p.bound, p.satisfied());
    }
    report.conclude(ok, "max_excess", excess, || {
        json!({
            "failing_paths": failing.iter().take(10).collect::<Vec<_>>(),
            "first": failing.first().map(|&k| serde_json::to_value(&w.paths[k]).unwrap()),
            "active_fraction": active,
            "max_rerun_diff": rerun,
        })
    })
}

/// Compares `𝔈_{f₁}(ξ)` and `𝔈_{f₂}(ξ)` across `family` from `e_{x0}`.
///
/// Ordered drivers on the grid: no `ξ` may give `𝔈_{f₁} > 𝔈_{f₂} + tol`.
/// A grid violation: passes with the witness `ξ` if one separates the two by
/// more than `1e-4`, else inconclusive (finite family).
pub fn converse_search(
    f1: &DriverSpec,
    f2: &DriverSpec,
    family: &[TerminalCondition],
    a: &RateMatrix,
    x0: usize,
    step: f64,
    grid: &OrderGrid,
) -> Result<VerdictReport, HarnessError> {
    let e1 = FExpectationOperator::new(f1.clone(), a.clone(), step)?;
    if !f2.is_normalized() {
        return Err(HarnessError::HypothesisUnmet("f2 is not normalized".into()));
    }
    let order = driver_order_check(f1, f2, a, grid);
    let ordered = order.is_pass();
    let e2_margin = crate::geometry::assumption_margin(a, f2.l2());
    let mut report = VerdictReport::new("converse_search")
        .with_step(step)
        .tolerance("comparison", COMPARISON)
        .tolerance("witness_gap", CONVERSE_WITNESS_GAP)
        .margin("driver_min_gap", order.margins["min_gap"])
        .margin("family_size", family.len() as f64)
        .margin("f2_margin_product", e2_margin.product);
    let mut best = f64::NEG_INFINITY;
    let mut best_idx = None;
    for (k, xi) in family.iter().enumerate() {
        let v1 = e1.f_expectation(xi, x0)?;
        let v2 = crate::solver::solve_markovian(f2, xi, a, step)?.initial()[x0];
        let d = v1 - v2;
        let pass = if ordered { d <= COMPARISON } else { true };
        report.push_row("e1_minus_e2", k, d, pass);
        if d > best {
            best = d;
            best_idx = Some(k);
        }
    }
    report = report.margin("max_e1_minus_e2", best);
    let payload = |k: Option<usize>| {
        json!({
            "index": k,
            "g": k.map(|k| family[k].payoff.as_slice().to_vec()),
            "e1_minus_e2": best,
            "driver_argmin": order.witness.clone(),
        })
    };
    if ordered {
        let ok = best <= COMPARISON;
        Ok(report.conclude(ok, "max_e1_minus_e2", best, || payload(best_idx)))
    } else if best > CONVERSE_WITNESS_GAP {
        let mut r = report.pass("max_e1_minus_e2", best);
        r.witness = Some(payload(best_idx));
        Ok(r)
    } else {
        Ok(report.inconclusive(
            "max_e1_minus_e2",
            best,
            json!({"reason": "family too small to separate the operators", "driver_argmin": order.witness}),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::DriverDocument;
    use crate::report::Verdict;

    fn two_state() -> RateMatrix {
        RateMatrix::from_rows(&[&[-1.0, 1.0], &[1.0, -1.0]], 1.0).unwrap()
    }

    fn params(delta: f64, z: &[f64], n_paths: usize) -> WitnessParams {
        WitnessParams { delta, y: 0.0, z: DVector::from_column_slice(z), x0: 0, step: 1e-2, n_paths, seed: 3 }
    }

    #[test]
    fn equal_drivers_have_no_violation() {
        let a = two_state();
        let f = DriverDocument::seminorm(0.3).bind(&a).unwrap();
        assert_eq!(converse_witness(&f, &f, &a, &params(0.5, &[10.0, 0.0], 10)).unwrap_err(), HarnessError::NoViolationFound);
    }

    #[test]
    fn oversized_delta_has_no_violation() {
        let a = two_state();
        let f1 = DriverDocument::seminorm(0.4).bind(&a).unwrap();
        let f2 = DriverDocument::seminorm(0.3).bind(&a).unwrap();
        assert_eq!(converse_witness(&f1, &f2, &a, &params(1.5, &[10.0, 0.0], 10)).unwrap_err(), HarnessError::NoViolationFound);
    }

    #[test]
    fn seminorm_pair_starts_at_zero_and_never_stops() {
        let a = two_state();
        let f1 = DriverDocument::seminorm(0.4).bind(&a).unwrap();
        let f2 = DriverDocument::seminorm(0.3).bind(&a).unwrap();
        let w = converse_witness(&f1, &f2, &a, &params(0.5, &[10.0, 0.0], 200)).unwrap();
        assert!(w.paths.iter().all(|p| p.tau_delta == 0.0 && p.tau_prime == 1.0));
        // gap closes at rate exactly 0.1·‖z‖_X = 1
        assert!(w.paths.iter().all(|p| (p.terminal_gap + 1.0).abs() < 1e-9));
        assert!(witness_report(&w).is_pass());
    }

    #[test]
    fn y_dependent_pair_stops_inside_the_horizon() {
        let a = two_state();
        let f1 = DriverDocument::seminorm(0.4).with_beta(2.0).bind(&a).unwrap();
        let f2 = DriverDocument::seminorm(0.3).with_beta(2.0).bind(&a).unwrap();
        let w = converse_witness(&f1, &f2, &a, &params(0.5, &[10.0, 0.0], 300)).unwrap();
        assert!(w.paths.iter().any(|p| p.tau_prime < 1.0));
        assert!(w.paths.iter().all(|p| p.tau_delta <= p.tau_prime && p.tau_prime <= 1.0));
        let r = witness_report(&w);
        assert!(r.is_pass(), "{:?}", r.witness);
    }

    #[test]
    fn search_examples() {
        let a = two_state();
        let grid = OrderGrid::sampled(&a, 21, 5, 8, 1);
        let f3 = DriverDocument::seminorm(0.3).bind(&a).unwrap();
        let f4 = DriverDocument::seminorm(0.4).bind(&a).unwrap();
        let family: Vec<TerminalCondition> = [[1.0, 0.0], [0.0, 1.0], [2.0, 0.0], [-1.0, 0.0]]
            .iter()
            .map(|g| TerminalCondition::from_slice(g).unwrap())
            .collect();
        let r = converse_search(&f3, &f3, &family, &a, 0, 1e-3, &grid).unwrap();
        assert!(r.is_pass());
        let r = converse_search(&f4, &f3, &family, &a, 0, 1e-3, &grid).unwrap();
        assert!(r.is_pass());
        assert!(r.margins["max_e1_minus_e2"] > 1e-4);
        let constants: Vec<TerminalCondition> =
            [0.5, 1.0, -2.0].iter().map(|&c| TerminalCondition::from_slice(&[c, c]).unwrap()).collect();
        let r = converse_search(&f4, &f3, &constants, &a, 0, 1e-3, &grid).unwrap();
        assert_eq!(r.verdict, Verdict::Inconclusive);
        let r = converse_search(&f3, &f4, &family, &a, 0, 1e-3, &grid).unwrap();
        assert!(r.is_pass());
    }
}

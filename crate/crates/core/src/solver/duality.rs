use serde_json::json;

use super::{solve_on_common_grid, BsdeSolution, CellTable, Side, SolverError, TerminalCondition, TimeGrid};
use crate::chain::{ensemble_map, ChainPath, RateMatrix};
use crate::driver::{linearization_coeffs, DriverSpec, LinearizationCoefficients};
use crate::geometry::{assumption_margin, PsiCache};
use crate::report::VerdictReport;
use crate::stats::MeanSe;
use crate::tolerances::{MARGIN_EQUALITY, SE_MULTIPLIER};

/// Monte Carlo side of the duality identity next to the ODE gap.
#[derive(Debug, Clone)]
pub struct DualityEstimate {
    pub ode_value: f64,
    pub mc: MeanSe,
    pub min_u: f64,
    pub n_paths: usize,
    pub margin_product: f64,
}

impl DualityEstimate {
    pub fn agrees(&self) -> bool {
        self.mc.agrees_with(self.ode_value, SE_MULTIPLIER)
    }
}

/// Per-state prefix integrals of the linear BSDE along the grid:
/// `C_i(t) = ∫(a − bΨ†Ae_i)` and `D_i(t) = ∫ f_gap e^{C_i}`.
struct Prefix {
    grid: TimeGrid,
    rate: CellTable<f64>,
    gap: CellTable<f64>,
    c: Vec<Vec<f64>>,
    d: Vec<Vec<f64>>,
}

impl Prefix {
    fn build(coeffs: &LinearizationCoefficients, gap: CellTable<f64>, chain: &RateMatrix) -> Self {
        let cache = PsiCache::new(chain);
        let grid = coeffs.grid.clone();
        let n = chain.n_states();
        let rate_of = |c: usize, a: &[f64], b: &[nalgebra::DVector<f64>]| -> Vec<f64> {
            let seg = grid.cell_segment(c);
            (0..n).map(|i| a[i] - b[i].dot(&cache.entry(seg, i).drift_response)).collect()
        };
        let cells = grid.n_cells();
        let rate = CellTable {
            start: (0..cells).map(|c| rate_of(c, &coeffs.a.start[c], &coeffs.b.start[c])).collect(),
            end: (0..cells).map(|c| rate_of(c, &coeffs.a.end[c], &coeffs.b.end[c])).collect(),
        };
        let t = grid.times();
        let mut cs = vec![vec![0.0; n]];
        let mut ds = vec![vec![0.0; n]];
        for c in 0..cells {
            let h = t[c + 1] - t[c];
            let (cp, dp) = (&cs[c], &ds[c]);
            let cn: Vec<f64> = (0..n).map(|i| cp[i] + 0.5 * h * (rate.start[c][i] + rate.end[c][i])).collect();
            let dn: Vec<f64> = (0..n)
                .map(|i| dp[i] + 0.5 * h * (gap.start[c][i] * cp[i].exp() + gap.end[c][i] * cn[i].exp()))
                .collect();
            cs.push(cn);
            ds.push(dn);
        }
        Self { grid, rate, gap, c: cs, d: ds }
    }

    /// `(C_i(t), D_i(t))`, exact for the piecewise-linear rate and trapezoid
    /// in the last partial cell.
    fn at(&self, t: f64, i: usize) -> (f64, f64) {
        if self.grid.n_cells() == 0 {
            return (0.0, 0.0);
        }
        let (cell, th) = self.grid.locate(t, Side::Left);
        let h = (self.grid.times()[cell + 1] - self.grid.times()[cell]) * th;
        let (r0, r1) = (self.rate.start[cell][i], self.rate.end[cell][i]);
        let rt = r0 + th * (r1 - r0);
        let c0 = self.c[cell][i];
        let ct = c0 + 0.5 * h * (r0 + rt);
        let (g0, g1) = (self.gap.start[cell][i], self.gap.end[cell][i]);
        let gt = g0 + th * (g1 - g0);
        let dt = self.d[cell][i] + 0.5 * h * (g0 * c0.exp() + gt * ct.exp());
        (ct, dt)
    }
}

/// `ξU_T + ∫ f U ds` along one path, with the minimum of `U`.
fn path_value(
    path: &ChainPath,
    prefix: &Prefix,
    coeffs: &LinearizationCoefficients,
    cache: &PsiCache,
    xi: &nalgebra::DVector<f64>,
) -> (f64, f64) {
    let mut u = 1.0f64;
    let mut min_u = 1.0f64;
    let mut integral = 0.0;
    let sojourns = path.sojourns();
    for (k, &(t0, t1, i)) in sojourns.iter().enumerate() {
        let (c0, d0) = prefix.at(t0, i);
        let (c1, d1) = prefix.at(t1, i);
        integral += u * (-c0).exp() * (d1 - d0);
        u *= (c1 - c0).exp();
        min_u = min_u.min(u);
        if let Some(&(_, _, j)) = sojourns.get(k + 1) {
            let (cell, _) = coeffs.grid.locate(t1, Side::Left);
            let seg = coeffs.grid.cell_segment(cell);
            let b = coeffs.b_at(t1, i, Side::Left);
            u *= 1.0 + b.dot(&cache.entry(seg, i).jump_response[j]);
            min_u = min_u.min(u);
        }
    }
    (xi[path.terminal_state()] * u + integral, min_u)
}

/// Driver gap `f₂(Y², Z²) − f₁(Y², Z²)` per cell end.
fn driver_gap(f1: &DriverSpec, f2: &DriverSpec, sol2: &BsdeSolution, chain: &RateMatrix) -> CellTable<f64> {
    let cache = PsiCache::new(chain);
    let grid = sol2.grid();
    let n = chain.n_states();
    let row = |c: usize, node: usize| -> Vec<f64> {
        let seg = grid.cell_segment(c);
        let t = grid.times()[node];
        let u = sol2.u(node);
        (0..n)
            .map(|i| {
                let psi = &cache.entry(seg, i).psi;
                f2.value(t, i, u[i], u, psi) - f1.value(t, i, u[i], u, psi)
            })
            .collect()
    };
    CellTable {
        start: (0..grid.n_cells()).map(|c| row(c, c)).collect(),
        end: (0..grid.n_cells()).map(|c| row(c, c + 1)).collect(),
    }
}

/// Solves both BSDEs and estimates `E[ξU_T + ∫ f_s U_s ds | X_0 = e_{x0}]`.
#[allow(clippy::too_many_arguments)]
pub fn duality_estimate(
    f1: &DriverSpec,
    f2: &DriverSpec,
    g1: &TerminalCondition,
    g2: &TerminalCondition,
    a: &RateMatrix,
    x0: usize,
    step: f64,
    n_paths: usize,
    seed: u64,
) -> Result<DualityEstimate, SolverError> {
    if g1.is_stopped() || g2.is_stopped() {
        return Err(SolverError::InvalidTerminal("duality uses plain terminal conditions".into()));
    }
    let margin = assumption_margin(a, f1.l2());
    if !margin.classification.admits_comparison() {
        return Err(SolverError::AssumptionViolated { product: margin.product });
    }
    a.check_state(x0)?;
    let (sol1, sol2) = solve_on_common_grid(f1, g1, f2, g2, a, step)?;
    let coeffs = linearization_coeffs(f1, &sol1, &sol2, a);
    let gap = driver_gap(f1, f2, &sol2, a);
    let prefix = Prefix::build(&coeffs, gap, a);
    let cache = PsiCache::new(a);
    let xi = &g2.payoff - &g1.payoff;
    let ode_value = sol2.initial()[x0] - sol1.initial()[x0];
    let samples = ensemble_map(a, x0, a.horizon(), n_paths, seed, |p| path_value(&p, &prefix, &coeffs, &cache, &xi))?;
    let values: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let min_u = samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    Ok(DualityEstimate { ode_value, mc: MeanSe::from_slice(&values), min_u, n_paths, margin_product: margin.product })
}

/// Passes iff the Monte Carlo mean is within four standard errors of the
/// ODE gap and, under a strict margin, `U` stays positive on every path.
#[allow(clippy::too_many_arguments)]
pub fn duality_check(
    f1: &DriverSpec,
    f2: &DriverSpec,
    g1: &TerminalCondition,
    g2: &TerminalCondition,
    a: &RateMatrix,
    x0: usize,
    step: f64,
    n_paths: usize,
    seed: u64,
) -> Result<VerdictReport, SolverError> {
    let est = duality_estimate(f1, f2, g1, g2, a, x0, step, n_paths, seed)?;
    let strict = est.margin_product < 1.0 - MARGIN_EQUALITY;
    let positive = if strict { est.min_u > 0.0 } else { est.min_u >= 0.0 };
    let agrees = est.agrees();
    let z = est.mc.z_score(est.ode_value);
    let report = VerdictReport::new("duality")
        .seed(seed)
        .with_step(step)
        .tolerance("se_multiplier", SE_MULTIPLIER)
        .margin("ode_value", est.ode_value)
        .margin("mc_mean", est.mc.mean)
        .margin("mc_se", est.mc.se)
        .margin("n_paths", n_paths as f64)
        .margin("min_u", est.min_u)
        .margin("margin_product", est.margin_product)
        .margin("z_score", z);
    Ok(report.conclude(agrees && positive, "z_score", z, || {
        json!({"ode_value": est.ode_value, "mc_mean": est.mc.mean, "mc_se": est.mc.se, "min_u": est.min_u})
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::simulate_path;
    use crate::solver::solve_markovian;
    use crate::driver::DriverDocument;
    use crate::geometry::MarginClass;
    use crate::solver::doleans_exponential;

    fn two_state() -> RateMatrix {
        RateMatrix::from_rows(&[&[-1.0, 1.0], &[1.0, -1.0]], 1.0).unwrap()
    }

    fn g(v: &[f64]) -> TerminalCondition {
        TerminalCondition::from_slice(v).unwrap()
    }

    #[test]
    fn identical_problems_give_zero() {
        let a = two_state();
        let f = DriverDocument::seminorm(0.3).bind(&a).unwrap();
        let est = duality_estimate(&f, &f, &g(&[1.0, 0.0]), &g(&[1.0, 0.0]), &a, 0, 1e-2, 1000, 1).unwrap();
        assert_eq!(est.ode_value, 0.0);
        assert_eq!(est.mc.mean, 0.0);
    }

    #[test]
    fn constant_shift_gives_one() {
        let a = two_state();
        let f = DriverDocument::seminorm(0.3).bind(&a).unwrap();
        let est = duality_estimate(&f, &f, &g(&[1.0, 0.0]), &g(&[2.0, 1.0]), &a, 0, 1e-2, 1000, 1).unwrap();
        assert!((est.ode_value - 1.0).abs() < 1e-12);
        assert!((est.mc.mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn base_shift_benchmark_agrees() {
        let a = two_state();
        let f1 = DriverDocument::seminorm(0.3).bind(&a).unwrap();
        let f2 = DriverDocument::seminorm(0.3).with_const(0.2).bind(&a).unwrap();
        let r = duality_check(&f1, &f2, &g(&[1.0, 0.0]), &g(&[1.0, 0.0]), &a, 0, 1e-3, 20_000, 7).unwrap();
        assert!(r.is_pass(), "{}", r.summary_line());
        assert!(r.margins["min_u"] > 0.0);
    }

    #[test]
    fn rejects_violated_margin() {
        let a = two_state();
        let f1 = DriverDocument::seminorm(0.9).bind(&a).unwrap();
        assert!(matches!(
            duality_check(&f1, &f1, &g(&[1.0, 0.0]), &g(&[1.0, 0.0]), &a, 0, 1e-2, 10, 1),
            Err(SolverError::AssumptionViolated { .. })
        ));
    }

    #[test]
    fn prefix_tables_match_merged_grid_trapezoid() {
        let a = RateMatrix::from_rows(&[&[-1.0, 0.5, 0.2], &[0.4, -0.5, 0.8], &[0.6, 0.0, -1.0]], 1.0).unwrap();
        let f1 = DriverDocument::seminorm(0.2).with_beta(0.3).with_b_vec(vec![0.1, 0.0, -0.1]).bind(&a).unwrap();
        let f2 = DriverDocument::seminorm(0.25).with_beta(0.3).with_const(0.1).bind(&a).unwrap();
        let (g1, g2) = (g(&[1.0, 0.0, 0.5]), g(&[1.2, 0.1, 0.5]));
        let sol1 = solve_markovian(&f1, &g1, &a, 1e-2).unwrap();
        let sol2 = solve_markovian(&f2, &g2, &a, 1e-2).unwrap();
        let coeffs = linearization_coeffs(&f1, &sol1, &sol2, &a);
        let gap = driver_gap(&f1, &f2, &sol2, &a);
        let prefix = Prefix::build(&coeffs, gap.clone(), &a);
        let cache = PsiCache::new(&a);
        let xi = &g2.payoff - &g1.payoff;
        for seed in 0..20 {
            let path = simulate_path(&a, 1, 1.0, seed).unwrap();
            let (v, _) = path_value(&path, &prefix, &coeffs, &cache, &xi);
            let dp = doleans_exponential(&path, &coeffs, &a, MarginClass::Strict).unwrap();
            let integral = dp.integrate(|t, i, side| gap.interp(&coeffs.grid, t, i, side));
            let w = xi[path.terminal_state()] * dp.terminal() + integral;
            assert!((v - w).abs() < 1e-4, "{v} vs {w}");
        }
    }
}

use nalgebra::DVector;

use super::{Side, SolverError, TerminalCondition, TimeGrid};
use crate::chain::{path_rng, RateMatrix};
use crate::driver::DriverSpec;
use crate::geometry::PsiCache;
use crate::tolerances::SOLVER;
use rand::Rng;

/// Backward value function on a grid. `Y_t = u(t)·X_t`; `z[k][i]` is
/// `ΨΨ†u(t_k)` for `X_{t_k} = e_i`.
#[derive(Debug, Clone)]
pub struct BsdeSolution {
    grid: TimeGrid,
    u: Vec<DVector<f64>>,
    z: Vec<Vec<DVector<f64>>>,
    /// `−du/dt` at the start and end of each cell, with the cell's generator.
    slope_start: Vec<DVector<f64>>,
    slope_end: Vec<DVector<f64>>,
    step: f64,
    residual_max: f64,
    residual_total: f64,
    chain: RateMatrix,
}

impl BsdeSolution {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        self.grid.times()
    }

    pub fn u(&self, k: usize) -> &DVector<f64> {
        &self.u[k]
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.u
    }

    /// `u` at the first grid time.
    pub fn initial(&self) -> &DVector<f64> {
        &self.u[0]
    }

    pub fn terminal(&self) -> &DVector<f64> {
        self.u.last().unwrap()
    }

    pub fn z(&self, k: usize, state: usize) -> &DVector<f64> {
        &self.z[k][state]
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn order(&self) -> u32 {
        4
    }

    /// Largest per-cell defect of the Hermite–Simpson residual check.
    pub fn residual_max(&self) -> f64 {
        self.residual_max
    }

    /// Sum of per-cell defects; the quantity bounded by the solver tolerance.
    pub fn residual_total(&self) -> f64 {
        self.residual_total
    }

    /// Chain the system was integrated with (after any absorbing transformation).
    pub fn chain(&self) -> &RateMatrix {
        &self.chain
    }

    pub fn sup_norm(&self) -> f64 {
        self.u.iter().map(|v| v.amax()).fold(0.0, f64::max)
    }

    /// Cubic Hermite interpolant of `u` at `t`.
    pub fn value_at(&self, t: f64, side: Side) -> DVector<f64> {
        if self.grid.n_cells() == 0 {
            return self.u[0].clone();
        }
        let (c, th) = self.grid.locate(t, side);
        let h = self.grid.times()[c + 1] - self.grid.times()[c];
        let (u0, u1) = (&self.u[c], &self.u[c + 1]);
        // derivative is −slope
        let (d0, d1) = (&self.slope_start[c] * -h, &self.slope_end[c] * -h);
        let t2 = th * th;
        let t3 = t2 * th;
        u0 * (2.0 * t3 - 3.0 * t2 + 1.0) + d0 * (t3 - 2.0 * t2 + th) + u1 * (-2.0 * t3 + 3.0 * t2) + d1 * (t3 - t2)
    }

    /// Maximum over nodes of `|self − other|∞`; grids must coincide.
    pub fn max_abs_diff(&self, other: &BsdeSolution) -> f64 {
        self.u.iter().zip(&other.u).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max)
    }
}

struct System<'a> {
    f: &'a DriverSpec,
    chain: &'a RateMatrix,
    cache: PsiCache,
}

impl System<'_> {
    /// `G(t, u)_i = f(t, e_i, u_i, u) + (A'u)_i`, so that `du/dt = −G`.
    fn slope(&self, t: f64, seg: usize, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(u.len(), |i, _| {
            let e = self.cache.entry(seg, i);
            self.f.value(t, i, u[i], u, &e.psi) + self.chain.generator_action(seg, i, u)
        })
    }
}

/// Solves on `[0, T]`; fails with `StepTooLarge` when the residual check trips.
pub fn solve_markovian(
    f: &DriverSpec,
    g: &TerminalCondition,
    a: &RateMatrix,
    step: f64,
) -> Result<BsdeSolution, SolverError> {
    solve_interval(f, g, a, 0.0, a.horizon(), step)
}

/// Solves on `[start, end]` with `u(end) = g`.
pub fn solve_interval(
    f: &DriverSpec,
    g: &TerminalCondition,
    a: &RateMatrix,
    start: f64,
    end: f64,
    step: f64,
) -> Result<BsdeSolution, SolverError> {
    integrate(f, g, a, start, end, step, true, &[])
}

/// Solves two problems on one grid holding the breakpoints of both drivers,
/// so the solutions can be compared node by node.
pub fn solve_on_common_grid(
    f1: &DriverSpec,
    g1: &TerminalCondition,
    f2: &DriverSpec,
    g2: &TerminalCondition,
    a: &RateMatrix,
    step: f64,
) -> Result<(BsdeSolution, BsdeSolution), SolverError> {
    let mut extra = f1.breakpoints();
    extra.extend(f2.breakpoints());
    let end = a.horizon();
    let sol1 = integrate(f1, g1, a, 0.0, end, step, true, &extra)?;
    let sol2 = integrate(f2, g2, a, 0.0, end, step, true, &extra)?;
    Ok((sol1, sol2))
}

/// Same as [`solve_markovian`] without enforcing the residual bound; used by
/// convergence studies on coarse grids.
pub fn solve_unchecked(
    f: &DriverSpec,
    g: &TerminalCondition,
    a: &RateMatrix,
    step: f64,
) -> Result<BsdeSolution, SolverError> {
    integrate(f, g, a, 0.0, a.horizon(), step, false, &[])
}

fn integrate(
    f: &DriverSpec,
    g: &TerminalCondition,
    a: &RateMatrix,
    start: f64,
    end: f64,
    step: f64,
    enforce: bool,
    extra: &[f64],
) -> Result<BsdeSolution, SolverError> {
    let n = a.n_states();
    g.check_dim(n)?;
    if f.n_states() != n {
        return Err(SolverError::DimensionMismatch { expected: n, got: f.n_states() });
    }
    let (f, chain) = g.effective(f, a);
    let mut nodes = f.breakpoints();
    nodes.extend_from_slice(extra);
    let grid = TimeGrid::build(&chain, start, end, step, &nodes)?;
    let sys = System { f: &f, chain: &chain, cache: PsiCache::new(&chain) };
    let times = grid.times().to_vec();
    let k_cells = grid.n_cells();

    let mut u = vec![DVector::zeros(n); k_cells + 1];
    u[k_cells] = g.payoff.clone();
    let mut slope_start = vec![DVector::zeros(n); k_cells];
    let mut slope_end = vec![DVector::zeros(n); k_cells];
    for c in (0..k_cells).rev() {
        let seg = grid.cell_segment(c);
        let (t0, t1) = (times[c], times[c + 1]);
        let h = t1 - t0;
        let tm = t1 - 0.5 * h;
        let un = &u[c + 1];
        let k1 = sys.slope(t1, seg, un);
        let k2 = sys.slope(tm, seg, &(un + &k1 * (0.5 * h)));
        let k3 = sys.slope(tm, seg, &(un + &k2 * (0.5 * h)));
        let k4 = sys.slope(t0, seg, &(un + &k3 * h));
        let next = un + (&k1 + &k2 * 2.0 + &k3 * 2.0 + &k4) * (h / 6.0);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::NonFiniteValue { time: t0 });
        }
        slope_end[c] = k1;
        slope_start[c] = sys.slope(t0, seg, &next);
        u[c] = next;
    }

    // Hermite–Simpson defect per cell: u_k − u_{k+1} − ∫G
    let mut residual_max = 0.0f64;
    let mut residual_total = 0.0f64;
    for c in 0..k_cells {
        let seg = grid.cell_segment(c);
        let (t0, t1) = (times[c], times[c + 1]);
        let h = t1 - t0;
        let um = (&u[c] + &u[c + 1]) * 0.5 + (&slope_end[c] - &slope_start[c]) * (h / 8.0);
        let gm = sys.slope(t0 + 0.5 * h, seg, &um);
        let integral = (&slope_start[c] + &gm * 4.0 + &slope_end[c]) * (h / 6.0);
        let r = (&u[c] - &u[c + 1] - integral).amax();
        residual_max = residual_max.max(r);
        residual_total += r;
    }
    let sup = u.iter().map(|v| v.amax()).fold(0.0, f64::max);
    let tolerance = SOLVER * (1.0 + sup);
    if enforce && residual_total > tolerance {
        return Err(SolverError::StepTooLarge { residual: residual_total, tolerance });
    }

    let z = (0..=k_cells)
        .map(|k| {
            let seg = if k_cells == 0 { chain.segment_index(times[k]) } else { grid.node_segment(k) };
            (0..n).map(|i| &sys.cache.entry(seg, i).projector * &u[k]).collect()
        })
        .collect();
    Ok(BsdeSolution { grid, u, z, slope_start, slope_end, step, residual_max, residual_total, chain })
}

/// `u(0)` at a sequence of halved steps and the ratios of successive
/// differences; order four gives ratios near 16.
#[derive(Debug, Clone)]
pub struct ConvergenceStudy {
    pub steps: Vec<f64>,
    pub initial_values: Vec<DVector<f64>>,
    pub differences: Vec<f64>,
    pub ratios: Vec<f64>,
}

pub fn convergence_study(
    f: &DriverSpec,
    g: &TerminalCondition,
    a: &RateMatrix,
    steps: &[f64],
) -> Result<ConvergenceStudy, SolverError> {
    let initial_values = steps
        .iter()
        .map(|&h| solve_unchecked(f, g, a, h).map(|s| s.initial().clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let differences: Vec<f64> = initial_values.windows(2).map(|w| (&w[0] - &w[1]).amax()).collect();
    let ratios = differences.windows(2).map(|w| w[0] / w[1]).collect();
    Ok(ConvergenceStudy { steps: steps.to_vec(), initial_values, differences, ratios })
}

/// Outcome of Picard iteration from several perturbed starting guesses.
#[derive(Debug, Clone)]
pub struct PicardProbe {
    pub initial_values: Vec<DVector<f64>>,
    pub iterations: Vec<usize>,
    /// Largest spread of `u(0)` between runs.
    pub spread: f64,
    /// `|u_picard(0) − u_rk4(0)|∞` for the first run.
    pub rk4_gap: f64,
}

/// Iterates `u ↦ g + ∫_t^T G(s, u(s)) ds` with fourth-order Lagrange
/// quadrature on the solver grid, starting from `g` plus Gaussian noise of
/// size `scale`, one run per seed.
pub fn picard_probe(
    f: &DriverSpec,
    g: &TerminalCondition,
    a: &RateMatrix,
    step: f64,
    seeds: &[u64],
    scale: f64,
) -> Result<PicardProbe, SolverError> {
    let reference = solve_markovian(f, g, a, step)?;
    let (f_eff, chain) = g.effective(f, a);
    let grid = reference.grid().clone();
    let sys = System { f: &f_eff, chain: &chain, cache: PsiCache::new(&chain) };
    let times = grid.times();
    let n = a.n_states();
    let pieces = pieces(&grid);

    let mut initial_values = Vec::new();
    let mut iterations = Vec::new();
    for &seed in seeds {
        let mut rng = path_rng(seed, 0);
        let mut u: Vec<DVector<f64>> = times
            .iter()
            .map(|_| &g.payoff + DVector::from_fn(n, |_, _| scale * (rng.random::<f64>() * 2.0 - 1.0)))
            .collect();
        *u.last_mut().unwrap() = g.payoff.clone();
        let mut it = 0;
        loop {
            it += 1;
            let mut cell_int = vec![DVector::zeros(n); grid.n_cells()];
            for &(c0, c1) in &pieces {
                let seg = grid.cell_segment(c0);
                let vals: Vec<DVector<f64>> = (c0..=c1).map(|k| sys.slope(times[k], seg, &u[k])).collect();
                let h = (times[c1] - times[c0]) / (c1 - c0) as f64;
                for (off, out) in cell_int[c0..c1].iter_mut().enumerate() {
                    *out = lagrange_cell(&vals, off, h);
                }
            }
            let mut next = u.clone();
            let mut acc = g.payoff.clone();
            for c in (0..grid.n_cells()).rev() {
                acc += &cell_int[c];
                next[c] = acc.clone();
            }
            let change = next.iter().zip(&u).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max);
            u = next;
            if change < 1e-14 || it >= 500 {
                break;
            }
        }
        if u[0].iter().any(|v| !v.is_finite()) {
            return Err(SolverError::NonFiniteValue { time: times[0] });
        }
        initial_values.push(u[0].clone());
        iterations.push(it);
    }
    let mut spread = 0.0f64;
    for x in &initial_values {
        for y in &initial_values {
            spread = spread.max((x - y).amax());
        }
    }
    let rk4_gap = (&initial_values[0] - reference.initial()).amax();
    Ok(PicardProbe { initial_values, iterations, spread, rk4_gap })
}

/// Maximal runs `[c0, c1)` of cells sharing a segment and a width.
fn pieces(grid: &TimeGrid) -> Vec<(usize, usize)> {
    let t = grid.times();
    let mut out = Vec::new();
    let mut c0 = 0;
    for c in 1..=grid.n_cells() {
        let split = c == grid.n_cells() || grid.cell_segment(c) != grid.cell_segment(c0) || {
            let h0 = t[c0 + 1] - t[c0];
            ((t[c + 1] - t[c]) - h0).abs() > 1e-9 * h0
        };
        if split {
            out.push((c0, c));
            c0 = c;
        }
    }
    out
}

/// `∫` over cell `off` of the cubic through four neighbouring nodes
/// (fewer when the piece is shorter).
fn lagrange_cell(v: &[DVector<f64>], off: usize, h: f64) -> DVector<f64> {
    let cells = v.len() - 1;
    let comb = |idx: &[usize], w: &[f64], scale: f64| {
        idx.iter().zip(w).fold(DVector::zeros(v[0].len()), |acc, (&k, &wk)| acc + &v[k] * wk) * scale
    };
    match cells {
        1 => comb(&[0, 1], &[1.0, 1.0], h / 2.0),
        2 if off == 0 => comb(&[0, 1, 2], &[5.0, 8.0, -1.0], h / 12.0),
        2 => comb(&[0, 1, 2], &[-1.0, 8.0, 5.0], h / 12.0),
        _ if off == 0 => comb(&[0, 1, 2, 3], &[9.0, 19.0, -5.0, 1.0], h / 24.0),
        _ if off == cells - 1 => comb(&[off - 2, off - 1, off, off + 1], &[1.0, -5.0, 19.0, 9.0], h / 24.0),
        _ => comb(&[off - 1, off, off + 1, off + 2], &[-1.0, 13.0, 13.0, -1.0], h / 24.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::transition_matrix;
    use crate::driver::DriverDocument;

    fn two_state() -> RateMatrix {
        RateMatrix::from_rows(&[&[-1.0, 1.0], &[1.0, -1.0]], 1.0).unwrap()
    }

    fn g(v: &[f64]) -> TerminalCondition {
        TerminalCondition::from_slice(v).unwrap()
    }

    #[test]
    fn zero_driver_matches_matrix_exponential() {
        let a = two_state();
        let f = DriverDocument::default().bind(&a).unwrap();
        let sol = solve_markovian(&f, &g(&[1.0, 0.0]), &a, 1e-3).unwrap();
        assert!((sol.initial()[0] - 0.567_667_641_618_306_3).abs() < 1e-6);
        let p = transition_matrix(&a, 0.0, 1.0).unwrap();
        assert!((sol.initial()[0] - p[(0, 0)]).abs() < 1e-12);
        assert_eq!(sol.terminal(), &DVector::from_vec(vec![1.0, 0.0]));
    }

    #[test]
    fn linear_driver_scales_by_exp_beta() {
        let a = two_state();
        let f = DriverDocument::default().with_beta(0.1).bind(&a).unwrap();
        let sol = solve_markovian(&f, &g(&[1.0, 0.0]), &a, 1e-3).unwrap();
        let expected = 0.1f64.exp() * (1.0 + (-2.0f64).exp()) / 2.0;
        assert!((sol.initial()[0] - expected).abs() < 1e-6);
        assert!((sol.initial()[0] - 0.627_370).abs() < 1e-6);
    }

    #[test]
    fn constants_are_fixed_points_of_normalized_drivers() {
        let a = RateMatrix::from_rows(&[&[-1.0, 0.5, 0.2], &[0.4, -0.5, 0.8], &[0.6, 0.0, -1.0]], 1.0).unwrap();
        let f = DriverDocument::seminorm(0.3).with_b_vec(vec![0.1, -0.2, 0.0]).bind(&a).unwrap();
        let sol = solve_markovian(&f, &g(&[2.5, 2.5, 2.5]), &a, 1e-2).unwrap();
        for u in sol.values() {
            assert_eq!(u, &DVector::from_element(3, 2.5));
        }
        assert_eq!(sol.z(0, 1), &DVector::zeros(3));
    }

    #[test]
    fn z_is_the_projection_of_u() {
        let a = two_state();
        let f = DriverDocument::seminorm(0.3).bind(&a).unwrap();
        let sol = solve_markovian(&f, &g(&[1.0, 0.0]), &a, 1e-2).unwrap();
        let u = sol.u(0);
        let d = u[0] - u[1];
        let z = sol.z(0, 0);
        assert!((z[0] - d / 2.0).abs() < 1e-12 && (z[1] + d / 2.0).abs() < 1e-12);
    }

    #[test]
    fn richardson_ratio_near_sixteen() {
        let a = RateMatrix::from_rows(&[&[-1.0, 0.5, 0.2], &[0.4, -0.5, 0.8], &[0.6, 0.0, -1.0]], 1.0).unwrap();
        let f = DriverDocument::seminorm(0.3).with_beta(0.2).with_mu(0.3).with_const(0.1).bind(&a).unwrap();
        let study = convergence_study(&f, &g(&[1.0, -0.5, 0.3]), &a, &[0.1, 0.05, 0.025, 0.0125]).unwrap();
        for r in &study.ratios {
            assert!((11.0..=21.0).contains(r), "ratio {r}");
        }
    }

    #[test]
    fn coarse_step_trips_residual_check() {
        let a = RateMatrix::from_rows(&[&[-40.0, 40.0], &[40.0, -40.0]], 1.0).unwrap();
        let f = DriverDocument::default().bind(&a).unwrap();
        assert!(matches!(solve_markovian(&f, &g(&[1.0, 0.0]), &a, 0.5), Err(SolverError::StepTooLarge { .. })));
    }

    #[test]
    fn picard_runs_agree() {
        let a = two_state();
        let f = DriverDocument::seminorm(0.3).with_mu(0.2).bind(&a).unwrap();
        let probe = picard_probe(&f, &g(&[1.0, 0.0]), &a, 1e-2, &[1, 2, 3], 0.5).unwrap();
        assert!(probe.spread < 1e-8, "spread {}", probe.spread);
        assert!(probe.rk4_gap < 1e-6, "gap {}", probe.rk4_gap);
    }

    #[test]
    fn hermite_interpolant_hits_nodes() {
        let a = two_state();
        let f = DriverDocument::seminorm(0.3).bind(&a).unwrap();
        let sol = solve_unchecked(&f, &g(&[1.0, 0.0]), &a, 0.1).unwrap();
        let t = sol.times()[3];
        assert!((sol.value_at(t, Side::Right) - sol.u(3)).amax() < 1e-14);
        let mid = sol.value_at(0.35, Side::Right);
        let fine = solve_unchecked(&f, &g(&[1.0, 0.0]), &a, 0.05).unwrap();
        let k = fine.times().iter().position(|&s| (s - 0.35).abs() < 1e-12).unwrap();
        assert!((mid - fine.u(k)).amax() < 1e-5);
    }

    #[test]
    fn stopped_terminal_freezes_absorbed_states() {
        let a = RateMatrix::from_rows(&[&[-1.0, 0.5, 0.2], &[0.4, -0.5, 0.8], &[0.6, 0.0, -1.0]], 1.0).unwrap();
        let f = DriverDocument::seminorm(0.3).with_const(0.5).bind(&a).unwrap();
        let term = TerminalCondition::stopped(DVector::from_vec(vec![1.0, 2.0, 3.0]), vec![2]).unwrap();
        let sol = solve_markovian(&f, &term, &a, 1e-2).unwrap();
        for u in sol.values() {
            assert_eq!(u[2], 3.0);
        }
    }
}

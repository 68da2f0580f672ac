use nalgebra::{DMatrix, DVector};

use super::{SolverError, TerminalCondition, TimeGrid};
use crate::chain::RateMatrix;
use crate::driver::DriverSpec;

/// Exact `u` at the nodes of the solver grid for `f = c(x) + βy`.
///
/// On each cell `v(τ) = u(T − τ)` obeys `v' = Mv + c` with
/// `M = A' + diag(β on active states)`, propagated by the block exponential
/// `exp([[M, c], [0, 0]]h)`.
pub fn closed_form_linear(
    f: &DriverSpec,
    g: &TerminalCondition,
    a: &RateMatrix,
    step: f64,
) -> Result<Vec<(f64, DVector<f64>)>, SolverError> {
    if !f.is_linear_in_y_only() {
        return Err(SolverError::NotLinear("seminorm, sine, or Ψ-linear term present".into()));
    }
    if !f.base_is_time_invariant() {
        return Err(SolverError::NotLinear("base depends on time".into()));
    }
    let n = a.n_states();
    g.check_dim(n)?;
    let (f, chain) = g.effective(f, a);
    let grid = TimeGrid::build(&chain, 0.0, chain.horizon(), step, &[])?;
    let times = grid.times();
    let c = DVector::from_fn(n, |i, _| if f.is_inactive(i) { 0.0 } else { f.base_value(0.0, i) });
    let beta = DVector::from_fn(n, |i, _| if f.is_inactive(i) { 0.0 } else { f.beta() });

    let mut out = vec![(times[grid.n_cells()], g.payoff.clone())];
    let mut v = g.payoff.clone();
    for cell in (0..grid.n_cells()).rev() {
        let h = times[cell + 1] - times[cell];
        let gen = &chain.segments()[grid.cell_segment(cell)].generator;
        let mut block = DMatrix::zeros(n + 1, n + 1);
        block.view_mut((0, 0), (n, n)).copy_from(&(gen.transpose() + DMatrix::from_diagonal(&beta)));
        block.view_mut((0, n), (n, 1)).copy_from(&c);
        let e = (block * h).exp();
        v = e.view((0, 0), (n, n)) * &v + e.view((0, n), (n, 1));
        out.push((times[cell], v.clone()));
    }
    out.reverse();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::transition_matrix;
    use crate::driver::DriverDocument;
    use crate::solver::solve_markovian;

    fn two_state() -> RateMatrix {
        RateMatrix::from_rows(&[&[-1.0, 1.0], &[1.0, -1.0]], 1.0).unwrap()
    }

    #[test]
    fn zero_driver_is_conditional_expectation() {
        let a = two_state();
        let f = DriverDocument::default().bind(&a).unwrap();
        let g = TerminalCondition::from_slice(&[1.0, 0.0]).unwrap();
        let cf = closed_form_linear(&f, &g, &a, 0.25).unwrap();
        let p = transition_matrix(&a, 0.0, 1.0).unwrap();
        assert!((&cf[0].1 - p.transpose() * &g.payoff).amax() < 1e-12);
    }

    #[test]
    fn beta_benchmark() {
        let a = two_state();
        let f = DriverDocument::default().with_beta(0.1).bind(&a).unwrap();
        let g = TerminalCondition::from_slice(&[1.0, 0.0]).unwrap();
        let cf = closed_form_linear(&f, &g, &a, 1.0).unwrap();
        let expected = 0.1f64.exp() * (1.0 + (-2.0f64).exp()) / 2.0;
        assert!((cf[0].1[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn unit_base_integrates_to_horizon() {
        let a = two_state();
        let f = DriverDocument::default().with_const(1.0).bind(&a).unwrap();
        let g = TerminalCondition::from_slice(&[0.0, 0.0]).unwrap();
        let cf = closed_form_linear(&f, &g, &a, 0.1).unwrap();
        assert!((cf[0].1[0] - 1.0).abs() < 1e-12 && (cf[0].1[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_nonlinear_drivers() {
        let a = two_state();
        let g = TerminalCondition::from_slice(&[0.0, 0.0]).unwrap();
        let f = DriverDocument::seminorm(0.1).bind(&a).unwrap();
        assert!(matches!(closed_form_linear(&f, &g, &a, 0.1), Err(SolverError::NotLinear(_))));
        let f = DriverDocument::default().with_poly(vec![vec![0.0, 1.0], vec![0.0]]).bind(&a).unwrap();
        assert!(matches!(closed_form_linear(&f, &g, &a, 0.1), Err(SolverError::NotLinear(_))));
    }

    #[test]
    fn solver_agrees_with_closed_form_on_piecewise_chain() {
        let m0 = DMatrix::from_row_slice(3, 3, &[-1.0, 0.5, 0.2, 0.4, -0.5, 0.8, 0.6, 0.0, -1.0]);
        let m1 = DMatrix::from_row_slice(3, 3, &[-2.0, 0.0, 1.0, 1.0, -1.0, 1.0, 1.0, 1.0, -2.0]);
        let a = RateMatrix::validate(vec![(0.0, m0), (0.4, m1)], 1.5).unwrap();
        let f = DriverDocument::default().with_beta(-0.3).with_per_state(vec![0.2, -0.1, 0.4]).bind(&a).unwrap();
        let g = TerminalCondition::from_slice(&[1.0, -1.0, 0.5]).unwrap();
        let cf = closed_form_linear(&f, &g, &a, 1e-3).unwrap();
        let sol = solve_markovian(&f, &g, &a, 1e-3).unwrap();
        let err = cf.iter().zip(sol.values()).map(|((_, x), y)| (x - y).amax()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }
}

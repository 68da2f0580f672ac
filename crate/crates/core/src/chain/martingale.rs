use nalgebra::DVector;
use serde_json::json;

use super::{ensemble_map, transition_matrix, ChainError, ChainPath, RateMatrix};
use crate::report::VerdictReport;
use crate::stats::MeanSe;
use crate::tolerances::SE_MULTIPLIER;

/// `M_t = X_t − X_0 − ∫₀ᵗ A_s X_s ds` along one path.
///
/// Stored as knots of the compensator `∫ A X ds` at every jump and segment
/// boundary; between knots the compensator is affine.
#[derive(Debug, Clone)]
pub struct MartingalePath {
    path: ChainPath,
    knots: Vec<Knot>,
}

#[derive(Debug, Clone)]
struct Knot {
    time: f64,
    compensator: DVector<f64>,
    slope: DVector<f64>,
}

impl MartingalePath {
    pub fn value_at(&self, t: f64) -> DVector<f64> {
        let n = self.knots[0].compensator.len();
        let k = self.knots.partition_point(|kn| kn.time <= t).max(1) - 1;
        let knot = &self.knots[k];
        let comp = &knot.compensator + &knot.slope * (t - knot.time);
        let mut m = -comp;
        m[self.path.state_at(t)] += 1.0;
        m[self.path.initial_state()] -= 1.0;
        debug_assert_eq!(m.len(), n);
        m
    }

    pub fn terminal(&self) -> DVector<f64> {
        self.value_at(self.path.horizon())
    }

    /// Jump `ΔM_u = ΔX_u` at each jump time.
    pub fn jumps(&self) -> impl Iterator<Item = (f64, usize, usize)> + '_ {
        let times = self.path.jump_times();
        let states = self.path.post_jump_states();
        (0..times.len()).map(move |k| {
            let from = if k == 0 { self.path.initial_state() } else { states[k - 1] };
            (times[k], from, states[k])
        })
    }

    pub fn path(&self) -> &ChainPath {
        &self.path
    }
}

pub fn martingale_increments(path: &ChainPath, a: &RateMatrix) -> MartingalePath {
    let n = a.n_states();
    let mut cuts: Vec<f64> = path.jump_times().to_vec();
    cuts.extend(a.breakpoints_in(0.0, path.horizon()));
    cuts.push(0.0);
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cuts.dedup();

    let mut knots = Vec::with_capacity(cuts.len());
    let mut comp = DVector::zeros(n);
    for (idx, &t) in cuts.iter().enumerate() {
        let state = path.state_at(t);
        let slope = a.generator_at(t).column(state).into_owned();
        knots.push(Knot { time: t, compensator: comp.clone(), slope: slope.clone() });
        let next = cuts.get(idx + 1).copied().unwrap_or(path.horizon());
        comp += slope * (next - t);
    }
    MartingalePath { path: path.clone(), knots }
}

/// Ensemble mean of `M_t` at each of `times` lies within `SE_MULTIPLIER`
/// standard errors of zero, componentwise.
pub fn martingale_check(
    a: &RateMatrix,
    x0: usize,
    times: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<VerdictReport, ChainError> {
    let n = a.n_states();
    let samples = ensemble_map(a, x0, a.horizon(), n_paths, seed, |p| {
        let m = martingale_increments(&p, a);
        times.iter().map(|&t| m.value_at(t)).collect::<Vec<_>>()
    })?;
    let mut report = VerdictReport::new("martingale")
        .seed(seed)
        .tolerance("se_multiplier", SE_MULTIPLIER)
        .margin("n_paths", n_paths as f64);
    let mut worst = 0.0f64;
    let mut witness = None;
    for (ti, &t) in times.iter().enumerate() {
        for c in 0..n {
            let vals: Vec<f64> = samples.iter().map(|s| s[ti][c]).collect();
            let est = MeanSe::from_slice(&vals);
            let z = est.z_score(0.0);
            report.push_row(format!("M[{c}]@{t}"), ti, est.mean, est.agrees_with(0.0, SE_MULTIPLIER));
            if z > worst {
                worst = z;
            }
            if !est.agrees_with(0.0, SE_MULTIPLIER) && witness.is_none() {
                witness = Some(json!({"time": t, "component": c, "mean": est.mean, "se": est.se}));
            }
        }
    }
    Ok(report.conclude(witness.is_none(), "max_z_score", worst, || witness.unwrap()))
}

/// Empirical distribution of `X_t` against `transition_matrix(A, 0, t)·e_{x0}`.
pub fn distribution_check(
    a: &RateMatrix,
    x0: usize,
    t: f64,
    n_paths: usize,
    seed: u64,
) -> Result<VerdictReport, ChainError> {
    let n = a.n_states();
    let p = transition_matrix(a, 0.0, t)?;
    let states = ensemble_map(a, x0, a.horizon(), n_paths, seed, |path| path.state_at(t))?;
    let mut report = VerdictReport::new("distribution").seed(seed).tolerance("se_multiplier", SE_MULTIPLIER);
    let mut worst = 0.0f64;
    let mut witness = None;
    for i in 0..n {
        let ind: Vec<f64> = states.iter().map(|&s| (s == i) as u8 as f64).collect();
        let est = MeanSe::from_slice(&ind);
        let target = p[(i, x0)];
        let ok = est.agrees_with(target, SE_MULTIPLIER);
        worst = worst.max(est.z_score(target));
        report.push_row(format!("P[X_t={i}]"), i, est.mean, ok);
        if !ok && witness.is_none() {
            witness = Some(json!({"state": i, "empirical": est.mean, "exact": target, "se": est.se}));
        }
    }
    Ok(report.conclude(witness.is_none(), "max_z_score", worst, || witness.unwrap()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::simulate_path;

    fn two_state() -> RateMatrix {
        RateMatrix::from_rows(&[&[-1.0, 1.0], &[1.0, -1.0]], 1.0).unwrap()
    }

    #[test]
    fn zero_generator_martingale_vanishes() {
        let a = RateMatrix::from_rows(&[&[0.0, 0.0], &[0.0, 0.0]], 1.0).unwrap();
        let p = simulate_path(&a, 0, 1.0, 1).unwrap();
        let m = martingale_increments(&p, &a);
        for t in [0.0, 0.3, 1.0] {
            assert_eq!(m.value_at(t), DVector::zeros(2));
        }
    }

    #[test]
    fn components_sum_to_zero_and_start_at_zero() {
        let a = two_state();
        for seed in 0..20 {
            let p = simulate_path(&a, 0, 1.0, seed).unwrap();
            let m = martingale_increments(&p, &a);
            assert_eq!(m.value_at(0.0), DVector::zeros(2));
            for k in 0..=20 {
                let v = m.value_at(k as f64 / 20.0);
                assert!(v.sum().abs() < 1e-14);
            }
        }
    }

    #[test]
    fn hand_computed_path() {
        // state 0 on [0, .25), state 1 on [.25, 1]; A e_0 = (-1, 1), A e_1 = (1, -1)
        let a = two_state();
        let p = ChainPath::new(0, vec![0.25], vec![1], 1.0).unwrap();
        let m = martingale_increments(&p, &a).terminal();
        // X_T − X_0 = (-1, 1); ∫AX = 0.25(-1,1) + 0.75(1,-1) = (0.5, -0.5)
        assert!((m[0] - (-1.5)).abs() < 1e-15);
        assert!((m[1] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn ensemble_mean_of_terminal_martingale_is_small() {
        let a = two_state();
        let terms = ensemble_map(&a, 0, 1.0, 100_000, 9, |p| martingale_increments(&p, &a).terminal()).unwrap();
        for c in 0..2 {
            let v: Vec<f64> = terms.iter().map(|m| m[c]).collect();
            assert!(MeanSe::from_slice(&v).mean.abs() < 0.01);
        }
    }

    #[test]
    fn martingale_and_distribution_checks_pass() {
        let a = RateMatrix::from_rows(&[&[-1.0, 0.5, 0.2], &[0.4, -0.5, 0.8], &[0.6, 0.0, -1.0]], 1.0).unwrap();
        let times: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        assert!(martingale_check(&a, 1, &times, 20_000, 3).unwrap().is_pass());
        assert!(distribution_check(&a, 2, 0.7, 20_000, 4).unwrap().is_pass());
    }
}

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use super::{ChainError, RateMatrix};

/// One realized trajectory: initial state, jump times in `(0, T]`, and the
/// state entered at each jump.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPath {
    initial_state: usize,
    jump_times: Vec<f64>,
    post_jump_states: Vec<usize>,
    horizon: f64,
}

impl ChainPath {
    pub fn new(
        initial_state: usize,
        jump_times: Vec<f64>,
        post_jump_states: Vec<usize>,
        horizon: f64,
    ) -> Result<Self, ChainError> {
        if jump_times.len() != post_jump_states.len() {
            return Err(ChainError::InvalidPath("jump times and states differ in length".into()));
        }
        let mut prev_t = 0.0;
        let mut prev_s = initial_state;
        for (&t, &s) in jump_times.iter().zip(&post_jump_states) {
            if !(t > prev_t) || t > horizon {
                return Err(ChainError::InvalidPath(format!("jump time {t} not increasing in (0, T]")));
            }
            if s == prev_s {
                return Err(ChainError::InvalidPath(format!("jump at {t} does not change the state")));
            }
            prev_t = t;
            prev_s = s;
        }
        Ok(Self { initial_state, jump_times, post_jump_states, horizon })
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn post_jump_states(&self) -> &[usize] {
        &self.post_jump_states
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_jumps(&self) -> usize {
        self.jump_times.len()
    }

    /// `X_t`, right-continuous.
    pub fn state_at(&self, t: f64) -> usize {
        let k = self.jump_times.partition_point(|&s| s <= t);
        if k == 0 {
            self.initial_state
        } else {
            self.post_jump_states[k - 1]
        }
    }

    /// `X_{t−}`.
    pub fn state_before(&self, t: f64) -> usize {
        let k = self.jump_times.partition_point(|&s| s < t);
        if k == 0 {
            self.initial_state
        } else {
            self.post_jump_states[k - 1]
        }
    }

    pub fn terminal_state(&self) -> usize {
        self.post_jump_states.last().copied().unwrap_or(self.initial_state)
    }

    /// Maximal constant pieces `(from, to, state)` covering `[0, T]`.
    pub fn sojourns(&self) -> Vec<(f64, f64, usize)> {
        let mut out = Vec::with_capacity(self.jump_times.len() + 1);
        let mut t0 = 0.0;
        let mut s = self.initial_state;
        for (&t, &next) in self.jump_times.iter().zip(&self.post_jump_states) {
            out.push((t0, t, s));
            t0 = t;
            s = next;
        }
        out.push((t0, self.horizon, s));
        out
    }
}

/// Per-path random stream: ChaCha8 keyed by `seed`, stream `stream`.
pub fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Exact event-time simulation on `[0, horizon]`.
///
/// Holding times are drawn against the piecewise-constant cumulative hazard
/// of the current state; the landing state is drawn from the off-diagonal
/// column of the segment active at the jump.
pub fn simulate_path(a: &RateMatrix, x0: usize, horizon: f64, seed: u64) -> Result<ChainPath, ChainError> {
    simulate_with(a, x0, horizon, &mut path_rng(seed, 0))
}

fn simulate_with<R: Rng>(a: &RateMatrix, x0: usize, horizon: f64, rng: &mut R) -> Result<ChainPath, ChainError> {
    a.check_state(x0)?;
    if !(horizon > 0.0) || horizon > a.horizon() {
        return Err(ChainError::InvalidHorizon(horizon));
    }
    let n = a.n_states();
    let mut t = 0.0;
    let mut state = x0;
    let mut seg = 0;
    let mut jump_times = Vec::new();
    let mut post = Vec::new();
    'outer: loop {
        let mut budget: f64 = rng.sample(Exp1);
        loop {
            let seg_end = a.segment_end(seg).min(horizon);
            let rate = a.exit_rate(seg, state);
            let span = seg_end - t;
            if rate > 0.0 && rate * span >= budget {
                t += budget / rate;
                break;
            }
            budget -= rate * span;
            if seg_end >= horizon {
                break 'outer;
            }
            t = seg_end;
            seg += 1;
        }
        if t > horizon {
            break;
        }
        let g = &a.segments()[seg].generator;
        let rate = a.exit_rate(seg, state);
        let mut pick = rng.random::<f64>() * rate;
        let mut next = None;
        for i in 0..n {
            if i == state || g[(i, state)] <= 0.0 {
                continue;
            }
            next = Some(i);
            if pick < g[(i, state)] {
                break;
            }
            pick -= g[(i, state)];
        }
        // rate > 0 guarantees at least one positive off-diagonal entry
        let next = next.expect("positive exit rate without target");
        jump_times.push(t);
        post.push(next);
        state = next;
    }
    Ok(ChainPath { initial_state: x0, jump_times, post_jump_states: post, horizon })
}

/// `n_paths` independent paths; path `p` uses stream `p` of `seed`.
pub fn simulate_ensemble(
    a: &RateMatrix,
    x0: usize,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<ChainPath>, ChainError> {
    ensemble_map(a, x0, horizon, n_paths, seed, |p| p)
}

/// Simulates paths in parallel and maps each one; output order is path order.
pub fn ensemble_map<T, F>(
    a: &RateMatrix,
    x0: usize,
    horizon: f64,
    n_paths: usize,
    seed: u64,
    f: F,
) -> Result<Vec<T>, ChainError>
where
    T: Send,
    F: Fn(ChainPath) -> T + Sync,
{
    a.check_state(x0)?;
    (0..n_paths as u64)
        .into_par_iter()
        .map(|p| simulate_with(a, x0, horizon, &mut path_rng(seed, p)).map(&f))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::MeanSe;

    fn two_state() -> RateMatrix {
        RateMatrix::from_rows(&[&[-1.0, 1.0], &[1.0, -1.0]], 1.0).unwrap()
    }

    #[test]
    fn zero_generator_never_jumps() {
        let a = RateMatrix::from_rows(&[&[0.0, 0.0], &[0.0, 0.0]], 1.0).unwrap();
        for seed in 0..20 {
            assert_eq!(simulate_path(&a, 1, 1.0, seed).unwrap().n_jumps(), 0);
        }
    }

    #[test]
    fn identical_seeds_give_identical_paths() {
        let a = two_state();
        assert_eq!(simulate_path(&a, 0, 1.0, 7).unwrap(), simulate_path(&a, 0, 1.0, 7).unwrap());
        let e1 = simulate_ensemble(&a, 0, 1.0, 50, 3).unwrap();
        let e2 = simulate_ensemble(&a, 0, 1.0, 50, 3).unwrap();
        assert_eq!(e1, e2);
        assert!(e1.iter().any(|p| p != &e1[0]));
    }

    #[test]
    fn first_holding_time_is_unit_exponential() {
        let a = RateMatrix::from_rows(&[&[-1.0, 1.0], &[1.0, -1.0]], 50.0).unwrap();
        let holds = ensemble_map(&a, 0, 50.0, 100_000, 11, |p| p.jump_times().first().copied().unwrap_or(50.0))
            .unwrap();
        let s = MeanSe::from_slice(&holds);
        assert!((s.mean - 1.0).abs() < 0.01, "mean {}", s.mean);
    }

    #[test]
    fn terminal_frequency_matches_exponential_oracle() {
        let a = two_state();
        let hits: Vec<f64> = ensemble_map(&a, 0, 1.0, 100_000, 5, |p| (p.terminal_state() == 0) as u8 as f64).unwrap();
        let s = MeanSe::from_slice(&hits);
        let oracle = (1.0 + (-2.0f64).exp()) / 2.0;
        assert!((s.mean - oracle).abs() < 0.005, "{} vs {}", s.mean, oracle);
    }

    #[test]
    fn piecewise_segments_switch_rates() {
        // absorbing on [0, 0.5), fast afterwards: no jump may happen before 0.5
        let slow = nalgebra::DMatrix::zeros(2, 2);
        let fast = nalgebra::DMatrix::from_row_slice(2, 2, &[-5.0, 5.0, 5.0, -5.0]);
        let a = RateMatrix::validate(vec![(0.0, slow), (0.5, fast)], 1.0).unwrap();
        let paths = simulate_ensemble(&a, 0, 1.0, 2000, 1).unwrap();
        assert!(paths.iter().all(|p| p.jump_times().iter().all(|&t| t >= 0.5)));
        assert!(paths.iter().filter(|p| p.n_jumps() > 0).count() > 1500);
    }

    #[test]
    fn state_lookup_is_cadlag() {
        let p = ChainPath::new(0, vec![0.25, 0.5], vec![1, 0], 1.0).unwrap();
        assert_eq!(p.state_at(0.0), 0);
        assert_eq!(p.state_at(0.25), 1);
        assert_eq!(p.state_before(0.25), 0);
        assert_eq!(p.state_at(0.75), 0);
        assert_eq!(p.sojourns(), vec![(0.0, 0.25, 0), (0.25, 0.5, 1), (0.5, 1.0, 0)]);
    }

    #[test]
    fn rejects_inconsistent_paths() {
        assert!(ChainPath::new(0, vec![0.3], vec![0], 1.0).is_err());
        assert!(ChainPath::new(0, vec![0.3, 0.2], vec![1, 0], 1.0).is_err());
        assert!(ChainPath::new(0, vec![1.5], vec![1], 1.0).is_err());
    }
}

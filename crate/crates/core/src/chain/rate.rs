use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::ChainError;
use crate::tolerances::GENERATOR_COLUMN_SUM;

/// One constant piece of the generator, active from `start` until the next
/// segment (or the horizon).
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub generator: DMatrix<f64>,
}

/// Piecewise-constant generator `A_t` on `[0, T]`.
///
/// Column `j` holds the outflow rates of state `j`, so `A[i][j] ≥ 0` for
/// `i ≠ j` and every column sums to zero. On construction the diagonal is
/// re-derived from the off-diagonal entries so that column sums vanish
/// exactly in floating point.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    n_states: usize,
    segments: Vec<Segment>,
    horizon: f64,
    m_declared: f64,
}

impl RateMatrix {
    pub fn validate(raw: Vec<(f64, DMatrix<f64>)>, horizon: f64) -> Result<Self, ChainError> {
        if raw.is_empty() {
            return Err(ChainError::EmptySegments);
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(ChainError::InvalidHorizon(horizon));
        }
        let n = raw[0].1.nrows();
        if n < 2 {
            return Err(ChainError::TooFewStates(n));
        }
        if raw[0].0 != 0.0 {
            return Err(ChainError::SegmentOrder);
        }
        for w in raw.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(ChainError::SegmentOrder);
            }
        }
        if raw.last().map_or(false, |s| s.0 >= horizon) {
            return Err(ChainError::SegmentOrder);
        }

        let mut segments = Vec::with_capacity(raw.len());
        for (k, (start, mut a)) in raw.into_iter().enumerate() {
            if a.nrows() != n || a.ncols() != n {
                return Err(ChainError::DimensionMismatch { segment: k, expected: n });
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(ChainError::NonFinite(k));
            }
            for j in 0..n {
                let mut outflow = 0.0;
                for i in 0..n {
                    if i == j {
                        continue;
                    }
                    let v = a[(i, j)];
                    if v < 0.0 {
                        return Err(ChainError::NegativeOffDiagonal { segment: k, row: i, col: j, value: v });
                    }
                    outflow += v;
                }
                let sum = outflow + a[(j, j)];
                if sum.abs() > GENERATOR_COLUMN_SUM {
                    return Err(ChainError::ColumnSumNonZero { segment: k, col: j, sum });
                }
                a[(j, j)] = -outflow;
            }
            segments.push(Segment { start, generator: a });
        }
        let m_declared = segments.iter().map(|s| s.generator.norm()).fold(0.0, f64::max);
        Ok(Self { n_states: n, segments, horizon, m_declared })
    }

    /// Time-homogeneous generator on `[0, horizon]`.
    pub fn homogeneous(a: DMatrix<f64>, horizon: f64) -> Result<Self, ChainError> {
        Self::validate(vec![(0.0, a)], horizon)
    }

    /// Row-major convenience constructor for a homogeneous generator.
    pub fn from_rows(rows: &[&[f64]], horizon: f64) -> Result<Self, ChainError> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(ChainError::DimensionMismatch { segment: 0, expected: n });
        }
        let a = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::homogeneous(a, horizon)
    }

    /// Homogeneous chain with off-diagonal rates uniform on `[lo, hi]`, each
    /// zeroed with probability `sparsity`.
    pub fn random<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64, sparsity: f64, horizon: f64) -> Result<Self, ChainError> {
        Self::homogeneous(random_generator(rng, n, lo, hi, sparsity), horizon)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Largest Frobenius norm over the segments (the bound `m`).
    pub fn m_declared(&self) -> f64 {
        self.m_declared
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// End time of segment `k`.
    pub fn segment_end(&self, k: usize) -> f64 {
        self.segments.get(k + 1).map_or(self.horizon, |s| s.start)
    }

    /// Index of the segment active at `t` (right-continuous; `T` maps to the last one).
    pub fn segment_index(&self, t: f64) -> usize {
        match self.segments.binary_search_by(|s| s.start.partial_cmp(&t).unwrap()) {
            Ok(k) => k,
            Err(k) => k.saturating_sub(1),
        }
    }

    pub fn generator_at(&self, t: f64) -> &DMatrix<f64> {
        &self.segments[self.segment_index(t)].generator
    }

    /// Segment start times lying strictly inside `(a, b)`.
    pub fn breakpoints_in(&self, a: f64, b: f64) -> Vec<f64> {
        self.segments.iter().map(|s| s.start).filter(|&s| s > a && s < b).collect()
    }

    /// Total outflow rate of `state` in segment `k`.
    pub fn exit_rate(&self, k: usize, state: usize) -> f64 {
        -self.segments[k].generator[(state, state)]
    }

    /// `(A_k' u)_i` written as `Σ_{j≠i} A_k[j][i] (u_j − u_i)`, exact on constants.
    pub fn generator_action(&self, k: usize, state: usize, u: &DVector<f64>) -> f64 {
        let a = &self.segments[k].generator;
        let ui = u[state];
        (0..self.n_states)
            .filter(|&j| j != state)
            .map(|j| a[(j, state)] * (u[j] - ui))
            .sum()
    }

    pub fn check_state(&self, state: usize) -> Result<(), ChainError> {
        if state < self.n_states {
            Ok(())
        } else {
            Err(ChainError::InvalidState { state, n_states: self.n_states })
        }
    }

    pub fn check_time(&self, t: f64) -> Result<(), ChainError> {
        if (0.0..=self.horizon).contains(&t) {
            Ok(())
        } else {
            Err(ChainError::TimeOutOfRange(t))
        }
    }

    /// The chain stopped on entering `absorbing`: outflow columns of those
    /// states are zeroed in every segment.
    pub fn absorb(&self, absorbing: &[usize]) -> Self {
        let mut out = self.clone();
        for seg in &mut out.segments {
            for &s in absorbing {
                seg.generator.column_mut(s).fill(0.0);
            }
        }
        out.m_declared = out.segments.iter().map(|s| s.generator.norm()).fold(0.0, f64::max);
        out
    }

    /// Block-diagonal chain on pairs `(tag, state)` with a frozen tag, indexed
    /// `tag·N + state`. Used to represent `F_s`-measurable multipliers.
    pub fn tagged(&self) -> Self {
        let n = self.n_states;
        let mut out = self.clone();
        for seg in &mut out.segments {
            let mut big = DMatrix::zeros(n * n, n * n);
            for tag in 0..n {
                big.view_mut((tag * n, tag * n), (n, n)).copy_from(&seg.generator);
            }
            seg.generator = big;
        }
        out.n_states = n * n;
        out.m_declared = out.segments.iter().map(|s| s.generator.norm()).fold(0.0, f64::max);
        out
    }
}

pub fn random_generator<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64, sparsity: f64) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            if i != j {
                let rate = lo + (hi - lo) * rng.random::<f64>();
                if rng.random::<f64>() >= sparsity {
                    a[(i, j)] = rate;
                }
            }
        }
        let s: f64 = (0..n).filter(|&i| i != j).map(|i| a[(i, j)]).sum();
        a[(j, j)] = -s;
    }
    a
}

use super::{Side, SolverError};
use crate::chain::{ChainPath, RateMatrix};
use crate::driver::LinearizationCoefficients;
use crate::geometry::{MarginClass, PsiCache};
use crate::tolerances::MARGIN_EQUALITY;

/// Value of `U` at one knot of the merged timeline (grid nodes and jumps).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoleansKnot {
    pub time: f64,
    /// State on `[time, next knot)`.
    pub state: usize,
    pub before: f64,
    pub after: f64,
}

/// `U_s = exp(V^c_s)·∏_{u ≤ s}(1 + ΔV_u)` along one path, where
/// `dV = a ds + b Ψ†' dM`. With `dM = dX − AX ds` the continuous part is
/// `∫(a − bΨ†AX) ds` and each jump `e_i → e_j` contributes
/// `ΔV = b_{u−}Ψ_i†(e_j − e_i)`.
#[derive(Debug, Clone)]
pub struct DoleansPath {
    pub knots: Vec<DoleansKnot>,
    pub jump_factors: Vec<(f64, f64)>,
}

impl DoleansPath {
    pub fn terminal(&self) -> f64 {
        self.knots.last().map_or(1.0, |k| k.after)
    }

    pub fn min_value(&self) -> f64 {
        self.knots.iter().flat_map(|k| [k.before, k.after]).fold(f64::INFINITY, f64::min)
    }

    /// Trapezoid of `∫ h(s, X_s) U_s ds` on the merged timeline; `h` is
    /// queried on the inner side of every knot.
    pub fn integrate<F: Fn(f64, usize, Side) -> f64>(&self, h: F) -> f64 {
        self.knots
            .windows(2)
            .map(|w| {
                let (k0, k1) = (w[0], w[1]);
                let s = k0.state;
                0.5 * (k1.time - k0.time) * (h(k0.time, s, Side::Right) * k0.after + h(k1.time, s, Side::Left) * k1.before)
            })
            .sum()
    }
}

/// Builds `U` on the merged grid. Fails with `JumpBoundViolated` if a jump
/// factor leaves `[−1, 1]` (or reaches `−1` under a strict margin).
pub fn doleans_exponential(
    path: &ChainPath,
    coeffs: &LinearizationCoefficients,
    chain: &RateMatrix,
    margin: MarginClass,
) -> Result<DoleansPath, SolverError> {
    let cache = PsiCache::new(chain);
    let grid = &coeffs.grid;
    let mut times: Vec<f64> = grid.times().to_vec();
    times.extend(path.jump_times().iter().copied().filter(|&t| t >= grid.start() && t <= grid.end()));
    times.sort_by(|x, y| x.partial_cmp(y).unwrap());
    times.dedup();

    let rate = |t: f64, i: usize, side: Side| {
        let (c, _) = grid.locate(t, side);
        let seg = grid.cell_segment(c);
        let b = coeffs.b_at(t, i, side);
        coeffs.a_at(t, i, side) - b.dot(&cache.entry(seg, i).drift_response)
    };

    let mut knots = Vec::with_capacity(times.len());
    let mut jump_factors = Vec::new();
    let mut value = 1.0f64;
    let mut prev: Option<(f64, usize)> = None;
    for &t in &times {
        let mut before = value;
        if let Some((t0, s0)) = prev {
            before = value * (0.5 * (t - t0) * (rate(t0, s0, Side::Right) + rate(t, s0, Side::Left))).exp();
        }
        let from = path.state_before(t);
        let to = path.state_at(t);
        let mut after = before;
        if from != to && t > grid.start() {
            let (c, _) = grid.locate(t, Side::Left);
            let seg = grid.cell_segment(c);
            let b = coeffs.b_at(t, from, Side::Left);
            let dv = b.dot(&cache.entry(seg, from).jump_response[to]);
            let bound_hit = match margin {
                MarginClass::Strict => dv <= -1.0 || dv.abs() > 1.0 + MARGIN_EQUALITY,
                MarginClass::Weak => dv.abs() > 1.0 + MARGIN_EQUALITY,
                MarginClass::Violated => false,
            };
            if bound_hit {
                return Err(SolverError::JumpBoundViolated { time: t, delta_v: dv });
            }
            after = before * (1.0 + dv);
            jump_factors.push((t, dv));
        }
        knots.push(DoleansKnot { time: t, state: to, before, after });
        value = after;
        prev = Some((t, to));
    }
    Ok(DoleansPath { knots, jump_factors })
}

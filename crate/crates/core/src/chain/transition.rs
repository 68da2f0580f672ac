use nalgebra::DMatrix;

use super::{ChainError, RateMatrix};

/// `P(s, t)` with `E[X_t | X_s = e_j] = P(s, t) e_j`, the ordered product of
/// per-segment matrix exponentials (later segments on the left).
pub fn transition_matrix(a: &RateMatrix, s: f64, t: f64) -> Result<DMatrix<f64>, ChainError> {
    a.check_time(s)?;
    a.check_time(t)?;
    if s > t {
        return Err(ChainError::TimeOutOfRange(s));
    }
    let n = a.n_states();
    let mut p = DMatrix::identity(n, n);
    if t == s {
        return Ok(p);
    }
    for (k, seg) in a.segments().iter().enumerate() {
        let lo = seg.start.max(s);
        let hi = a.segment_end(k).min(t);
        if hi > lo {
            p = (&seg.generator * (hi - lo)).exp() * p;
        }
    }
    Ok(p)
}

/// Boolean reachability `R[i][j]`: state `i` can be occupied at `t` when the
/// chain sits in `j` at `s`. Exact (graph closure per segment), unlike
/// thresholding the exponential.
pub fn reachability(a: &RateMatrix, s: f64, t: f64) -> Result<Vec<Vec<bool>>, ChainError> {
    a.check_time(s)?;
    a.check_time(t)?;
    let n = a.n_states();
    let mut reach: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| i == j).collect()).collect();
    for (k, seg) in a.segments().iter().enumerate() {
        let lo = seg.start.max(s);
        let hi = a.segment_end(k).min(t);
        if hi <= lo {
            continue;
        }
        let mut closure: Vec<Vec<bool>> =
            (0..n).map(|i| (0..n).map(|j| i == j || seg.generator[(i, j)] > 0.0).collect()).collect();
        for m in 0..n {
            for i in 0..n {
                if closure[i][m] {
                    for j in 0..n {
                        if closure[m][j] {
                            closure[i][j] = true;
                        }
                    }
                }
            }
        }
        let prev = reach.clone();
        for i in 0..n {
            for j in 0..n {
                reach[i][j] = (0..n).any(|m| closure[i][m] && prev[m][j]);
            }
        }
    }
    Ok(reach)
}

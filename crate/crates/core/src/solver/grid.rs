use crate::chain::RateMatrix;

use super::SolverError;

/// Time grid of a backward solve: every chain segment boundary and every
/// extra breakpoint is a node, and each piece between nodes is cut into
/// equal cells no longer than `step`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
    cell_segments: Vec<usize>,
}

/// Which side of a node a lookup belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// The cell ending at the node (left limit).
    Left,
    /// The cell starting at the node (right value).
    Right,
}

impl TimeGrid {
    pub fn build(chain: &RateMatrix, start: f64, end: f64, step: f64, extra: &[f64]) -> Result<Self, SolverError> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(SolverError::InvalidStep(step));
        }
        if !(start <= end) || start < 0.0 || end > chain.horizon() {
            return Err(SolverError::InvalidInterval { start, end });
        }
        let mut nodes = vec![start, end];
        nodes.extend(chain.breakpoints_in(start, end));
        nodes.extend(extra.iter().copied().filter(|&b| b > start && b < end));
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        nodes.dedup();

        let mut times = vec![start];
        let mut cell_segments = Vec::new();
        for w in nodes.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let cells = ((hi - lo) / step - 1e-9).ceil().max(1.0) as usize;
            let seg = chain.segment_index(0.5 * (lo + hi));
            let h = (hi - lo) / cells as f64;
            for c in 1..=cells {
                times.push(if c == cells { hi } else { lo + h * c as f64 });
                cell_segments.push(seg);
            }
        }
        Ok(Self { times, cell_segments })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_cells(&self) -> usize {
        self.cell_segments.len()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Chain segment active inside cell `c`.
    pub fn cell_segment(&self, c: usize) -> usize {
        self.cell_segments[c]
    }

    /// Segment in force at node `k`, taken from the cell to its right
    /// (the last node uses the last cell).
    pub fn node_segment(&self, k: usize) -> usize {
        if self.cell_segments.is_empty() {
            0
        } else {
            self.cell_segments[k.min(self.cell_segments.len() - 1)]
        }
    }

    /// Cell containing `t` and the fractional position `θ ∈ [0, 1]` inside it.
    pub fn locate(&self, t: f64, side: Side) -> (usize, f64) {
        let n = self.n_cells();
        debug_assert!(n > 0);
        let idx = match side {
            Side::Right => self.times.partition_point(|&s| s <= t).saturating_sub(1),
            Side::Left => self.times.partition_point(|&s| s < t).saturating_sub(1),
        };
        let c = idx.min(n - 1);
        let (a, b) = (self.times[c], self.times[c + 1]);
        let theta = ((t - a) / (b - a)).clamp(0.0, 1.0);
        (c, theta)
    }
}

/// Per-cell values at both ends of each cell, per state. Values are
/// interpolated linearly inside a cell; nodes where the chain switches
/// segment keep distinct left and right values.
#[derive(Debug, Clone, PartialEq)]
pub struct CellTable<T> {
    pub start: Vec<Vec<T>>,
    pub end: Vec<Vec<T>>,
}

impl CellTable<f64> {
    pub fn interp(&self, grid: &TimeGrid, t: f64, state: usize, side: Side) -> f64 {
        let (c, th) = grid.locate(t, side);
        let (a, b) = (self.start[c][state], self.end[c][state]);
        a + th * (b - a)
    }
}

impl CellTable<nalgebra::DVector<f64>> {
    pub fn interp(&self, grid: &TimeGrid, t: f64, state: usize, side: Side) -> nalgebra::DVector<f64> {
        let (c, th) = grid.locate(t, side);
        let a = &self.start[c][state];
        let b = &self.end[c][state];
        a + (b - a) * th
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn grid_hits_segment_boundaries() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        let chain = RateMatrix::validate(vec![(0.0, a.clone()), (0.35, a)], 1.0).unwrap();
        let g = TimeGrid::build(&chain, 0.0, 1.0, 0.1, &[0.8]).unwrap();
        assert!(g.times().contains(&0.35));
        assert!(g.times().contains(&0.8));
        assert_eq!(g.start(), 0.0);
        assert_eq!(g.end(), 1.0);
        assert!(g.times().windows(2).all(|w| w[1] > w[0] && w[1] - w[0] <= 0.1 + 1e-12));
        let k = g.times().iter().position(|&t| t == 0.35).unwrap();
        assert_eq!(g.cell_segment(k - 1), 0);
        assert_eq!(g.cell_segment(k), 1);
        assert_eq!(g.locate(0.35, Side::Left), (k - 1, 1.0));
        assert_eq!(g.locate(0.35, Side::Right), (k, 0.0));
    }

    #[test]
    fn exact_multiples_do_not_add_a_sliver() {
        let chain = RateMatrix::from_rows(&[&[-1.0, 1.0], &[1.0, -1.0]], 1.0).unwrap();
        assert_eq!(TimeGrid::build(&chain, 0.0, 1.0, 1e-3, &[]).unwrap().n_cells(), 1000);
        assert_eq!(TimeGrid::build(&chain, 0.5, 0.5, 1e-3, &[]).unwrap().n_cells(), 0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let chain = RateMatrix::from_rows(&[&[-1.0, 1.0], &[1.0, -1.0]], 1.0).unwrap();
        assert!(TimeGrid::build(&chain, 0.0, 1.0, 0.0, &[]).is_err());
        assert!(TimeGrid::build(&chain, 0.6, 0.5, 0.1, &[]).is_err());
        assert!(TimeGrid::build(&chain, 0.0, 1.5, 0.1, &[]).is_err());
    }
}

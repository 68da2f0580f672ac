use std::io::{self, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ChainError, ChainPath, RateMatrix};

/// `{"n_states": N, "segments": [{"t": start, "A": [[..]]}], "horizon": T}`,
/// with `A` given row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainDocument {
    pub n_states: usize,
    pub segments: Vec<SegmentDocument>,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentDocument {
    pub t: f64,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
}

impl ChainDocument {
    pub fn into_rate_matrix(self) -> Result<RateMatrix, ChainError> {
        let n = self.n_states;
        let mut raw = Vec::with_capacity(self.segments.len());
        for (k, seg) in self.segments.into_iter().enumerate() {
            if seg.a.len() != n || seg.a.iter().any(|r| r.len() != n) {
                return Err(ChainError::DimensionMismatch { segment: k, expected: n });
            }
            raw.push((seg.t, DMatrix::from_fn(n, n, |i, j| seg.a[i][j])));
        }
        RateMatrix::validate(raw, self.horizon)
    }

    pub fn from_rate_matrix(a: &RateMatrix) -> Self {
        let n = a.n_states();
        Self {
            n_states: n,
            segments: a
                .segments()
                .iter()
                .map(|s| SegmentDocument {
                    t: s.start,
                    a: (0..n).map(|i| (0..n).map(|j| s.generator[(i, j)]).collect()).collect(),
                })
                .collect(),
            horizon: a.horizon(),
        }
    }
}

/// Rows `path_id,jump_time,new_state`; each path opens with a row at time 0
/// carrying its initial state.
pub fn write_paths_csv<W: Write>(paths: &[ChainPath], mut w: W) -> io::Result<()> {
    writeln!(w, "path_id,jump_time,new_state")?;
    for (id, p) in paths.iter().enumerate() {
        writeln!(w, "{id},0,{}", p.initial_state())?;
        for (t, s) in p.jump_times().iter().zip(p.post_jump_states()) {
            writeln!(w, "{id},{t},{s}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_documented_format() {
        let doc: ChainDocument = serde_json::from_str(
            r#"{"n_states": 2, "segments": [{"t": 0, "A": [[-1, 1], [1, -1]]}, {"t": 0.5, "A": [[-2, 0], [2, 0]]}], "horizon": 1}"#,
        )
        .unwrap();
        let a = doc.clone().into_rate_matrix().unwrap();
        assert_eq!(a.segments().len(), 2);
        assert_eq!(a.segments()[1].generator[(1, 0)], 2.0);
        assert_eq!(ChainDocument::from_rate_matrix(&a), doc);
    }

    #[test]
    fn rejects_ragged_matrix() {
        let doc: ChainDocument =
            serde_json::from_str(r#"{"n_states": 2, "segments": [{"t": 0, "A": [[-1, 1], [1]]}], "horizon": 1}"#).unwrap();
        assert!(matches!(doc.into_rate_matrix(), Err(ChainError::DimensionMismatch { .. })));
    }

    #[test]
    fn csv_export() {
        let p = ChainPath::new(1, vec![0.5], vec![0], 1.0).unwrap();
        let mut buf = Vec::new();
        write_paths_csv(&[p], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "path_id,jump_time,new_state\n0,0,1\n0,0.5,0\n");
    }
}

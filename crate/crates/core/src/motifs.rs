//! Three-edge temporal motifs on at most three nodes.
//!
//! A motif instance is any triple of events `e1, e2, e3` (in stream order)
//! spanning at most `delta` in time and touching at most three nodes. With
//! `e1 = u -> v` and `w` the third node, the instance lands in
//! `(row(e2), col(e3))` of a 6x6 grid:
//!
//! | index | row (`e2`) | column (`e3`) |
//! |-------|------------|---------------|
//! | 1     | `w -> v`   | `u -> v`      |
//! | 2     | `v -> w`   | `v -> u`      |
//! | 3     | `w -> u`   | `u -> w`      |
//! | 4     | `u -> w`   | `w -> u`      |
//! | 5     | `u -> v`   | `v -> w`      |
//! | 6     | `v -> u`   | `w -> v`      |
//!
//! Rows 5-6 with columns 1-2 hold the four two-node motifs; rows 1-2 with
//! columns 3-4 and rows 3-4 with columns 5-6 hold triangles; the remaining
//! cells are the three-node stars.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MulchError, Result};
use crate::events::{Event, EventStream};

/// Counts in the grid described in the module docs (0-based indices).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotifMatrix {
    pub delta: f64,
    pub counts: [[u64; 6]; 6],
}

impl MotifMatrix {
    pub fn zeros(delta: f64) -> Self {
        MotifMatrix {
            delta,
            counts: [[0; 6]; 6],
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn get(&self, row: usize, col: usize) -> u64 {
        self.counts[row][col]
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("motif matrix serializes");
        std::fs::write(path, text).map_err(|e| MulchError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| MulchError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| MulchError::json(path, e))
    }
}

/// Position of an edge relative to the anchor `u -> v`: 0 `u->v`, 1 `v->u`,
/// 2 `u->x`, 3 `x->u`, 4 `v->x`, 5 `x->v`, plus the other node `x`.
/// `None` if the edge misses both `u` and `v`.
fn relate(e: &Event, u: usize, v: usize) -> Option<(usize, usize)> {
    let (s, r) = e.pair();
    Some(match (s, r) {
        _ if s == u && r == v => (0, usize::MAX),
        _ if s == v && r == u => (1, usize::MAX),
        _ if s == u => (2, r),
        _ if r == u => (3, s),
        _ if s == v => (4, r),
        _ if r == v => (5, s),
        _ => return None,
    })
}

/// Grid row for `e2` given its relation code; columns use the code itself.
const ROW_OF: [usize; 6] = [4, 5, 3, 2, 1, 0];

/// Counts every motif instance in `stream` within span `delta`.
pub fn count_temporal_motifs(stream: &EventStream, delta: f64) -> MotifMatrix {
    let events = stream.events();
    let mut m = MotifMatrix::zeros(delta);
    let mut window: Vec<(usize, usize)> = Vec::new();
    for (i, e1) in events.iter().enumerate() {
        let (u, v) = e1.pair();
        window.clear();
        for e in events[i + 1..]
            .iter()
            .take_while(|e| e.time - e1.time <= delta)
        {
            if let Some(rel) = relate(e, u, v) {
                window.push(rel);
            }
        }
        // Walk candidates for e2 backwards, keeping suffix counts for e3.
        let mut total = [0u64; 6];
        let mut by_node: HashMap<usize, [u64; 6]> = HashMap::new();
        for &(rel, x) in window.iter().rev() {
            let row = ROW_OF[rel];
            if rel < 2 {
                for (c, &n) in total.iter().enumerate() {
                    m.counts[row][c] += n;
                }
            } else {
                m.counts[row][0] += total[0];
                m.counts[row][1] += total[1];
                if let Some(per) = by_node.get(&x) {
                    for c in 2..6 {
                        m.counts[row][c] += per[c];
                    }
                }
            }
            total[rel] += 1;
            if rel >= 2 {
                by_node.entry(x).or_default()[rel] += 1;
            }
        }
    }
    m
}

/// Mean absolute percentage error between an observed motif matrix and the
/// cell-wise mean of simulated ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mape {
    /// `NaN` when every observed cell is zero.
    pub mape: f64,
    /// Observed zero cells left out of the sum and the divisor.
    pub excluded_cells: usize,
    pub mean_simulated: [[f64; 6]; 6],
}

pub fn motif_mape(actual: &MotifMatrix, sims: &[MotifMatrix]) -> Result<Mape> {
    if sims.is_empty() {
        return Err(MulchError::InvalidParameters(
            "no simulated motif matrices".into(),
        ));
    }
    if let Some(s) = sims.iter().find(|s| s.delta != actual.delta) {
        return Err(MulchError::InvalidParameters(format!(
            "delta mismatch: actual {} vs simulated {}",
            actual.delta, s.delta
        )));
    }
    let mut mean = [[0.0; 6]; 6];
    for s in sims {
        for r in 0..6 {
            for c in 0..6 {
                mean[r][c] += s.counts[r][c] as f64 / sims.len() as f64;
            }
        }
    }
    let mut sum = 0.0;
    let mut excluded = 0;
    for r in 0..6 {
        for c in 0..6 {
            let a = actual.counts[r][c] as f64;
            if a == 0.0 {
                excluded += 1;
            } else {
                sum += ((a - mean[r][c]) / a).abs();
            }
        }
    }
    let used = 36 - excluded;
    Ok(Mape {
        mape: if used == 0 {
            f64::NAN
        } else {
            100.0 * sum / used as f64
        },
        excluded_cells: excluded,
        mean_simulated: mean,
    })
}

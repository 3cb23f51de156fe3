//! Ideal (non-evicting) masks and trace-replay reconstruction of pruned
//! attention.
//!
//! The ideal mask picks, for every row independently, the highest-scoring
//! `min(B, q + 1)` keys of that very row. It never commits to an eviction, so
//! tokens may leave and re-enter the mask. Policy masks replay the recorded
//! rows through scoring and eviction, which makes them permanent.

use crate::attn_model::trace::{AttentionTrace, HeadGrid, ScoreRow, TriRows};
use crate::error::{Error, Result};
use crate::eviction::EvictionEngine;
use crate::scoring::{rank_by_score, PolicyKind};

/// `keep(q)` per unit and step, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSequence {
    grid: HeadGrid,
    seq_len: usize,
    masks: Vec<Vec<Vec<usize>>>,
}

impl MaskSequence {
    pub fn new(grid: HeadGrid, seq_len: usize, masks: Vec<Vec<Vec<usize>>>) -> Result<Self> {
        if masks.len() != grid.units() || masks.iter().any(|m| m.len() != seq_len) {
            return Err(Error::ShapeMismatch(
                "mask sequence does not match grid and sequence length".into(),
            ));
        }
        for m in masks.iter().flatten() {
            if m.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::ShapeMismatch(format!(
                    "keepset {m:?} is not strictly increasing"
                )));
            }
        }
        for unit in &masks {
            for (q, m) in unit.iter().enumerate() {
                if m.last().is_some_and(|&t| t > q) {
                    return Err(Error::ShapeMismatch(format!(
                        "step {q} keeps future token {:?}",
                        m.last()
                    )));
                }
            }
        }
        Ok(Self {
            grid,
            seq_len,
            masks,
        })
    }

    /// Every key kept at every step.
    pub fn full(grid: HeadGrid, seq_len: usize) -> Self {
        let unit: Vec<Vec<usize>> = (0..seq_len).map(|q| (0..=q).collect()).collect();
        Self {
            grid,
            seq_len,
            masks: vec![unit; grid.units()],
        }
    }

    pub fn grid(&self) -> HeadGrid {
        self.grid
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn keep(&self, unit: usize, q: usize) -> &[usize] {
        &self.masks[unit][q]
    }

    pub fn unit(&self, unit: usize) -> &[Vec<usize>] {
        &self.masks[unit]
    }

    pub fn same_shape(&self, other: &MaskSequence) -> bool {
        self.grid == other.grid && self.seq_len == other.seq_len
    }

    /// Dense 0/1 lower-triangular matrix for one unit, `seq_len` rows of
    /// `seq_len` columns.
    pub fn dense(&self, unit: usize) -> Vec<Vec<u8>> {
        self.masks[unit]
            .iter()
            .map(|keep| {
                let mut row = vec![0u8; self.seq_len];
                for &k in keep {
                    row[k] = 1;
                }
                row
            })
            .collect()
    }
}

/// Per-row top-`min(budget, q + 1)` selection, ties toward recency.
pub fn ideal_mask(trace: &AttentionTrace, budget: usize) -> Result<MaskSequence> {
    if budget == 0 {
        return Err(Error::ZeroBudget);
    }
    let rows = trace.rows();
    let masks = (0..trace.grid().units())
        .map(|unit| {
            (0..trace.seq_len())
                .map(|q| ideal_keep(rows.unit_row(unit, q), budget))
                .collect()
        })
        .collect();
    MaskSequence::new(trace.grid(), trace.seq_len(), masks)
}

fn ideal_keep(row: &[f64], budget: usize) -> Vec<usize> {
    if row.len() <= budget {
        return (0..row.len()).collect();
    }
    let entries: Vec<(usize, f64)> = row.iter().copied().enumerate().collect();
    let mut keep: Vec<usize> = rank_by_score(&entries).into_iter().take(budget).collect();
    keep.sort_unstable();
    keep
}

/// Replays recorded rows through a policy and records the keepset after each
/// step. Rows are fed as recorded, restricted to the live tokens.
pub fn policy_mask(
    trace: &AttentionTrace,
    policy: PolicyKind,
    budget: usize,
) -> Result<MaskSequence> {
    let grid = trace.grid();
    let units = grid.units();
    let mut engine = EvictionEngine::new(policy, grid, budget)?;
    let mut masks = vec![Vec::with_capacity(trace.seq_len()); units];
    for q in 0..trace.seq_len() {
        let rows: Vec<ScoreRow> = (0..units)
            .map(|unit| {
                let mut tokens = engine.live_tokens(unit);
                tokens.push(q);
                ScoreRow::gather(trace.rows().unit_row(unit, q), &tokens)
            })
            .collect();
        let keep = engine.step(&rows, None)?;
        for (m, k) in masks.iter_mut().zip(keep.heads) {
            m.push(k);
        }
    }
    MaskSequence::new(grid, trace.seq_len(), masks)
}

/// Zeroes entries outside `keep(q)` in every row; with `renormalize`, the
/// survivors are rescaled to sum to 1. Rows whose mask keeps everything are
/// copied unchanged.
pub fn replay_with_mask(
    trace: &AttentionTrace,
    mask: &MaskSequence,
    renormalize: bool,
) -> Result<TriRows> {
    if trace.grid() != mask.grid() || trace.seq_len() != mask.seq_len() {
        return Err(Error::ShapeMismatch(format!(
            "trace is {:?} x {} steps, mask is {:?} x {} steps",
            trace.grid(),
            trace.seq_len(),
            mask.grid(),
            mask.seq_len()
        )));
    }
    let mut out = TriRows::zeros(trace.grid(), trace.seq_len());
    for unit in 0..trace.grid().units() {
        for q in 0..trace.seq_len() {
            let src = trace.rows().unit_row(unit, q);
            let keep = mask.keep(unit, q);
            let dst = out.unit_row_mut(unit, q);
            if keep.len() == src.len() {
                dst.copy_from_slice(src);
                continue;
            }
            for &k in keep {
                dst[k] = src[k];
            }
            if renormalize {
                let kept: f64 = keep.iter().map(|&k| src[k]).sum();
                if kept > 0.0 {
                    for &k in keep {
                        dst[k] /= kept;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Attention mass a keepset captures from one row.
pub fn kept_mass(row: &[f64], keep: &[usize]) -> f64 {
    keep.iter().map(|&k| row[k]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_trace(rows: &[&[f64]]) -> AttentionTrace {
        let grid = HeadGrid::new(1, 1);
        let packed: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        AttentionTrace::new(
            TriRows::from_packed(grid, rows.len(), vec![packed]).unwrap(),
            "hand",
        )
        .unwrap()
    }

    const HAND: [&[f64]; 3] = [&[1.0], &[0.5, 0.5], &[0.2, 0.3, 0.5]];

    #[test]
    fn ideal_selects_per_row() {
        let t = hand_trace(&HAND);
        let m = ideal_mask(&t, 2).unwrap();
        assert_eq!(m.unit(0), &[vec![0], vec![0, 1], vec![1, 2]]);
        let all = ideal_mask(&t, 3).unwrap();
        assert_eq!(all, MaskSequence::full(t.grid(), 3));
    }

    #[test]
    fn ideal_is_not_nested() {
        let t = hand_trace(&[
            &[1.0],
            &[0.6, 0.4],
            &[0.2, 0.5, 0.3],
            &[0.4, 0.1, 0.3, 0.2],
            &[0.1, 0.6, 0.1, 0.1, 0.1],
        ]);
        let m = ideal_mask(&t, 1).unwrap();
        assert_eq!(m.keep(0, 2), &[1]);
        assert_eq!(m.keep(0, 3), &[0]);
        assert_eq!(m.keep(0, 4), &[1]);
    }

    #[test]
    fn policy_masks() {
        let t = hand_trace(&HAND);
        let full = policy_mask(&t, PolicyKind::Full, 1).unwrap();
        assert_eq!(full, MaskSequence::full(t.grid(), 3));
        let local = policy_mask(&t, PolicyKind::Local { window: 2 }, 2).unwrap();
        assert_eq!(local.unit(0), &[vec![0], vec![0, 1], vec![1, 2]]);
        let a2sf = policy_mask(&t, PolicyKind::A2sf { alpha: 0.5 }, 2).unwrap();
        assert_eq!(a2sf.keep(0, 2), &[0, 2]);
    }

    #[test]
    fn replay() {
        let t = hand_trace(&HAND);
        let full = MaskSequence::full(t.grid(), 3);
        assert_eq!(&replay_with_mask(&t, &full, true).unwrap(), t.rows());

        let single = MaskSequence::new(t.grid(), 3, vec![vec![vec![0], vec![1], vec![2]]]).unwrap();
        let r = replay_with_mask(&t, &single, true).unwrap();
        assert_eq!(r.row(0, 0, 2), &[0.0, 0.0, 1.0]);
        let r = replay_with_mask(&t, &single, false).unwrap();
        assert_eq!(r.row(0, 0, 2), &[0.0, 0.0, 0.5]);

        let pair =
            MaskSequence::new(t.grid(), 3, vec![vec![vec![0], vec![0, 1], vec![1, 2]]]).unwrap();
        let r = replay_with_mask(&t, &pair, true).unwrap();
        let row = r.row(0, 0, 2);
        assert_eq!(row[0], 0.0);
        assert!((row[1] - 0.375).abs() < 1e-15 && (row[2] - 0.625).abs() < 1e-15);
    }

    #[test]
    fn shape_checks() {
        let t = hand_trace(&HAND);
        let short = MaskSequence::full(t.grid(), 2);
        assert!(matches!(
            replay_with_mask(&t, &short, true),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(MaskSequence::new(t.grid(), 2, vec![vec![vec![0], vec![2]]]).is_err());
        assert!(MaskSequence::new(t.grid(), 2, vec![vec![vec![0], vec![1, 0]]]).is_err());
    }
}

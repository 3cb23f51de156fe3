//! Lower-triangular per-head score storage.
//!
//! Token positions and query steps are 0-based: step `q` attends to keys
//! `0..=q`, so row `q` has `q + 1` entries. Keys after the query are never
//! stored, which makes the causal mask structural.

use crate::error::{Error, Result};

/// Row-sum tolerance for attention rows.
pub const ROW_SUM_TOL: f64 = 1e-6;

/// Shape of a (layer, head) grid. Heads are addressed by a flat unit index
/// `layer * n_heads + head`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HeadGrid {
    pub n_layers: usize,
    pub n_heads: usize,
}

impl HeadGrid {
    pub fn new(n_layers: usize, n_heads: usize) -> Self {
        Self { n_layers, n_heads }
    }

    pub fn units(&self) -> usize {
        self.n_layers * self.n_heads
    }

    pub fn unit(&self, layer: usize, head: usize) -> usize {
        debug_assert!(layer < self.n_layers && head < self.n_heads);
        layer * self.n_heads + head
    }

    pub fn layer_head(&self, unit: usize) -> (usize, usize) {
        (unit / self.n_heads, unit % self.n_heads)
    }

    /// All `(layer, head)` pairs in unit order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.units()).map(|u| self.layer_head(u))
    }
}

#[inline]
pub fn tri_len(seq_len: usize) -> usize {
    seq_len * (seq_len + 1) / 2
}

#[inline]
fn row_offset(q: usize) -> usize {
    q * (q + 1) / 2
}

/// Packed lower-triangular rows for every head of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TriRows {
    grid: HeadGrid,
    seq_len: usize,
    heads: Vec<Vec<f64>>,
}

impl TriRows {
    pub fn zeros(grid: HeadGrid, seq_len: usize) -> Self {
        Self {
            grid,
            seq_len,
            heads: vec![vec![0.0; tri_len(seq_len)]; grid.units()],
        }
    }

    /// Builds from packed per-unit buffers; each must hold `tri_len(seq_len)` values.
    pub fn from_packed(grid: HeadGrid, seq_len: usize, heads: Vec<Vec<f64>>) -> Result<Self> {
        if heads.len() != grid.units() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} head buffers, got {}",
                grid.units(),
                heads.len()
            )));
        }
        if let Some(bad) = heads.iter().position(|h| h.len() != tri_len(seq_len)) {
            return Err(Error::ShapeMismatch(format!(
                "head buffer {bad} has {} values, expected {}",
                heads[bad].len(),
                tri_len(seq_len)
            )));
        }
        Ok(Self {
            grid,
            seq_len,
            heads,
        })
    }

    pub fn grid(&self) -> HeadGrid {
        self.grid
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn row(&self, layer: usize, head: usize, q: usize) -> &[f64] {
        self.unit_row(self.grid.unit(layer, head), q)
    }

    pub fn row_mut(&mut self, layer: usize, head: usize, q: usize) -> &mut [f64] {
        let unit = self.grid.unit(layer, head);
        self.unit_row_mut(unit, q)
    }

    pub fn unit_row(&self, unit: usize, q: usize) -> &[f64] {
        let off = row_offset(q);
        &self.heads[unit][off..off + q + 1]
    }

    pub fn unit_row_mut(&mut self, unit: usize, q: usize) -> &mut [f64] {
        let off = row_offset(q);
        &mut self.heads[unit][off..off + q + 1]
    }

    /// All rows of one unit flattened in step order.
    pub fn unit_packed(&self, unit: usize) -> &[f64] {
        &self.heads[unit]
    }

    pub fn unit_packed_mut(&mut self, unit: usize) -> &mut [f64] {
        &mut self.heads[unit]
    }

    pub fn same_shape(&self, other: &TriRows) -> bool {
        self.grid == other.grid && self.seq_len == other.seq_len
    }

    /// Column `k` of one unit from step `k` onwards.
    pub fn column(&self, unit: usize, k: usize) -> impl Iterator<Item = f64> + '_ {
        (k..self.seq_len).map(move |q| self.unit_row(unit, q)[k])
    }
}

/// One head's attention row at a single step, over an explicit token set.
///
/// `tokens` is strictly increasing and ends with the querying token.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub tokens: Vec<usize>,
    pub probs: Vec<f64>,
}

impl ScoreRow {
    /// Gathers the entries of a dense row at `tokens`, without renormalizing.
    pub fn gather(dense: &[f64], tokens: &[usize]) -> Self {
        Self {
            tokens: tokens.to_vec(),
            probs: tokens.iter().map(|&t| dense[t]).collect(),
        }
    }

    /// Scatters into a dense row of length `len`, zero elsewhere.
    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        for (&t, &p) in self.tokens.iter().zip(&self.probs) {
            out[t] = p;
        }
        out
    }
}

/// Row-stochastic, causal attention scores for every (layer, head, step).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    rows: TriRows,
    /// Optional per-token text labels. Not persisted by the binary trace container.
    pub token_labels: Option<Vec<String>>,
    /// Generator configuration or import provenance.
    pub provenance: String,
}

impl AttentionTrace {
    /// Wraps rows after checking nonnegativity, finiteness and row sums.
    pub fn new(rows: TriRows, provenance: impl Into<String>) -> Result<Self> {
        validate_rows(&rows)?;
        Ok(Self {
            rows,
            token_labels: None,
            provenance: provenance.into(),
        })
    }

    pub fn grid(&self) -> HeadGrid {
        self.rows.grid()
    }

    pub fn n_layers(&self) -> usize {
        self.rows.grid().n_layers
    }

    pub fn n_heads(&self) -> usize {
        self.rows.grid().n_heads
    }

    pub fn seq_len(&self) -> usize {
        self.rows.seq_len()
    }

    pub fn row(&self, layer: usize, head: usize, q: usize) -> &[f64] {
        self.rows.row(layer, head, q)
    }

    pub fn rows(&self) -> &TriRows {
        &self.rows
    }

    pub fn into_rows(self) -> TriRows {
        self.rows
    }
}

/// Returns the first offending entry as an `InvariantViolation`.
pub fn validate_rows(rows: &TriRows) -> Result<()> {
    let grid = rows.grid();
    for (unit, (layer, head)) in grid.iter().enumerate() {
        for q in 0..rows.seq_len() {
            let row = rows.unit_row(unit, q);
            let mut sum = 0.0;
            for (k, &v) in row.iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvariantViolation {
                        layer,
                        head,
                        q,
                        k,
                        reason: format!("entry {v} is negative or non-finite"),
                    });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvariantViolation {
                    layer,
                    head,
                    q,
                    k: 0,
                    reason: format!("row sums to {sum}"),
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packing_offsets() {
        let grid = HeadGrid::new(1, 2);
        let mut rows = TriRows::zeros(grid, 3);
        rows.row_mut(0, 1, 2).copy_from_slice(&[0.2, 0.3, 0.5]);
        assert_eq!(rows.unit_packed(1), &[0.0, 0.0, 0.0, 0.2, 0.3, 0.5]);
        assert_eq!(rows.row(0, 1, 1).len(), 2);
        assert_eq!(rows.column(1, 1).collect::<Vec<_>>(), vec![0.0, 0.3]);
    }

    #[test]
    fn validation_names_offending_entry() {
        let grid = HeadGrid::new(2, 2);
        let mut rows = TriRows::zeros(grid, 3);
        for u in 0..grid.units() {
            for q in 0..3 {
                let r = rows.unit_row_mut(u, q);
                let n = r.len() as f64;
                r.iter_mut().for_each(|v| *v = 1.0 / n);
            }
        }
        assert!(validate_rows(&rows).is_ok());
        rows.row_mut(1, 0, 2)[1] = -0.1;
        match validate_rows(&rows) {
            Err(Error::InvariantViolation {
                layer, head, q, k, ..
            }) => assert_eq!((layer, head, q, k), (1, 0, 2, 1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_wrong_buffer_sizes() {
        let grid = HeadGrid::new(1, 1);
        assert!(TriRows::from_packed(grid, 2, vec![vec![1.0, 0.5]]).is_err());
        assert!(TriRows::from_packed(grid, 2, vec![]).is_err());
    }
}

//! Token-importance accumulators.
//!
//! A2S sums every attention score a key has received since it appeared.
//! A2SF multiplies the running score by a forgetting factor `alpha` once per
//! generation step before adding the new row, so a score received `d` steps
//! ago carries weight `alpha^d`. Local and Full select positionally and keep
//! zero-valued accumulators only to track the live set.

use std::cmp::Ordering;

use crate::attn_model::trace::{HeadGrid, ScoreRow};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyKind {
    /// Never evicts.
    Full,
    /// Trailing window of recent tokens.
    Local { window: usize },
    /// Plain accumulated attention; evicts with the half-local, half-selective split.
    A2s,
    /// Accumulated attention with forgetting factor, `0 <= alpha < 1`.
    A2sf { alpha: f64 },
}

impl PolicyKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PolicyKind::A2sf { alpha } if !(0.0..1.0).contains(&alpha) => {
                Err(Error::BadAlpha(alpha))
            }
            PolicyKind::Local { window: 0 } => Err(Error::BadWindow),
            _ => Ok(()),
        }
    }

    /// Short name used in reports and on the command line.
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Full => "full",
            PolicyKind::Local { .. } => "local",
            PolicyKind::A2s => "h2o",
            PolicyKind::A2sf { .. } => "a2sf",
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match *self {
            PolicyKind::A2sf { alpha } => Some(alpha),
            _ => None,
        }
    }

    /// `name` or `name:alpha` for A2SF.
    pub fn label(&self) -> String {
        match self.alpha() {
            Some(a) => format!("a2sf:{a}"),
            None => self.name().to_string(),
        }
    }

    #[inline]
    fn fold(&self, acc: f64, score: f64) -> f64 {
        match *self {
            PolicyKind::A2s => acc + score,
            PolicyKind::A2sf { alpha } => alpha * acc + score,
            PolicyKind::Full | PolicyKind::Local { .. } => acc,
        }
    }

    fn seeds_with_self_score(&self) -> bool {
        matches!(self, PolicyKind::A2s | PolicyKind::A2sf { .. })
    }
}

/// Per-(layer, head) accumulators over live tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreState {
    policy: PolicyKind,
    grid: HeadGrid,
    /// `(token, accumulator)` sorted by token.
    heads: Vec<Vec<(usize, f64)>>,
    step: usize,
}

impl ScoreState {
    pub fn new(policy: PolicyKind, n_layers: usize, n_heads: usize) -> Result<Self> {
        policy.validate()?;
        let grid = HeadGrid::new(n_layers, n_heads);
        Ok(Self {
            policy,
            grid,
            heads: vec![Vec::new(); grid.units()],
            step: 0,
        })
    }

    pub fn policy(&self) -> PolicyKind {
        self.policy
    }

    pub fn grid(&self) -> HeadGrid {
        self.grid
    }

    /// Number of rows consumed so far; also the position of the next token.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn accumulators(&self, unit: usize) -> &[(usize, f64)] {
        &self.heads[unit]
    }

    pub fn live_tokens(&self, unit: usize) -> Vec<usize> {
        self.heads[unit].iter().map(|&(t, _)| t).collect()
    }

    pub fn get(&self, unit: usize, token: usize) -> Option<f64> {
        let h = &self.heads[unit];
        h.binary_search_by_key(&token, |&(t, _)| t)
            .ok()
            .map(|i| h[i].1)
    }

    /// Consumes one row per unit for the current step. Each row must cover
    /// exactly the live tokens followed by the new token. On error nothing
    /// is modified.
    pub fn update(&mut self, rows: &[ScoreRow]) -> Result<()> {
        if rows.len() != self.grid.units() {
            return Err(Error::RowShapeMismatch(format!(
                "got {} rows for {} heads",
                rows.len(),
                self.grid.units()
            )));
        }
        for (unit, row) in rows.iter().enumerate() {
            let live = &self.heads[unit];
            let ok = row.tokens.len() == live.len() + 1
                && row.probs.len() == row.tokens.len()
                && row.tokens.last() == Some(&self.step)
                && live.iter().zip(&row.tokens).all(|(&(t, _), &r)| t == r);
            if !ok {
                let (layer, head) = self.grid.layer_head(unit);
                return Err(Error::RowShapeMismatch(format!(
                    "layer {layer} head {head} step {}: row covers {:?}, live set is {:?}",
                    self.step,
                    row.tokens,
                    self.live_tokens(unit)
                )));
            }
        }
        let policy = self.policy;
        for (head, row) in self.heads.iter_mut().zip(rows) {
            for ((_, acc), &s) in head.iter_mut().zip(&row.probs) {
                *acc = policy.fold(*acc, s);
            }
            let own = *row.probs.last().expect("row is nonempty");
            let seed = if policy.seeds_with_self_score() {
                own
            } else {
                0.0
            };
            head.push((self.step, seed));
        }
        self.step += 1;
        Ok(())
    }

    /// Tokens of one head ordered by accumulator, descending; ties go to the
    /// more recent token.
    pub fn rank(&self, layer: usize, head: usize) -> Result<Vec<usize>> {
        let unit = self.grid.unit(layer, head);
        if self.heads[unit].is_empty() {
            return Err(Error::EmptyHead { layer, head });
        }
        Ok(rank_by_score(&self.heads[unit]))
    }

    /// Discards accumulators of evicted tokens. `evicted[unit]` lists tokens to
    /// drop for each unit; unknown tokens fail the whole call.
    pub fn drop_tokens(&mut self, evicted: &[Vec<usize>]) -> Result<()> {
        if evicted.len() != self.grid.units() {
            return Err(Error::ShapeMismatch(format!(
                "got {} eviction sets for {} heads",
                evicted.len(),
                self.grid.units()
            )));
        }
        for (unit, ev) in evicted.iter().enumerate() {
            for &t in ev {
                if self.get(unit, t).is_none() {
                    let (layer, head) = self.grid.layer_head(unit);
                    return Err(Error::UnknownToken {
                        layer,
                        head,
                        token: t,
                    });
                }
            }
        }
        for (head, ev) in self.heads.iter_mut().zip(evicted) {
            if !ev.is_empty() {
                head.retain(|(t, _)| !ev.contains(t));
            }
        }
        Ok(())
    }

    /// Keeps only `keep[unit]` for each unit (sorted ascending).
    pub(crate) fn retain(&mut self, unit: usize, keep: &[usize]) -> Result<()> {
        if let Some(&t) = keep.iter().find(|&&t| self.get(unit, t).is_none()) {
            let (layer, head) = self.grid.layer_head(unit);
            return Err(Error::UnknownToken {
                layer,
                head,
                token: t,
            });
        }
        self.heads[unit].retain(|(t, _)| keep.binary_search(t).is_ok());
        Ok(())
    }
}

/// Descending by score, then descending by token.
pub fn rank_by_score(entries: &[(usize, f64)]) -> Vec<usize> {
    let mut v = entries.to_vec();
    v.sort_by(cmp_importance);
    v.into_iter().map(|(t, _)| t).collect()
}

pub(crate) fn cmp_importance(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(b.0.cmp(&a.0))
}

/// Direct evaluation of the forgetting-factor sum for one head:
/// `A[k] = sum_{q=k}^{n-1} alpha^(n-1-q) * S[q][k]` where `n = rows.len()`
/// and `rows[q]` has `q + 1` entries. `alpha = 1` gives plain column sums.
pub fn batch_a2sf<R: AsRef<[f64]>>(rows: &[R], alpha: f64) -> Vec<f64> {
    let n = rows.len();
    (0..n)
        .map(|k| {
            (k..n)
                .map(|q| alpha.powi((n - 1 - q) as i32) * rows[q].as_ref()[k])
                .sum()
        })
        .collect()
}

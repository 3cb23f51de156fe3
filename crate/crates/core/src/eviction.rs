//! Budget resolution, per-head keepset selection, and permanent eviction.
//!
//! Pruning only kicks in once a head holds more live tokens than the budget.
//! The token produced at the current step is always kept.

use crate::attn_model::cache::KvCache;
use crate::attn_model::trace::{HeadGrid, ScoreRow};
use crate::error::{Error, Result};
use crate::scoring::{rank_by_score, PolicyKind, ScoreState};

/// Slack added before flooring `ratio * len`, so that products such as
/// `0.29 * 100 = 28.999999999999996` resolve to the intended count.
const RATIO_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BudgetConfig {
    /// `floor(cache_ratio * reference_len)`, at least 1.
    Ratio {
        cache_ratio: f64,
        reference_len: usize,
    },
    Absolute(usize),
}

pub fn resolve_budget(cfg: &BudgetConfig) -> Result<usize> {
    match *cfg {
        BudgetConfig::Ratio {
            cache_ratio,
            reference_len,
        } => {
            if !(cache_ratio > 0.0 && cache_ratio <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "cache ratio must lie in (0, 1], got {cache_ratio}"
                )));
            }
            if reference_len == 0 {
                return Err(Error::ZeroBudget);
            }
            let b = (cache_ratio * reference_len as f64 + RATIO_EPS).floor() as usize;
            Ok(b.max(1))
        }
        BudgetConfig::Absolute(0) => Err(Error::ZeroBudget),
        BudgetConfig::Absolute(b) => Ok(b),
    }
}

/// Tokens each unit retains after step `step`, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeepSet {
    pub step: usize,
    pub heads: Vec<Vec<usize>>,
}

fn current_step(state: &ScoreState) -> Result<usize> {
    state
        .step()
        .checked_sub(1)
        .ok_or_else(|| Error::ShapeMismatch("no step has been scored yet".into()))
}

/// Top-`budget` tokens by accumulator, with the current token forced in.
pub fn select_keepset_a2sf(state: &ScoreState, budget: usize) -> Result<KeepSet> {
    let n = current_step(state)?;
    let heads = (0..state.grid().units())
        .map(|unit| {
            let acc = state.accumulators(unit);
            if acc.len() <= budget {
                return acc.iter().map(|&(t, _)| t).collect();
            }
            let mut keep: Vec<usize> = rank_by_score(acc).into_iter().take(budget).collect();
            if !keep.contains(&n) {
                *keep.last_mut().expect("budget >= 1") = n;
            }
            keep.sort_unstable();
            keep
        })
        .collect();
    Ok(KeepSet { step: n, heads })
}

/// Trailing window ending at `n`, identical for every unit.
pub fn select_keepset_local(grid: HeadGrid, n: usize, window: usize) -> Result<KeepSet> {
    if window == 0 {
        return Err(Error::BadWindow);
    }
    let start = (n + 1).saturating_sub(window);
    let keep: Vec<usize> = (start..=n).collect();
    Ok(KeepSet {
        step: n,
        heads: vec![keep; grid.units()],
    })
}

/// `floor(budget/2)` most recent live tokens plus the best remaining tokens by
/// accumulated score. The odd slot goes to the selective half.
pub fn select_keepset_h2o(state: &ScoreState, budget: usize) -> Result<KeepSet> {
    if budget < 2 {
        return Err(Error::BudgetTooSmallForHybrid(budget));
    }
    let n = current_step(state)?;
    let local = budget / 2;
    let selective = budget - local;
    let heads = (0..state.grid().units())
        .map(|unit| {
            let acc = state.accumulators(unit);
            if acc.len() <= budget {
                return acc.iter().map(|&(t, _)| t).collect();
            }
            let split = acc.len() - local;
            let mut keep: Vec<usize> = rank_by_score(&acc[..split])
                .into_iter()
                .take(selective)
                .collect();
            keep.extend(acc[split..].iter().map(|&(t, _)| t));
            keep.sort_unstable();
            keep
        })
        .collect();
    Ok(KeepSet { step: n, heads })
}

/// Dispatches on the state's policy. Local keeps its own window regardless of
/// `budget`; Full keeps every live token.
pub fn select_keepset(state: &ScoreState, budget: usize) -> Result<KeepSet> {
    match state.policy() {
        PolicyKind::Full => {
            let n = current_step(state)?;
            Ok(KeepSet {
                step: n,
                heads: (0..state.grid().units())
                    .map(|u| state.live_tokens(u))
                    .collect(),
            })
        }
        PolicyKind::Local { window } => {
            select_keepset_local(state.grid(), current_step(state)?, window)
        }
        PolicyKind::A2s => select_keepset_h2o(state, budget),
        PolicyKind::A2sf { .. } => select_keepset_a2sf(state, budget),
    }
}

/// Removes every token outside `keep` from the cache (if any) and the score
/// state. Returns the evicted tokens per unit. Nothing changes on error.
pub fn evict(
    mut cache: Option<&mut KvCache>,
    state: &mut ScoreState,
    keep: &KeepSet,
) -> Result<Vec<Vec<usize>>> {
    let grid = state.grid();
    if keep.heads.len() != grid.units() {
        return Err(Error::ShapeMismatch(format!(
            "keepset has {} heads, state has {}",
            keep.heads.len(),
            grid.units()
        )));
    }
    for (unit, k) in keep.heads.iter().enumerate() {
        let unknown = k.iter().find(|&&t| state.get(unit, t).is_none()).copied();
        let unknown = unknown.or_else(|| {
            let c = cache.as_deref()?;
            let live = c.tokens(unit);
            k.iter().find(|t| live.binary_search(t).is_err()).copied()
        });
        if let Some(token) = unknown {
            let (layer, head) = grid.layer_head(unit);
            return Err(Error::UnknownToken { layer, head, token });
        }
    }
    let mut evicted = Vec::with_capacity(grid.units());
    for (unit, k) in keep.heads.iter().enumerate() {
        let gone: Vec<usize> = state
            .live_tokens(unit)
            .into_iter()
            .filter(|t| k.binary_search(t).is_err())
            .collect();
        state.retain(unit, k)?;
        if let Some(c) = cache.as_deref_mut() {
            c.retain(unit, k)?;
        }
        evicted.push(gone);
    }
    Ok(evicted)
}

/// Score, select and evict, one step at a time.
#[derive(Debug, Clone)]
pub struct EvictionEngine {
    state: ScoreState,
    budget: usize,
}

impl EvictionEngine {
    pub fn new(policy: PolicyKind, grid: HeadGrid, budget: usize) -> Result<Self> {
        if budget == 0 {
            return Err(Error::ZeroBudget);
        }
        if matches!(policy, PolicyKind::A2s) && budget < 2 {
            return Err(Error::BudgetTooSmallForHybrid(budget));
        }
        Ok(Self {
            state: ScoreState::new(policy, grid.n_layers, grid.n_heads)?,
            budget,
        })
    }

    pub fn state(&self) -> &ScoreState {
        &self.state
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    /// Live tokens per unit, i.e. what the next step's rows must cover (minus
    /// the new token).
    pub fn live_tokens(&self, unit: usize) -> Vec<usize> {
        self.state.live_tokens(unit)
    }

    /// Consumes the step's rows, then evicts down to the keepset it returns.
    pub fn step(&mut self, rows: &[ScoreRow], cache: Option<&mut KvCache>) -> Result<KeepSet> {
        self.state.update(rows)?;
        let keep = select_keepset(&self.state, self.budget)?;
        evict(cache, &mut self.state, &keep)?;
        Ok(keep)
    }
}

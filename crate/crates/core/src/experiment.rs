//! Replay and live evaluation of a policy against the ideal mask.
//!
//! Replay mode prunes recorded rows (zero, optionally renormalize). Live mode
//! decodes through the toy decoder with true eviction, so later queries and
//! keys differ from the full run; the two are reported separately.

use crate::attn_model::decoder::ToyDecoder;
use crate::attn_model::trace::{AttentionTrace, TriRows};
use crate::error::Result;
use crate::eviction::EvictionEngine;
use crate::metrics::{
    cosine_similarity, mask_overlap, output_drift, EvalMode, PerHead, SimilarityReport,
};
use crate::oracle::{ideal_mask, policy_mask, replay_with_mask, MaskSequence};
use crate::scoring::PolicyKind;

/// Record of one live decode.
#[derive(Debug, Clone)]
pub struct LiveRun {
    /// Attention rows as computed, with evicted keys at 0.
    pub rows: TriRows,
    /// Keepset after each step's eviction.
    pub masks: MaskSequence,
    /// Final hidden state per step.
    pub hidden: Vec<Vec<f64>>,
    /// Cache length per unit after each step's eviction.
    pub cache_lens: Vec<Vec<usize>>,
}

impl LiveRun {
    /// The recorded rows as a validated trace.
    pub fn trace(&self, provenance: impl Into<String>) -> Result<AttentionTrace> {
        AttentionTrace::new(self.rows.clone(), provenance)
    }
}

/// Decodes `tokens`, scoring and evicting after every step.
pub fn run_live(
    decoder: &ToyDecoder,
    tokens: &[usize],
    policy: PolicyKind,
    budget: usize,
) -> Result<LiveRun> {
    let grid = decoder.config().grid();
    let len = tokens.len();
    let mut cache = decoder.new_cache(budget);
    let mut engine = EvictionEngine::new(policy, grid, budget)?;
    let mut rows = TriRows::zeros(grid, len);
    let mut masks = vec![Vec::with_capacity(len); grid.units()];
    let mut hidden = Vec::with_capacity(len);
    let mut cache_lens = Vec::with_capacity(len);
    for (q, &tok) in tokens.iter().enumerate() {
        let out = decoder.step(&mut cache, tok)?;
        for (unit, r) in out.rows.iter().enumerate() {
            let dst = rows.unit_row_mut(unit, q);
            for (&t, &p) in r.tokens.iter().zip(&r.probs) {
                dst[t] = p;
            }
        }
        let keep = engine.step(&out.rows, Some(&mut cache))?;
        for (m, k) in masks.iter_mut().zip(keep.heads) {
            m.push(k);
        }
        cache_lens.push((0..grid.units()).map(|u| cache.len(u)).collect());
        hidden.push(out.hidden);
    }
    Ok(LiveRun {
        rows,
        masks: MaskSequence::new(grid, len, masks)?,
        hidden,
        cache_lens,
    })
}

/// Decodes without eviction.
pub fn run_full(decoder: &ToyDecoder, tokens: &[usize]) -> Result<LiveRun> {
    run_live(decoder, tokens, PolicyKind::Full, tokens.len().max(1))
}

/// Ideal-masked reference rows for a trace.
pub fn ideal_reference(
    trace: &AttentionTrace,
    budget: usize,
    renormalize: bool,
) -> Result<(MaskSequence, TriRows)> {
    let mask = ideal_mask(trace, budget)?;
    let rows = replay_with_mask(trace, &mask, renormalize)?;
    Ok((mask, rows))
}

/// Budget a policy is actually evaluated at: Full never evicts, so its
/// reference is the unpruned trace.
pub fn effective_budget(policy: PolicyKind, budget: usize, seq_len: usize) -> usize {
    match policy {
        PolicyKind::Full => seq_len.max(1),
        _ => budget,
    }
}

/// A report together with the masks it was computed from.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: SimilarityReport,
    pub mask: MaskSequence,
    pub ideal: MaskSequence,
}

/// Scores one policy on recorded rows.
pub fn evaluate_replay(
    trace: &AttentionTrace,
    policy: PolicyKind,
    budget: usize,
    renormalize: bool,
    seed: u64,
) -> Result<SimilarityReport> {
    Ok(evaluate_replay_masks(trace, policy, budget, renormalize, seed)?.report)
}

/// As [`evaluate_replay`], keeping the policy and ideal masks.
pub fn evaluate_replay_masks(
    trace: &AttentionTrace,
    policy: PolicyKind,
    budget: usize,
    renormalize: bool,
    seed: u64,
) -> Result<Evaluation> {
    let budget = effective_budget(policy, budget, trace.seq_len());
    let (ideal, ideal_rows) = ideal_reference(trace, budget, renormalize)?;
    let mask = policy_mask(trace, policy, budget)?;
    let report = score_mask(
        trace,
        &mask,
        &ideal,
        &ideal_rows,
        policy,
        budget,
        renormalize,
        seed,
    )?;
    Ok(Evaluation {
        report,
        mask,
        ideal,
    })
}

/// As [`evaluate_replay`], reusing a precomputed ideal reference for `budget`.
pub fn evaluate_replay_against(
    trace: &AttentionTrace,
    ideal: &MaskSequence,
    ideal_rows: &TriRows,
    policy: PolicyKind,
    budget: usize,
    renormalize: bool,
    seed: u64,
) -> Result<SimilarityReport> {
    let mask = policy_mask(trace, policy, budget)?;
    score_mask(
        trace,
        &mask,
        ideal,
        ideal_rows,
        policy,
        budget,
        renormalize,
        seed,
    )
}

#[allow(clippy::too_many_arguments)]
fn score_mask(
    trace: &AttentionTrace,
    mask: &MaskSequence,
    ideal: &MaskSequence,
    ideal_rows: &TriRows,
    policy: PolicyKind,
    budget: usize,
    renormalize: bool,
    seed: u64,
) -> Result<SimilarityReport> {
    let pruned = replay_with_mask(trace, mask, renormalize)?;
    let cos = cosine_similarity(&pruned, ideal_rows)?;
    let overlap = mask_overlap(mask, ideal)?;
    Ok(SimilarityReport::assemble(
        policy,
        budget,
        seed,
        EvalMode::Replay,
        trace.grid(),
        &cos,
        &overlap,
        None,
    ))
}

/// Unpruned decode of a token stream, shared by live evaluations.
pub struct LiveBaseline<'a> {
    pub decoder: &'a ToyDecoder,
    pub tokens: &'a [usize],
    pub full: LiveRun,
    pub trace: AttentionTrace,
}

impl<'a> LiveBaseline<'a> {
    pub fn new(decoder: &'a ToyDecoder, tokens: &'a [usize]) -> Result<Self> {
        let full = run_full(decoder, tokens)?;
        let trace = full.trace("live full run")?;
        Ok(Self {
            decoder,
            tokens,
            full,
            trace,
        })
    }

    /// Decodes with eviction and compares against the full run and the ideal
    /// mask over the full run's rows.
    pub fn evaluate(
        &self,
        policy: PolicyKind,
        budget: usize,
        renormalize: bool,
        seed: u64,
    ) -> Result<SimilarityReport> {
        Ok(self
            .evaluate_masks(policy, budget, renormalize, seed)?
            .report)
    }

    pub fn evaluate_masks(
        &self,
        policy: PolicyKind,
        budget: usize,
        renormalize: bool,
        seed: u64,
    ) -> Result<Evaluation> {
        let budget = effective_budget(policy, budget, self.tokens.len());
        let (ideal, ideal_rows) = ideal_reference(&self.trace, budget, renormalize)?;
        let pruned = run_live(self.decoder, self.tokens, policy, budget)?;
        let cos: PerHead = cosine_similarity(&pruned.rows, &ideal_rows)?;
        let overlap = mask_overlap(&pruned.masks, &ideal)?;
        let drift = output_drift(&self.full.hidden, &pruned.hidden)?;
        let report = SimilarityReport::assemble(
            policy,
            budget,
            seed,
            EvalMode::Live,
            self.decoder.config().grid(),
            &cos,
            &overlap,
            Some(drift),
        );
        Ok(Evaluation {
            report,
            mask: pruned.masks,
            ideal,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attn_model::decoder::{workload_tokens, DecoderConfig};

    fn decoder() -> ToyDecoder {
        ToyDecoder::new(DecoderConfig {
            n_layers: 2,
            n_heads: 2,
            d_head: 8,
            vocab_size: 32,
            seed: 4,
        })
        .unwrap()
    }

    #[test]
    fn full_live_run_round_trips_through_replay() {
        let dec = decoder();
        let toks = workload_tokens(4, 24, 32);
        let full = run_full(&dec, &toks).unwrap();
        let trace = full.trace("t").unwrap();
        let replayed =
            replay_with_mask(&trace, &MaskSequence::full(trace.grid(), 24), true).unwrap();
        assert_eq!(replayed, full.rows);
        let again = run_full(&dec, &toks).unwrap();
        assert_eq!(again.rows, full.rows);
        assert_eq!(again.hidden, full.hidden);
    }

    #[test]
    fn live_cache_respects_budget() {
        let dec = decoder();
        let toks = workload_tokens(5, 30, 32);
        for policy in [
            PolicyKind::A2sf { alpha: 0.2 },
            PolicyKind::A2s,
            PolicyKind::Local { window: 6 },
        ] {
            let run = run_live(&dec, &toks, policy, 6).unwrap();
            for (n, lens) in run.cache_lens.iter().enumerate() {
                assert!(lens.iter().all(|&l| l == (n + 1).min(6)));
            }
            let trace = run.trace("pruned").unwrap();
            assert_eq!(trace.seq_len(), 30);
        }
    }

    #[test]
    fn full_policy_has_zero_drift_and_unit_cosine() {
        let dec = decoder();
        let toks = workload_tokens(6, 20, 32);
        let base = LiveBaseline::new(&dec, &toks).unwrap();
        let r = base.evaluate(PolicyKind::Full, 5, true, 6).unwrap();
        assert_eq!(r.budget, 20);
        assert_eq!(r.output_drift, Some(0.0));
        assert!((r.mean_cosine - 1.0).abs() < 1e-12);
        assert_eq!(r.mean_overlap, 1.0);
    }

    #[test]
    fn replay_full_is_identity() {
        let dec = decoder();
        let toks = workload_tokens(7, 16, 32);
        let trace = run_full(&dec, &toks).unwrap().trace("t").unwrap();
        let r = evaluate_replay(&trace, PolicyKind::Full, 4, true, 0).unwrap();
        assert_eq!(r.budget, 16);
        assert!((r.mean_cosine - 1.0).abs() < 1e-12);
        assert_eq!(r.mean_overlap, 1.0);
    }
}

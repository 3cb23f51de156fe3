//! KV-cache eviction policies for transformer decoders.
//!
//! Tokens are scored by accumulated attention (A2S), accumulated attention
//! with a forgetting factor (A2SF), or position (local window), and evicted
//! per (layer, head) under a fixed budget. Policies are evaluated against a
//! per-row ideal mask, either by replaying recorded attention traces or by
//! decoding live through a small seeded decoder with a real KV cache.
//!
//! All token positions and steps are 0-based.

pub mod attn_model;
pub mod error;
pub mod eviction;
pub mod experiment;
pub mod metrics;
pub mod oracle;
pub mod scoring;
pub mod trace_io;

pub use attn_model::{
    generate_synthetic_trace, softmax_masked_row, workload_tokens, AttentionTrace, DecoderConfig,
    HeadGrid, KvCache, ScoreRow, ToyDecoder, TraceGenConfig, TriRows,
};
pub use error::{Error, Result};
pub use eviction::{
    evict, resolve_budget, select_keepset, select_keepset_a2sf, select_keepset_h2o,
    select_keepset_local, BudgetConfig, EvictionEngine, KeepSet,
};
pub use experiment::{
    evaluate_replay, evaluate_replay_masks, run_full, run_live, Evaluation, LiveBaseline, LiveRun,
};
pub use metrics::{
    cosine_similarity, mask_overlap, output_drift, score_trajectory, EvalMode, SimilarityReport,
};
pub use oracle::{ideal_mask, policy_mask, replay_with_mask, MaskSequence};
pub use scoring::{batch_a2sf, rank_by_score, PolicyKind, ScoreState};

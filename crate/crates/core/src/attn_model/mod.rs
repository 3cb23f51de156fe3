//! Ground-truth attention: a seeded toy decoder with a real evictable KV
//! cache, and a structured synthetic trace generator.

pub mod cache;
pub mod decoder;
pub mod softmax;
pub mod trace;
pub mod tracegen;

pub use cache::{CacheEntry, KvCache};
pub use decoder::{workload_tokens, DecoderConfig, StepOutput, ToyDecoder};
pub use softmax::{softmax_masked_row, softmax_row};
pub use trace::{tri_len, validate_rows, AttentionTrace, HeadGrid, ScoreRow, TriRows, ROW_SUM_TOL};
pub use tracegen::{generate_synthetic_trace, TraceGenConfig};

//! Attention-only toy decoder whose KV cache is physically evicted.
//!
//! Each layer runs every head on the same input hidden state, concatenates
//! the head outputs and adds them to the residual stream. There is no FFN,
//! layernorm or output projection, so `d_model = n_heads * d_head`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attn_model::cache::{CacheEntry, KvCache};
use crate::attn_model::softmax::softmax_row;
use crate::attn_model::trace::{HeadGrid, ScoreRow};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.n_heads == 0 || self.d_head == 0 || self.vocab_size == 0 {
            return Err(Error::InvalidConfig(format!(
                "decoder dims must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn d_model(&self) -> usize {
        self.n_heads * self.d_head
    }

    pub fn grid(&self) -> HeadGrid {
        HeadGrid::new(self.n_layers, self.n_heads)
    }
}

/// Row-major `d_model x d_head` projection.
#[derive(Debug, Clone, PartialEq)]
struct Projection {
    w: Vec<f64>,
    d_out: usize,
}

impl Projection {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d_out];
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.w[i * self.d_out..(i + 1) * self.d_out];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
struct HeadWeights {
    q: Projection,
    k: Projection,
    v: Projection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDecoder {
    cfg: DecoderConfig,
    embed: Vec<Vec<f64>>,
    heads: Vec<HeadWeights>,
}

/// Result of one decode step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// Attention row per unit (`layer * n_heads + head`) over the tokens
    /// present in the cache, including the new one.
    pub rows: Vec<ScoreRow>,
    /// Final-layer hidden state of the new token.
    pub hidden: Vec<f64>,
}

impl ToyDecoder {
    /// Draws all weights from a ChaCha8 stream seeded by `cfg.seed`.
    ///
    /// Projections are uniform in `±1/sqrt(d_head)`. Embeddings are uniform in
    /// `±sqrt(3)` (unit variance) so attention logits carry visible structure.
    pub fn new(cfg: DecoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d_model = cfg.d_model();
        let emb_bound = 3f64.sqrt();
        let embed = (0..cfg.vocab_size)
            .map(|_| {
                (0..d_model)
                    .map(|_| rng.random_range(-emb_bound..emb_bound))
                    .collect()
            })
            .collect();
        let bound = 1.0 / (cfg.d_head as f64).sqrt();
        let proj = |rng: &mut ChaCha8Rng| Projection {
            w: (0..d_model * cfg.d_head)
                .map(|_| rng.random_range(-bound..bound))
                .collect(),
            d_out: cfg.d_head,
        };
        let heads = (0..cfg.grid().units())
            .map(|_| HeadWeights {
                q: proj(&mut rng),
                k: proj(&mut rng),
                v: proj(&mut rng),
            })
            .collect();
        Ok(Self { cfg, embed, heads })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    /// Fresh cache shaped for this decoder.
    pub fn new_cache(&self, capacity: usize) -> KvCache {
        KvCache::new(self.cfg.grid(), capacity)
    }

    /// Embedding of `token`, length `d_model`.
    pub fn embedding(&self, token: usize) -> &[f64] {
        &self.embed[token]
    }

    /// Query, key and value projections of one unit, each row-major
    /// `d_model x d_head`.
    pub fn head_weights(&self, unit: usize) -> [&[f64]; 3] {
        let h = &self.heads[unit];
        [&h.q.w, &h.k.w, &h.v.w]
    }

    pub fn all_weights_finite(&self) -> bool {
        self.embed.iter().flatten().all(|v| v.is_finite())
            && self
                .heads
                .iter()
                .flat_map(|h| h.q.w.iter().chain(&h.k.w).chain(&h.v.w))
                .all(|v| v.is_finite())
    }

    /// Runs one token through every layer, appending its key/value to each
    /// head of `cache` and attending over whatever the cache holds.
    ///
    /// The cache contents are the keepsets: evicted tokens are simply absent.
    pub fn step(&self, cache: &mut KvCache, token_id: usize) -> Result<StepOutput> {
        if token_id >= self.cfg.vocab_size {
            return Err(Error::BadToken {
                token: token_id,
                vocab: self.cfg.vocab_size,
            });
        }
        if cache.grid() != self.cfg.grid() {
            return Err(Error::ShapeMismatch(format!(
                "cache grid {:?} does not match decoder grid {:?}",
                cache.grid(),
                self.cfg.grid()
            )));
        }
        let pos = cache.next_token();
        let d = self.cfg.d_head;
        let scale = 1.0 / (d as f64).sqrt();
        let mut hidden = self.embed[token_id].clone();
        let mut rows = Vec::with_capacity(self.cfg.grid().units());

        for layer in 0..self.cfg.n_layers {
            let mut attn_out = vec![0.0; self.cfg.d_model()];
            for head in 0..self.cfg.n_heads {
                let unit = layer * self.cfg.n_heads + head;
                let w = &self.heads[unit];
                let q = w.q.apply(&hidden);
                cache.push(
                    unit,
                    CacheEntry {
                        token: pos,
                        key: w.k.apply(&hidden),
                        value: w.v.apply(&hidden),
                    },
                );
                let entries = cache.entries(unit);
                let logits: Vec<f64> = entries.iter().map(|e| dot(&q, &e.key) * scale).collect();
                let probs = softmax_row(&logits)?;
                let out = &mut attn_out[head * d..(head + 1) * d];
                for (e, &p) in entries.iter().zip(&probs) {
                    for (o, &v) in out.iter_mut().zip(&e.value) {
                        *o += p * v;
                    }
                }
                rows.push(ScoreRow {
                    tokens: entries.iter().map(|e| e.token).collect(),
                    probs,
                });
            }
            for (h, a) in hidden.iter_mut().zip(&attn_out) {
                *h += a;
            }
        }
        cache.advance();
        Ok(StepOutput { rows, hidden })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Seeded token stream for live experiments. Position 0 is always token 0 (a BOS
/// stand-in); the rest are drawn uniformly from the vocabulary.
pub fn workload_tokens(seed: u64, len: usize, vocab_size: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    (0..len)
        .map(|i| {
            if i == 0 {
                0
            } else {
                rng.random_range(0..vocab_size)
            }
        })
        .collect()
}

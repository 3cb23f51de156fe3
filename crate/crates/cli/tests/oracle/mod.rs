//! Brute-force reference implementations used to derive and re-check the
//! acceptance fixtures. Deliberately written without the library's scoring,
//! eviction, oracle or metrics code: plain vectors, full sorts, recomputed
//! keys.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeMap;

use a2sf_core::{AttentionTrace, ToyDecoder};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sim {
    Local,
    H2o,
    A2sf(f64),
}

/// One head's live set and accumulators under a policy.
pub struct PolicySim {
    kind: Sim,
    budget: usize,
    acc: BTreeMap<usize, f64>,
}

/// Sorts by (score descending, index descending) and returns the indices.
fn by_rank(items: &[(usize, f64)]) -> Vec<usize> {
    let mut v = items.to_vec();
    v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(b.0.cmp(&a.0)));
    v.into_iter().map(|(k, _)| k).collect()
}

impl PolicySim {
    pub fn new(kind: Sim, budget: usize) -> Self {
        Self {
            kind,
            budget,
            acc: BTreeMap::new(),
        }
    }

    pub fn live(&self) -> Vec<usize> {
        self.acc.keys().copied().collect()
    }

    /// Feeds step `n`'s attention (`row(k)` for live `k` and for `n`) and
    /// returns the sorted keepset after eviction.
    pub fn step(&mut self, n: usize, row: impl Fn(usize) -> f64) -> Vec<usize> {
        for (&k, a) in self.acc.iter_mut() {
            *a = match self.kind {
                Sim::A2sf(alpha) => alpha * *a + row(k),
                _ => *a + row(k),
            };
        }
        self.acc.insert(n, row(n));
        let live = self.live();
        let b = self.budget;
        let mut keep: Vec<usize> = if live.len() <= b {
            live
        } else {
            match self.kind {
                Sim::Local => live.iter().copied().filter(|&k| k + b > n).collect(),
                Sim::A2sf(_) => {
                    let scored: Vec<(usize, f64)> =
                        self.acc.iter().map(|(&k, &a)| (k, a)).collect();
                    let mut top: Vec<usize> = by_rank(&scored).into_iter().take(b).collect();
                    if !top.contains(&n) {
                        *top.last_mut().unwrap() = n;
                    }
                    top
                }
                Sim::H2o => {
                    let l = b / 2;
                    let recent: Vec<usize> = live[live.len() - l..].to_vec();
                    let rest: Vec<(usize, f64)> = self
                        .acc
                        .iter()
                        .filter(|(k, _)| !recent.contains(k))
                        .map(|(&k, &a)| (k, a))
                        .collect();
                    let mut keep = recent;
                    keep.extend(by_rank(&rest).into_iter().take(b - l));
                    keep
                }
            }
        };
        keep.sort_unstable();
        self.acc.retain(|k, _| keep.binary_search(k).is_ok());
        keep
    }
}

/// Per-row top-`budget` keepsets of one head, without eviction.
pub fn ideal_keepsets(
    row: impl Fn(usize) -> Vec<f64>,
    len: usize,
    budget: usize,
) -> Vec<Vec<usize>> {
    (0..len)
        .map(|q| {
            let r = row(q);
            let items: Vec<(usize, f64)> = r.iter().copied().enumerate().collect();
            let mut keep: Vec<usize> = by_rank(&items).into_iter().take(budget).collect();
            keep.sort_unstable();
            keep
        })
        .collect()
}

fn masked(row: &[f64], keep: &[usize]) -> Vec<f64> {
    let mass: f64 = keep.iter().map(|&k| row[k]).sum();
    let mut out = vec![0.0; row.len()];
    for &k in keep {
        out[k] = if mass > 0.0 { row[k] / mass } else { 0.0 };
    }
    out
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Head-averaged cosine between renormalized policy-masked rows and
/// renormalized ideal-masked rows, replaying raw trace rows.
pub fn replay_cosine(trace: &AttentionTrace, kind: Sim, budget: usize) -> f64 {
    let n = trace.seq_len();
    let mut total = 0.0;
    let mut units = 0;
    for l in 0..trace.n_layers() {
        for h in 0..trace.n_heads() {
            let ideal = ideal_keepsets(|q| trace.row(l, h, q).to_vec(), n, budget);
            let mut sim = PolicySim::new(kind, budget);
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for q in 0..n {
                let row = trace.row(l, h, q);
                let keep = sim.step(q, |k| row[k]);
                a.extend(masked(row, &keep));
                b.extend(masked(row, &ideal[q]));
            }
            total += cosine(&a, &b);
            units += 1;
        }
    }
    total / units as f64
}

fn project(x: &[f64], w: &[f64], d_out: usize) -> Vec<f64> {
    (0..d_out)
        .map(|o| {
            let mut s = 0.0;
            for (i, xi) in x.iter().enumerate() {
                s += xi * w[i * d_out + o];
            }
            s
        })
        .collect()
}

/// Output of [`live_decode`].
pub struct LiveOracle {
    /// Final hidden state per step.
    pub hidden: Vec<Vec<f64>>,
    /// Keepset per (unit, step) after eviction.
    pub keep: Vec<Vec<Vec<usize>>>,
}

/// Decodes `tokens` recomputing every key and value from stored layer
/// inputs, attending only over the previous keepset plus the new token.
/// `policy = None` never evicts.
pub fn live_decode(dec: &ToyDecoder, tokens: &[usize], policy: Option<(Sim, usize)>) -> LiveOracle {
    let cfg = *dec.config();
    let (d, nh) = (cfg.d_head, cfg.n_heads);
    let units = cfg.n_layers * nh;
    // inputs[layer][t]: hidden state entering `layer` at position t
    let mut inputs: Vec<Vec<Vec<f64>>> = vec![Vec::new(); cfg.n_layers];
    let mut sims: Vec<Option<PolicySim>> = (0..units)
        .map(|_| policy.map(|(k, b)| PolicySim::new(k, b)))
        .collect();
    let mut prev_keep: Vec<Vec<usize>> = vec![Vec::new(); units];
    let mut out = LiveOracle {
        hidden: Vec::new(),
        keep: vec![Vec::new(); units],
    };
    for (t, &tok) in tokens.iter().enumerate() {
        let mut x = dec.embedding(tok).to_vec();
        for layer in 0..cfg.n_layers {
            inputs[layer].push(x.clone());
            let mut delta = vec![0.0; x.len()];
            for head in 0..nh {
                let unit = layer * nh + head;
                let [wq, wk, wv] = dec.head_weights(unit);
                let q = project(&x, wq, d);
                let mut attend = prev_keep[unit].clone();
                attend.push(t);
                let logits: Vec<f64> = attend
                    .iter()
                    .map(|&j| {
                        let k = project(&inputs[layer][j], wk, d);
                        q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt()
                    })
                    .collect();
                let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let z: f64 = e.iter().sum();
                let probs: Vec<f64> = e.iter().map(|v| v / z).collect();
                for (&j, &p) in attend.iter().zip(&probs) {
                    let v = project(&inputs[layer][j], wv, d);
                    for (o, vi) in delta[head * d..(head + 1) * d].iter_mut().zip(&v) {
                        *o += p * vi;
                    }
                }
                let row: BTreeMap<usize, f64> = attend.iter().copied().zip(probs).collect();
                let keep = match &mut sims[unit] {
                    Some(sim) => sim.step(t, |k| row[&k]),
                    None => attend,
                };
                out.keep[unit].push(keep.clone());
                prev_keep[unit] = keep;
            }
            for (xi, di) in x.iter_mut().zip(&delta) {
                *xi += di;
            }
        }
        out.hidden.push(x);
    }
    out
}

/// Mean per-step distance over mean full-run norm.
pub fn drift(full: &[Vec<f64>], pruned: &[Vec<f64>]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let dist: f64 = full
        .iter()
        .zip(pruned)
        .map(|(a, b)| {
            let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            norm(&d)
        })
        .sum();
    let base: f64 = full.iter().map(|a| norm(a)).sum();
    dist / base
}

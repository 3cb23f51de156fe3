//! Mask quality and output drift.
//!
//! Cosine similarity is computed per (layer, head) over the flattened
//! lower-triangular rows, then averaged across heads.

use crate::attn_model::trace::{AttentionTrace, HeadGrid, ScoreRow, TriRows};
use crate::error::{Error, Result};
use crate::oracle::MaskSequence;
use crate::scoring::{PolicyKind, ScoreState};

#[derive(Debug, Clone, PartialEq)]
pub struct PerHead {
    pub per_unit: Vec<f64>,
    pub mean: f64,
}

impl PerHead {
    fn from_units(per_unit: Vec<f64>) -> Self {
        let mean = per_unit.iter().sum::<f64>() / per_unit.len() as f64;
        Self { per_unit, mean }
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    // sqrt(x * x) == |x| exactly, so identical inputs give exactly 1
    let prod = na * nb;
    let denom = if prod.is_normal() {
        prod.sqrt()
    } else {
        na.sqrt() * nb.sqrt()
    };
    Some((dot / denom).clamp(-1.0, 1.0))
}

pub fn cosine_similarity(a: &TriRows, b: &TriRows) -> Result<PerHead> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{:?} x {} vs {:?} x {}",
            a.grid(),
            a.seq_len(),
            b.grid(),
            b.seq_len()
        )));
    }
    let grid = a.grid();
    let per_unit = (0..grid.units())
        .map(|u| {
            cosine(a.unit_packed(u), b.unit_packed(u)).ok_or_else(|| {
                let (layer, head) = grid.layer_head(u);
                Error::ZeroVector(format!("layer {layer} head {head}"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PerHead::from_units(per_unit))
}

/// Mean over steps of `|keep1 ∩ keep2| / |keep1|`, per unit and overall.
pub fn mask_overlap(m1: &MaskSequence, m2: &MaskSequence) -> Result<PerHead> {
    if !m1.same_shape(m2) {
        return Err(Error::ShapeMismatch(
            "mask sequences differ in shape".into(),
        ));
    }
    let per_unit = (0..m1.grid().units())
        .map(|u| {
            let total: f64 = (0..m1.seq_len())
                .map(|q| {
                    let (a, b) = (m1.keep(u, q), m2.keep(u, q));
                    let common = a.iter().filter(|t| b.binary_search(t).is_ok()).count();
                    common as f64 / a.len() as f64
                })
                .sum();
            total / m1.seq_len() as f64
        })
        .collect();
    Ok(PerHead::from_units(per_unit))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub step: usize,
    /// Attention the token received at this step.
    pub raw: f64,
    /// Policy accumulator after consuming this step.
    pub acc: f64,
}

/// Raw score and accumulator of one token at every step from its appearance
/// on, without eviction.
pub fn score_trajectory(
    trace: &AttentionTrace,
    layer: usize,
    head: usize,
    token: usize,
    policy: PolicyKind,
) -> Result<Vec<TrajectoryPoint>> {
    if layer >= trace.n_layers() || head >= trace.n_heads() {
        return Err(Error::ShapeMismatch(format!(
            "no layer {layer} head {head} in trace"
        )));
    }
    if token >= trace.seq_len() {
        return Err(Error::UnknownToken { layer, head, token });
    }
    let mut state = ScoreState::new(policy, 1, 1)?;
    let mut out = Vec::with_capacity(trace.seq_len() - token);
    for q in 0..trace.seq_len() {
        let row = trace.row(layer, head, q);
        state.update(&[ScoreRow {
            tokens: (0..=q).collect(),
            probs: row.to_vec(),
        }])?;
        if q >= token {
            out.push(TrajectoryPoint {
                step: q,
                raw: row[token],
                acc: state.get(0, token).expect("no eviction"),
            });
        }
    }
    Ok(out)
}

/// Mean per-step Euclidean distance between hidden outputs, divided by the
/// full run's mean hidden norm.
pub fn output_drift(full: &[Vec<f64>], pruned: &[Vec<f64>]) -> Result<f64> {
    if full.len() != pruned.len() || full.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "runs have {} and {} steps",
            full.len(),
            pruned.len()
        )));
    }
    let mut dist = 0.0;
    let mut norm = 0.0;
    for (f, p) in full.iter().zip(pruned) {
        if f.len() != p.len() {
            return Err(Error::ShapeMismatch("hidden widths differ".into()));
        }
        dist += f
            .iter()
            .zip(p)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        norm += f.iter().map(|a| a * a).sum::<f64>().sqrt();
    }
    if norm == 0.0 {
        return Err(Error::ZeroVector("full-run hidden states".into()));
    }
    let n = full.len() as f64;
    Ok((dist / n) / (norm / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Replay,
    Live,
}

impl EvalMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            EvalMode::Replay => "replay",
            EvalMode::Live => "live",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadMetrics {
    pub layer: usize,
    pub head: usize,
    pub cosine: f64,
    pub mask_overlap: f64,
}

/// One policy evaluated against the ideal mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityReport {
    pub policy: PolicyKind,
    pub budget: usize,
    pub seed: u64,
    pub mode: EvalMode,
    pub heads: Vec<HeadMetrics>,
    pub mean_cosine: f64,
    pub mean_overlap: f64,
    /// Live mode only.
    pub output_drift: Option<f64>,
}

impl SimilarityReport {
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        policy: PolicyKind,
        budget: usize,
        seed: u64,
        mode: EvalMode,
        grid: HeadGrid,
        cos: &PerHead,
        overlap: &PerHead,
        output_drift: Option<f64>,
    ) -> Self {
        let heads = grid
            .iter()
            .enumerate()
            .map(|(u, (layer, head))| HeadMetrics {
                layer,
                head,
                cosine: cos.per_unit[u],
                mask_overlap: overlap.per_unit[u],
            })
            .collect();
        Self {
            policy,
            budget,
            seed,
            mode,
            heads,
            mean_cosine: cos.mean,
            mean_overlap: overlap.mean,
            output_drift,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri(rows: &[&[f64]]) -> TriRows {
        let packed = rows.iter().flat_map(|r| r.iter().copied()).collect();
        TriRows::from_packed(HeadGrid::new(1, 1), rows.len(), vec![packed]).unwrap()
    }

    const HAND: [&[f64]; 3] = [&[1.0], &[0.5, 0.5], &[0.2, 0.3, 0.5]];

    #[test]
    fn cosine_basics() {
        let a = tri(&HAND);
        let c = cosine_similarity(&a, &a).unwrap();
        assert!((c.mean - 1.0).abs() < 1e-12);
        let x = tri(&[&[0.0], &[1.0, 0.0]]);
        let y = tri(&[&[0.0], &[0.0, 1.0]]);
        assert_eq!(cosine_similarity(&x, &y).unwrap().mean, 0.0);
        let z = tri(&[&[0.0], &[0.0, 0.0]]);
        assert!(matches!(
            cosine_similarity(&x, &z),
            Err(Error::ZeroVector(_))
        ));
        assert!(cosine_similarity(&a, &x).is_err());
    }

    #[test]
    fn overlap_basics() {
        let g = HeadGrid::new(1, 1);
        let m1 = MaskSequence::new(g, 3, vec![vec![vec![0], vec![1], vec![2]]]).unwrap();
        let m2 = MaskSequence::new(g, 3, vec![vec![vec![0], vec![0], vec![1]]]).unwrap();
        assert_eq!(mask_overlap(&m1, &m1).unwrap().mean, 1.0);
        assert!((mask_overlap(&m1, &m2).unwrap().mean - 1.0 / 3.0).abs() < 1e-15);
        let m3 = MaskSequence::new(g, 2, vec![vec![vec![0], vec![1]]]).unwrap();
        let m4 = MaskSequence::new(g, 2, vec![vec![vec![0], vec![0]]]).unwrap();
        assert_eq!(mask_overlap(&m3, &m4).unwrap().mean, 0.5);
        assert!(mask_overlap(&m1, &m3).is_err());
    }

    #[test]
    fn trajectories() {
        let t = AttentionTrace::new(tri(&HAND), "hand").unwrap();
        let a2sf = score_trajectory(&t, 0, 0, 0, PolicyKind::A2sf { alpha: 0.5 }).unwrap();
        let acc: Vec<f64> = a2sf.iter().map(|p| p.acc).collect();
        assert_eq!(acc.len(), 3);
        assert_eq!(acc[0], 1.0);
        assert_eq!(acc[1], 1.0);
        assert!((acc[2] - 0.70).abs() < 1e-15);
        let late = score_trajectory(&t, 0, 0, 2, PolicyKind::A2s).unwrap();
        assert_eq!(late.len(), 1);
        assert_eq!(late[0].step, 2);
        assert!(score_trajectory(&t, 0, 0, 3, PolicyKind::A2s).is_err());
    }

    #[test]
    fn drift() {
        let a = vec![vec![1.0, 0.0], vec![0.0, 2.0]];
        assert_eq!(output_drift(&a, &a).unwrap(), 0.0);
        let b = vec![vec![1.0, 1.0], vec![0.0, 2.0]];
        // mean distance 0.5, mean norm 1.5
        assert!((output_drift(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(output_drift(&a, &b[..1]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(
            a in proptest::collection::vec(0.01f64..1.0, 6),
            b in proptest::collection::vec(0.01f64..1.0, 6),
            c in 0.001f64..1000.0,
        ) {
            let ab = cosine(&a, &b).unwrap();
            let ba = cosine(&b, &a).unwrap();
            let scaled: Vec<f64> = a.iter().map(|v| v * c).collect();
            let sb = cosine(&scaled, &b).unwrap();
            proptest::prop_assert!((ab - ba).abs() < 1e-15);
            proptest::prop_assert!((ab - sb).abs() < 1e-12);
            proptest::prop_assert!(ab <= 1.0 + 1e-12);
        }
    }
}

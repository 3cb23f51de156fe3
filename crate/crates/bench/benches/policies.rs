use std::hint::black_box;

use a2sf_core::{
    evaluate_replay, generate_synthetic_trace, ideal_mask, policy_mask, workload_tokens,
    DecoderConfig, PolicyKind, ScoreRow, ScoreState, ToyDecoder, TraceGenConfig,
};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn trace(seq_len: usize) -> a2sf_core::AttentionTrace {
    generate_synthetic_trace(&TraceGenConfig {
        seq_len,
        n_layers: 2,
        n_heads: 8,
        sink_strength: 4.0,
        locality_window: 4,
        locality_strength: 1.5,
        heavy_hitters: vec![(seq_len / 8, 2.5), (seq_len / 2, 2.5)],
        noise_temperature: 1.0,
        seed: 1,
    })
    .unwrap()
}

fn streaming_update(c: &mut Criterion) {
    let mut g = c.benchmark_group("streaming_update");
    for len in [128, 512] {
        let t = trace(len);
        let units = t.grid().units();
        g.bench_with_input(BenchmarkId::from_parameter(len), &t, |b, t| {
            b.iter(|| {
                let mut st = ScoreState::new(PolicyKind::A2sf { alpha: 0.2 }, 2, 8).unwrap();
                for q in 0..t.seq_len() {
                    let rows: Vec<ScoreRow> = (0..units)
                        .map(|u| ScoreRow {
                            tokens: (0..=q).collect(),
                            probs: t.rows().unit_row(u, q).to_vec(),
                        })
                        .collect();
                    st.update(&rows).unwrap();
                }
                black_box(st.step())
            })
        });
    }
    g.finish();
}

fn masks(c: &mut Criterion) {
    let t = trace(256);
    let budget = 51;
    c.bench_function("ideal_mask/256", |b| {
        b.iter(|| ideal_mask(black_box(&t), budget).unwrap())
    });
    for policy in [
        PolicyKind::A2sf { alpha: 0.2 },
        PolicyKind::A2s,
        PolicyKind::Local { window: budget },
    ] {
        c.bench_function(&format!("policy_mask/{}/256", policy.label()), |b| {
            b.iter(|| policy_mask(black_box(&t), policy, budget).unwrap())
        });
    }
    c.bench_function("evaluate_replay/a2sf/256", |b| {
        b.iter(|| {
            evaluate_replay(
                black_box(&t),
                PolicyKind::A2sf { alpha: 0.2 },
                budget,
                true,
                0,
            )
            .unwrap()
        })
    });
}

fn decoder_step(c: &mut Criterion) {
    let dec = ToyDecoder::new(DecoderConfig {
        n_layers: 4,
        n_heads: 4,
        d_head: 16,
        vocab_size: 64,
        seed: 0,
    })
    .unwrap();
    let tokens = workload_tokens(0, 128, 64);
    c.bench_function("decoder/full_run/128", |b| {
        b.iter(|| {
            let mut cache = dec.new_cache(128);
            for &t in &tokens {
                black_box(dec.step(&mut cache, t).unwrap());
            }
        })
    });
    c.bench_function("decoder/live_a2sf/128", |b| {
        b.iter(|| a2sf_core::run_live(&dec, &tokens, PolicyKind::A2sf { alpha: 0.2 }, 25).unwrap())
    });
}

criterion_group!(benches, streaming_update, masks, decoder_step);
criterion_main!(benches);

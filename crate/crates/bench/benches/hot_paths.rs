// SPDX-License-Identifier: MIT OR Apache-2.0

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use pluralsteer::plurdec::pluralistic_combine;
use pluralsteer::sae::{SaeConfig, SaeParams};
use pluralsteer_bench::{conditional_set, desk_model, tokens};

fn forward(c: &mut Criterion) {
    let model = desk_model();
    let x = tokens(32, model.config().vocab_size);
    c.bench_function("forward_seq32", |b| {
        b.iter(|| model.final_logits(black_box(&x)).unwrap())
    });
}

fn sae_encode(c: &mut Criterion) {
    let sae = SaeParams::init(&SaeConfig::new(64, 8)).unwrap();
    let h: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
    c.bench_function("sae_encode_64x512", |b| {
        b.iter(|| sae.encode(black_box(&h)).unwrap())
    });
}

fn combine(c: &mut Criterion) {
    let cs = conditional_set(10, 4);
    c.bench_function("pluralistic_combine_10x4", |b| {
        b.iter(|| pluralistic_combine(black_box(&cs), 0.2).unwrap())
    });
}

criterion_group!(benches, forward, sae_encode, combine);
criterion_main!(benches);

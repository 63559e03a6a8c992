// SPDX-License-Identifier: MIT OR Apache-2.0

//! Benchmarks live in `benches/`; this library only hosts shared inputs.

use pluralsteer::numerics::Distribution;
use pluralsteer::plurdec::ConditionalSet;
use pluralsteer::tinylm::{Model, ModelConfig, TokenSequence};

/// Untrained model at the default desk size.
pub fn desk_model() -> Model {
    Model::init(ModelConfig::default()).expect("default config is valid")
}

/// Deterministic token sequence of length `len`.
pub fn tokens(len: usize, vocab: usize) -> TokenSequence {
    TokenSequence::new((0..len).map(|i| (i * 7 + 3) % vocab).collect()).expect("non-empty")
}

/// Skewed distributions over `n` outcomes, one per annotator.
pub fn conditional_set(n: usize, annotators: usize) -> ConditionalSet {
    let dist = |shift: usize| {
        let w: Vec<f64> = (0..n).map(|i| 1.0 + ((i + shift) % n) as f64).collect();
        let s: f64 = w.iter().sum();
        Distribution::new(w.into_iter().map(|x| x / s).collect()).expect("normalized")
    };
    ConditionalSet::new(
        dist(0),
        (0..annotators)
            .map(|a| (format!("a{a}"), dist(a + 1)))
            .collect(),
    )
    .expect("matching domains")
}

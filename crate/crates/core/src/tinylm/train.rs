// SPDX-License-Identifier: MIT OR Apache-2.0

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Model, TokenSequence};
use crate::error::{Error, Result};
use crate::numerics::softmax_slice;

/// Minibatch SGD settings for [`train_lm`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.1,
            batch_size: 16,
            seed: 0,
        }
    }
}

/// Next-token cross-entropy (nats) summed over positions, and its gradient
/// with respect to the logits.
fn loss_and_grad(logits: &Array2<f64>, tokens: &[usize]) -> (f64, Array2<f64>) {
    let mut dlogits = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for i in 0..tokens.len().saturating_sub(1) {
        let row = logits.row(i).to_vec();
        let p = softmax_slice(&row, 1.0);
        let target = tokens[i + 1];
        loss -= p[target].max(f64::MIN_POSITIVE).ln();
        for (j, pj) in p.into_iter().enumerate() {
            dlogits[[i, j]] = pj;
        }
        dlogits[[i, target]] -= 1.0;
    }
    (loss, dlogits)
}

fn predicted_positions(corpus: &[TokenSequence]) -> usize {
    corpus.iter().map(|s| s.len() - 1).sum()
}

/// Mean next-token cross-entropy over every predicted position of `corpus`.
pub fn mean_cross_entropy(model: &Model, corpus: &[TokenSequence]) -> Result<f64> {
    let count = predicted_positions(corpus);
    if count == 0 {
        return Err(Error::invalid("corpus has no next-token targets"));
    }
    let mut total = 0.0;
    for s in corpus {
        let logits = model.forward_cached(s)?.0;
        total += loss_and_grad(&logits, s.tokens()).0;
    }
    Ok(total / count as f64)
}

/// Trains with shuffled minibatch SGD at a fixed learning rate. Each batch
/// step uses the mean gradient over the batch's predicted positions.
pub fn train_lm(model: &Model, corpus: &[TokenSequence], config: &TrainConfig) -> Result<Model> {
    if corpus.is_empty() {
        return Err(Error::invalid("training corpus is empty"));
    }
    if !(config.lr.is_finite() && config.lr > 0.0) {
        return Err(Error::invalid("learning rate must be positive"));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    for s in corpus {
        if s.len() > model.config().max_seq_len
            || s.tokens().iter().any(|&t| t >= model.config().vocab_size)
        {
            return Err(Error::invalid("corpus sequence does not fit the model"));
        }
    }

    let mut model = model.clone();
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let seqs: Vec<&TokenSequence> = batch.iter().map(|&i| &corpus[i]).collect();
            let count: usize = seqs.iter().map(|s| s.len() - 1).sum();
            if count == 0 {
                continue;
            }
            let mut grads = model.params().zeros_like();
            for s in seqs {
                let (logits, cache) = model.forward_cached(s)?;
                let (_, dlogits) = loss_and_grad(&logits, s.tokens());
                model.backward(s.tokens(), &cache, &dlogits, &mut grads);
            }
            model
                .params_mut()
                .sub_scaled(&grads, config.lr / count as f64);
        }
    }
    Ok(model)
}

// SPDX-License-Identifier: MIT OR Apache-2.0

//! Combining feedback-conditioned answer distributions.
//!
//! Pluralistic decoding scores each answer by
//!
//! ```text
//! softmax( sum_a H(p(x|c_a)) * ((1 + alpha) * ln p(x|c_a) - alpha * ln p(x)) )
//! ```
//!
//! where `p(x)` is the unconditioned distribution. Uncertain annotators get
//! more weight; a one-hot annotator contributes nothing.

use crate::error::{Error, Result};
use crate::numerics::{entropy, floored_ln, softmax_slice, Distribution};

pub const DEFAULT_ALPHA: f64 = 0.2;

/// Logarithm base used for the entropy weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyUnit {
    #[default]
    Nats,
    Bits,
}

impl EntropyUnit {
    fn log_base(self) -> f64 {
        match self {
            Self::Nats => std::f64::consts::E,
            Self::Bits => 2.0,
        }
    }
}

impl std::str::FromStr for EntropyUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nats" => Ok(Self::Nats),
            "bits" => Ok(Self::Bits),
            other => Err(Error::invalid(format!("unknown entropy unit {other:?}"))),
        }
    }
}

impl std::fmt::Display for EntropyUnit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Nats => "nats",
            Self::Bits => "bits",
        })
    }
}

/// The unconditioned distribution plus one conditioned distribution per annotator.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalSet {
    base: Distribution,
    conditionals: Vec<(String, Distribution)>,
}

impl ConditionalSet {
    pub fn new(base: Distribution, conditionals: Vec<(String, Distribution)>) -> Result<Self> {
        if conditionals.is_empty() {
            return Err(Error::invalid(
                "conditional set needs at least one annotator",
            ));
        }
        for (id, d) in &conditionals {
            if d.len() != base.len() {
                return Err(Error::invalid(format!(
                    "annotator {id} has domain size {}, base has {}",
                    d.len(),
                    base.len()
                )));
            }
        }
        Ok(Self { base, conditionals })
    }

    pub fn base(&self) -> &Distribution {
        &self.base
    }

    pub fn conditionals(&self) -> &[(String, Distribution)] {
        &self.conditionals
    }

    pub fn domain_size(&self) -> usize {
        self.base.len()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::invalid(format!(
            "alpha must be finite and >= 0, got {alpha}"
        )));
    }
    Ok(())
}

/// Entropy of each conditional, in input order.
pub fn entropy_weights(cs: &ConditionalSet) -> Vec<(String, f64)> {
    entropy_weights_in(cs, EntropyUnit::Nats)
}

pub fn entropy_weights_in(cs: &ConditionalSet, unit: EntropyUnit) -> Vec<(String, f64)> {
    cs.conditionals
        .iter()
        .map(|(id, d)| {
            let h = entropy(d, unit.log_base()).expect("fixed base is valid");
            (id.clone(), h)
        })
        .collect()
}

/// Summed, entropy-weighted contrastive scores before the final softmax.
pub fn pluralistic_scores(cs: &ConditionalSet, alpha: f64, unit: EntropyUnit) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    let log_base: Vec<f64> = cs.base.probs().iter().map(|&p| floored_ln(p)).collect();
    let mut scores = vec![0.0; cs.domain_size()];
    for ((_, d), (_, h)) in cs.conditionals.iter().zip(entropy_weights_in(cs, unit)) {
        for ((s, &p), lb) in scores.iter_mut().zip(d.probs()).zip(&log_base) {
            *s += h * ((1.0 + alpha) * floored_ln(p) - alpha * lb);
        }
    }
    Ok(scores)
}

pub fn pluralistic_combine(cs: &ConditionalSet, alpha: f64) -> Result<Distribution> {
    pluralistic_combine_in(cs, alpha, EntropyUnit::Nats)
}

pub fn pluralistic_combine_in(
    cs: &ConditionalSet,
    alpha: f64,
    unit: EntropyUnit,
) -> Result<Distribution> {
    let scores = pluralistic_scores(cs, alpha, unit)?;
    Distribution::renormalized(softmax_slice(&scores, 1.0), 1e-9)
}

/// Elementwise mean of the conditional probability vectors. The base is ignored.
pub fn mean_combine(cs: &ConditionalSet) -> Result<Distribution> {
    let n = cs.conditionals.len() as f64;
    let mut mean = vec![0.0; cs.domain_size()];
    for (_, d) in &cs.conditionals {
        for (m, p) in mean.iter_mut().zip(d.probs()) {
            *m += p;
        }
    }
    Distribution::renormalized(mean.into_iter().map(|m| m / n).collect(), 1e-9)
}

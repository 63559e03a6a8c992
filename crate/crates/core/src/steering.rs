// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-annotator steering vectors in SAE code space.
//!
//! A steering vector is the mean, over `N` contrastive pairs, of
//! `enc(f_l(x | feedback)) - enc(f_l(x))`, where `f_l` is the post-block
//! residual at the last token. At inference the residual `h` at that layer
//! is replaced by
//!
//! ```text
//! h + dec(enc(h) + scale * s) - dec(enc(h))
//! ```
//!
//! which keeps the SAE reconstruction error in place, so `scale = 0` is an
//! exact no-op. The shifted code is not re-rectified.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numerics::{softmax, Distribution, LogitVector};
use crate::sae::SaeParams;
use crate::tinylm::{InterventionSpec, Model, PositionPolicy, TokenSequence};

/// The same input rendered with and without one annotator's feedback.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastivePair {
    pub with_feedback: TokenSequence,
    pub without_feedback: TokenSequence,
    pub annotator_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    pub annotator_id: String,
    pub layer: usize,
    /// Lives in SAE code space.
    pub vector: Vec<f64>,
    pub n_pairs: usize,
}

/// Post-block residual at the last position of `x`.
pub fn capture_activation(model: &Model, x: &TokenSequence, layer: usize) -> Result<Vec<f64>> {
    model.capture_last(x, layer)
}

fn check_sae(model: &Model, sae: &SaeParams) -> Result<()> {
    if sae.input_dim() != model.config().d_model {
        return Err(Error::invalid(format!(
            "SAE input_dim {} does not match d_model {}",
            sae.input_dim(),
            model.config().d_model
        )));
    }
    Ok(())
}

/// SAE code difference for one pair.
pub fn pair_code_difference(
    model: &Model,
    sae: &SaeParams,
    pair: &ContrastivePair,
    layer: usize,
) -> Result<Vec<f64>> {
    let with = sae.encode(&capture_activation(model, &pair.with_feedback, layer)?)?;
    let without = sae.encode(&capture_activation(model, &pair.without_feedback, layer)?)?;
    Ok(with
        .iter()
        .zip(without.iter())
        .map(|(a, b)| a - b)
        .collect())
}

/// Mean SAE code difference over `pairs`, which must share one annotator.
pub fn extract_steering_vector(
    model: &Model,
    sae: &SaeParams,
    pairs: &[ContrastivePair],
    layer: usize,
) -> Result<SteeringVector> {
    check_sae(model, sae)?;
    let first = pairs
        .first()
        .ok_or_else(|| Error::invalid("no contrastive pairs to extract from"))?;
    if let Some(p) = pairs.iter().find(|p| p.annotator_id != first.annotator_id) {
        return Err(Error::invalid(format!(
            "mixed annotators in pair list: {} and {}",
            first.annotator_id, p.annotator_id
        )));
    }
    let mut sum = vec![0.0; sae.code_dim()];
    for pair in pairs {
        let diff = pair_code_difference(model, sae, pair, layer)?;
        for (s, d) in sum.iter_mut().zip(diff) {
            *s += d;
        }
    }
    let n = pairs.len();
    Ok(SteeringVector {
        annotator_id: first.annotator_id.clone(),
        layer,
        vector: sum.into_iter().map(|s| s / n as f64).collect(),
        n_pairs: n,
    })
}

/// Residual replacement applied by [`steer_forward`].
pub fn steered_residual(
    sae: &SaeParams,
    sv: &SteeringVector,
    scale: f64,
    h: &[f64],
) -> Result<Vec<f64>> {
    let code = sae.encode(h)?;
    let shifted: Vec<f64> = code
        .iter()
        .zip(&sv.vector)
        .map(|(z, s)| z + scale * s)
        .collect();
    let moved = sae.decode(&shifted)?;
    let base = sae.decode(&code)?;
    Ok(h.iter()
        .zip(moved.iter().zip(&base))
        .map(|(hi, (m, b))| hi + (m - b))
        .collect())
}

/// Final-position logits with the steering vector applied at `sv.layer`.
pub fn steer_forward(
    model: &Model,
    sae: &SaeParams,
    sv: &SteeringVector,
    scale: f64,
    x: &TokenSequence,
) -> Result<LogitVector> {
    steer_forward_with_policy(model, sae, sv, scale, x, PositionPolicy::LastPosition)
}

pub fn steer_forward_with_policy(
    model: &Model,
    sae: &SaeParams,
    sv: &SteeringVector,
    scale: f64,
    x: &TokenSequence,
    policy: PositionPolicy,
) -> Result<LogitVector> {
    check_sae(model, sae)?;
    if sv.vector.len() != sae.code_dim() {
        return Err(Error::invalid(format!(
            "steering vector has {} entries, SAE code has {}",
            sv.vector.len(),
            sae.code_dim()
        )));
    }
    if !scale.is_finite() {
        return Err(Error::invalid("steering scale must be finite"));
    }
    let spec = InterventionSpec::new(sv.layer, policy, |h: &[f64]| {
        // Dimensions are checked above; a failure here can only be a
        // non-finite residual, which the model reports as an intervention error.
        steered_residual(sae, sv, scale, h).unwrap_or_else(|_| vec![f64::NAN; h.len()])
    });
    let mut logits = model.forward_with_intervention(x, &spec)?;
    Ok(logits.pop().expect("non-empty sequence"))
}

/// `softmax(steer_forward(..), temperature)`.
pub fn steered_distribution(
    model: &Model,
    sae: &SaeParams,
    sv: &SteeringVector,
    scale: f64,
    x: &TokenSequence,
    temperature: f64,
) -> Result<Distribution> {
    softmax(&steer_forward(model, sae, sv, scale, x)?, temperature)
}

impl SteeringVector {
    /// Structured-text form. Floats use Rust's shortest round-trip formatting,
    /// so the output is byte-deterministic and parses back exactly.
    pub fn to_text(&self, sae_checksum: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "annotator_id={}", self.annotator_id);
        let _ = writeln!(s, "layer={}", self.layer);
        let _ = writeln!(s, "n_pairs={}", self.n_pairs);
        let _ = writeln!(s, "sae_checksum={sae_checksum}");
        let values: Vec<String> = self.vector.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(s, "vector={}", values.join(","));
        s
    }

    /// Parses [`SteeringVector::to_text`] output; returns the vector and the
    /// recorded SAE checksum.
    pub fn from_text(text: &str) -> Result<(Self, String)> {
        let mut fields = std::collections::HashMap::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("bad steering vector line {line:?}")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::Checkpoint(format!("steering vector missing {k}")))
        };
        let bad = |k: &str| Error::Checkpoint(format!("steering vector field {k} is malformed"));
        let vector = get("vector")?
            .split(',')
            .map(|v| v.parse::<f64>().map_err(|_| bad("vector")))
            .collect::<Result<Vec<_>>>()?;
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(bad("vector"));
        }
        let sv = Self {
            annotator_id: get("annotator_id")?.to_string(),
            layer: get("layer")?.parse().map_err(|_| bad("layer"))?,
            n_pairs: get("n_pairs")?.parse().map_err(|_| bad("n_pairs"))?,
            vector,
        };
        if sv.n_pairs == 0 {
            return Err(bad("n_pairs"));
        }
        Ok((sv, get("sae_checksum")?.to_string()))
    }
}

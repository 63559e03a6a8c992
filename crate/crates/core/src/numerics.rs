// SPDX-License-Identifier: MIT OR Apache-2.0

//! Probability-space primitives shared by decoding and evaluation.
//!
//! Everything here is a pure function over `f64` slices. Logarithms of
//! probabilities go through [`floored_ln`], which clamps at [`PROB_FLOOR`]
//! so one-hot inputs never produce `-inf`.

use crate::error::{Error, Result};

/// Probabilities below this are clamped before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance on `sum(p) == 1` accepted by [`Distribution::new`].
pub const SUM_TOLERANCE: f64 = 1e-9;

/// A probability vector over a finite domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    /// Validates `probs` as a distribution: non-empty, finite, non-negative
    /// and summing to one within [`SUM_TOLERANCE`].
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        Self::check(&probs, SUM_TOLERANCE)?;
        Ok(Self { probs })
    }

    /// Accepts a vector whose sum is within `tolerance` of one and rescales it
    /// to sum to one. Vectors already within [`SUM_TOLERANCE`] are kept as
    /// given, so values survive a text round trip bit for bit.
    pub fn renormalized(probs: Vec<f64>, tolerance: f64) -> Result<Self> {
        Self::check(&probs, tolerance)?;
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() <= SUM_TOLERANCE {
            return Ok(Self { probs });
        }
        Ok(Self {
            probs: probs.into_iter().map(|p| p / total).collect(),
        })
    }

    fn check(probs: &[f64], tolerance: f64) -> Result<()> {
        if probs.is_empty() {
            return Err(Error::invalid("distribution must have at least one entry"));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::invalid(format!(
                "distribution entries must be finite and >= 0, got {p}"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > tolerance {
            return Err(Error::invalid(format!(
                "distribution sums to {total}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("uniform distribution over an empty domain"));
        }
        Ok(Self {
            probs: vec![1.0 / n as f64; n],
        })
    }

    pub fn one_hot(n: usize, index: usize) -> Result<Self> {
        if index >= n {
            return Err(Error::invalid(format!(
                "one-hot index {index} out of range {n}"
            )));
        }
        let mut probs = vec![0.0; n];
        probs[index] = 1.0;
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Unnormalized log-scores; every entry finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector {
    logits: Vec<f64>,
}

impl LogitVector {
    pub fn new(logits: Vec<f64>) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::invalid("logit vector must be non-empty"));
        }
        if let Some(x) = logits.iter().find(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("non-finite logit {x}")));
        }
        Ok(Self { logits })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.logits
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.logits
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }
}

fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::invalid(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    Ok(())
}

/// Max-shifted, temperature-scaled logits.
fn scaled(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    logits.iter().map(|x| (x - max) / temperature).collect()
}

/// Temperature softmax, computed after subtracting the max logit.
pub fn softmax(logits: &LogitVector, temperature: f64) -> Result<Distribution> {
    check_temperature(temperature)?;
    Ok(Distribution {
        probs: softmax_slice(logits.as_slice(), temperature),
    })
}

/// Unchecked softmax over a slice that may contain `-inf` entries (but not
/// only `-inf`). Used where masked scores are expected.
pub(crate) fn softmax_slice(logits: &[f64], temperature: f64) -> Vec<f64> {
    let exps: Vec<f64> = scaled(logits, temperature)
        .into_iter()
        .map(f64::exp)
        .collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Temperature log-softmax via the log-sum-exp of max-shifted logits.
pub fn log_softmax(logits: &LogitVector, temperature: f64) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    let z = scaled(logits.as_slice(), temperature);
    let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
    Ok(z.into_iter().map(|v| v - lse).collect())
}

/// Natural log with the probability floor applied.
pub fn floored_ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// Shannon entropy in the given logarithm base. Zero entries contribute 0.
pub fn entropy(p: &Distribution, log_base: f64) -> Result<f64> {
    if !(log_base.is_finite() && log_base > 1.0) {
        return Err(Error::invalid(format!(
            "log base must exceed 1, got {log_base}"
        )));
    }
    let nats: f64 = p
        .probs
        .iter()
        .filter(|&&pi| pi > 0.0)
        .map(|&pi| -pi * floored_ln(pi))
        .sum();
    Ok((nats / log_base.ln()).max(0.0))
}

/// Square root of the base-2 Jensen-Shannon divergence. Lies in `[0, 1]`.
pub fn js_distance(p: &Distribution, q: &Distribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid(format!(
            "js_distance length mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    let kl_to_mid = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .filter(|(ai, _)| **ai > 0.0)
            .map(|(&ai, &bi)| ai * (ai / (0.5 * (ai + bi))).log2())
            .sum()
    };
    let divergence = 0.5 * kl_to_mid(&p.probs, &q.probs) + 0.5 * kl_to_mid(&q.probs, &p.probs);
    Ok(divergence.clamp(0.0, 1.0).sqrt())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax_index(p: &Distribution) -> usize {
    argmax_slice(&p.probs)
}

pub(crate) fn argmax_slice(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Half the L1 distance between two distributions.
pub fn total_variation(p: &Distribution, q: &Distribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid("total_variation length mismatch"));
    }
    Ok(0.5
        * p.probs
            .iter()
            .zip(&q.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lv(v: &[f64]) -> LogitVector {
        LogitVector::new(v.to_vec()).unwrap()
    }

    fn dist(v: &[f64]) -> Distribution {
        Distribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&lv(&[0.0, 0.0, 0.0]), 1.0).unwrap();
        for x in p.probs() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax(&lv(&[7.5; 4]), 0.4).unwrap();
        assert_eq!(p.probs(), &[0.25; 4]);

        // e / (e + 1), evaluated independently of the shifted implementation.
        let e = std::f64::consts::E;
        let p = softmax(&lv(&[1.0, 0.0]), 1.0).unwrap();
        assert!((p.probs()[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p.probs()[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert!((p.probs()[0] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn softmax_rejects_bad_arguments() {
        assert!(softmax(&lv(&[1.0]), 0.0).is_err());
        assert!(softmax(&lv(&[1.0]), -1.0).is_err());
        assert!(softmax(&lv(&[1.0]), f64::NAN).is_err());
        assert!(LogitVector::new(vec![f64::INFINITY]).is_err());
        assert!(LogitVector::new(vec![f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn log_softmax_examples() {
        let l = log_softmax(&lv(&[0.0, 0.0]), 1.0).unwrap();
        assert!((l[0] + std::f64::consts::LN_2).abs() < 1e-15);
        assert!((l[1] + std::f64::consts::LN_2).abs() < 1e-15);

        // ln(1 + e^-1000) underflows to 0; the second entry is exactly -1000 - that.
        let l = log_softmax(&lv(&[1000.0, 0.0]), 1.0).unwrap();
        assert!(l[0].abs() < 1e-300);
        assert!((l[1] + 1000.0).abs() < 1e-12);
        assert!(l.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy(&dist(&[0.5, 0.5]), 2.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(entropy(&dist(&[1.0, 0.0, 0.0]), 2.0).unwrap(), 0.0);
        assert_eq!(entropy(&dist(&[1.0, 0.0, 0.0]), 10.0).unwrap(), 0.0);
        // -(0.5 * -1 + 2 * 0.25 * -2) = 1.5 bits
        assert!((entropy(&dist(&[0.5, 0.25, 0.25]), 2.0).unwrap() - 1.5).abs() < 1e-15);
        assert!(entropy(&dist(&[1.0]), 1.0).is_err());
    }

    #[test]
    fn js_examples() {
        let p = dist(&[0.3, 0.7]);
        assert_eq!(js_distance(&p, &p).unwrap(), 0.0);
        assert_eq!(
            js_distance(&dist(&[1.0, 0.0]), &dist(&[0.0, 1.0])).unwrap(),
            1.0
        );

        // Straight-line evaluation: m = [0.75, 0.25].
        let kl_p = 0.5 * (0.5f64 / 0.75).log2() + 0.5 * (0.5f64 / 0.25).log2();
        let kl_q = (1.0f64 / 0.75).log2();
        let expected = (0.5 * kl_p + 0.5 * kl_q).sqrt();
        let got = js_distance(&dist(&[0.5, 0.5]), &dist(&[1.0, 0.0])).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.5579).abs() < 1e-4);

        assert!(js_distance(&dist(&[1.0]), &dist(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax_index(&dist(&[0.2, 0.5, 0.3])), 1);
        assert_eq!(argmax_index(&dist(&[0.5, 0.5])), 0);
        for n in 1..6 {
            for k in 0..n {
                assert_eq!(argmax_index(&Distribution::one_hot(n, k).unwrap()), k);
            }
        }
    }

    #[test]
    fn distribution_validation() {
        assert!(Distribution::new(vec![]).is_err());
        assert!(Distribution::new(vec![0.5, 0.6]).is_err());
        assert!(Distribution::new(vec![1.5, -0.5]).is_err());
        assert!(Distribution::new(vec![1.0 - 5e-10, 0.0]).is_ok());
        let d = Distribution::renormalized(vec![0.5, 0.499999], 1e-6).unwrap();
        assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    fn simplex(n: usize) -> impl Strategy<Value = Distribution> {
        proptest::collection::vec(0.0f64..1.0, n).prop_filter_map("zero mass", |w| {
            let total: f64 = w.iter().sum();
            (total > 1e-6).then(|| dist(&w.iter().map(|x| x / total).collect::<Vec<_>>()))
        })
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(
            x in proptest::collection::vec(-30.0f64..30.0, 1..12),
            c in -50.0f64..50.0,
            t in 0.1f64..5.0,
        ) {
            let a = softmax(&lv(&x), t).unwrap();
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            let b = softmax(&lv(&shifted), t).unwrap();
            for (p, q) in a.probs().iter().zip(b.probs()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }

        #[test]
        fn log_softmax_round_trip(
            x in proptest::collection::vec(-30.0f64..30.0, 1..12),
            t in 0.1f64..5.0,
        ) {
            let p = softmax(&lv(&x), t).unwrap();
            let l = log_softmax(&lv(&x), t).unwrap();
            for (pi, li) in p.probs().iter().zip(&l) {
                prop_assert!((pi - li.exp()).abs() < 1e-12);
            }
        }

        #[test]
        fn entropy_permutation_invariant(p in simplex(6), rot in 0usize..6) {
            let mut v = p.probs().to_vec();
            v.rotate_left(rot);
            v.swap(0, 5);
            let q = dist(&v);
            let a = entropy(&p, std::f64::consts::E).unwrap();
            let b = entropy(&q, std::f64::consts::E).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(a <= (6f64).ln() + 1e-12);
        }

        #[test]
        fn js_is_a_bounded_symmetric_metric(p in simplex(5), q in simplex(5), r in simplex(5)) {
            let pq = js_distance(&p, &q).unwrap();
            let qp = js_distance(&q, &p).unwrap();
            prop_assert_eq!(pq, qp);
            prop_assert!((0.0..=1.0).contains(&pq));
            prop_assert!(js_distance(&p, &p).unwrap() < 1e-12);
            let pr = js_distance(&p, &r).unwrap();
            let rq = js_distance(&r, &q).unwrap();
            prop_assert!(pq <= pr + rq + 1e-12);
        }
    }
}

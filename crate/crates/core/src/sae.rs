// SPDX-License-Identifier: MIT OR Apache-2.0

//! Sparse autoencoder over residual-stream activations.
//!
//! `enc(h) = relu(W_enc h + b_enc)`, `dec(z) = W_dec z + b_dec`, trained by
//! full-batch gradient descent on
//!
//! ```text
//! mean_b ||dec(enc(h_b)) - h_b||^2 / d  +  lambda * mean_b sum_i z_bi
//! ```
//!
//! Decoder columns are renormalized to unit length after every step.
//! The rectifier's derivative at exactly zero is taken as zero.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};

use crate::checkpoint::TensorFile;
use crate::error::{Error, Result};

/// Minimum number of activation vectors accepted by [`train_sae`].
pub const MIN_TRAINING_ACTIVATIONS: usize = 32;

const KIND: &str = "sae";

#[derive(Debug, Clone, PartialEq)]
pub struct SaeConfig {
    pub input_dim: usize,
    /// Code width is `expansion * input_dim`.
    pub expansion: usize,
    pub sparsity_coeff: f64,
    pub lr: f64,
    /// Number of full-batch gradient steps.
    pub epochs: usize,
    pub seed: u64,
}

impl SaeConfig {
    pub fn new(input_dim: usize, expansion: usize) -> Self {
        Self {
            input_dim,
            expansion,
            sparsity_coeff: 1e-3,
            lr: 0.1,
            epochs: 500,
            seed: 0,
        }
    }

    pub fn code_dim(&self) -> usize {
        self.expansion * self.input_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.expansion == 0 {
            return Err(Error::invalid("input_dim and expansion must be positive"));
        }
        if !(self.sparsity_coeff.is_finite() && self.sparsity_coeff >= 0.0) {
            return Err(Error::invalid("sparsity_coeff must be >= 0"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid("lr must be positive"));
        }
        Ok(())
    }
}

/// Encoder and decoder weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeParams {
    /// `m x d`
    pub enc_weight: Array2<f64>,
    pub enc_bias: Array1<f64>,
    /// `d x m`
    pub dec_weight: Array2<f64>,
    pub dec_bias: Array1<f64>,
}

/// Non-negative SAE code.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeCode(Vec<f64>);

impl SaeCode {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for SaeCode {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Loss components for one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaeLoss {
    pub mse: f64,
    pub l1: f64,
    pub total: f64,
}

impl SaeParams {
    /// Tied initialization: Gaussian encoder with std `1/sqrt(d)`, decoder set
    /// to the encoder transpose with unit columns, zero biases.
    pub fn init(config: &SaeConfig) -> Result<Self> {
        config.validate()?;
        let (d, m) = (config.input_dim, config.code_dim());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid std");
        let enc_weight = Array2::from_shape_simple_fn((m, d), || normal.sample(&mut rng));
        let mut params = Self {
            dec_weight: enc_weight.t().to_owned(),
            enc_weight,
            enc_bias: Array1::zeros(m),
            dec_bias: Array1::zeros(d),
        };
        params.normalize_decoder();
        Ok(params)
    }

    pub fn input_dim(&self) -> usize {
        self.enc_weight.ncols()
    }

    pub fn code_dim(&self) -> usize {
        self.enc_weight.nrows()
    }

    /// Scales each decoder column to unit Euclidean norm. Zero columns are left alone.
    pub fn normalize_decoder(&mut self) {
        for mut col in self.dec_weight.columns_mut() {
            let norm = col.dot(&col).sqrt();
            if norm > 0.0 {
                col /= norm;
            }
        }
    }

    pub fn encode(&self, h: &[f64]) -> Result<SaeCode> {
        if h.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "encode expects {} inputs, got {}",
                self.input_dim(),
                h.len()
            )));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("encode input is not finite"));
        }
        let pre = self.enc_weight.dot(&ndarray::aview1(h)) + &self.enc_bias;
        Ok(SaeCode(pre.iter().map(|&v| v.max(0.0)).collect()))
    }

    /// Affine decoder. Accepts any finite vector, including codes with
    /// negative entries produced by steering.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.code_dim() {
            return Err(Error::invalid(format!(
                "decode expects {} code entries, got {}",
                self.code_dim(),
                z.len()
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("decode input is not finite"));
        }
        Ok((self.dec_weight.dot(&ndarray::aview1(z)) + &self.dec_bias).to_vec())
    }

    fn batch_matrix(&self, batch: &[Vec<f64>]) -> Result<Array2<f64>> {
        if batch.is_empty() {
            return Err(Error::invalid("SAE batch is empty"));
        }
        let d = self.input_dim();
        let mut h = Array2::zeros((batch.len(), d));
        for (i, v) in batch.iter().enumerate() {
            if v.len() != d {
                return Err(Error::invalid(format!(
                    "activation {i} has length {}, expected {d}",
                    v.len()
                )));
            }
            h.row_mut(i).assign(&ndarray::aview1(v));
        }
        Ok(h)
    }

    fn forward_batch(&self, h: ArrayView2<'_, f64>) -> BatchForward {
        let pre = h.dot(&self.enc_weight.t()) + &self.enc_bias;
        let z = pre.mapv(|v| v.max(0.0));
        let recon = z.dot(&self.dec_weight.t()) + &self.dec_bias;
        let err = recon - h;
        BatchForward { pre, z, err }
    }

    fn loss_of(fwd: &BatchForward, sparsity_coeff: f64) -> SaeLoss {
        let (b, d) = fwd.err.dim();
        let mse = fwd.err.iter().map(|e| e * e).sum::<f64>() / (b * d) as f64;
        let l1 = fwd.z.sum() / b as f64;
        SaeLoss {
            mse,
            l1,
            total: mse + sparsity_coeff * l1,
        }
    }

    fn gradients_of(
        &self,
        h: ArrayView2<'_, f64>,
        fwd: &BatchForward,
        sparsity_coeff: f64,
    ) -> SaeParams {
        let (b, d) = fwd.err.dim();
        let d_recon = &fwd.err * (2.0 / (b * d) as f64);
        let dec_weight = d_recon.t().dot(&fwd.z);
        let dec_bias = d_recon.sum_axis(Axis(0));
        let mut d_pre = d_recon.dot(&self.dec_weight);
        let l1_grad = sparsity_coeff / b as f64;
        ndarray::Zip::from(&mut d_pre)
            .and(&fwd.pre)
            .for_each(|g, &p| {
                *g = if p > 0.0 { *g + l1_grad } else { 0.0 };
            });
        SaeParams {
            enc_weight: d_pre.t().dot(&h),
            enc_bias: d_pre.sum_axis(Axis(0)),
            dec_weight,
            dec_bias,
        }
    }

    /// Number of scalar parameters, in [`SaeParams::coordinate`] order.
    pub fn num_coordinates(&self) -> usize {
        self.enc_weight.len() + self.enc_bias.len() + self.dec_weight.len() + self.dec_bias.len()
    }

    /// Flat view over all parameters: encoder weight, encoder bias, decoder
    /// weight, decoder bias, each row-major.
    pub fn coordinate(&self, index: usize) -> f64 {
        *self.coordinate_ref(index)
    }

    fn coordinate_ref(&self, mut index: usize) -> &f64 {
        if index < self.enc_weight.len() {
            let cols = self.enc_weight.ncols();
            return &self.enc_weight[[index / cols, index % cols]];
        }
        index -= self.enc_weight.len();
        if index < self.enc_bias.len() {
            return &self.enc_bias[index];
        }
        index -= self.enc_bias.len();
        if index < self.dec_weight.len() {
            let cols = self.dec_weight.ncols();
            return &self.dec_weight[[index / cols, index % cols]];
        }
        index -= self.dec_weight.len();
        &self.dec_bias[index]
    }

    pub fn coordinate_mut(&mut self, mut index: usize) -> &mut f64 {
        if index < self.enc_weight.len() {
            let cols = self.enc_weight.ncols();
            return &mut self.enc_weight[[index / cols, index % cols]];
        }
        index -= self.enc_weight.len();
        if index < self.enc_bias.len() {
            return &mut self.enc_bias[index];
        }
        index -= self.enc_bias.len();
        if index < self.dec_weight.len() {
            let cols = self.dec_weight.ncols();
            return &mut self.dec_weight[[index / cols, index % cols]];
        }
        index -= self.dec_weight.len();
        &mut self.dec_bias[index]
    }

    fn check_finite(&self) -> Result<()> {
        let finite = self.enc_weight.iter().all(|v| v.is_finite())
            && self.enc_bias.iter().all(|v| v.is_finite())
            && self.dec_weight.iter().all(|v| v.is_finite())
            && self.dec_bias.iter().all(|v| v.is_finite());
        if finite {
            Ok(())
        } else {
            Err(Error::invalid(
                "SAE parameters diverged to non-finite values",
            ))
        }
    }

    pub fn to_tensor_file(&self, config: &SaeConfig) -> TensorFile {
        let mut f = TensorFile::new(KIND);
        f.push_header("input_dim", config.input_dim);
        f.push_header("expansion", config.expansion);
        f.push_header("sparsity_coeff", config.sparsity_coeff);
        f.push_header("lr", config.lr);
        f.push_header("epochs", config.epochs);
        f.push_header("seed", config.seed);
        let row = |v: &Array1<f64>| v.clone().insert_axis(Axis(0));
        f.tensors
            .push(("enc_weight".into(), self.enc_weight.clone()));
        f.tensors.push(("enc_bias".into(), row(&self.enc_bias)));
        f.tensors
            .push(("dec_weight".into(), self.dec_weight.clone()));
        f.tensors.push(("dec_bias".into(), row(&self.dec_bias)));
        f
    }

    pub fn from_tensor_file(file: &TensorFile) -> Result<(SaeConfig, Self)> {
        file.expect_kind(KIND)?;
        let config = SaeConfig {
            input_dim: file.header_parse("input_dim")?,
            expansion: file.header_parse("expansion")?,
            sparsity_coeff: file.header_parse("sparsity_coeff")?,
            lr: file.header_parse("lr")?,
            epochs: file.header_parse("epochs")?,
            seed: file.header_parse("seed")?,
        };
        config
            .validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let (d, m) = (config.input_dim, config.code_dim());
        let expected = [
            ("enc_weight", (m, d)),
            ("enc_bias", (1, m)),
            ("dec_weight", (d, m)),
            ("dec_bias", (1, d)),
        ];
        if file.tensors.len() != expected.len() {
            return Err(Error::Checkpoint(
                "SAE checkpoint must hold 4 tensors".into(),
            ));
        }
        for ((name, t), (want, dim)) in file.tensors.iter().zip(expected) {
            if name != want || t.dim() != dim {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} {:?} does not match {want} {dim:?}",
                    t.dim()
                )));
            }
        }
        let vec = |i: usize| file.tensors[i].1.row(0).to_owned();
        let params = Self {
            enc_weight: file.tensors[0].1.clone(),
            enc_bias: vec(1),
            dec_weight: file.tensors[2].1.clone(),
            dec_bias: vec(3),
        };
        Ok((config, params))
    }

    pub fn save(&self, config: &SaeConfig, path: &Path) -> Result<()> {
        self.to_tensor_file(config).save(path)
    }

    pub fn load(path: &Path) -> Result<(SaeConfig, Self)> {
        Self::from_tensor_file(&TensorFile::load(path)?)
    }
}

struct BatchForward {
    pre: Array2<f64>,
    z: Array2<f64>,
    err: Array2<f64>,
}

/// Reconstruction, sparsity and total loss of `params` on `batch`.
pub fn sae_loss(params: &SaeParams, batch: &[Vec<f64>], sparsity_coeff: f64) -> Result<SaeLoss> {
    let h = params.batch_matrix(batch)?;
    Ok(SaeParams::loss_of(
        &params.forward_batch(h.view()),
        sparsity_coeff,
    ))
}

/// Analytic gradient of the total loss, laid out like the parameters.
pub fn sae_gradients(
    params: &SaeParams,
    batch: &[Vec<f64>],
    sparsity_coeff: f64,
) -> Result<SaeParams> {
    let h = params.batch_matrix(batch)?;
    let fwd = params.forward_batch(h.view());
    Ok(params.gradients_of(h.view(), &fwd, sparsity_coeff))
}

/// Full-batch gradient descent; returns the trained parameters and the
/// loss measured before each step (plus the final loss as the last entry).
pub fn train_sae_traced(
    activations: &[Vec<f64>],
    config: &SaeConfig,
) -> Result<(SaeParams, Vec<SaeLoss>)> {
    config.validate()?;
    if activations.len() < MIN_TRAINING_ACTIVATIONS {
        return Err(Error::invalid(format!(
            "train_sae needs at least {MIN_TRAINING_ACTIVATIONS} activations, got {}",
            activations.len()
        )));
    }
    let mut params = SaeParams::init(config)?;
    let h = params.batch_matrix(activations)?;
    let mut history = Vec::with_capacity(config.epochs + 1);
    for _ in 0..config.epochs {
        let fwd = params.forward_batch(h.view());
        history.push(SaeParams::loss_of(&fwd, config.sparsity_coeff));
        let g = params.gradients_of(h.view(), &fwd, config.sparsity_coeff);
        params.enc_weight.scaled_add(-config.lr, &g.enc_weight);
        params.enc_bias.scaled_add(-config.lr, &g.enc_bias);
        params.dec_weight.scaled_add(-config.lr, &g.dec_weight);
        params.dec_bias.scaled_add(-config.lr, &g.dec_bias);
        params.normalize_decoder();
    }
    params.check_finite()?;
    history.push(SaeParams::loss_of(
        &params.forward_batch(h.view()),
        config.sparsity_coeff,
    ));
    Ok((params, history))
}

pub fn train_sae(activations: &[Vec<f64>], config: &SaeConfig) -> Result<SaeParams> {
    train_sae_traced(activations, config).map(|(p, _)| p)
}

/// Seeded sample of `count` distinct parameter coordinates (fewer if the
/// model has fewer), skipping encoder coordinates whose perturbation by
/// `epsilon` could move any pre-activation across the rectifier kink.
pub fn sample_coordinates(
    params: &SaeParams,
    batch: &[Vec<f64>],
    epsilon: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let h = params.batch_matrix(batch)?;
    let pre = params.forward_batch(h.view()).pre;
    let max_input = h.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let margin = 2.0 * epsilon * max_input;
    let (m, d) = params.enc_weight.dim();
    let near_kink = |unit: usize| pre.column(unit).iter().any(|p| p.abs() < margin);

    let total = params.num_coordinates();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut attempts = 0;
    while chosen.len() < count.min(total) && attempts < 100 * total {
        attempts += 1;
        let idx = rng.random_range(0..total);
        if !seen.insert(idx) {
            continue;
        }
        let unit = if idx < m * d {
            Some(idx / d)
        } else if idx < m * d + m {
            Some(idx - m * d)
        } else {
            None
        };
        if unit.is_some_and(near_kink) {
            continue;
        }
        chosen.push(idx);
    }
    Ok(chosen)
}

/// Maximum relative error `|a - b| / max(|a|, |b|, 1e-8)` between the supplied
/// analytic gradient and central finite differences at `coordinates`.
pub fn gradient_check_against(
    params: &SaeParams,
    analytic: &SaeParams,
    batch: &[Vec<f64>],
    sparsity_coeff: f64,
    epsilon: f64,
    coordinates: &[usize],
) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::invalid("epsilon must lie in (0, 1e-2]"));
    }
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for &idx in coordinates {
        let original = probe.coordinate(idx);
        *probe.coordinate_mut(idx) = original + epsilon;
        let up = sae_loss(&probe, batch, sparsity_coeff)?.total;
        *probe.coordinate_mut(idx) = original - epsilon;
        let down = sae_loss(&probe, batch, sparsity_coeff)?.total;
        *probe.coordinate_mut(idx) = original;
        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic.coordinate(idx);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Checks the analytic gradient against finite differences over 64 sampled
/// coordinates. Returns the maximum relative error.
pub fn gradient_check(
    params: &SaeParams,
    batch: &[Vec<f64>],
    sparsity_coeff: f64,
    epsilon: f64,
) -> Result<f64> {
    let coords = sample_coordinates(params, batch, epsilon, 64, 0x5ae)?;
    let analytic = sae_gradients(params, batch, sparsity_coeff)?;
    gradient_check_against(params, &analytic, batch, sparsity_coeff, epsilon, &coords)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_params(d: usize, m: usize, seed: u64) -> SaeParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = |r: usize, c: usize| {
            Array2::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0))
        };
        let enc_weight = u(m, d);
        let dec_weight = u(d, m);
        let enc_bias = u(1, m).row(0).to_owned();
        let dec_bias = u(1, d).row(0).to_owned();
        SaeParams {
            enc_weight,
            enc_bias,
            dec_weight,
            dec_bias,
        }
    }

    fn random_batch(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect()
    }

    /// Straight-line loops, independent of the ndarray path.
    fn encode_ref(p: &SaeParams, h: &[f64]) -> Vec<f64> {
        (0..p.code_dim())
            .map(|j| {
                let mut s = p.enc_bias[j];
                for (i, hi) in h.iter().enumerate() {
                    s += p.enc_weight[[j, i]] * hi;
                }
                if s > 0.0 {
                    s
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn decode_ref(p: &SaeParams, z: &[f64]) -> Vec<f64> {
        (0..p.input_dim())
            .map(|i| {
                let mut s = p.dec_bias[i];
                for (j, zj) in z.iter().enumerate() {
                    s += p.dec_weight[[i, j]] * zj;
                }
                s
            })
            .collect()
    }

    #[test]
    fn encode_edge_cases() {
        let mut p = random_params(4, 8, 1);
        p.enc_bias.fill(0.0);
        assert!(p.encode(&[0.0; 4]).unwrap().iter().all(|&v| v == 0.0));
        p.enc_bias.fill(-100.0);
        assert!(p
            .encode(&[0.5, -0.5, 1.0, 0.0])
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        assert!(p.encode(&[0.0; 3]).is_err());
        assert!(p.decode(&[0.0; 7]).is_err());
    }

    #[test]
    fn decode_of_zero_is_bias() {
        let p = random_params(4, 8, 2);
        assert_eq!(p.decode(&[0.0; 8]).unwrap(), p.dec_bias.to_vec());
    }

    #[test]
    fn encode_decode_match_reference() {
        for seed in 0..20 {
            let p = random_params(5, 15, seed);
            let h = &random_batch(1, 5, seed + 100)[0];
            let z = p.encode(h).unwrap();
            for (a, b) in z.iter().zip(encode_ref(&p, h)) {
                assert!((a - b).abs() < 1e-9);
            }
            let code = random_batch(1, 15, seed + 200).remove(0);
            for (a, b) in p.decode(&code).unwrap().iter().zip(decode_ref(&p, &code)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn loss_matches_hand_computation() {
        // d = 3, m = 6, batch of 2; every value below is written out by hand.
        let enc_weight = Array2::from_shape_vec(
            (6, 3),
            vec![
                1.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, //
                0.0, 0.0, 1.0, //
                -1.0, 0.0, 0.0, //
                0.0, -1.0, 0.0, //
                0.5, 0.5, 0.0,
            ],
        )
        .unwrap();
        let dec_weight = Array2::from_shape_vec(
            (3, 6),
            vec![
                1.0, 0.0, 0.0, -1.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, 0.0, -1.0, 0.0, //
                0.0, 0.0, 1.0, 0.0, 0.0, 1.0,
            ],
        )
        .unwrap();
        let p = SaeParams {
            enc_weight,
            enc_bias: Array1::from(vec![0.0, 0.0, 0.0, 0.0, 0.0, -0.5]),
            dec_weight,
            dec_bias: Array1::from(vec![0.0, 0.0, 0.1]),
        };
        // h1 = [1, 2, -1]: pre = [1, 2, -1, -1, -2, 1] -> z = [1, 2, 0, 0, 0, 1]
        //   recon = [1, 2, 0 + 1 + 0.1] = [1, 2, 1.1]; err = [0, 0, 2.1]
        //   sq = 4.41; per-sample mse = 1.47; l1 = 4
        // h2 = [-1, 0, 2]: pre = [-1, 0, 2, 1, 0, -1] -> z = [0, 0, 2, 1, 0, 0]
        //   recon = [-1, 0, 2.1]; err = [0, 0, 0.1]
        //   sq = 0.01; per-sample mse = 0.01/3; l1 = 3
        let batch = vec![vec![1.0, 2.0, -1.0], vec![-1.0, 0.0, 2.0]];
        let loss = sae_loss(&p, &batch, 0.1).unwrap();
        let mse = (4.41 / 3.0 + 0.01 / 3.0) / 2.0;
        assert!((loss.mse - mse).abs() < 1e-9);
        assert!((loss.l1 - 3.5).abs() < 1e-9);
        assert!((loss.total - (mse + 0.35)).abs() < 1e-9);
        let no_l1 = sae_loss(&p, &batch, 0.0).unwrap();
        assert_eq!(no_l1.total, no_l1.mse);
        assert!(sae_loss(&p, &[], 0.1).is_err());
    }

    #[test]
    fn identity_on_subspace_reconstructs_exactly() {
        let d = 3;
        let mut enc = Array2::zeros((6, d));
        let mut dec = Array2::zeros((d, 6));
        for i in 0..d {
            enc[[i, i]] = 1.0;
            enc[[i + 3, i]] = -1.0;
            dec[[i, i]] = 1.0;
            dec[[i, i + 3]] = -1.0;
        }
        let p = SaeParams {
            enc_weight: enc,
            enc_bias: Array1::zeros(6),
            dec_weight: dec,
            dec_bias: Array1::zeros(d),
        };
        let loss = sae_loss(&p, &random_batch(7, 3, 4), 0.0).unwrap();
        assert_eq!(loss.mse, 0.0);
    }

    #[test]
    fn gradients_pass_check_and_mutation_is_caught() {
        let p = random_params(6, 12, 3);
        let batch = random_batch(8, 6, 4);
        let err = gradient_check(&p, &batch, 0.01, 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");

        let coords = sample_coordinates(&p, &batch, 1e-5, 64, 0x5ae).unwrap();
        let mut analytic = sae_gradients(&p, &batch, 0.01).unwrap();
        let target = *coords
            .iter()
            .find(|&&i| analytic.coordinate(i).abs() > 1e-4)
            .unwrap();
        let v = analytic.coordinate(target);
        *analytic.coordinate_mut(target) = 2.0 * v;
        let err = gradient_check_against(&p, &analytic, &batch, 0.01, 1e-5, &coords).unwrap();
        assert!(err > 1e-2);
    }

    #[test]
    fn zero_sparsity_removes_l1_from_gradient() {
        let p = random_params(4, 8, 5);
        let batch = random_batch(6, 4, 6);
        let g0 = sae_gradients(&p, &batch, 0.0).unwrap();
        let h = p.batch_matrix(&batch).unwrap();
        let fwd = p.forward_batch(h.view());
        let (b, d) = fwd.err.dim();
        // With lambda = 0 the bias gradient is the pure reconstruction term.
        let d_recon = &fwd.err * (2.0 / (b * d) as f64);
        let mut d_pre = d_recon.dot(&p.dec_weight);
        ndarray::Zip::from(&mut d_pre)
            .and(&fwd.pre)
            .for_each(|g, &q| {
                if q <= 0.0 {
                    *g = 0.0;
                }
            });
        let expected = d_pre.sum_axis(Axis(0));
        for (a, b) in g0.enc_bias.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(gradient_check(&p, &batch, 0.0, 1e-5).unwrap() < 1e-4);
    }

    #[test]
    fn training_contract() {
        let batch = random_batch(64, 4, 7);
        let mut cfg = SaeConfig::new(4, 2);
        cfg.epochs = 0;
        assert_eq!(
            train_sae(&batch, &cfg).unwrap(),
            SaeParams::init(&cfg).unwrap()
        );

        cfg.epochs = 200;
        cfg.lr = 0.05;
        let (a, hist) = train_sae_traced(&batch, &cfg).unwrap();
        let b = train_sae(&batch, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(hist.last().unwrap().total < hist[0].total);
        for col in a.dec_weight.columns() {
            assert!((col.dot(&col).sqrt() - 1.0).abs() < 1e-6);
        }
        assert!(train_sae(&batch[..31], &cfg).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = SaeConfig::new(4, 3);
        let p = SaeParams::init(&cfg).unwrap();
        let f = p.to_tensor_file(&cfg);
        let bytes = f.to_bytes();
        let (cfg2, p2) =
            SaeParams::from_tensor_file(&TensorFile::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(p2, p);
        assert_eq!(p2.to_tensor_file(&cfg2).to_bytes(), bytes);
    }

    proptest! {
        #[test]
        fn codes_are_nonnegative(seed in 0u64..500, scale in 0.1f64..10.0) {
            let p = random_params(5, 10, seed);
            let h: Vec<f64> = random_batch(1, 5, seed + 1)[0].iter().map(|v| v * scale).collect();
            prop_assert!(p.encode(&h).unwrap().iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn decode_is_affine(seed in 0u64..500, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let p = random_params(4, 9, seed);
            let z1 = random_batch(1, 9, seed + 1).remove(0);
            let z2 = random_batch(1, 9, seed + 2).remove(0);
            let mix: Vec<f64> = z1.iter().zip(&z2).map(|(x, y)| a * x + b * y).collect();
            let lhs = p.decode(&mix).unwrap();
            let d1 = p.decode(&z1).unwrap();
            let d2 = p.decode(&z2).unwrap();
            for i in 0..4 {
                let rhs = a * d1[i] + b * d2[i] - (a + b - 1.0) * p.dec_bias[i];
                prop_assert!((lhs[i] - rhs).abs() < 1e-9);
            }
        }
    }
}

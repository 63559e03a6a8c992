// SPDX-License-Identifier: MIT OR Apache-2.0

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};

use super::ModelConfig;

const INIT_STD: f64 = 0.02;

/// Weights of one decoder block. Vectors are stored as `1 x n` matrices so
/// they broadcast over rows.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1_g: Array2<f64>,
    pub ln1_b: Array2<f64>,
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub w_o: Array2<f64>,
    pub ln2_g: Array2<f64>,
    pub ln2_b: Array2<f64>,
    pub w_fc1: Array2<f64>,
    pub b_fc1: Array2<f64>,
    pub w_fc2: Array2<f64>,
    pub b_fc2: Array2<f64>,
}

/// All model weights. Matrices multiply on the right: `y = x · W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub blocks: Vec<BlockParams>,
    pub lnf_g: Array2<f64>,
    pub lnf_b: Array2<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array2<f64>,
}

impl Params {
    /// Gaussian(0, 0.02) weights, unit LayerNorm gains, zero biases.
    pub(crate) fn init(config: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut gauss =
            |r: usize, c: usize| Array2::from_shape_simple_fn((r, c), || normal.sample(&mut rng));
        let (v, d, f, t) = (
            config.vocab_size,
            config.d_model,
            config.d_ff,
            config.max_seq_len,
        );
        let tok_emb = gauss(v, d);
        let pos_emb = gauss(t, d);
        let blocks = (0..config.n_layers)
            .map(|_| BlockParams {
                ln1_g: Array2::ones((1, d)),
                ln1_b: Array2::zeros((1, d)),
                w_q: gauss(d, d),
                w_k: gauss(d, d),
                w_v: gauss(d, d),
                w_o: gauss(d, d),
                ln2_g: Array2::ones((1, d)),
                ln2_b: Array2::zeros((1, d)),
                w_fc1: gauss(d, f),
                b_fc1: Array2::zeros((1, f)),
                w_fc2: gauss(f, d),
                b_fc2: Array2::zeros((1, d)),
            })
            .collect();
        Self {
            tok_emb,
            pos_emb,
            blocks,
            lnf_g: Array2::ones((1, d)),
            lnf_b: Array2::zeros((1, d)),
            w_out: gauss(d, v),
            b_out: Array2::zeros((1, v)),
        }
    }

    /// Same shapes, all zeros. Used as a gradient accumulator.
    pub(crate) fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|_, t| t.fill(0.0));
        z
    }

    /// Visits every tensor in the fixed checkpoint order.
    pub fn for_each(&self, mut f: impl FnMut(&str, &Array2<f64>)) {
        f("tok_emb", &self.tok_emb);
        f("pos_emb", &self.pos_emb);
        for (i, b) in self.blocks.iter().enumerate() {
            let l = i + 1;
            f(&format!("blocks.{l}.ln1_g"), &b.ln1_g);
            f(&format!("blocks.{l}.ln1_b"), &b.ln1_b);
            f(&format!("blocks.{l}.w_q"), &b.w_q);
            f(&format!("blocks.{l}.w_k"), &b.w_k);
            f(&format!("blocks.{l}.w_v"), &b.w_v);
            f(&format!("blocks.{l}.w_o"), &b.w_o);
            f(&format!("blocks.{l}.ln2_g"), &b.ln2_g);
            f(&format!("blocks.{l}.ln2_b"), &b.ln2_b);
            f(&format!("blocks.{l}.w_fc1"), &b.w_fc1);
            f(&format!("blocks.{l}.b_fc1"), &b.b_fc1);
            f(&format!("blocks.{l}.w_fc2"), &b.w_fc2);
            f(&format!("blocks.{l}.b_fc2"), &b.b_fc2);
        }
        f("lnf_g", &self.lnf_g);
        f("lnf_b", &self.lnf_b);
        f("w_out", &self.w_out);
        f("b_out", &self.b_out);
    }

    /// Mutable counterpart of [`Params::for_each`], same order.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut Array2<f64>)) {
        f("tok_emb", &mut self.tok_emb);
        f("pos_emb", &mut self.pos_emb);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let l = i + 1;
            f(&format!("blocks.{l}.ln1_g"), &mut b.ln1_g);
            f(&format!("blocks.{l}.ln1_b"), &mut b.ln1_b);
            f(&format!("blocks.{l}.w_q"), &mut b.w_q);
            f(&format!("blocks.{l}.w_k"), &mut b.w_k);
            f(&format!("blocks.{l}.w_v"), &mut b.w_v);
            f(&format!("blocks.{l}.w_o"), &mut b.w_o);
            f(&format!("blocks.{l}.ln2_g"), &mut b.ln2_g);
            f(&format!("blocks.{l}.ln2_b"), &mut b.ln2_b);
            f(&format!("blocks.{l}.w_fc1"), &mut b.w_fc1);
            f(&format!("blocks.{l}.b_fc1"), &mut b.b_fc1);
            f(&format!("blocks.{l}.w_fc2"), &mut b.w_fc2);
            f(&format!("blocks.{l}.b_fc2"), &mut b.b_fc2);
        }
        f("lnf_g", &mut self.lnf_g);
        f("lnf_b", &mut self.lnf_b);
        f("w_out", &mut self.w_out);
        f("b_out", &mut self.b_out);
    }

    /// `self -= scale * grad`, tensor by tensor.
    pub(crate) fn sub_scaled(&mut self, grad: &Params, scale: f64) {
        let mut grads = Vec::new();
        grad.for_each(|_, g| grads.push(g.clone()));
        let mut it = grads.into_iter();
        self.for_each_mut(|_, p| {
            let g = it.next().expect("matching parameter layout");
            p.scaled_add(-scale, &g);
        });
    }

    pub fn num_tensors(&self) -> usize {
        let mut n = 0;
        self.for_each(|_, _| n += 1);
        n
    }

    pub fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.for_each(|_, t| n += t.len());
        n
    }
}

// SPDX-License-Identifier: MIT OR Apache-2.0

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::params::{BlockParams, Params};
use super::{InterventionSpec, ModelConfig, PositionPolicy, ResidualCapture, TokenSequence};
use crate::error::{Error, Result};
use crate::numerics::{softmax, Distribution, LogitVector};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// A causal transformer language model.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Params,
}

/// Per-position logits plus any requested residual captures.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Vec<LogitVector>,
    /// Ordered by layer (ascending) then position.
    pub captures: Vec<ResidualCapture>,
}

pub(crate) struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

pub(crate) struct BlockCache {
    ln1: LnCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Attention probabilities per head, `n x n`, zero above the diagonal.
    probs: Vec<Array2<f64>>,
    o: Array2<f64>,
    ln2: LnCache,
    m: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
}

/// Activations retained for the backward pass.
pub(crate) struct ForwardCache {
    blocks: Vec<BlockCache>,
    lnf: LnCache,
    xf: Array2<f64>,
}

fn layer_norm(x: &Array2<f64>, g: &Array2<f64>, b: &Array2<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = Array2::zeros(x.raw_dim());
    let mut rstd = Array1::zeros(x.nrows());
    for (i, row) in x.outer_iter().enumerate() {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = r;
        for (dst, v) in xhat.row_mut(i).iter_mut().zip(row) {
            *dst = (v - mean) * r;
        }
    }
    let y = &xhat * g + b;
    (y, LnCache { xhat, rstd })
}

/// Returns dx; accumulates into dg and db.
fn layer_norm_backward(
    cache: &LnCache,
    dy: &Array2<f64>,
    g: &Array2<f64>,
    dg: &mut Array2<f64>,
    db: &mut Array2<f64>,
) -> Array2<f64> {
    *dg += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * g;
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dh = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let mean_dh = dh.sum() / d;
        let mean_dh_xh = dh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d;
        let r = cache.rstd[i];
        for ((dst, a), b) in dx.row_mut(i).iter_mut().zip(dh).zip(xh) {
            *dst = r * (a - mean_dh - b * mean_dh_xh);
        }
    }
    dx
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + 0.044_715 * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + 0.044_715 * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044_715 * u * u)
}

impl Model {
    /// Deterministically initialized model.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = Params::init(&config);
        Ok(Self { config, params })
    }

    /// Assembles a model from existing weights, checking every shape.
    pub fn from_parts(config: ModelConfig, params: Params) -> Result<Self> {
        config.validate()?;
        let reference = Params::init(&ModelConfig {
            seed: 0,
            ..config.clone()
        });
        let mut shapes = Vec::new();
        reference.for_each(|name, t| shapes.push((name.to_string(), t.dim())));
        let mut i = 0;
        let mut mismatch = None;
        params.for_each(|name, t| {
            match shapes.get(i) {
                Some((n, dim)) if n == name && *dim == t.dim() => {}
                _ => mismatch = mismatch.take().or(Some(name.to_string())),
            }
            i += 1;
        });
        if let Some(name) = mismatch {
            return Err(Error::invalid(format!(
                "parameter {name} does not match config"
            )));
        }
        if i != shapes.len() {
            return Err(Error::invalid("parameter count does not match config"));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    fn check_tokens(&self, x: &TokenSequence) -> Result<()> {
        if x.len() > self.config.max_seq_len {
            return Err(Error::invalid(format!(
                "sequence length {} exceeds max_seq_len {}",
                x.len(),
                self.config.max_seq_len
            )));
        }
        if let Some(t) = x.tokens().iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::invalid(format!(
                "token id {t} out of range for vocab of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer == 0 || layer > self.config.n_layers {
            return Err(Error::invalid(format!(
                "layer {layer} outside 1..={}",
                self.config.n_layers
            )));
        }
        Ok(())
    }

    fn embed(&self, tokens: &[usize]) -> Array2<f64> {
        let d = self.config.d_model;
        let mut x = Array2::zeros((tokens.len(), d));
        for (i, &t) in tokens.iter().enumerate() {
            let mut row = x.row_mut(i);
            row.assign(&self.params.tok_emb.row(t));
            row += &self.params.pos_emb.row(i);
        }
        x
    }

    /// Causal multi-head self-attention. Returns concatenated head outputs
    /// (before the output projection) and per-head probabilities.
    fn attention(
        &self,
        q: &Array2<f64>,
        k: &Array2<f64>,
        v: &Array2<f64>,
    ) -> (Array2<f64>, Vec<Array2<f64>>) {
        let n = q.nrows();
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut o = Array2::zeros(q.raw_dim());
        let mut all_probs = Vec::with_capacity(self.config.n_heads);
        for h in 0..self.config.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let (qh, kh, vh) = (q.slice(cols), k.slice(cols), v.slice(cols));
            let mut probs = Array2::zeros((n, n));
            for i in 0..n {
                let qi = qh.row(i);
                let mut scores: Vec<f64> = (0..=i).map(|j| qi.dot(&kh.row(j)) * scale).collect();
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for sc in scores.iter_mut() {
                    *sc = (*sc - max).exp();
                    total += *sc;
                }
                let mut out = o.slice_mut(s![i, h * dh..(h + 1) * dh]);
                for (j, sc) in scores.iter().enumerate() {
                    let p = sc / total;
                    probs[[i, j]] = p;
                    out.scaled_add(p, &vh.row(j));
                }
            }
            all_probs.push(probs);
        }
        (o, all_probs)
    }

    fn block_forward(
        &self,
        bp: &BlockParams,
        x: &mut Array2<f64>,
        cache: Option<&mut Vec<BlockCache>>,
    ) {
        let (a, ln1) = layer_norm(x, &bp.ln1_g, &bp.ln1_b);
        let q = a.dot(&bp.w_q);
        let k = a.dot(&bp.w_k);
        let v = a.dot(&bp.w_v);
        let (o, probs) = self.attention(&q, &k, &v);
        *x += &o.dot(&bp.w_o);
        let (m, ln2) = layer_norm(x, &bp.ln2_g, &bp.ln2_b);
        let u = m.dot(&bp.w_fc1) + &bp.b_fc1;
        let g = u.mapv(gelu);
        *x += &(g.dot(&bp.w_fc2) + &bp.b_fc2);
        if let Some(c) = cache {
            c.push(BlockCache {
                ln1,
                a,
                q,
                k,
                v,
                probs,
                o,
                ln2,
                m,
                u,
                g,
            });
        }
    }

    /// Core forward pass. `hook` sees the post-block residual of every layer
    /// (1-based) and may modify it. Stops early after `stop_after` blocks and
    /// then returns no logits.
    fn run(
        &self,
        x: &TokenSequence,
        hook: &mut dyn FnMut(usize, &mut Array2<f64>) -> Result<()>,
        stop_after: Option<usize>,
        mut cache: Option<&mut ForwardCache>,
    ) -> Result<Option<Array2<f64>>> {
        self.check_tokens(x)?;
        let mut h = self.embed(x.tokens());
        for (i, bp) in self.params.blocks.iter().enumerate() {
            self.block_forward(bp, &mut h, cache.as_mut().map(|c| &mut c.blocks));
            hook(i + 1, &mut h)?;
            if stop_after == Some(i + 1) {
                return Ok(None);
            }
        }
        let (xf, lnf) = layer_norm(&h, &self.params.lnf_g, &self.params.lnf_b);
        let logits = xf.dot(&self.params.w_out) + &self.params.b_out;
        if let Some(c) = cache {
            c.lnf = lnf;
            c.xf = xf;
        }
        Ok(Some(logits))
    }

    fn to_logit_vectors(logits: Array2<f64>) -> Result<Vec<LogitVector>> {
        logits
            .outer_iter()
            .map(|row| LogitVector::new(row.to_vec()))
            .collect()
    }

    /// Plain forward pass, capturing post-block residuals at `capture_layers`
    /// for every position.
    pub fn forward(&self, x: &TokenSequence, capture_layers: &[usize]) -> Result<ForwardOutput> {
        for &l in capture_layers {
            self.check_layer(l)?;
        }
        let mut layers = capture_layers.to_vec();
        layers.sort_unstable();
        layers.dedup();
        let mut captures = Vec::new();
        let mut hook = |layer: usize, h: &mut Array2<f64>| {
            if layers.binary_search(&layer).is_ok() {
                for (position, row) in h.outer_iter().enumerate() {
                    captures.push(ResidualCapture {
                        layer,
                        position,
                        vector: row.to_vec(),
                    });
                }
            }
            Ok(())
        };
        let logits = self.run(x, &mut hook, None, None)?.expect("full pass");
        Ok(ForwardOutput {
            logits: Self::to_logit_vectors(logits)?,
            captures,
        })
    }

    /// Post-block residual at `layer` for the last position, computing only
    /// the blocks up to `layer`.
    pub fn capture_last(&self, x: &TokenSequence, layer: usize) -> Result<Vec<f64>> {
        self.check_layer(layer)?;
        let mut out = Vec::new();
        let mut hook = |l: usize, h: &mut Array2<f64>| {
            if l == layer {
                out = h.row(h.nrows() - 1).to_vec();
            }
            Ok(())
        };
        self.run(x, &mut hook, Some(layer), None)?;
        Ok(out)
    }

    /// Forward pass with the residual at `spec.layer` rewritten by
    /// `spec.delta_fn` at the positions selected by the policy.
    pub fn forward_with_intervention(
        &self,
        x: &TokenSequence,
        spec: &InterventionSpec<'_>,
    ) -> Result<Vec<LogitVector>> {
        self.check_layer(spec.layer)?;
        let d = self.config.d_model;
        let mut hook = |layer: usize, h: &mut Array2<f64>| {
            if layer != spec.layer {
                return Ok(());
            }
            let n = h.nrows();
            let positions = match spec.position_policy {
                PositionPolicy::LastPosition => n - 1..n,
                PositionPolicy::AllPositions => 0..n,
            };
            for p in positions {
                let current = h.row(p).to_vec();
                let replacement = (spec.delta_fn)(&current);
                if replacement.len() != d {
                    return Err(Error::Intervention(format!(
                        "delta_fn returned {} entries, expected {d}",
                        replacement.len()
                    )));
                }
                if replacement.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Intervention(
                        "delta_fn returned a non-finite entry".into(),
                    ));
                }
                h.row_mut(p).assign(&Array1::from(replacement));
            }
            Ok(())
        };
        let logits = self.run(x, &mut hook, None, None)?.expect("full pass");
        Self::to_logit_vectors(logits)
    }

    /// Logits at the final position.
    pub fn final_logits(&self, x: &TokenSequence) -> Result<LogitVector> {
        let logits = self
            .run(x, &mut |_, _| Ok(()), None, None)?
            .expect("full pass");
        LogitVector::new(logits.row(logits.nrows() - 1).to_vec())
    }

    /// Softmax of the final-position logits at `temperature`.
    pub fn next_token_distribution(
        &self,
        x: &TokenSequence,
        temperature: f64,
    ) -> Result<Distribution> {
        softmax(&self.final_logits(x)?, temperature)
    }

    /// Forward pass that keeps the activations needed by [`Model::backward`].
    pub(crate) fn forward_cached(&self, x: &TokenSequence) -> Result<(Array2<f64>, ForwardCache)> {
        let d = self.config.d_model;
        let mut cache = ForwardCache {
            blocks: Vec::with_capacity(self.config.n_layers),
            lnf: LnCache {
                xhat: Array2::zeros((0, d)),
                rstd: Array1::zeros(0),
            },
            xf: Array2::zeros((0, d)),
        };
        let logits = self
            .run(x, &mut |_, _| Ok(()), None, Some(&mut cache))?
            .expect("full pass");
        Ok((logits, cache))
    }

    /// Accumulates parameter gradients of a scalar loss into `grads`, given
    /// the loss gradient with respect to the logits.
    pub(crate) fn backward(
        &self,
        tokens: &[usize],
        cache: &ForwardCache,
        dlogits: &Array2<f64>,
        grads: &mut Params,
    ) {
        let p = &self.params;
        grads.w_out += &cache.xf.t().dot(dlogits);
        grads.b_out += &dlogits.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dxf = dlogits.dot(&p.w_out.t());
        let mut dx = layer_norm_backward(
            &cache.lnf,
            &dxf,
            &p.lnf_g,
            &mut grads.lnf_g,
            &mut grads.lnf_b,
        );

        for (l, bc) in cache.blocks.iter().enumerate().rev() {
            let bp = &p.blocks[l];
            let bg = &mut grads.blocks[l];

            // MLP branch: x_out = x_mid + gelu(LN2(x_mid) W1 + b1) W2 + b2
            bg.w_fc2 += &bc.g.t().dot(&dx);
            bg.b_fc2 += &dx.sum_axis(Axis(0)).insert_axis(Axis(0));
            let dg = dx.dot(&bp.w_fc2.t());
            let du = &dg * &bc.u.mapv(gelu_grad);
            bg.w_fc1 += &bc.m.t().dot(&du);
            bg.b_fc1 += &du.sum_axis(Axis(0)).insert_axis(Axis(0));
            let dm = du.dot(&bp.w_fc1.t());
            dx += &layer_norm_backward(&bc.ln2, &dm, &bp.ln2_g, &mut bg.ln2_g, &mut bg.ln2_b);

            // Attention branch: x_mid = x_in + attn(LN1(x_in)) Wo
            bg.w_o += &bc.o.t().dot(&dx);
            let d_o = dx.dot(&bp.w_o.t());
            let (dq, dk, dv) = self.attention_backward(bc, d_o.view());
            bg.w_q += &bc.a.t().dot(&dq);
            bg.w_k += &bc.a.t().dot(&dk);
            bg.w_v += &bc.a.t().dot(&dv);
            let da = dq.dot(&bp.w_q.t()) + dk.dot(&bp.w_k.t()) + dv.dot(&bp.w_v.t());
            dx += &layer_norm_backward(&bc.ln1, &da, &bp.ln1_g, &mut bg.ln1_g, &mut bg.ln1_b);
        }

        for (i, &t) in tokens.iter().enumerate() {
            let row = dx.row(i);
            let mut te = grads.tok_emb.row_mut(t);
            te += &row;
            let mut pe = grads.pos_emb.row_mut(i);
            pe += &row;
        }
    }

    fn attention_backward(
        &self,
        bc: &BlockCache,
        d_o: ArrayView2<'_, f64>,
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let n = d_o.nrows();
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Array2::zeros(bc.q.raw_dim());
        let mut dk = Array2::zeros(bc.k.raw_dim());
        let mut dv = Array2::zeros(bc.v.raw_dim());
        for (h, probs) in bc.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let (qh, kh, vh) = (bc.q.slice(cols), bc.k.slice(cols), bc.v.slice(cols));
            let doh = d_o.slice(cols);
            for i in 0..n {
                let doi = doh.row(i);
                let dp: Vec<f64> = (0..=i).map(|j| doi.dot(&vh.row(j))).collect();
                let weighted: f64 = (0..=i).map(|j| probs[[i, j]] * dp[j]).sum();
                for j in 0..=i {
                    let pij = probs[[i, j]];
                    let mut dvj = dv.slice_mut(s![j, h * dh..(h + 1) * dh]);
                    dvj.scaled_add(pij, &doi);
                    let ds = pij * (dp[j] - weighted) * scale;
                    let mut dqi = dq.slice_mut(s![i, h * dh..(h + 1) * dh]);
                    dqi.scaled_add(ds, &kh.row(j));
                    let mut dkj = dk.slice_mut(s![j, h * dh..(h + 1) * dh]);
                    dkj.scaled_add(ds, &qh.row(i));
                }
            }
        }
        (dq, dk, dv)
    }
}

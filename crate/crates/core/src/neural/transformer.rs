//! Post-LayerNorm transformer encoder (BERT/RoBERTa layout) with backward pass,
//! so contextual encoders can be fine-tuned.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::{Dense, HasParams, Param};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(name: &str, dim: usize, eps: f64) -> Self {
        Self {
            gamma: Param::filled(format!("{name}.gamma"), &[dim], 1.0),
            beta: Param::zeros(format!("{name}.beta"), &[dim]),
            eps,
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mut xhat = x.to_owned();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, is) in xhat.outer_iter_mut().zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            *is = 1.0 / (var + self.eps).sqrt();
            let k = *is;
            row.mapv_inplace(|v| v * k);
        }
        let y = &xhat * &self.gamma.vec() + &self.beta.vec();
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: ArrayView2<'_, f64>) -> Array2<f64> {
        let d = dy.ncols() as f64;
        self.gamma.grad_vec_mut().scaled_add(1.0, &(&dy * &cache.xhat).sum_axis(Axis(0)));
        self.beta.grad_vec_mut().scaled_add(1.0, &dy.sum_axis(Axis(0)));
        let dxhat = &dy * &self.gamma.vec();
        let mut dx = Array2::zeros(dy.raw_dim());
        for t in 0..dy.nrows() {
            let g = dxhat.row(t);
            let xh = cache.xhat.row(t);
            let sum_g = g.sum();
            let sum_gx = g.dot(&xh);
            let k = cache.inv_std[t] / d;
            for j in 0..dy.ncols() {
                dx[[t, j]] = k * (d * g[j] - sum_g - xh[j] * sum_gx);
            }
        }
        dx
    }
}

impl HasParams for LayerNorm {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn gelu_derivative(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

fn softmax_rows(mut x: Array2<f64>) -> Array2<f64> {
    for mut row in x.outer_iter_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttention {
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub output: Dense,
    pub heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    context: Array2<f64>,
}

impl SelfAttention {
    pub fn new<R: Rng>(name: &str, dim: usize, heads: usize, std: f64, rng: &mut R) -> Self {
        let dense = |part: &str, rng: &mut R| Dense {
            weight: Param::normal(format!("{name}.{part}.weight"), &[dim, dim], std, rng),
            bias: Param::zeros(format!("{name}.{part}.bias"), &[dim]),
        };
        Self {
            query: dense("query", rng),
            key: dense("key", rng),
            value: dense("value", rng),
            output: dense("output", rng),
            heads,
        }
    }

    fn head_dim(&self) -> usize {
        self.query.output_dim() / self.heads
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, AttentionCache) {
        let hd = self.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let q = self.query.forward(x);
        let k = self.key.forward(x);
        let v = self.value.forward(x);
        let mut context = Array2::zeros(q.raw_dim());
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * hd..(h + 1) * hd];
            let scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            let p = softmax_rows(scores);
            context.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
            probs.push(p);
        }
        let out = self.output.forward(context.view());
        (out, AttentionCache { x: x.to_owned(), q, k, v, probs, context })
    }

    pub fn backward(&mut self, cache: &AttentionCache, dout: ArrayView2<'_, f64>) -> Array2<f64> {
        let hd = self.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let dcontext = self.output.backward(cache.context.view(), dout);
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for h in 0..self.heads {
            let cols = s![.., h * hd..(h + 1) * hd];
            let p = &cache.probs[h];
            let dctx = dcontext.slice(cols);
            dv.slice_mut(cols).assign(&p.t().dot(&dctx));
            let dp = dctx.dot(&cache.v.slice(cols).t());
            let mut ds = &dp * p;
            let row_sums = ds.sum_axis(Axis(1));
            for (mut row, (prow, rs)) in ds.outer_iter_mut().zip(p.outer_iter().zip(row_sums.iter())) {
                row.scaled_add(-rs, &prow);
            }
            ds *= scale;
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        let x = cache.x.view();
        self.query.backward(x, dq.view()) + self.key.backward(x, dk.view()) + self.value.backward(x, dv.view())
    }
}

impl HasParams for SelfAttention {
    fn params(&self) -> Vec<&Param> {
        [&self.query, &self.key, &self.value, &self.output]
            .into_iter()
            .flat_map(|d| d.params())
            .collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.query.params_mut();
        v.extend(self.key.params_mut());
        v.extend(self.value.params_mut());
        v.extend(self.output.params_mut());
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub attention: SelfAttention,
    pub attention_norm: LayerNorm,
    pub intermediate: Dense,
    pub output: Dense,
    pub output_norm: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct EncoderLayerCache {
    attn: AttentionCache,
    norm1: LayerNormCache,
    h1: Array2<f64>,
    inter_pre: Array2<f64>,
    inter_act: Array2<f64>,
    norm2: LayerNormCache,
}

impl EncoderLayer {
    pub fn new<R: Rng>(name: &str, dim: usize, heads: usize, ff: usize, eps: f64, std: f64, rng: &mut R) -> Self {
        Self {
            attention: SelfAttention::new(&format!("{name}.attention"), dim, heads, std, rng),
            attention_norm: LayerNorm::new(&format!("{name}.attention_norm"), dim, eps),
            intermediate: Dense {
                weight: Param::normal(format!("{name}.intermediate.weight"), &[dim, ff], std, rng),
                bias: Param::zeros(format!("{name}.intermediate.bias"), &[ff]),
            },
            output: Dense {
                weight: Param::normal(format!("{name}.output.weight"), &[ff, dim], std, rng),
                bias: Param::zeros(format!("{name}.output.bias"), &[dim]),
            },
            output_norm: LayerNorm::new(&format!("{name}.output_norm"), dim, eps),
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, EncoderLayerCache) {
        let (a, attn) = self.attention.forward(x);
        let (h1, norm1) = self.attention_norm.forward((&x + &a).view());
        let inter_pre = self.intermediate.forward(h1.view());
        let inter_act = inter_pre.mapv(gelu);
        let f = self.output.forward(inter_act.view());
        let (out, norm2) = self.output_norm.forward((&h1 + &f).view());
        (out, EncoderLayerCache { attn, norm1, h1, inter_pre, inter_act, norm2 })
    }

    pub fn backward(&mut self, cache: &EncoderLayerCache, dout: ArrayView2<'_, f64>) -> Array2<f64> {
        let d_sum2 = self.output_norm.backward(&cache.norm2, dout);
        let d_act = self.output.backward(cache.inter_act.view(), d_sum2.view());
        let d_pre = &d_act * &cache.inter_pre.mapv(gelu_derivative);
        let d_h1 = &d_sum2 + &self.intermediate.backward(cache.h1.view(), d_pre.view());
        let d_sum1 = self.attention_norm.backward(&cache.norm1, d_h1.view());
        &d_sum1 + &self.attention.backward(&cache.attn, d_sum1.view())
    }
}

impl HasParams for EncoderLayer {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.attention.params();
        v.extend(self.attention_norm.params());
        v.extend(self.intermediate.params());
        v.extend(self.output.params());
        v.extend(self.output_norm.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.attention.params_mut();
        v.extend(self.attention_norm.params_mut());
        v.extend(self.intermediate.params_mut());
        v.extend(self.output.params_mut());
        v.extend(self.output_norm.params_mut());
        v
    }
}

/// Shape of a [`TransformerEncoder`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformerShape {
    pub vocab: usize,
    pub max_positions: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub intermediate: usize,
    /// Position id of the first token (RoBERTa starts at `pad_id + 1`).
    pub position_offset: usize,
    pub layer_norm_eps: f64,
    pub token_type: bool,
}

/// Token + position (+ token type) embeddings, LayerNorm, then post-LN layers.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerEncoder {
    pub shape: TransformerShape,
    pub tokens: Param,
    pub positions: Param,
    pub token_type: Option<Param>,
    pub embedding_norm: LayerNorm,
    pub layers: Vec<EncoderLayer>,
}

#[derive(Debug, Clone)]
pub struct TransformerCache {
    ids: Vec<u32>,
    norm: LayerNormCache,
    layers: Vec<EncoderLayerCache>,
}

impl TransformerEncoder {
    pub fn new<R: Rng>(name: &str, shape: TransformerShape, std: f64, rng: &mut R) -> Result<Self> {
        if shape.heads == 0 || shape.dim % shape.heads != 0 {
            return Err(Error::shape(format!("dim {} not divisible by {} heads", shape.dim, shape.heads)));
        }
        let layers = (0..shape.layers)
            .map(|i| {
                EncoderLayer::new(
                    &format!("{name}.layer{i}"),
                    shape.dim,
                    shape.heads,
                    shape.intermediate,
                    shape.layer_norm_eps,
                    std,
                    rng,
                )
            })
            .collect();
        Ok(Self {
            shape,
            tokens: Param::normal(format!("{name}.tokens"), &[shape.vocab, shape.dim], std, rng),
            positions: Param::normal(format!("{name}.positions"), &[shape.max_positions, shape.dim], std, rng),
            token_type: shape
                .token_type
                .then(|| Param::normal(format!("{name}.token_type"), &[shape.dim], std, rng)),
            embedding_norm: LayerNorm::new(&format!("{name}.embedding_norm"), shape.dim, shape.layer_norm_eps),
            layers,
        })
    }

    pub fn dim(&self) -> usize {
        self.shape.dim
    }

    /// Longest sequence the position table supports.
    pub fn max_tokens(&self) -> usize {
        self.shape.max_positions.saturating_sub(self.shape.position_offset)
    }

    fn embed(&self, ids: &[u32]) -> Result<Array2<f64>> {
        let d = self.dim();
        if ids.is_empty() {
            return Err(Error::shape("encoder input is empty"));
        }
        if ids.len() > self.max_tokens() {
            return Err(Error::shape(format!(
                "{} tokens exceed the encoder's {} positions",
                ids.len(),
                self.max_tokens()
            )));
        }
        let mut x = Array2::zeros((ids.len(), d));
        for (t, &id) in ids.iter().enumerate() {
            let id = id as usize;
            if id >= self.shape.vocab {
                return Err(Error::TokenOutOfRange { id, size: self.shape.vocab });
            }
            let pos = self.shape.position_offset + t;
            let mut row = x.row_mut(t);
            for j in 0..d {
                row[j] = self.tokens.value[id * d + j] + self.positions.value[pos * d + j];
            }
            if let Some(tt) = &self.token_type {
                row += &tt.vec();
            }
        }
        Ok(x)
    }

    pub fn forward(&self, ids: &[u32]) -> Result<(Array2<f64>, TransformerCache)> {
        let (mut h, norm) = self.embedding_norm.forward(self.embed(ids)?.view());
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, c) = layer.forward(h.view());
            caches.push(c);
            h = out;
        }
        Ok((h, TransformerCache { ids: ids.to_vec(), norm, layers: caches }))
    }

    pub fn backward(&mut self, cache: &TransformerCache, dout: ArrayView2<'_, f64>) {
        let mut d = dout.to_owned();
        for (layer, c) in self.layers.iter_mut().zip(&cache.layers).rev() {
            d = layer.backward(c, d.view());
        }
        let demb = self.embedding_norm.backward(&cache.norm, d.view());
        let dim = self.dim();
        for (t, &id) in cache.ids.iter().enumerate() {
            let pos = self.shape.position_offset + t;
            for j in 0..dim {
                self.tokens.grad[id as usize * dim + j] += demb[[t, j]];
                self.positions.grad[pos * dim + j] += demb[[t, j]];
            }
        }
        if let Some(tt) = &mut self.token_type {
            tt.grad_vec_mut().scaled_add(1.0, &demb.sum_axis(Axis(0)));
        }
    }
}

impl HasParams for TransformerEncoder {
    fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.tokens, &self.positions];
        v.extend(self.token_type.iter());
        v.extend(self.embedding_norm.params());
        for l in &self.layers {
            v.extend(l.params());
        }
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.tokens, &mut self.positions];
        v.extend(self.token_type.iter_mut());
        v.extend(self.embedding_norm.params_mut());
        for l in &mut self.layers {
            v.extend(l.params_mut());
        }
        v
    }
}

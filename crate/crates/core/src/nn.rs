//! Dense building blocks recorded on a [`Tape`]: linear maps, MLPs, layer
//! norm, multi-head attention and the transformer feed-forward block.

use ndarray::Array2;
use rand::Rng;

use crate::params::{glorot, ParamId, ParamStore};
use crate::tape::{Tape, Var};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Gelu,
}

fn activate(t: &mut Tape, x: Var, act: Activation) -> Var {
    match act {
        Activation::Tanh => t.tanh(x),
        Activation::Gelu => t.gelu(x),
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), glorot(rng, fan_in, fan_out));
        let bias = Some(store.add(format!("{name}.bias"), Array2::zeros((1, fan_out))));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn without_bias<R: Rng>(store: &mut ParamStore, name: &str, rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), glorot(rng, fan_in, fan_out));
        Self {
            weight,
            bias: None,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let w = t.param(self.weight);
        let y = t.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = t.param(b);
                t.add_row(y, b)
            }
            None => y,
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

/// Stack of linear layers. The activation follows every hidden layer, and
/// the last layer too when `activate_last` is set.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
    pub activate_last: bool,
}

impl Mlp {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        rng: &mut R,
        widths: &[usize],
        activation: Activation,
        activate_last: bool,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), rng, w[0], w[1]))
            .collect();
        Self {
            layers,
            activation,
            activate_last,
        }
    }

    pub fn forward(&self, t: &mut Tape, mut x: Var) -> Var {
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(t, x);
            if i + 1 < n || self.activate_last {
                x = activate(t, x, self.activation);
            }
        }
        x
    }

    pub fn last(&self) -> &Linear {
        self.layers.last().expect("non-empty")
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| l.ids()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Array2::ones((1, width))),
            bias: store.add(format!("{name}.bias"), Array2::zeros((1, width))),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let g = t.param(self.gain);
        let b = t.param(self.bias);
        t.layer_norm(x, g, b, LN_EPS)
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![self.gain, self.bias]
    }
}

/// Multi-head scaled dot-product attention with input and output projections.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub width: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, rng: &mut R, width: usize, heads: usize) -> Self {
        assert!(heads > 0 && width % heads == 0, "width {width} not divisible by {heads} heads");
        Self {
            query: Linear::new(store, &format!("{name}.query"), rng, width, width),
            key: Linear::new(store, &format!("{name}.key"), rng, width, width),
            value: Linear::new(store, &format!("{name}.value"), rng, width, width),
            output: Linear::new(store, &format!("{name}.output"), rng, width, width),
            heads,
            width,
        }
    }

    pub fn forward(&self, t: &mut Tape, queries: Var, keys: Var) -> Var {
        self.forward_with_weights(t, queries, keys).0
    }

    /// Returns the output together with the per-head attention matrices
    /// (`queries × keys`).
    pub fn forward_with_weights(&self, t: &mut Tape, queries: Var, keys: Var) -> (Var, Vec<Var>) {
        let q = self.query.forward(t, queries);
        let k = self.key.forward(t, keys);
        let v = self.value.forward(t, keys);
        let dh = self.width / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = t.slice_cols(q, h * dh, dh);
            let kh = t.slice_cols(k, h * dh, dh);
            let vh = t.slice_cols(v, h * dh, dh);
            let kt = t.transpose(kh);
            let scores = t.matmul(qh, kt);
            let scores = t.scale(scores, scale);
            let a = t.softmax(scores);
            weights.push(a);
            outs.push(t.matmul(a, vh));
        }
        let cat = if outs.len() == 1 { outs[0] } else { t.concat_cols(&outs) };
        (self.output.forward(t, cat), weights)
    }

    pub fn ids(&self) -> Vec<ParamId> {
        [&self.query, &self.key, &self.value, &self.output]
            .iter()
            .flat_map(|l| l.ids())
            .collect()
    }
}

/// Position-wise feed-forward block: `width → hidden → width` with GELU.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, rng: &mut R, width: usize, hidden: usize) -> Self {
        Self {
            inner: Linear::new(store, &format!("{name}.inner"), rng, width, hidden),
            outer: Linear::new(store, &format!("{name}.outer"), rng, hidden, width),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let h = self.inner.forward(t, x);
        let h = t.gelu(h);
        self.outer.forward(t, h)
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.inner.ids().into_iter().chain(self.outer.ids()).collect()
    }
}

/// Standard pre-norm transformer encoder layer (self-attention + FFN).
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub norm_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl EncoderLayer {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, rng: &mut R, width: usize, heads: usize) -> Self {
        Self {
            norm_attn: LayerNorm::new(store, &format!("{name}.norm_attn"), width),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), rng, width, heads),
            norm_ffn: LayerNorm::new(store, &format!("{name}.norm_ffn"), width),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), rng, width, 4 * width),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let n = self.norm_attn.forward(t, x);
        let a = self.attn.forward(t, n, n);
        let x = t.add(x, a);
        let n = self.norm_ffn.forward(t, x);
        let f = self.ffn.forward(t, n);
        t.add(x, f)
    }

    /// Output projections of the two residual branches.
    pub fn residual_outputs(&self) -> Vec<ParamId> {
        self.attn.output.ids().into_iter().chain(self.ffn.outer.ids()).collect()
    }
}

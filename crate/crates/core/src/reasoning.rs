//! Interaction-perceptive transformer stack.
//!
//! Joint tokens attend to each other (SA), then to the interaction tokens
//! injected at that depth (CA), then pass through an FFN. Every residual
//! update is rescaled per frequency channel by the layer's schedule vector
//! times a learned positive gate.

use ndarray::Array1;
use rand::Rng;

use crate::config::{HhiGranularity, InjectionStep};
use crate::error::{HumofError, Result};
use crate::hhi::HhiTokens;
use crate::nn::{Activation, FeedForward, LayerNorm, Mlp, MultiHeadAttention};
use crate::params::{ParamId, ParamStore};
use crate::spectral::RescaleSchedule;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone)]
pub struct ReasoningLayer {
    pub norm_sa: LayerNorm,
    pub sa: MultiHeadAttention,
    pub norm_ca: LayerNorm,
    pub norm_kv: LayerNorm,
    pub ca: MultiHeadAttention,
    pub norm_ffn: LayerNorm,
    pub ffn: FeedForward,
    /// `d → d → C′` with tanh; the last layer starts at zero so the gate is 1.
    pub alpha: Mlp,
    pub width: usize,
}

impl ReasoningLayer {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, rng: &mut R, width: usize, heads: usize) -> Self {
        let alpha = Mlp::new(
            store,
            &format!("{name}.alpha"),
            rng,
            &[width, width, width],
            Activation::Tanh,
            false,
        );
        for id in alpha.last().ids() {
            store.zero(id);
        }
        Self {
            norm_sa: LayerNorm::new(store, &format!("{name}.norm_sa"), width),
            sa: MultiHeadAttention::new(store, &format!("{name}.sa"), rng, width, heads),
            norm_ca: LayerNorm::new(store, &format!("{name}.norm_ca"), width),
            norm_kv: LayerNorm::new(store, &format!("{name}.norm_kv"), width),
            ca: MultiHeadAttention::new(store, &format!("{name}.ca"), rng, width, heads),
            norm_ffn: LayerNorm::new(store, &format!("{name}.norm_ffn"), width),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), rng, width, 4 * width),
            alpha,
            width,
        }
    }

    /// Multiplies every row of `tokens` by `v ⊙ exp(MLP(mean of rows))`.
    pub fn adaptive_rescale(&self, t: &mut Tape, tokens: Var, v: Var) -> Var {
        let mean = t.mean_rows(tokens);
        let a = self.alpha.forward(t, mean);
        let gate = t.exp(a);
        let gate = t.mul(gate, v);
        t.mul_row(tokens, gate)
    }

    /// One layer: `x += rescale(SA)`, `x += rescale(CA)`, `x += rescale(FFN)`.
    /// With no interaction tokens the CA update is skipped.
    pub fn forward(&self, t: &mut Tape, x: Var, interaction: Option<Var>, v: &Array1<f64>) -> Result<Var> {
        let (_, w) = t.shape(x);
        if w != self.width || v.len() != self.width {
            return Err(HumofError::BadShape(format!(
                "reasoning layer of width {} got tokens of width {w} and rescale of length {}",
                self.width,
                v.len()
            )));
        }
        if let Some(kv) = interaction {
            let (_, kw) = t.shape(kv);
            if kw != self.width {
                return Err(HumofError::BadShape(format!(
                    "interaction tokens of width {kw}, expected {}",
                    self.width
                )));
            }
        }
        let v = t.input(v.clone().insert_axis(ndarray::Axis(0)));

        let n = self.norm_sa.forward(t, x);
        let u = self.sa.forward(t, n, n);
        let u = self.adaptive_rescale(t, u, v);
        let mut x = t.add(x, u);

        if let Some(kv) = interaction.filter(|&kv| t.shape(kv).0 > 0) {
            let q = self.norm_ca.forward(t, x);
            let k = self.norm_kv.forward(t, kv);
            let u = self.ca.forward(t, q, k);
            let u = self.adaptive_rescale(t, u, v);
            x = t.add(x, u);
        }

        let n = self.norm_ffn.forward(t, x);
        let u = self.ffn.forward(t, n);
        let u = self.adaptive_rescale(t, u, v);
        Ok(t.add(x, u))
    }

    /// Output projections of the three residual branches.
    pub fn residual_outputs(&self) -> Vec<ParamId> {
        let mut ids = self.sa.output.ids();
        ids.extend(self.ca.output.ids());
        ids.extend(self.ffn.outer.ids());
        ids
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for n in [&self.norm_sa, &self.norm_ca, &self.norm_kv, &self.norm_ffn] {
            ids.extend(n.ids());
        }
        ids.extend(self.sa.ids());
        ids.extend(self.ca.ids());
        ids.extend(self.ffn.ids());
        ids.extend(self.alpha.ids());
        ids
    }
}

/// Interaction inputs available to the stack.
#[derive(Debug, Clone, Default)]
pub struct InteractionTokens {
    pub hhi: Option<HhiTokens>,
    /// Scene tokens of levels 1, 2, 3 (index `b - 1`).
    pub hsi: Option<Vec<Var>>,
}

#[derive(Debug, Clone)]
pub struct ReasoningStack {
    pub layers: Vec<ReasoningLayer>,
}

/// Result of a full pass: final tokens and per-layer interaction token counts.
#[derive(Debug, Clone)]
pub struct ReasoningOutput {
    pub tokens: Var,
    pub counts: Vec<usize>,
}

impl ReasoningStack {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, rng: &mut R, layers: usize, width: usize, heads: usize) -> Self {
        Self {
            layers: (0..layers)
                .map(|l| ReasoningLayer::new(store, &format!("{name}.{l}"), rng, width, heads))
                .collect(),
        }
    }

    /// Interaction tokens for one schedule step, or `None` when there are none.
    pub fn interaction_for(t: &mut Tape, inputs: &InteractionTokens, step: &InjectionStep) -> Option<Var> {
        let mut parts = Vec::new();
        if let Some(levels) = &inputs.hsi {
            parts.push(levels[step.hsi_level - 1]);
        }
        if let Some(hhi) = &inputs.hhi {
            parts.push(match step.hhi {
                HhiGranularity::Body => hhi.body,
                HhiGranularity::Joint => hhi.joint,
            });
        }
        parts.retain(|&p| t.shape(p).0 > 0);
        match parts.len() {
            0 => None,
            1 => Some(parts[0]),
            _ => Some(t.concat_rows(&parts)),
        }
    }

    pub fn forward(
        &self,
        t: &mut Tape,
        x: Var,
        inputs: &InteractionTokens,
        schedule: &[InjectionStep],
        rescale: &RescaleSchedule,
    ) -> Result<ReasoningOutput> {
        if schedule.len() != self.layers.len() || rescale.layers() != self.layers.len() {
            return Err(HumofError::InvalidConfig(format!(
                "{} layers but schedule of {} and rescale schedule of {}",
                self.layers.len(),
                schedule.len(),
                rescale.layers()
            )));
        }
        let mut x = x;
        let mut counts = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let kv = Self::interaction_for(t, inputs, &schedule[l]);
            counts.push(kv.map_or(0, |kv| t.shape(kv).0));
            x = layer.forward(t, x, kv, rescale.layer(l + 1))?;
        }
        Ok(ReasoningOutput { tokens: x, counts })
    }

    pub fn residual_outputs(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| l.residual_outputs()).collect()
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| l.ids()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_schedule;
    use crate::params::normal;
    use crate::spectral::make_rescale_schedule;
    use ndarray::{Array2, Axis};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn perturb_all(store: &mut ParamStore, rng: &mut ChaCha8Rng, ids: &[ParamId]) {
        for &id in ids {
            let (r, c) = store.get(id).dim();
            let noise = normal(rng, r, c, 0.3);
            let v = store.get(id) + &noise;
            store.set(id, v);
        }
    }

    #[test]
    fn rescale_identity_and_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let layer = ReasoningLayer::new(&mut store, "r", &mut rng, 12, 2);
        let x = normal(&mut rng, 4, 12, 1.0);
        let mut t = Tape::new(&store);
        let xv = t.input(x.clone());
        let ones = t.input(Array2::ones((1, 12)));
        let out = layer.adaptive_rescale(&mut t, xv, ones);
        assert_eq!(t.value(out), &x);
        let half = t.input(Array2::from_elem((1, 12), 0.5));
        let out = layer.adaptive_rescale(&mut t, xv, half);
        assert_eq!(t.value(out), &(&x * 0.5));
    }

    #[test]
    fn rescale_matches_composed_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let layer = ReasoningLayer::new(&mut store, "r", &mut rng, 6, 2);
        perturb_all(&mut store, &mut rng, &layer.alpha.ids());
        let x = normal(&mut rng, 5, 6, 1.0);
        let v = normal(&mut rng, 1, 6, 1.0);
        let mut t = Tape::new(&store);
        let xv = t.input(x.clone());
        let vv = t.input(v.clone());
        let out = layer.adaptive_rescale(&mut t, xv, vv);
        let out = t.value(out).clone();

        let mean = x.mean_axis(Axis(0)).unwrap().insert_axis(Axis(0));
        let l0 = &layer.alpha.layers[0];
        let l1 = &layer.alpha.layers[1];
        let h = (mean.dot(store.get(l0.weight)) + store.get(l0.bias.unwrap())).mapv(f64::tanh);
        let a = (h.dot(store.get(l1.weight)) + store.get(l1.bias.unwrap())).mapv(f64::exp);
        for i in 0..5 {
            for c in 0..6 {
                let want = x[[i, c]] * v[[0, c]] * a[[0, c]];
                assert!((out[[i, c]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_residual_outputs_make_layer_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let layer = ReasoningLayer::new(&mut store, "r", &mut rng, 12, 4);
        for id in layer.residual_outputs() {
            store.zero(id);
        }
        let x = normal(&mut rng, 4, 12, 1.0);
        let kv = normal(&mut rng, 3, 12, 1.0);
        let v = Array1::ones(12);
        let mut t = Tape::new(&store);
        let xv = t.input(x.clone());
        let out = layer.forward(&mut t, xv, None, &v).unwrap();
        assert_eq!(t.value(out), &x);
        let kvv = t.input(kv);
        let out = layer.forward(&mut t, xv, Some(kvv), &v).unwrap();
        assert_eq!(t.value(out), &x);
    }

    #[test]
    fn empty_interaction_skips_cross_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let layer = ReasoningLayer::new(&mut store, "r", &mut rng, 12, 4);
        let x = normal(&mut rng, 4, 12, 1.0);
        let v = Array1::from_elem(12, 0.7);
        let mut t = Tape::new(&store);
        let xv = t.input(x);
        let a = layer.forward(&mut t, xv, None, &v).unwrap();
        let empty = t.zeros(0, 12);
        let b = layer.forward(&mut t, xv, Some(empty), &v).unwrap();
        assert_eq!(t.value(a), t.value(b));
    }

    #[test]
    fn singleton_key_gets_full_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let layer = ReasoningLayer::new(&mut store, "r", &mut rng, 6, 1);
        let x = normal(&mut rng, 4, 6, 1.0);
        let mut t = Tape::new(&store);
        let q = t.input(x.clone());
        let kv = t.input(x.slice(ndarray::s![1..2, ..]).to_owned());
        let (_, w) = layer.ca.forward_with_weights(&mut t, q, kv);
        assert!(t.value(w[0]).iter().all(|&a| a == 1.0));
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let layer = ReasoningLayer::new(&mut store, "r", &mut rng, 6, 1);
        let mut t = Tape::new(&store);
        let x = t.input(Array2::zeros((4, 6)));
        let kv = t.input(Array2::zeros((2, 5)));
        assert!(matches!(
            layer.forward(&mut t, x, Some(kv), &Array1::ones(6)),
            Err(HumofError::BadShape(_))
        ));
        let bad = t.input(Array2::zeros((4, 5)));
        assert!(layer.forward(&mut t, bad, None, &Array1::ones(6)).is_err());
    }

    // Plain-loop reference implementation of one layer.
    mod naive {
        use super::*;

        pub fn linear(store: &ParamStore, l: &crate::nn::Linear, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
            let w = store.get(l.weight);
            x.iter()
                .map(|row| {
                    (0..w.ncols())
                        .map(|o| {
                            let mut s = l.bias.map_or(0.0, |b| store.get(b)[[0, o]]);
                            for (i, xi) in row.iter().enumerate() {
                                s += xi * w[[i, o]];
                            }
                            s
                        })
                        .collect()
                })
                .collect()
        }

        pub fn norm(store: &ParamStore, n: &LayerNorm, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
            x.iter()
                .map(|row| {
                    let m = row.iter().sum::<f64>() / row.len() as f64;
                    let var = row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / row.len() as f64;
                    row.iter()
                        .enumerate()
                        .map(|(i, v)| (v - m) / (var + crate::nn::LN_EPS).sqrt() * store.get(n.gain)[[0, i]] + store.get(n.bias)[[0, i]])
                        .collect()
                })
                .collect()
        }

        pub fn attention(store: &ParamStore, a: &MultiHeadAttention, q: &[Vec<f64>], kv: &[Vec<f64>]) -> Vec<Vec<f64>> {
            let qs = linear(store, &a.query, q);
            let ks = linear(store, &a.key, kv);
            let vs = linear(store, &a.value, kv);
            let dh = a.width / a.heads;
            let mut cat = vec![vec![0.0; a.width]; q.len()];
            for h in 0..a.heads {
                for i in 0..q.len() {
                    let scores: Vec<f64> = (0..kv.len())
                        .map(|j| (0..dh).map(|c| qs[i][h * dh + c] * ks[j][h * dh + c]).sum::<f64>() / (dh as f64).sqrt())
                        .collect();
                    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                    let z: f64 = e.iter().sum();
                    for j in 0..kv.len() {
                        for c in 0..dh {
                            cat[i][h * dh + c] += e[j] / z * vs[j][h * dh + c];
                        }
                    }
                }
            }
            linear(store, &a.output, &cat)
        }

        fn gelu(v: f64) -> f64 {
            0.5 * v * (1.0 + (0.797_884_560_802_865_4 * (v + 0.044_715 * v.powi(3))).tanh())
        }

        fn rescale(store: &ParamStore, layer: &ReasoningLayer, u: Vec<Vec<f64>>, v: &[f64]) -> Vec<Vec<f64>> {
            let w = u[0].len();
            let mean: Vec<f64> = (0..w).map(|c| u.iter().map(|r| r[c]).sum::<f64>() / u.len() as f64).collect();
            let h: Vec<Vec<f64>> = linear(store, &layer.alpha.layers[0], &[mean])
                .into_iter()
                .map(|r| r.into_iter().map(f64::tanh).collect())
                .collect();
            let a = &linear(store, &layer.alpha.layers[1], &h)[0];
            u.into_iter()
                .map(|r| r.iter().enumerate().map(|(c, x)| x * v[c] * a[c].exp()).collect())
                .collect()
        }

        fn add(x: &mut [Vec<f64>], u: &[Vec<f64>]) {
            for (a, b) in x.iter_mut().zip(u) {
                for (p, q) in a.iter_mut().zip(b) {
                    *p += q;
                }
            }
        }

        pub fn layer(store: &ParamStore, layer: &ReasoningLayer, x: &[Vec<f64>], kv: &[Vec<f64>], v: &[f64]) -> Vec<Vec<f64>> {
            let mut x = x.to_vec();
            let n = norm(store, &layer.norm_sa, &x);
            let u = attention(store, &layer.sa, &n, &n);
            add(&mut x, &rescale(store, layer, u, v));
            if !kv.is_empty() {
                let q = norm(store, &layer.norm_ca, &x);
                let k = norm(store, &layer.norm_kv, kv);
                let u = attention(store, &layer.ca, &q, &k);
                add(&mut x, &rescale(store, layer, u, v));
            }
            let n = norm(store, &layer.norm_ffn, &x);
            let h: Vec<Vec<f64>> = linear(store, &layer.ffn.inner, &n)
                .into_iter()
                .map(|r| r.into_iter().map(gelu).collect())
                .collect();
            let u = linear(store, &layer.ffn.outer, &h);
            add(&mut x, &rescale(store, layer, u, v));
            x
        }
    }

    fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
        a.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn layer_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let layer = ReasoningLayer::new(&mut store, "r", &mut rng, 6, 2);
        let all: Vec<ParamId> = layer.ids();
        perturb_all(&mut store, &mut rng, &all);
        let x = normal(&mut rng, 4, 6, 1.0);
        let kv = normal(&mut rng, 3, 6, 1.0);
        let v = Array1::from_vec(vec![1.0, 0.9, 0.4, 1.0, 0.8, 0.3]);
        let mut t = Tape::new(&store);
        let xv = t.input(x.clone());
        let kvv = t.input(kv.clone());
        let out = layer.forward(&mut t, xv, Some(kvv), &v).unwrap();
        let want = naive::layer(&store, &layer, &rows(&x), &rows(&kv), v.as_slice().unwrap());
        for i in 0..4 {
            for c in 0..6 {
                assert!((t.value(out)[[i, c]] - want[i][c]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn update_high_frequency_channel_is_one_sixth_of_gate() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let coeffs = 4;
        let width = 3 * coeffs;
        let layer = ReasoningLayer::new(&mut store, "r", &mut rng, width, 2);
        perturb_all(&mut store, &mut rng, &layer.alpha.ids());
        let sched = make_rescale_schedule(6, coeffs);
        let x = normal(&mut rng, 5, width, 1.0);
        let mut t = Tape::new(&store);
        let xv = t.input(x);
        let n = layer.norm_sa.forward(&mut t, xv);
        let u = layer.sa.forward(&mut t, n, n);
        let v = t.input(sched.layer(1).clone().insert_axis(Axis(0)));
        let scaled = layer.adaptive_rescale(&mut t, u, v);
        let mean = t.mean_rows(u);
        let a = layer.alpha.forward(&mut t, mean);
        let gate = t.exp(a);
        let (u, scaled, gate) = (t.value(u), t.value(scaled), t.value(gate));
        for axis in 0..3 {
            let c = axis * coeffs + coeffs - 1;
            for i in 0..5 {
                let ratio = scaled[[i, c]] / (u[[i, c]] * gate[[0, c]]);
                assert!((ratio - 1.0 / 6.0).abs() < 1e-12);
            }
            let c0 = axis * coeffs;
            assert!((scaled[[0, c0]] / (u[[0, c0]] * gate[[0, c0]]) - 1.0).abs() < 1e-12);
        }
    }

    fn fake_inputs(t: &mut Tape, k: usize, j: usize, d: usize, levels: &[usize]) -> InteractionTokens {
        InteractionTokens {
            hhi: Some(HhiTokens {
                body: t.input(Array2::from_elem((k, d), 0.1)),
                joint: t.input(Array2::from_elem((k * j, d), -0.1)),
            }),
            hsi: Some(levels.iter().map(|&n| t.input(Array2::from_elem((n, d), 0.2))).collect()),
        }
    }

    #[test]
    fn default_schedule_token_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let stack = ReasoningStack::new(&mut store, "reason", &mut rng, 6, 60, 4);
        let sched = make_rescale_schedule(6, 20);
        let mut t = Tape::new(&store);
        let x = t.input(normal(&mut rng, 13, 60, 1.0));
        let inputs = fake_inputs(&mut t, 2, 13, 60, &[256, 64, 16]);
        let out = stack.forward(&mut t, x, &inputs, &default_schedule(), &sched).unwrap();
        assert_eq!(out.counts, vec![18, 18, 66, 66, 282, 282]);
        let inputs = fake_inputs(&mut t, 0, 13, 60, &[256, 64, 16]);
        let out = stack.forward(&mut t, x, &inputs, &default_schedule(), &sched).unwrap();
        assert_eq!(out.counts, vec![16, 16, 64, 64, 256, 256]);
        assert!(t.value(out.tokens).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn stack_equals_sequential_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut store = ParamStore::new();
        let stack = ReasoningStack::new(&mut store, "reason", &mut rng, 6, 12, 2);
        let all = stack.ids();
        perturb_all(&mut store, &mut rng, &all);
        let sched = make_rescale_schedule(6, 4);
        let mut t = Tape::new(&store);
        let x = t.input(normal(&mut rng, 4, 12, 1.0));
        let inputs = InteractionTokens {
            hhi: Some(HhiTokens {
                body: t.input(normal(&mut rng, 1, 12, 1.0)),
                joint: t.input(normal(&mut rng, 4, 12, 1.0)),
            }),
            hsi: Some((0..3).map(|b| t.input(normal(&mut rng, 8 >> b, 12, 1.0))).collect()),
        };
        let out = stack.forward(&mut t, x, &inputs, &default_schedule(), &sched).unwrap();
        let steps = default_schedule();
        let mut y = x;
        for (l, layer) in stack.layers.iter().enumerate() {
            let level = inputs.hsi.as_ref().unwrap()[steps[l].hsi_level - 1];
            let hhi = inputs.hhi.unwrap();
            let h = if steps[l].hhi == HhiGranularity::Body { hhi.body } else { hhi.joint };
            let kv = t.concat_rows(&[level, h]);
            y = layer.forward(&mut t, y, Some(kv), sched.layer(l + 1)).unwrap();
        }
        assert_eq!(t.value(out.tokens), t.value(y));
    }

    #[test]
    fn zero_residual_outputs_make_stack_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let stack = ReasoningStack::new(&mut store, "reason", &mut rng, 6, 12, 2);
        for id in stack.residual_outputs() {
            store.zero(id);
        }
        let sched = make_rescale_schedule(6, 4);
        let mut t = Tape::new(&store);
        let x0 = normal(&mut rng, 4, 12, 1.0);
        let x = t.input(x0.clone());
        let inputs = fake_inputs(&mut t, 1, 4, 12, &[8, 4, 2]);
        let out = stack.forward(&mut t, x, &inputs, &default_schedule(), &sched).unwrap();
        assert_eq!(t.value(out.tokens), &x0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn interaction_row_order_does_not_matter(seed in any::<u64>(), m in 2usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let layer = ReasoningLayer::new(&mut store, "r", &mut rng, 6, 2);
            let all = layer.ids();
            perturb_all(&mut store, &mut rng, &all);
            let x = normal(&mut rng, 4, 6, 1.0);
            let kv = normal(&mut rng, m, 6, 1.0);
            let mut order: Vec<usize> = (0..m).collect();
            order.reverse();
            order.rotate_left(seed as usize % m);
            let permuted = kv.select(Axis(0), &order);
            let v = Array1::from_elem(6, 0.9);
            let mut t = Tape::new(&store);
            let xv = t.input(x);
            let a = t.input(kv);
            let b = t.input(permuted);
            let ya = layer.forward(&mut t, xv, Some(a), &v).unwrap();
            let yb = layer.forward(&mut t, xv, Some(b), &v).unwrap();
            let diff = (t.value(ya) - t.value(yb)).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
            prop_assert!(diff < 1e-9);
        }
    }
}

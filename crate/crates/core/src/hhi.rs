//! Human-human interaction tokens.
//!
//! Every interactive person contributes a self encoding (their own motion,
//! refined by a small transformer together with a learnable body token) and a
//! relation encoding (spectra of Gaussian-mapped nearest-joint distances to
//! the target). Both are fused into one body-level token and `J` joint-level
//! tokens per person.

use ndarray::{s, Array2};
use rand::Rng;

use crate::data::MotionSequence;
use crate::encoder::MotionEncoder;
use crate::error::{HumofError, Result};
use crate::nn::{Activation, EncoderLayer, Linear, Mlp};
use crate::params::{normal, ParamId, ParamStore};
use crate::spectral::{dct_rows_padded, gaussian_map};
use crate::tape::{Tape, Var};

/// Self encoding of one person: body token (`1 × 3C`) and joint tokens (`J × 3C`).
#[derive(Debug, Clone, Copy)]
pub struct SelfEncoding {
    pub body: Var,
    pub joints: Var,
}

/// Distance spectra between one interactive person and the target.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationSpectra {
    /// Row `j`: spectrum of person joint `j`'s proximity to the nearest target joint (`J × C`).
    pub joint_to_target: Array2<f64>,
    /// Row `i`: spectrum of target joint `i`'s proximity to the nearest person joint (`J × C`).
    pub target_to_person: Array2<f64>,
}

/// HHI token matrices at model width: `K × d` body rows and `K·J × d` joint rows.
#[derive(Debug, Clone, Copy)]
pub struct HhiTokens {
    pub body: Var,
    pub joint: Var,
}

/// `out[j, t] = min_i ‖from_j^t − to_i^t‖` over the shared frames.
pub fn nearest_joint_distances(from: &MotionSequence, to: &MotionSequence) -> Array2<f64> {
    let (jf, h, _) = from.coords.dim();
    let jt = to.joints();
    let mut out = Array2::zeros((jf, h));
    for j in 0..jf {
        for t in 0..h {
            let p = from.joint_pos(j, t);
            let mut best = f64::INFINITY;
            for i in 0..jt {
                let q = to.joint_pos(i, t);
                let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                best = best.min(d2);
            }
            out[[j, t]] = best.sqrt();
        }
    }
    out
}

/// Gaussian-mapped nearest distances in both directions, transformed to `coeffs` DCT coefficients.
pub fn relation_spectra(
    target: &MotionSequence,
    person: &MotionSequence,
    sigma: f64,
    coeffs: usize,
) -> Result<RelationSpectra> {
    if target.frames() != person.frames() || target.joints() != person.joints() {
        return Err(HumofError::BadShape("target and person windows differ".into()));
    }
    let map = |d: Array2<f64>| -> Result<Array2<f64>> {
        let mut out = d;
        for v in out.iter_mut() {
            *v = gaussian_map(*v, sigma)?;
        }
        Ok(out)
    };
    let to_target = map(nearest_joint_distances(person, target))?;
    let to_person = map(nearest_joint_distances(target, person))?;
    Ok(RelationSpectra {
        joint_to_target: dct_rows_padded(to_target.view(), coeffs)?,
        target_to_person: dct_rows_padded(to_person.view(), coeffs)?,
    })
}

/// Parameters of the HHI branch.
#[derive(Debug, Clone)]
pub struct HhiModule {
    pub encoder: MotionEncoder,
    pub body_token: ParamId,
    pub self_layers: Vec<EncoderLayer>,
    /// `2J·C → 2·3C → 3C`, tanh between.
    pub body_mlp: Mlp,
    pub body_proj: Linear,
    pub joint_proj: Linear,
    pub joints: usize,
    pub coeffs: usize,
    pub sigma: f64,
}

impl HhiModule {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        rng: &mut R,
        joints: usize,
        coeffs: usize,
        horizon: usize,
        gcn_blocks: usize,
        self_layers: usize,
        heads: usize,
        d_model: usize,
        sigma: f64,
    ) -> Self {
        let width = 3 * coeffs;
        let encoder = MotionEncoder::new(store, &format!("{name}.encoder"), rng, joints, coeffs, horizon, gcn_blocks);
        let body_token = store.add(format!("{name}.body_token"), normal(rng, 1, width, 0.02));
        let self_layers = (0..self_layers)
            .map(|l| EncoderLayer::new(store, &format!("{name}.self.{l}"), rng, width, heads))
            .collect();
        let body_mlp = Mlp::new(
            store,
            &format!("{name}.relation_mlp"),
            rng,
            &[2 * joints * coeffs, 2 * width, width],
            Activation::Tanh,
            false,
        );
        let body_proj = Linear::new(store, &format!("{name}.body_proj"), rng, 2 * width, d_model);
        let joint_proj = Linear::new(store, &format!("{name}.joint_proj"), rng, width + coeffs, d_model);
        Self {
            encoder,
            body_token,
            self_layers,
            body_mlp,
            body_proj,
            joint_proj,
            joints,
            coeffs,
            sigma,
        }
    }

    /// Encodes the person, prepends the body token and runs the self-encoding transformer.
    pub fn self_encode(&self, t: &mut Tape, person: &MotionSequence) -> Result<SelfEncoding> {
        let joints = self.encoder.encode(t, person)?;
        let body = t.param(self.body_token);
        let mut x = t.concat_rows(&[body, joints]);
        for layer in &self.self_layers {
            x = layer.forward(t, x);
        }
        Ok(SelfEncoding {
            body: t.slice_rows(x, 0, 1),
            joints: t.slice_rows(x, 1, self.joints),
        })
    }

    /// Body-level relation vector `MLP(concat(D_1..D_J, D'_1..D'_J))`, `1 × 3C`.
    pub fn relation_body(&self, t: &mut Tape, rel: &RelationSpectra) -> Var {
        let jc = self.joints * self.coeffs;
        let mut flat = Array2::zeros((1, 2 * jc));
        flat.slice_mut(s![0, ..jc])
            .assign(&rel.joint_to_target.iter().cloned().collect::<ndarray::Array1<f64>>());
        flat.slice_mut(s![0, jc..])
            .assign(&rel.target_to_person.iter().cloned().collect::<ndarray::Array1<f64>>());
        let x = t.input(flat);
        self.body_mlp.forward(t, x)
    }

    /// Token rows for one person: body `1 × d` and joints `J × d`.
    pub fn person_tokens(
        &self,
        t: &mut Tape,
        selfenc: &SelfEncoding,
        rel: &RelationSpectra,
    ) -> (Var, Var) {
        let d_body = self.relation_body(t, rel);
        let body_in = t.concat_cols(&[selfenc.body, d_body]);
        let body = self.body_proj.forward(t, body_in);
        let d_joint = t.input(rel.joint_to_target.clone());
        let joint_in = t.concat_cols(&[selfenc.joints, d_joint]);
        let joint = self.joint_proj.forward(t, joint_in);
        (body, joint)
    }

    /// Assembles the HHI tokens for all interactive persons (possibly none).
    pub fn build_tokens(
        &self,
        t: &mut Tape,
        target: &MotionSequence,
        others: &[MotionSequence],
    ) -> Result<HhiTokens> {
        let d = self.body_proj.fan_out;
        if others.is_empty() {
            let body = t.zeros(0, d);
            let joint = t.zeros(0, d);
            return Ok(HhiTokens { body, joint });
        }
        let mut bodies = Vec::with_capacity(others.len());
        let mut joints = Vec::with_capacity(others.len());
        for person in others {
            let selfenc = self.self_encode(t, person)?;
            let rel = relation_spectra(target, person, self.sigma, self.coeffs)?;
            let (b, j) = self.person_tokens(t, &selfenc, &rel);
            bodies.push(b);
            joints.push(j);
        }
        Ok(HhiTokens {
            body: t.concat_rows(&bodies),
            joint: t.concat_rows(&joints),
        })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = self.encoder.ids();
        ids.push(self.body_token);
        for l in &self.self_layers {
            ids.extend(l.norm_attn.ids());
            ids.extend(l.attn.ids());
            ids.extend(l.norm_ffn.ids());
            ids.extend(l.ffn.ids());
        }
        ids.extend(self.body_mlp.ids());
        ids.extend(self.body_proj.ids());
        ids.extend(self.joint_proj.ids());
        ids
    }
}

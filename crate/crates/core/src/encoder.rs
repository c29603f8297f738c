//! Motion encoder: last-pose padding, per-joint DCT, a residual graph
//! convolution over joints and a learnable joint position embedding.

use ndarray::Array2;
use rand::Rng;

use crate::data::MotionSequence;
use crate::error::{HumofError, Result};
use crate::params::{glorot, normal, ParamId, ParamStore};
use crate::spectral::{motion_spectrum, pad_with_last_pose};
use crate::tape::{Tape, Var};

/// Standard deviation of the initial learnable adjacency.
pub const ADJACENCY_INIT_STD: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GcnBlock {
    pub adjacency: ParamId,
    pub weight: ParamId,
}

/// Residual graph convolution over joint tokens. Block `b` adds
/// `tanh(A_b H W_b)` to its input; the last block is linear.
#[derive(Debug, Clone)]
pub struct Gcn {
    pub blocks: Vec<GcnBlock>,
    pub joints: usize,
    pub width: usize,
}

impl Gcn {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        rng: &mut R,
        joints: usize,
        width: usize,
        blocks: usize,
    ) -> Self {
        let blocks = (0..blocks)
            .map(|b| {
                let adjacency = store.add(
                    format!("{name}.{b}.adjacency"),
                    normal(rng, joints, joints, ADJACENCY_INIT_STD),
                );
                let w = if b + 1 == blocks {
                    Array2::zeros((width, width))
                } else {
                    glorot(rng, width, width)
                };
                let weight = store.add(format!("{name}.{b}.weight"), w);
                GcnBlock { adjacency, weight }
            })
            .collect();
        Self { blocks, joints, width }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Result<Var> {
        if t.shape(x) != (self.joints, self.width) {
            return Err(HumofError::BadShape(format!(
                "gcn expects {}x{}, got {:?}",
                self.joints,
                self.width,
                t.shape(x)
            )));
        }
        let mut h = x;
        let n = self.blocks.len();
        for (b, block) in self.blocks.iter().enumerate() {
            let a = t.param(block.adjacency);
            let w = t.param(block.weight);
            let ah = t.matmul(a, h);
            let z = t.matmul(ah, w);
            let z = if b + 1 < n { t.tanh(z) } else { z };
            h = t.add(h, z);
        }
        Ok(h)
    }

    pub fn weights(&self) -> Vec<ParamId> {
        self.blocks.iter().map(|b| b.weight).collect()
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.blocks.iter().flat_map(|b| [b.adjacency, b.weight]).collect()
    }
}

/// GCN plus position embedding `P` (`J × 3C`, zero at init).
#[derive(Debug, Clone)]
pub struct MotionEncoder {
    pub gcn: Gcn,
    pub position: ParamId,
    pub horizon: usize,
    pub coeffs: usize,
}

impl MotionEncoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        rng: &mut R,
        joints: usize,
        coeffs: usize,
        horizon: usize,
        gcn_blocks: usize,
    ) -> Self {
        let width = 3 * coeffs;
        let gcn = Gcn::new(store, &format!("{name}.gcn"), rng, joints, width, gcn_blocks);
        let position = store.add(format!("{name}.position"), Array2::zeros((joints, width)));
        Self {
            gcn,
            position,
            horizon,
            coeffs,
        }
    }

    /// Padded, truncated xyz spectrum of the observed motion (`J × 3C`).
    pub fn spectrum(&self, motion: &MotionSequence) -> Result<Array2<f64>> {
        let padded = pad_with_last_pose(motion, self.horizon);
        motion_spectrum(&padded, self.coeffs)
    }

    /// `GCN(DCT(pad(X))) + P`.
    pub fn encode(&self, t: &mut Tape, motion: &MotionSequence) -> Result<Var> {
        if motion.joints() != self.gcn.joints {
            return Err(HumofError::BadShape(format!(
                "encoder built for {} joints, motion has {}",
                self.gcn.joints,
                motion.joints()
            )));
        }
        let spec = self.spectrum(motion)?;
        let x = t.input(spec);
        let g = self.gcn.forward(t, x)?;
        let p = t.param(self.position);
        Ok(t.add(g, p))
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = self.gcn.ids();
        ids.push(self.position);
        ids
    }
}

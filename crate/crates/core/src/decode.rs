//! Decoder back to the time domain, the training loss and evaluation metrics.
//!
//! Coordinates are meters throughout; the loss is reported in mm² and the
//! metrics in mm.

use std::fmt::Write as _;

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{MotionSequence, Sample};
use crate::encoder::Gcn;
use crate::error::{HumofError, Result};
use crate::params::{ParamId, ParamStore};
use crate::spectral::{dct_matrix, pad_with_last_pose};
use crate::tape::{Tape, Var};

const M_TO_MM: f64 = 1e3;
const M2_TO_MM2: f64 = 1e6;

/// A reconstructed window of `H + T` frames; frames `H..H+T` are the forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub motion: MotionSequence,
    pub history: usize,
}

impl Prediction {
    pub fn horizon(&self) -> usize {
        self.motion.frames() - self.history
    }

    pub fn future(&self) -> MotionSequence {
        self.motion.window(self.history, self.motion.frames())
    }
}

/// Repeats the last observed pose over the whole forecast.
pub fn zero_velocity_baseline(sample: &Sample, horizon: usize) -> Prediction {
    Prediction {
        motion: pad_with_last_pose(&sample.target, horizon),
        history: sample.history(),
    }
}

/// Decoder GCN followed by the inverse DCT.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub gcn: Gcn,
    pub coeffs: usize,
    pub frames: usize,
    /// `C × F` DCT matrix; its transpose maps coefficients back to frames.
    basis: Array2<f64>,
}

/// Decoded trajectories on the tape: one `J × F` matrix per axis.
#[derive(Debug, Clone, Copy)]
pub struct DecodedAxes {
    pub axes: [Var; 3],
}

impl Decoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        rng: &mut R,
        joints: usize,
        coeffs: usize,
        frames: usize,
        gcn_blocks: usize,
    ) -> Result<Self> {
        Ok(Self {
            gcn: Gcn::new(store, &format!("{name}.gcn"), rng, joints, 3 * coeffs, gcn_blocks),
            coeffs,
            frames,
            basis: dct_matrix(coeffs, frames)?,
        })
    }

    pub fn forward(&self, t: &mut Tape, tokens: Var) -> Result<DecodedAxes> {
        let h = self.gcn.forward(t, tokens)?;
        let basis = t.input(self.basis.clone());
        let axes = [0, 1, 2].map(|a| {
            let coeffs = t.slice_cols(h, a * self.coeffs, self.coeffs);
            t.matmul(coeffs, basis)
        });
        Ok(DecodedAxes { axes })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.gcn.ids()
    }
}

impl DecodedAxes {
    /// Reads the decoded values off the tape as a prediction.
    pub fn to_prediction(&self, t: &Tape, history: usize, fps: f64) -> Prediction {
        let (j, f) = t.shape(self.axes[0]);
        let mut coords = Array3::zeros((j, f, 3));
        for (a, &v) in self.axes.iter().enumerate() {
            coords.slice_mut(ndarray::s![.., .., a]).assign(t.value(v));
        }
        Prediction {
            motion: MotionSequence { coords, fps },
            history,
        }
    }
}

/// Loss terms in mm². `total == path + local`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub path: f64,
    pub local: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(path: f64, local: f64) -> Self {
        Self {
            path,
            local,
            total: path + local,
        }
    }
}

fn check_pair(pred: &Prediction, truth: &MotionSequence) -> Result<(usize, usize)> {
    let j = pred.motion.joints();
    let t = pred.horizon();
    if truth.joints() != j || truth.frames() != t {
        return Err(HumofError::BadShape(format!(
            "prediction forecasts {j} joints over {t} frames, truth has {} over {}",
            truth.joints(),
            truth.frames()
        )));
    }
    if j < 2 {
        return Err(HumofError::NoLocalJoints);
    }
    Ok((j, t))
}

/// Mean squared root error plus mean squared root-relative joint error over
/// the forecast frames.
pub fn loss(pred: &Prediction, truth: &MotionSequence) -> Result<LossReport> {
    let (j, t) = check_pair(pred, truth)?;
    let h = pred.history;
    let p = &pred.motion.coords;
    let g = &truth.coords;
    let mut path = 0.0;
    let mut local = 0.0;
    for f in 0..t {
        for a in 0..3 {
            let root_err = p[[0, h + f, a]] - g[[0, f, a]];
            path += root_err * root_err;
            for jj in 1..j {
                let e = (p[[jj, h + f, a]] - p[[0, h + f, a]]) - (g[[jj, f, a]] - g[[0, f, a]]);
                local += e * e;
            }
        }
    }
    Ok(LossReport::new(
        path / t as f64 * M2_TO_MM2,
        local / (t * (j - 1)) as f64 * M2_TO_MM2,
    ))
}

/// Differentiable loss on the tape. Returns `(total, path, local)` in mm².
pub fn tape_loss(t: &mut Tape, decoded: &DecodedAxes, truth: &MotionSequence, history: usize) -> Result<(Var, Var, Var)> {
    let (j, f) = t.shape(decoded.axes[0]);
    let horizon = truth.frames();
    if truth.joints() != j || history + horizon != f {
        return Err(HumofError::BadShape(format!(
            "decoded {j}x{f} does not fit truth of {} joints over {horizon} frames after {history}",
            truth.joints()
        )));
    }
    if j < 2 {
        return Err(HumofError::NoLocalJoints);
    }
    // Row 0 picks the root; rows 1.. give joint-minus-root.
    let mut select = Array2::zeros((j, j));
    select[[0, 0]] = 1.0;
    for jj in 1..j {
        select[[jj, jj]] = 1.0;
        select[[jj, 0]] = -1.0;
    }
    let select = t.input(select);
    let mut path_terms = Vec::with_capacity(3);
    let mut local_terms = Vec::with_capacity(3);
    for (a, &axis) in decoded.axes.iter().enumerate() {
        let future = t.slice_cols(axis, history, horizon);
        let want = t.input(truth.coords.slice(ndarray::s![.., .., a]).to_owned());
        let err = t.sub(future, want);
        let rel = t.matmul(select, err);
        let sq = t.mul(rel, rel);
        let root = t.slice_rows(sq, 0, 1);
        path_terms.push(t.sum_all(root));
        let rest = t.slice_rows(sq, 1, j - 1);
        local_terms.push(t.sum_all(rest));
    }
    let sum3 = |t: &mut Tape, v: &[Var]| {
        let s = t.add(v[0], v[1]);
        t.add(s, v[2])
    };
    let path = sum3(t, &path_terms);
    let path = t.scale(path, M2_TO_MM2 / horizon as f64);
    let local = sum3(t, &local_terms);
    let local = t.scale(local, M2_TO_MM2 / (horizon * (j - 1)) as f64);
    let total = t.add(path, local);
    Ok((total, path, local))
}

/// Maps a horizon in seconds to a 1-based forecast frame.
pub fn horizon_frame(seconds: f64, fps: f64, horizon: usize) -> Result<usize> {
    let frame = (seconds * fps).round();
    if !(frame >= 1.0 && frame <= horizon as f64) {
        return Err(HumofError::BadHorizon {
            seconds,
            frame: frame.max(0.0) as usize,
            horizon,
        });
    }
    Ok(frame as usize)
}

/// Root error and mean root-relative joint error at every forecast frame, mm.
fn frame_errors(pred: &Prediction, truth: &MotionSequence) -> Result<Vec<(f64, f64)>> {
    let (j, t) = check_pair(pred, truth)?;
    let h = pred.history;
    let p = &pred.motion.coords;
    let g = &truth.coords;
    Ok((0..t)
        .map(|f| {
            let root: f64 = (0..3).map(|a| (p[[0, h + f, a]] - g[[0, f, a]]).powi(2)).sum::<f64>().sqrt();
            let pose: f64 = (1..j)
                .map(|jj| {
                    (0..3)
                        .map(|a| ((p[[jj, h + f, a]] - p[[0, h + f, a]]) - (g[[jj, f, a]] - g[[0, f, a]])).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .sum::<f64>()
                / (j - 1) as f64;
            (root * M_TO_MM, pose * M_TO_MM)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonError {
    /// Seconds into the future, or `None` for the all-frame mean.
    pub horizon_s: Option<f64>,
    pub path_mm: f64,
    pub pose_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub horizons: Vec<HorizonError>,
    pub mean: HorizonError,
    pub samples: usize,
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("horizon_s,path_mm,pose_mm\n");
        for row in self.horizons.iter().chain(std::iter::once(&self.mean)) {
            let label = row.horizon_s.map_or_else(|| "mean".to_string(), |s| s.to_string());
            let _ = writeln!(out, "{label},{},{}", row.path_mm, row.pose_mm);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

/// Sample-averaged errors at the requested horizons plus the all-frame mean.
pub fn metrics(preds: &[Prediction], truths: &[MotionSequence], horizons: &[f64]) -> Result<MetricsReport> {
    if preds.len() != truths.len() {
        return Err(HumofError::BadShape(format!(
            "{} predictions for {} ground truths",
            preds.len(),
            truths.len()
        )));
    }
    let mut at = vec![(0.0, 0.0); horizons.len()];
    let mut mean = (0.0, 0.0);
    for (pred, truth) in preds.iter().zip(truths) {
        let frames = horizons
            .iter()
            .map(|&s| horizon_frame(s, truth.fps, pred.horizon()))
            .collect::<Result<Vec<_>>>()?;
        let errs = frame_errors(pred, truth)?;
        for (slot, &h) in at.iter_mut().zip(&frames) {
            slot.0 += errs[h - 1].0;
            slot.1 += errs[h - 1].1;
        }
        let n = errs.len() as f64;
        mean.0 += errs.iter().map(|e| e.0).sum::<f64>() / n;
        mean.1 += errs.iter().map(|e| e.1).sum::<f64>() / n;
    }
    let n = preds.len().max(1) as f64;
    Ok(MetricsReport {
        horizons: horizons
            .iter()
            .zip(at)
            .map(|(&s, (p, q))| HorizonError {
                horizon_s: Some(s),
                path_mm: p / n,
                pose_mm: q / n,
            })
            .collect(),
        mean: HorizonError {
            horizon_s: None,
            path_mm: mean.0 / n,
            pose_mm: mean.1 / n,
        },
        samples: preds.len(),
    })
}

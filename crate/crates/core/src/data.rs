//! Core domain types and the canonical-frame preprocessing applied to every
//! sample before it reaches the model.

use ndarray::{s, Array2, Array3, ArrayView1, ArrayView2};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HumofError, Result};

/// Radius of the scene crop around the target root, meters.
pub const CROP_RADIUS: f64 = 2.5;

pub const DEFAULT_FPS: f64 = 30.0;

/// A skeleton's 3D joint trajectory. Coordinates are `joints × frames × 3`
/// in meters, z up; joint 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub coords: Array3<f64>,
    pub fps: f64,
}

impl MotionSequence {
    pub fn new(coords: Array3<f64>, fps: f64) -> Result<Self> {
        let (j, f, c) = coords.dim();
        if c != 3 {
            return Err(HumofError::BadShape(format!("coords last axis is {c}, expected 3")));
        }
        if j < 2 {
            return Err(HumofError::BadShape(format!("{j} joints; at least 2 required")));
        }
        if f < 1 {
            return Err(HumofError::BadLength("motion has no frames".into()));
        }
        if !coords.iter().all(|v| v.is_finite()) {
            return Err(HumofError::BadShape("non-finite coordinate".into()));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(HumofError::BadShape(format!("fps {fps} is not positive")));
        }
        Ok(Self { coords, fps })
    }

    pub fn zeros(joints: usize, frames: usize, fps: f64) -> Self {
        Self {
            coords: Array3::zeros((joints, frames, 3)),
            fps,
        }
    }

    pub fn joints(&self) -> usize {
        self.coords.dim().0
    }

    pub fn frames(&self) -> usize {
        self.coords.dim().1
    }

    pub fn joint_pos(&self, joint: usize, frame: usize) -> [f64; 3] {
        let c = &self.coords;
        [c[[joint, frame, 0]], c[[joint, frame, 1]], c[[joint, frame, 2]]]
    }

    pub fn root(&self, frame: usize) -> [f64; 3] {
        self.joint_pos(0, frame)
    }

    /// Trajectory of one joint, `frames × 3`.
    pub fn joint_track(&self, joint: usize) -> ArrayView2<'_, f64> {
        self.coords.slice(s![joint, .., ..])
    }

    /// Time series of one joint along one axis.
    pub fn axis_series(&self, joint: usize, axis: usize) -> ArrayView1<'_, f64> {
        self.coords.slice(s![joint, .., axis])
    }

    pub fn translate(&mut self, offset: [f64; 3]) {
        for mut row in self.coords.rows_mut() {
            for a in 0..3 {
                row[a] += offset[a];
            }
        }
    }

    /// Frames `start..end` as a new sequence.
    pub fn window(&self, start: usize, end: usize) -> MotionSequence {
        MotionSequence {
            coords: self.coords.slice(s![.., start..end, ..]).to_owned(),
            fps: self.fps,
        }
    }

    /// Rounds every coordinate through `f32`, so container roundtrips are exact.
    pub fn quantize_f32(&mut self) {
        self.coords.mapv_inplace(|v| v as f32 as f64);
    }
}

/// Unlabeled scene points, `N × 3` meters.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneCloud {
    pub points: Array2<f64>,
}

impl SceneCloud {
    pub fn new(points: Array2<f64>) -> Result<Self> {
        if points.ncols() != 3 {
            return Err(HumofError::BadShape(format!(
                "scene has {} columns, expected 3",
                points.ncols()
            )));
        }
        if points.nrows() == 0 {
            return Err(HumofError::BadShape("scene has no points".into()));
        }
        if !points.iter().all(|v| v.is_finite()) {
            return Err(HumofError::BadShape("non-finite scene coordinate".into()));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn point(&self, n: usize) -> [f64; 3] {
        [self.points[[n, 0]], self.points[[n, 1]], self.points[[n, 2]]]
    }

    pub fn translate(&mut self, offset: [f64; 3]) {
        for mut row in self.points.rows_mut() {
            for a in 0..3 {
                row[a] += offset[a];
            }
        }
    }
}

/// One forecasting example: the target's observed motion, the interactive
/// persons over the same window, the scene, and optionally the future.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub target: MotionSequence,
    pub others: Vec<MotionSequence>,
    pub scene: SceneCloud,
    pub future: Option<MotionSequence>,
    pub canonical: bool,
}

impl Sample {
    pub fn history(&self) -> usize {
        self.target.frames()
    }

    pub fn joints(&self) -> usize {
        self.target.joints()
    }

    /// Checks the cross-sequence invariants (shared J, H and fps).
    pub fn validate(&self) -> Result<()> {
        let j = self.target.joints();
        let h = self.target.frames();
        let fps = self.target.fps;
        for (k, o) in self.others.iter().enumerate() {
            if o.joints() != j || o.frames() != h || o.fps != fps {
                return Err(HumofError::BadShape(format!(
                    "interactive person {k} has shape ({}, {}) at {} fps, target has ({j}, {h}) at {fps} fps",
                    o.joints(),
                    o.frames(),
                    o.fps
                )));
            }
        }
        if let Some(f) = &self.future {
            if f.joints() != j || f.fps != fps {
                return Err(HumofError::BadShape("future does not match the target skeleton".into()));
            }
        }
        if self.scene.is_empty() {
            return Err(HumofError::BadShape("scene has no points".into()));
        }
        Ok(())
    }

    /// Applies a rigid translation to every coordinate in the sample.
    pub fn translate(&mut self, offset: [f64; 3]) {
        self.target.translate(offset);
        for o in &mut self.others {
            o.translate(offset);
        }
        self.scene.translate(offset);
        if let Some(f) = &mut self.future {
            f.translate(offset);
        }
    }

    pub fn quantize_f32(&mut self) {
        self.target.quantize_f32();
        for o in &mut self.others {
            o.quantize_f32();
        }
        self.scene.points.mapv_inplace(|v| v as f32 as f64);
        if let Some(f) = &mut self.future {
            f.quantize_f32();
        }
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Moves the sample into the canonical frame (target root at the last
/// observed frame becomes the origin), crops the scene to [`CROP_RADIUS`]
/// around that root and resamples it to exactly `n_points` points.
///
/// Points are drawn without replacement when at least `n_points` survive the
/// crop and with replacement otherwise. An empty crop is an error; see
/// [`canonicalize_sample_or_floor`] for the total variant.
pub fn canonicalize_sample(sample: &Sample, n_points: usize, seed: u64) -> Result<Sample> {
    canonicalize_impl(sample, n_points, seed, false)
}

/// Same as [`canonicalize_sample`], but an empty crop is replaced by a single
/// floor point (z = 0) directly under the root.
pub fn canonicalize_sample_or_floor(sample: &Sample, n_points: usize, seed: u64) -> Result<Sample> {
    canonicalize_impl(sample, n_points, seed, true)
}

fn canonicalize_impl(sample: &Sample, n_points: usize, seed: u64, floor_fallback: bool) -> Result<Sample> {
    if sample.canonical {
        return Err(HumofError::BadShape("sample is already canonical".into()));
    }
    if n_points == 0 {
        return Err(HumofError::BadLength("n_points must be at least 1".into()));
    }
    sample.validate()?;
    let h = sample.history();
    let root = sample.target.root(h - 1);

    let mut kept: Vec<usize> = (0..sample.scene.len())
        .filter(|&n| dist(sample.scene.point(n), root) <= CROP_RADIUS)
        .collect();

    let mut scene_src = sample.scene.points.clone();
    if kept.is_empty() {
        if !floor_fallback {
            return Err(HumofError::EmptyScene { radius: CROP_RADIUS });
        }
        scene_src = Array2::from_shape_vec((1, 3), vec![root[0], root[1], 0.0]).expect("1x3");
        kept = vec![0];
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = if kept.len() >= n_points {
        index::sample(&mut rng, kept.len(), n_points)
            .into_iter()
            .map(|i| kept[i])
            .collect()
    } else {
        (0..n_points).map(|_| kept[rng.random_range(0..kept.len())]).collect()
    };

    let mut points = Array2::zeros((n_points, 3));
    for (row, &src) in picks.iter().enumerate() {
        for a in 0..3 {
            points[[row, a]] = scene_src[[src, a]] - root[a];
        }
    }

    let offset = [-root[0], -root[1], -root[2]];
    let mut target = sample.target.clone();
    target.translate(offset);
    let others = sample
        .others
        .iter()
        .map(|o| {
            let mut o = o.clone();
            o.translate(offset);
            o
        })
        .collect();
    let future = sample.future.as_ref().map(|f| {
        let mut f = f.clone();
        f.translate(offset);
        f
    });

    Ok(Sample {
        target,
        others,
        scene: SceneCloud { points },
        future,
        canonical: true,
    })
}

//! Human-scene interaction tokens.
//!
//! Each scene point gets a feature made of the DCT spectra of its
//! Gaussian-mapped distance to every target joint over the observed window,
//! plus its coordinates. Three set-abstraction stages (farthest point
//! sampling, ball grouping, shared MLP, max pooling) then build a point
//! hierarchy; each level is projected to model width with a learned
//! position encoding added.

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use serde::Serialize;

use crate::config::LevelConfig;
use crate::data::{MotionSequence, SceneCloud};
use crate::error::{HumofError, Result};
use crate::nn::{Activation, Linear, Mlp};
use crate::params::{ParamId, ParamStore};
use crate::spectral::{dct_rows_padded, gaussian_map};
use crate::tape::{Tape, Var};

/// Positions and features of one hierarchy level (level 0: raw scene points).
#[derive(Debug, Clone, PartialEq)]
pub struct PointFeatures {
    pub level: usize,
    pub positions: Array2<f64>,
    pub features: Array2<f64>,
}

/// Level-0 features: row `n` is `concat(m̃_1, …, m̃_J, s_n)` with `m̃_j` the
/// `coeffs` DCT coefficients of `φ(‖s_n − x_j^t‖)` over the observed frames.
pub fn point_interaction_features(
    scene: &SceneCloud,
    target: &MotionSequence,
    sigma: f64,
    coeffs: usize,
) -> Result<PointFeatures> {
    if !(sigma > 0.0) {
        return Err(HumofError::BadSigma(sigma));
    }
    let n = scene.len();
    let (j, h, _) = target.coords.dim();
    // One row per (point, joint) pair, H proximity values each.
    let mut prox = Array2::zeros((n * j, h));
    for p in 0..n {
        let sp = scene.point(p);
        for jj in 0..j {
            let mut row = prox.row_mut(p * j + jj);
            for t in 0..h {
                let x = target.joint_pos(jj, t);
                let d = ((sp[0] - x[0]).powi(2) + (sp[1] - x[1]).powi(2) + (sp[2] - x[2]).powi(2)).sqrt();
                row[t] = gaussian_map(d, sigma)?;
            }
        }
    }
    let spectra = dct_rows_padded(prox.view(), coeffs)?;
    let width = j * coeffs + 3;
    let mut features = Array2::zeros((n, width));
    for p in 0..n {
        for jj in 0..j {
            features
                .slice_mut(s![p, jj * coeffs..(jj + 1) * coeffs])
                .assign(&spectra.row(p * j + jj));
        }
        features.slice_mut(s![p, j * coeffs..]).assign(&scene.points.row(p));
    }
    Ok(PointFeatures {
        level: 0,
        positions: scene.points.clone(),
        features,
    })
}

fn sq_dist(a: ArrayView2<f64>, i: usize, b: ArrayView2<f64>, k: usize) -> f64 {
    (0..3).map(|x| (a[[i, x]] - b[[k, x]]).powi(2)).sum()
}

/// Farthest point sampling. The first pick is the point farthest from the
/// centroid of all positions; ties go to the lowest index throughout.
pub fn farthest_point_sampling(positions: ArrayView2<f64>, count: usize) -> Vec<usize> {
    let n = positions.nrows();
    assert!(count <= n && count > 0, "cannot sample {count} of {n} points");
    let mut centroid = [0.0; 3];
    for i in 0..n {
        for a in 0..3 {
            centroid[a] += positions[[i, a]];
        }
    }
    for c in &mut centroid {
        *c /= n as f64;
    }
    let mut first = 0;
    let mut best = f64::NEG_INFINITY;
    for i in 0..n {
        let d: f64 = (0..3).map(|a| (positions[[i, a]] - centroid[a]).powi(2)).sum();
        if d > best {
            best = d;
            first = i;
        }
    }
    let mut picks = Vec::with_capacity(count);
    picks.push(first);
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(positions, i, positions, first)).collect();
    while picks.len() < count {
        let mut next = 0;
        let mut far = f64::NEG_INFINITY;
        for (i, &d) in nearest.iter().enumerate() {
            if d > far {
                far = d;
                next = i;
            }
        }
        picks.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(positions, i, positions, next));
        }
    }
    picks
}

/// Neighborhoods of the chosen centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct Grouping {
    /// Indices of the centroids in the input level.
    pub centroids: Vec<usize>,
    /// Flattened neighbor indices, group `g` spanning `offsets[g]..offsets[g+1]`.
    pub members: Vec<usize>,
    pub offsets: Vec<usize>,
}

/// Up to `cap` nearest points within `radius` of each centroid (ties by
/// index). The centroid itself is always a member.
pub fn ball_query(positions: ArrayView2<f64>, centroids: &[usize], radius: f64, cap: usize) -> Grouping {
    let r2 = radius * radius;
    let mut members = Vec::new();
    let mut offsets = vec![0];
    for &c in centroids {
        let mut cand: Vec<(f64, usize)> = (0..positions.nrows())
            .filter_map(|i| {
                let d = sq_dist(positions, i, positions, c);
                (d <= r2 || i == c).then_some((if i == c { -1.0 } else { d }, i))
            })
            .collect();
        cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        members.extend(cand.iter().take(cap.max(1)).map(|&(_, i)| i));
        offsets.push(members.len());
    }
    Grouping {
        centroids: centroids.to_vec(),
        members,
        offsets,
    }
}

/// Geometry of the whole hierarchy; depends only on point positions.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneHierarchy {
    /// Positions per level `0..=3`.
    pub positions: Vec<Array2<f64>>,
    /// Grouping that produces level `b + 1` from level `b`.
    pub groupings: Vec<Grouping>,
}

impl SceneHierarchy {
    pub fn build(points: &Array2<f64>, levels: &[LevelConfig]) -> Result<Self> {
        let mut positions = vec![points.clone()];
        let mut groupings = Vec::with_capacity(levels.len());
        for level in levels {
            let prev = positions.last().expect("level 0");
            if level.points > prev.nrows() {
                return Err(HumofError::BadShape(format!(
                    "cannot abstract {} points into {}",
                    prev.nrows(),
                    level.points
                )));
            }
            let centroids = farthest_point_sampling(prev.view(), level.points);
            let grouping = ball_query(prev.view(), &centroids, level.radius, level.neighbors);
            let next = prev.select(ndarray::Axis(0), &centroids);
            groupings.push(grouping);
            positions.push(next);
        }
        Ok(Self { positions, groupings })
    }

    pub fn counts(&self) -> Vec<usize> {
        self.positions.iter().map(|p| p.nrows()).collect()
    }
}

/// Learned parts of one set-abstraction stage plus its token projection.
#[derive(Debug, Clone)]
pub struct SetAbstraction {
    /// First shared-MLP layer, feature half (carries the bias).
    pub first_feature: Linear,
    /// First shared-MLP layer, relative-position half.
    pub first_offset: Linear,
    pub rest: Vec<Linear>,
    pub token_proj: Linear,
    /// `3 → d → d` position encoding.
    pub position_mlp: Mlp,
    pub out_width: usize,
}

impl SetAbstraction {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        rng: &mut R,
        in_width: usize,
        widths: &[usize],
        d_model: usize,
    ) -> Self {
        let first_feature = Linear::new(store, &format!("{name}.mlp.0.feature"), rng, in_width, widths[0]);
        let first_offset = Linear::without_bias(store, &format!("{name}.mlp.0.offset"), rng, 3, widths[0]);
        let rest = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.mlp.{}", i + 1), rng, w[0], w[1]))
            .collect();
        let out_width = *widths.last().expect("non-empty widths");
        let token_proj = Linear::new(store, &format!("{name}.token_proj"), rng, out_width, d_model);
        let position_mlp = Mlp::new(
            store,
            &format!("{name}.position_mlp"),
            rng,
            &[3, d_model, d_model],
            Activation::Gelu,
            false,
        );
        Self {
            first_feature,
            first_offset,
            rest,
            token_proj,
            position_mlp,
            out_width,
        }
    }

    /// Shared MLP on `(neighbor feature ⊕ neighbor − centroid)` for every
    /// group member, max-pooled per centroid.
    pub fn abstract_level(
        &self,
        t: &mut Tape,
        input: Var,
        positions: &Array2<f64>,
        grouping: &Grouping,
    ) -> Var {
        let rows = grouping.members.len();
        let mut offsets = Array2::zeros((rows, 3));
        for (g, &c) in grouping.centroids.iter().enumerate() {
            for r in grouping.offsets[g]..grouping.offsets[g + 1] {
                let m = grouping.members[r];
                for a in 0..3 {
                    offsets[[r, a]] = positions[[m, a]] - positions[[c, a]];
                }
            }
        }
        // The first layer is linear in the concatenation, so the feature half
        // is applied once per input point before gathering.
        let per_point = self.first_feature.forward(t, input);
        let gathered = t.gather_rows(per_point, &grouping.members);
        let off = t.input(offsets);
        let off = self.first_offset.forward(t, off);
        let mut h = t.add(gathered, off);
        h = t.gelu(h);
        for layer in &self.rest {
            h = layer.forward(t, h);
            h = t.gelu(h);
        }
        t.segment_max(h, &grouping.offsets)
    }

    /// `LinearProject(features) + MLP(positions)`.
    pub fn tokens(&self, t: &mut Tape, features: Var, positions: &Array2<f64>) -> Var {
        let proj = self.token_proj.forward(t, features);
        let pos = t.input(positions.clone());
        let enc = self.position_mlp.forward(t, pos);
        t.add(proj, enc)
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = self.first_feature.ids();
        ids.extend(self.first_offset.ids());
        for l in &self.rest {
            ids.extend(l.ids());
        }
        ids.extend(self.token_proj.ids());
        ids.extend(self.position_mlp.ids());
        ids
    }
}

#[derive(Debug, Clone)]
pub struct HsiModule {
    pub stages: Vec<SetAbstraction>,
    pub levels: Vec<LevelConfig>,
    pub coeffs: usize,
    pub sigma: f64,
}

/// Level outputs: positions and token matrices (`N_b × d`) for `b = 1..=3`.
#[derive(Debug, Clone)]
pub struct HsiTokens {
    pub hierarchy: SceneHierarchy,
    pub features: Vec<Var>,
    pub tokens: Vec<Var>,
}

impl HsiTokens {
    /// Tokens of 1-based level `b`.
    pub fn level(&self, b: usize) -> Var {
        self.tokens[b - 1]
    }
}

impl HsiModule {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        rng: &mut R,
        joints: usize,
        coeffs: usize,
        levels: &[LevelConfig],
        d_model: usize,
        sigma: f64,
    ) -> Self {
        let mut in_width = joints * coeffs + 3;
        let mut stages = Vec::with_capacity(levels.len());
        for (b, level) in levels.iter().enumerate() {
            let stage = SetAbstraction::new(store, &format!("{name}.level{}", b + 1), rng, in_width, &level.mlp, d_model);
            in_width = stage.out_width;
            stages.push(stage);
        }
        Self {
            stages,
            levels: levels.to_vec(),
            coeffs,
            sigma,
        }
    }

    pub fn forward(&self, t: &mut Tape, scene: &SceneCloud, target: &MotionSequence) -> Result<HsiTokens> {
        let level0 = point_interaction_features(scene, target, self.sigma, self.coeffs)?;
        let hierarchy = SceneHierarchy::build(&level0.positions, &self.levels)?;
        let mut x = t.input(level0.features);
        let mut features = Vec::with_capacity(self.stages.len());
        let mut tokens = Vec::with_capacity(self.stages.len());
        for (b, stage) in self.stages.iter().enumerate() {
            x = stage.abstract_level(t, x, &hierarchy.positions[b], &hierarchy.groupings[b]);
            features.push(x);
            tokens.push(stage.tokens(t, x, &hierarchy.positions[b + 1]));
        }
        Ok(HsiTokens {
            hierarchy,
            features,
            tokens,
        })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.stages.iter().flat_map(|s| s.ids()).collect()
    }
}

/// Per-level centroid positions, for inspection dumps.
#[derive(Debug, Clone, Serialize)]
pub struct HierarchyDump {
    pub counts: Vec<usize>,
    pub positions: Vec<Vec<[f64; 3]>>,
}

impl From<&SceneHierarchy> for HierarchyDump {
    fn from(h: &SceneHierarchy) -> Self {
        Self {
            counts: h.counts(),
            positions: h
                .positions
                .iter()
                .map(|p| p.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect())
                .collect(),
        }
    }
}

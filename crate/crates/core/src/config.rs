//! Run configuration: model hyperparameters, training schedule, data
//! generation and evaluation settings. Parsed from JSON with unknown keys
//! rejected, then checked by [`RunConfig::validate`].

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HumofError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HhiGranularity {
    Body,
    Joint,
}

/// Interaction tokens injected into one reasoning layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionStep {
    /// Scene abstraction level, 1 (finest) to 3 (coarsest).
    pub hsi_level: usize,
    pub hhi: HhiGranularity,
}

/// One set-abstraction stage of the scene hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelConfig {
    pub points: usize,
    pub radius: f64,
    pub neighbors: usize,
    pub mlp: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub joints: usize,
    pub history: usize,
    pub horizon: usize,
    pub dct_coeffs: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub gcn_blocks: usize,
    pub self_layers: usize,
    pub scene_points: usize,
    pub levels: Vec<LevelConfig>,
    pub sigma_hh: f64,
    pub sigma_hs: f64,
    pub fps: f64,
    pub schedule: Vec<InjectionStep>,
    #[serde(default = "yes")]
    pub use_hhi: bool,
    #[serde(default = "yes")]
    pub use_hsi: bool,
}

fn yes() -> bool {
    true
}

/// Layers 1–2 see the coarsest scene level with body tokens, 3–4 the middle
/// level with body tokens, 5–6 the finest level with joint tokens.
pub fn default_schedule() -> Vec<InjectionStep> {
    use HhiGranularity::*;
    [(3, Body), (3, Body), (2, Body), (2, Body), (1, Joint), (1, Joint)]
        .into_iter()
        .map(|(hsi_level, hhi)| InjectionStep { hsi_level, hhi })
        .collect()
}

impl ModelConfig {
    /// Full-size configuration: 13 joints, 1 s history, 2 s forecast at 30 fps.
    pub fn standard() -> Self {
        Self {
            joints: 13,
            history: 30,
            horizon: 60,
            dct_coeffs: 20,
            d_model: 60,
            heads: 4,
            layers: 6,
            gcn_blocks: 2,
            self_layers: 2,
            scene_points: 1000,
            levels: vec![
                LevelConfig { points: 256, radius: 0.2, neighbors: 16, mlp: vec![128, 128] },
                LevelConfig { points: 64, radius: 0.4, neighbors: 16, mlp: vec![128, 128] },
                LevelConfig { points: 16, radius: 0.8, neighbors: 16, mlp: vec![128, 128] },
            ],
            sigma_hh: 0.5,
            sigma_hs: 0.5,
            fps: 30.0,
            schedule: default_schedule(),
            use_hhi: true,
            use_hsi: true,
        }
    }

    /// Small configuration used for gradient checks and fast tests.
    pub fn tiny() -> Self {
        Self {
            joints: 4,
            history: 8,
            horizon: 8,
            dct_coeffs: 8,
            d_model: 24,
            heads: 4,
            layers: 6,
            gcn_blocks: 2,
            self_layers: 2,
            scene_points: 64,
            levels: vec![
                LevelConfig { points: 32, radius: 0.6, neighbors: 8, mlp: vec![16, 16] },
                LevelConfig { points: 16, radius: 1.2, neighbors: 8, mlp: vec![16, 16] },
                LevelConfig { points: 8, radius: 2.4, neighbors: 8, mlp: vec![16, 16] },
            ],
            sigma_hh: 0.5,
            sigma_hs: 0.5,
            fps: 30.0,
            schedule: default_schedule(),
            use_hhi: true,
            use_hsi: true,
        }
    }

    /// Width of the xyz spectrum, `3 * C`.
    pub fn spectral_width(&self) -> usize {
        3 * self.dct_coeffs
    }

    pub fn frames(&self) -> usize {
        self.history + self.horizon
    }

    /// Scene abstraction counts `(N, N1, N2, N3)`.
    pub fn hierarchy_counts(&self) -> Vec<usize> {
        std::iter::once(self.scene_points)
            .chain(self.levels.iter().map(|l| l.points))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HumofError::InvalidConfig(m));
        if self.joints < 2 {
            return bad(format!("joints = {}; need at least 2", self.joints));
        }
        if self.history < 1 {
            return bad("history must be at least 1 frame".into());
        }
        if self.dct_coeffs < 1 || self.dct_coeffs > self.frames() {
            return bad(format!(
                "dct_coeffs = {} must lie in 1..={}",
                self.dct_coeffs,
                self.frames()
            ));
        }
        if self.d_model != self.spectral_width() {
            return bad(format!("d_model = {} must equal 3 * dct_coeffs = {}", self.d_model, self.spectral_width()));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return bad(format!("d_model {} not divisible by {} heads", self.d_model, self.heads));
        }
        if self.gcn_blocks < 1 {
            return bad("gcn_blocks must be at least 1".into());
        }
        if self.layers < 2 {
            return bad("at least 2 reasoning layers are required".into());
        }
        if !(self.sigma_hh > 0.0 && self.sigma_hs > 0.0) {
            return bad("sigma values must be positive".into());
        }
        if !(self.fps > 0.0) {
            return bad("fps must be positive".into());
        }
        if self.levels.len() != 3 {
            return bad(format!("{} scene levels configured, expected 3", self.levels.len()));
        }
        let counts = self.hierarchy_counts();
        if counts.windows(2).any(|w| w[1] >= w[0]) || counts[3] < 1 {
            return bad(format!("scene hierarchy counts {counts:?} must strictly decrease to at least 1"));
        }
        for (b, l) in self.levels.iter().enumerate() {
            if !(l.radius > 0.0) || l.neighbors == 0 || l.mlp.is_empty() || l.mlp.contains(&0) {
                return bad(format!("scene level {} is malformed", b + 1));
            }
        }
        if self.schedule.len() != self.layers {
            return bad(format!(
                "schedule has {} entries for {} layers",
                self.schedule.len(),
                self.layers
            ));
        }
        if self.schedule.iter().any(|s| !(1..=3).contains(&s.hsi_level)) {
            return bad("schedule hsi_level must be in 1..=3".into());
        }
        if self.schedule.windows(2).any(|w| w[1].hsi_level > w[0].hsi_level) {
            return bad("schedule hsi_level must be non-increasing over layers".into());
        }
        let first = self.schedule[0];
        let last = self.schedule[self.layers - 1];
        if first != (InjectionStep { hsi_level: 3, hhi: HhiGranularity::Body })
            || last != (InjectionStep { hsi_level: 1, hhi: HhiGranularity::Joint })
        {
            return bad("schedule must start at (3, body) and end at (1, joint)".into());
        }
        Ok(())
    }
}

/// How the parameters are initialised.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Glorot weights; the final GCN blocks, position embeddings and gate
    /// output layers start at zero.
    Standard,
    /// Standard, plus every GCN weight and every reasoning residual output
    /// projection zeroed: the forecast is then the last-pose padding of the
    /// input whenever the spectrum is not truncated.
    #[default]
    Identity,
    /// Standard plus Gaussian noise on every entry, so no parameter sits at
    /// a point where its gradient vanishes by construction.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    /// Initial learning rate, decayed linearly to 0 over all steps.
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default = "beta1")]
    pub beta1: f64,
    #[serde(default = "beta2")]
    pub beta2: f64,
    #[serde(default = "adam_eps")]
    pub adam_eps: f64,
    /// Optional global-norm gradient clip.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub weight_decay: f64,
    /// Hard cap on optimizer steps; the schedule decays over the capped count.
    #[serde(default)]
    pub max_steps: Option<usize>,
    /// Initialisation of a freshly trained model.
    #[serde(default)]
    pub init: InitScheme,
}

fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}
fn adam_eps() -> f64 {
    1e-8
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            epochs: 80,
            batch_size: 16,
            seed: 0,
            beta1: beta1(),
            beta2: beta2(),
            adam_eps: adam_eps(),
            grad_clip: None,
            weight_decay: 0.0,
            max_steps: None,
            init: InitScheme::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Walk,
    ApproachHandshake,
    PassBy,
    SitOnBox,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::Walk,
        ScenarioKind::ApproachHandshake,
        ScenarioKind::PassBy,
        ScenarioKind::SitOnBox,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub samples: usize,
    /// Relative weights of scenario kinds.
    pub mix: BTreeMap<ScenarioKind, f64>,
    /// Candidate interactive-person counts, drawn uniformly per sample.
    pub others: Vec<usize>,
    /// Half-extent of the square arena, meters.
    pub arena: f64,
    /// Surface sampling density, points per square meter.
    pub density: f64,
    pub seed: u64,
    /// Template joints kept in the generated skeletons (default: all 13).
    #[serde(default)]
    pub joint_subset: Option<Vec<usize>>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            samples: 64,
            mix: ScenarioKind::ALL.iter().map(|&k| (k, 1.0)).collect(),
            others: vec![1, 2],
            arena: 4.0,
            density: 60.0,
            seed: 0,
            joint_subset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub train: Option<String>,
    #[serde(default)]
    pub eval: Option<String>,
    #[serde(default)]
    pub generator: GeneratorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Forecast horizons in seconds.
    pub horizons: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            horizons: vec![0.5, 1.0, 1.5, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn standard() -> Self {
        Self {
            model: ModelConfig::standard(),
            training: TrainingConfig::default(),
            data: DataConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    pub fn tiny() -> Self {
        let mut c = Self::standard();
        c.model = ModelConfig::tiny();
        c.data.generator.joint_subset = Some(vec![0, 2, 5, 8]);
        c.eval.horizons = vec![0.1, 0.2];
        c
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| HumofError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |m: &str| Err(HumofError::InvalidConfig(m.to_string()));
        let t = &self.training;
        if !(t.learning_rate >= 0.0) || t.batch_size == 0 {
            return bad("learning_rate must be >= 0 and batch_size >= 1");
        }
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) || !(t.adam_eps > 0.0) {
            return bad("Adam betas must lie in [0, 1) and eps must be positive");
        }
        let g = &self.data.generator;
        if !(g.arena > 0.0) || !(g.density > 0.0) || g.others.is_empty() {
            return bad("generator needs a positive arena, density and at least one person count");
        }
        if g.mix.values().any(|w| !(*w >= 0.0)) || g.mix.values().sum::<f64>() <= 0.0 {
            return bad("scenario mix weights must be non-negative with a positive sum");
        }
        let template_joints = g.joint_subset.as_ref().map_or(13, |s| s.len());
        if template_joints != self.model.joints {
            return bad("generator skeleton joint count differs from model.joints");
        }
        if let Some(s) = &g.joint_subset {
            if s.first() != Some(&0) || s.iter().any(|&j| j >= 13) {
                return bad("joint_subset must start with the root (0) and index the 13-joint template");
            }
        }
        if self.eval.horizons.iter().any(|h| !(*h > 0.0)) {
            return bad("horizons must be positive");
        }
        Ok(())
    }

    /// SHA-256 over the compact JSON serialization.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

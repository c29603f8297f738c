//! The full forecaster: motion encoder, interaction tokens, reasoning stack
//! and decoder, wired together over one sample at a time.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use crate::config::InitScheme;
use crate::config::ModelConfig;
use crate::data::{canonicalize_sample_or_floor, MotionSequence, Sample, SceneCloud};
use crate::decode::{tape_loss, DecodedAxes, Decoder, LossReport, Prediction};
use crate::encoder::MotionEncoder;
use crate::error::{HumofError, Result};
use crate::hhi::{HhiModule, HhiTokens};
use crate::hsi::{HsiModule, HsiTokens};
use crate::params::{normal, Gradients, ParamId, ParamStore};
use crate::reasoning::{InteractionTokens, ReasoningStack};
use crate::spectral::{make_rescale_schedule, RescaleSchedule};
use crate::tape::{Tape, Var};

const RANDOM_INIT_STD: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct Humof {
    pub config: ModelConfig,
    pub encoder: MotionEncoder,
    pub hhi: HhiModule,
    pub hsi: HsiModule,
    pub reasoning: ReasoningStack,
    pub decoder: Decoder,
    pub rescale: RescaleSchedule,
}

/// Values of one front-end branch and the parameters it reads.
#[derive(Debug, Clone)]
struct Branch {
    values: Vec<Array2<f64>>,
    reads: Vec<bool>,
}

/// Cached outputs of the motion encoder and the interaction branches for one
/// sample, see [`Humof::loss_with_front`].
#[derive(Debug, Clone)]
pub struct FrontEnd {
    input: Branch,
    hhi: Option<Branch>,
    hsi: Option<Branch>,
}

/// Everything a forward pass leaves on the tape.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub input_tokens: Var,
    pub hhi: Option<HhiTokens>,
    pub hsi: Option<HsiTokens>,
    pub tokens: Var,
    pub decoded: DecodedAxes,
    /// Interaction token count seen by each reasoning layer.
    pub counts: Vec<usize>,
}

impl Humof {
    /// Registers all parameters in `store` using `rng` for the random parts.
    pub fn build(config: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let c = config.dct_coeffs;
        let j = config.joints;
        let encoder = MotionEncoder::new(store, "encoder", rng, j, c, config.horizon, config.gcn_blocks);
        let hhi = HhiModule::new(
            store,
            "hhi",
            rng,
            j,
            c,
            config.horizon,
            config.gcn_blocks,
            config.self_layers,
            config.heads,
            config.d_model,
            config.sigma_hh,
        );
        let hsi = HsiModule::new(store, "hsi", rng, j, c, &config.levels, config.d_model, config.sigma_hs);
        let reasoning = ReasoningStack::new(store, "reasoning", rng, config.layers, config.d_model, config.heads);
        let decoder = Decoder::new(store, "decoder", rng, j, c, config.frames(), config.gcn_blocks)?;
        Ok(Self {
            config: config.clone(),
            encoder,
            hhi,
            hsi,
            reasoning,
            decoder,
            rescale: make_rescale_schedule(config.layers, c),
        })
    }

    pub fn new(config: &ModelConfig, init: InitScheme, seed: u64) -> Result<(Self, ParamStore)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let model = Self::build(config, &mut store, &mut rng)?;
        match init {
            InitScheme::Standard => {}
            InitScheme::Identity => {
                for id in model.identity_zeroed() {
                    store.zero(id);
                }
            }
            InitScheme::Random => {
                let ids: Vec<ParamId> = store.ids().collect();
                for id in ids {
                    let (r, c) = store.get(id).dim();
                    let v = store.get(id) + &normal(&mut rng, r, c, RANDOM_INIT_STD);
                    store.set(id, v);
                }
            }
        }
        store.quantize_f32();
        Ok((model, store))
    }

    /// Parameters zeroed by [`InitScheme::Identity`].
    pub fn identity_zeroed(&self) -> Vec<ParamId> {
        let mut ids = self.encoder.gcn.weights();
        ids.extend(self.decoder.gcn.weights());
        ids.extend(self.reasoning.residual_outputs());
        ids
    }

    fn check_sample(&self, sample: &Sample) -> Result<()> {
        sample.validate()?;
        let cfg = &self.config;
        if sample.joints() != cfg.joints || sample.history() != cfg.history {
            return Err(HumofError::BadShape(format!(
                "model expects {} joints over {} frames, sample has {} over {}",
                cfg.joints,
                cfg.history,
                sample.joints(),
                sample.history()
            )));
        }
        Ok(())
    }

    /// Forward pass on a canonical sample.
    pub fn forward(&self, t: &mut Tape, sample: &Sample) -> Result<ForwardOutput> {
        self.check_sample(sample)?;
        let input_tokens = self.encoder.encode(t, &sample.target)?;
        let hhi = if self.config.use_hhi {
            Some(self.hhi.build_tokens(t, &sample.target, &sample.others)?)
        } else {
            None
        };
        let hsi = if self.config.use_hsi {
            Some(self.hsi.forward(t, &sample.scene, &sample.target)?)
        } else {
            None
        };
        let inputs = InteractionTokens {
            hhi,
            hsi: hsi.as_ref().map(|h| h.tokens.clone()),
        };
        let out = self
            .reasoning
            .forward(t, input_tokens, &inputs, &self.config.schedule, &self.rescale)?;
        let decoded = self.decoder.forward(t, out.tokens)?;
        Ok(ForwardOutput {
            input_tokens,
            hhi,
            hsi,
            tokens: out.tokens,
            decoded,
            counts: out.counts,
        })
    }

    /// Runs the motion encoder and both interaction branches of `sample` on
    /// separate tapes and keeps their values.
    pub fn front_end(&self, store: &ParamStore, sample: &Sample) -> Result<FrontEnd> {
        self.check_sample(sample)?;
        let branch = |run: &dyn Fn(&mut Tape) -> Result<Vec<Var>>| -> Result<Branch> {
            let mut t = Tape::new(store);
            let vars = run(&mut t)?;
            Ok(Branch {
                values: vars.iter().map(|&v| t.value(v).clone()).collect(),
                reads: t.read_mask(),
            })
        };
        let input = branch(&|t| Ok(vec![self.encoder.encode(t, &sample.target)?]))?;
        let hhi = self
            .config
            .use_hhi
            .then(|| {
                branch(&|t| {
                    let h = self.hhi.build_tokens(t, &sample.target, &sample.others)?;
                    Ok(vec![h.body, h.joint])
                })
            })
            .transpose()?;
        let hsi = self
            .config
            .use_hsi
            .then(|| branch(&|t| Ok(self.hsi.forward(t, &sample.scene, &sample.target)?.tokens)))
            .transpose()?;
        Ok(FrontEnd { input, hhi, hsi })
    }

    /// Loss of `sample` under `store`, where `store` differs from the store
    /// `front` was computed with in parameter `changed` only. Branches that do
    /// not read `changed` are taken from `front`; the result is identical to
    /// [`Humof::loss`].
    pub fn loss_with_front(&self, store: &ParamStore, sample: &Sample, front: &FrontEnd, changed: ParamId) -> Result<LossReport> {
        let future = self.checked_future(sample)?;
        let mut t = Tape::new(store);
        let input_tokens = if front.input.reads[changed.0] {
            self.encoder.encode(&mut t, &sample.target)?
        } else {
            t.input(front.input.values[0].clone())
        };
        let hhi = match &front.hhi {
            Some(b) if b.reads[changed.0] => Some(self.hhi.build_tokens(&mut t, &sample.target, &sample.others)?),
            Some(b) => Some(HhiTokens {
                body: t.input(b.values[0].clone()),
                joint: t.input(b.values[1].clone()),
            }),
            None => None,
        };
        let hsi = match &front.hsi {
            Some(b) if b.reads[changed.0] => Some(self.hsi.forward(&mut t, &sample.scene, &sample.target)?.tokens),
            Some(b) => Some(b.values.iter().map(|v| t.input(v.clone())).collect()),
            None => None,
        };
        let out = self
            .reasoning
            .forward(&mut t, input_tokens, &InteractionTokens { hhi, hsi }, &self.config.schedule, &self.rescale)?;
        let decoded = self.decoder.forward(&mut t, out.tokens)?;
        let (_, path, local) = tape_loss(&mut t, &decoded, future, self.config.history)?;
        Ok(LossReport::new(t.value(path)[[0, 0]], t.value(local)[[0, 0]]))
    }

    /// Canonicalizes the sample if needed (same crop and resampling as training data).
    pub fn prepare(&self, sample: &Sample, seed: u64) -> Result<Sample> {
        if sample.canonical {
            Ok(sample.clone())
        } else {
            canonicalize_sample_or_floor(sample, self.config.scene_points, seed)
        }
    }

    /// Forecast for one sample, in its canonical frame.
    pub fn predict(&self, store: &ParamStore, sample: &Sample, seed: u64) -> Result<Prediction> {
        let sample = self.prepare(sample, seed)?;
        let mut t = Tape::new(store);
        let out = self.forward(&mut t, &sample)?;
        Ok(out.decoded.to_prediction(&t, self.config.history, sample.target.fps))
    }

    /// Forecasts every person in a raw scene, each as the target with all
    /// others as interactive persons, in person order. Each prediction is in
    /// the canonical frame of its own target.
    pub fn predict_joint(
        &self,
        store: &ParamStore,
        persons: &[MotionSequence],
        scene: &SceneCloud,
        seed: u64,
    ) -> Result<Vec<Prediction>> {
        if persons.is_empty() {
            return Err(HumofError::BadShape("joint prediction needs at least one person".into()));
        }
        let samples = joint_samples(persons, scene);
        samples.par_iter().map(|s| self.predict(store, s, seed)).collect()
    }

    /// Loss of a canonical sample with a known future.
    pub fn loss(&self, store: &ParamStore, sample: &Sample) -> Result<LossReport> {
        let (report, _) = self.loss_impl(store, sample, false)?;
        Ok(report)
    }

    /// Loss and parameter gradients of the total loss (mm²).
    pub fn loss_and_grad(&self, store: &ParamStore, sample: &Sample) -> Result<(LossReport, Gradients)> {
        let (report, grads) = self.loss_impl(store, sample, true)?;
        Ok((report, grads.expect("requested")))
    }

    fn checked_future<'a>(&self, sample: &'a Sample) -> Result<&'a MotionSequence> {
        let future = sample
            .future
            .as_ref()
            .ok_or_else(|| HumofError::BadShape("sample has no ground-truth future".into()))?;
        if future.frames() != self.config.horizon {
            return Err(HumofError::BadShape(format!(
                "future has {} frames, model forecasts {}",
                future.frames(),
                self.config.horizon
            )));
        }
        Ok(future)
    }

    fn loss_impl(&self, store: &ParamStore, sample: &Sample, grad: bool) -> Result<(LossReport, Option<Gradients>)> {
        let future = self.checked_future(sample)?;
        let mut t = Tape::new(store);
        let out = self.forward(&mut t, sample)?;
        let (total, path, local) = tape_loss(&mut t, &out.decoded, future, self.config.history)?;
        let report = LossReport::new(t.value(path)[[0, 0]], t.value(local)[[0, 0]]);
        let grads = grad.then(|| t.backward(total));
        Ok((report, grads))
    }

    /// Mean loss and summed-then-averaged gradients over a batch. Samples run
    /// in parallel; the reduction order is fixed, so results do not depend on
    /// the number of threads.
    pub fn batch_loss_and_grad(&self, store: &ParamStore, batch: &[&Sample]) -> Result<(LossReport, Gradients)> {
        let parts: Vec<(LossReport, Gradients)> = batch
            .par_iter()
            .map(|s| self.loss_and_grad(store, s))
            .collect::<Result<_>>()?;
        let mut grads = Gradients::zeros_like(store);
        let (mut path, mut local) = (0.0, 0.0);
        for (r, g) in &parts {
            path += r.path;
            local += r.local;
            grads.accumulate(g);
        }
        let n = batch.len().max(1) as f64;
        grads.scale(1.0 / n);
        Ok((LossReport::new(path / n, local / n), grads))
    }

    /// Mean loss over samples, without gradients.
    pub fn mean_loss(&self, store: &ParamStore, samples: &[Sample]) -> Result<LossReport> {
        let parts: Vec<LossReport> = samples.par_iter().map(|s| self.loss(store, s)).collect::<Result<_>>()?;
        let n = parts.len().max(1) as f64;
        let path = parts.iter().map(|r| r.path).sum::<f64>() / n;
        let local = parts.iter().map(|r| r.local).sum::<f64>() / n;
        Ok(LossReport::new(path, local))
    }
}

/// One raw sample per person, with that person as target and everybody else
/// (in order) as interactive persons.
pub fn joint_samples(persons: &[MotionSequence], scene: &SceneCloud) -> Vec<Sample> {
    (0..persons.len())
        .map(|i| Sample {
            target: persons[i].clone(),
            others: persons
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != i)
                .map(|(_, p)| p.clone())
                .collect(),
            scene: scene.clone(),
            future: None,
            canonical: false,
        })
        .collect()
}

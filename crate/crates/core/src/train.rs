//! Training loop (Adam with linear learning-rate decay) and dataset evaluation.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::TrainingConfig;
use crate::data::Sample;
use crate::decode::{metrics, zero_velocity_baseline, LossReport, MetricsReport, Prediction};
use crate::error::{HumofError, Result};
use crate::model::Humof;
use crate::params::{Gradients, ParamStore};
use crate::synth::sample_seed;

/// Adam moment estimates, one pair per parameter.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Gradients,
    v: Gradients,
    t: i32,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: &TrainingConfig) -> Self {
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            m: Gradients::zeros_like(store),
            v: Gradients::zeros_like(store),
            t: 0,
        }
    }

    /// One update; parameters are rounded through `f32` afterwards.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let g = grads.get(id);
            self.m.get_mut(id).zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
            self.v.get_mut(id).zip_mut_with(g, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            let (m, v) = (self.m.get(id), self.v.get(id));
            ndarray::Zip::from(store.get_mut(id)).and(m).and(v).for_each(|p, &m, &v| {
                let update = (m / c1) / ((v / c2).sqrt() + eps) + wd * *p;
                *p = (*p - lr * update) as f32 as f64;
            });
        }
    }
}

/// One JSON line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
    pub learning_rate: f64,
    /// Mean of the batch losses seen during the epoch (before each update).
    pub loss: LossReport,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub steps: usize,
    pub log: Vec<EpochLog>,
}

/// Planned optimizer steps for a dataset of `n` samples.
pub fn total_steps(cfg: &TrainingConfig, n: usize) -> usize {
    let per_epoch = n.div_ceil(cfg.batch_size);
    let planned = per_epoch * cfg.epochs;
    cfg.max_steps.map_or(planned, |m| m.min(planned))
}

/// Learning rate at `step` (0-based) of `total`: linear from the base rate to 0.
pub fn learning_rate(cfg: &TrainingConfig, step: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    cfg.learning_rate * (1.0 - step as f64 / total as f64)
}

/// Sample order of `epoch`, a seeded shuffle.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, epoch as u64));
    order.shuffle(&mut rng);
    order
}

/// Trains `store` in place. On a non-finite loss or gradient the parameters
/// of the last good step are kept and `diverged` is returned.
pub fn train(
    model: &Humof,
    store: &mut ParamStore,
    samples: &[Sample],
    cfg: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainSummary> {
    if samples.is_empty() {
        return Err(HumofError::InvalidConfig("training set is empty".into()));
    }
    let total = total_steps(cfg, samples.len());
    let mut adam = Adam::new(store, cfg);
    let mut step = 0;
    let mut log = Vec::new();
    for epoch in 0..cfg.epochs {
        if step >= total {
            break;
        }
        let order = epoch_order(cfg.seed, epoch, samples.len());
        let (mut path, mut local, mut batches) = (0.0, 0.0, 0usize);
        let mut lr = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            if step >= total {
                break;
            }
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (report, mut grads) = model.batch_loss_and_grad(store, &batch)?;
            let norm = grads.global_norm();
            if !report.total.is_finite() || !norm.is_finite() {
                return Err(HumofError::Diverged { epoch, step });
            }
            if let Some(clip) = cfg.grad_clip {
                if norm > clip {
                    grads.scale(clip / norm);
                }
            }
            lr = learning_rate(cfg, step, total);
            let last_good = store.clone();
            adam.step(store, &grads, lr);
            if !store.iter().all(|(_, _, v)| v.iter().all(|x| x.is_finite())) {
                *store = last_good;
                return Err(HumofError::Diverged { epoch, step });
            }
            debug!("epoch {epoch} step {step} loss {:.4} grad norm {norm:.4e}", report.total);
            path += report.path;
            local += report.local;
            batches += 1;
            step += 1;
        }
        let n = batches.max(1) as f64;
        let entry = EpochLog {
            epoch,
            step,
            learning_rate: lr,
            loss: LossReport::new(path / n, local / n),
        };
        info!("epoch {epoch}: total {:.3} mm^2 (path {:.3}, local {:.3})", entry.loss.total, entry.loss.path, entry.loss.local);
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainSummary { steps: step, log })
}

/// Model and zero-velocity metrics on a canonical dataset with futures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub model: MetricsReport,
    pub baseline: MetricsReport,
}

pub fn evaluate(model: &Humof, store: &ParamStore, samples: &[Sample], horizons: &[f64]) -> Result<Evaluation> {
    let truths = samples
        .iter()
        .map(|s| {
            s.future
                .clone()
                .ok_or_else(|| HumofError::BadShape("evaluation sample without ground truth".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let preds: Vec<Prediction> = samples
        .par_iter()
        .map(|s| model.predict(store, s, 0))
        .collect::<Result<_>>()?;
    let base: Vec<Prediction> = samples
        .iter()
        .map(|s| zero_velocity_baseline(s, model.config.horizon))
        .collect();
    Ok(Evaluation {
        model: metrics(&preds, &truths, horizons)?,
        baseline: metrics(&base, &truths, horizons)?,
    })
}

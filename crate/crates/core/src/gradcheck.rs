//! Central finite-difference check of every parameter gradient.

use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::Sample;
use crate::error::{HumofError, Result};
use crate::model::{Humof, InitScheme};
use crate::params::{ParamId, ParamStore};
use crate::synth::generate_dataset;

pub const EPSILON: f64 = 1e-5;
/// Smallest step tried when the one-sided differences of an entry disagree.
pub const MIN_EPSILON: f64 = 1e-7;
pub const TOLERANCE: f64 = 1e-3;
/// Bound on the relative rounding error of one loss evaluation.
const ROUNDING: f64 = 1e-13;
/// Denominator floor of the relative error, in units of the checked objective.
pub const REL_FLOOR: f64 = 1e-6;
/// The objective is the total loss in m² (the training loss is in mm²).
const OBJECTIVE_SCALE: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    /// Entries perturbed.
    pub entries: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub max_abs_gradient: f64,
    /// Both the analytic and the numeric gradient vanish everywhere.
    pub zero_gradient: bool,
    /// Entries whose step had to shrink below `EPSILON` because a max-pool
    /// switch lay within it.
    pub refined: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Worst parameter first.
    pub params: Vec<ParamCheck>,
}

impl GradcheckReport {
    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params.first()
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error < self.tolerance)
    }

    /// `GradcheckFailed` naming the worst parameter when any exceeds the tolerance.
    pub fn into_result(self) -> Result<Self> {
        match self.worst() {
            Some(w) if w.max_rel_error >= self.tolerance => Err(HumofError::GradcheckFailed {
                name: w.name.clone(),
                worst: w.max_rel_error,
            }),
            _ => Ok(self),
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Entries of an `len`-element parameter to perturb: all of them, or
/// `cap` evenly spaced ones.
fn entries(len: usize, cap: Option<usize>) -> Vec<usize> {
    match cap {
        Some(c) if c < len => (0..c).map(|i| i * len / c).collect(),
        _ => (0..len).collect(),
    }
}

/// Central difference of `objective` along one entry. A max-pool switch
/// inside the step shows up as one-sided differences that disagree by more
/// than rounding can explain; the step then shrinks tenfold until they
/// agree, down to `MIN_EPSILON`, and the `EPSILON` estimate stands if they
/// never do. Returns the estimate and whether the step shrank.
fn central_difference(base: f64, mut objective: impl FnMut(f64) -> Result<f64>) -> Result<(f64, bool)> {
    let mut eps = EPSILON;
    let mut first = None;
    while eps >= MIN_EPSILON * (1.0 - 1e-9) {
        let up = objective(eps)?;
        let down = objective(-eps)?;
        let central = (up - down) / (2.0 * eps);
        let (forward, backward) = ((up - base) / eps, (base - down) / eps);
        let gap = (forward - backward).abs();
        if gap <= TOLERANCE * forward.abs().max(backward.abs()) || gap <= ROUNDING * base.abs() / eps {
            return Ok((central, first.is_some()));
        }
        first.get_or_insert(central);
        eps /= 10.0;
    }
    Ok((first.expect("at least one step"), false))
}

/// Checks every parameter of `model` on `sample`, perturbing all entries or
/// at most `max_entries` per parameter.
pub fn check_gradients(
    model: &Humof,
    store: &ParamStore,
    sample: &Sample,
    max_entries: Option<usize>,
) -> Result<GradcheckReport> {
    let (report, grads) = model.loss_and_grad(store, sample)?;
    let front = model.front_end(store, sample)?;
    let base = report.total * OBJECTIVE_SCALE;
    let jobs: Vec<(ParamId, usize)> = store
        .ids()
        .flat_map(|id| entries(store.get(id).len(), max_entries).into_iter().map(move |k| (id, k)))
        .collect();
    let numeric: Vec<(f64, bool)> = jobs
        .par_iter()
        .map_init(
            || store.clone(),
            |local, &(id, k)| -> Result<(f64, bool)> {
                let (r, c) = (k / store.get(id).ncols(), k % store.get(id).ncols());
                let x = store.get(id)[[r, c]];
                let result = central_difference(base, |step| {
                    local.get_mut(id)[[r, c]] = x + step;
                    Ok(model.loss_with_front(local, sample, &front, id)?.total * OBJECTIVE_SCALE)
                });
                local.get_mut(id)[[r, c]] = x;
                result
            },
        )
        .collect::<Result<_>>()?;
    let mut params = Vec::with_capacity(store.len());
    let mut at = 0;
    for (id, name, value) in store.iter() {
        let picked = entries(value.len(), max_entries);
        let g = grads.get(id);
        let mut check = ParamCheck {
            name: name.to_string(),
            entries: picked.len(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            max_abs_gradient: 0.0,
            zero_gradient: true,
            refined: 0,
        };
        for (i, &k) in picked.iter().enumerate() {
            let a = g.as_slice().expect("standard layout")[k] * OBJECTIVE_SCALE;
            let (n, refined) = numeric[at + i];
            check.refined += usize::from(refined);
            check.max_rel_error = check.max_rel_error.max(relative_error(a, n));
            check.max_abs_error = check.max_abs_error.max((a - n).abs());
            check.max_abs_gradient = check.max_abs_gradient.max(a.abs());
            if a != 0.0 || n.abs() > REL_FLOOR * 1e-3 {
                check.zero_gradient = false;
            }
        }
        at += picked.len();
        params.push(check);
    }
    params.sort_by(|a, b| b.max_rel_error.total_cmp(&a.max_rel_error).then_with(|| a.name.cmp(&b.name)));
    if let Some(w) = params.first() {
        let refined: usize = params.iter().map(|p| p.refined).sum();
        info!(
            "gradcheck: {} parameters, worst {} at {:.3e}, {refined} entries with a reduced step",
            params.len(),
            w.name,
            w.max_rel_error
        );
    }
    Ok(GradcheckReport {
        epsilon: EPSILON,
        tolerance: TOLERANCE,
        params,
    })
}

/// The sample used by [`gradcheck`]: one canonical generated sample with two
/// interactive persons.
pub fn gradcheck_sample(config: &RunConfig) -> Result<Sample> {
    let mut gen = config.data.generator.clone();
    gen.others = vec![2];
    Ok(generate_dataset(&gen, &config.model, 1)?.remove(0))
}

/// Builds a randomly initialised model for `config` and checks it.
pub fn gradcheck(config: &RunConfig, max_entries: Option<usize>) -> Result<GradcheckReport> {
    config.validate()?;
    let (model, store) = Humof::new(&config.model, InitScheme::Random, config.training.seed)?;
    let sample = gradcheck_sample(config)?;
    check_gradients(&model, &store, &sample, max_entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0) - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn disconnected_branch_reports_zero_gradient() {
        let mut cfg = RunConfig::tiny();
        cfg.model.use_hhi = false;
        let report = gradcheck(&cfg, Some(16)).unwrap();
        let hhi: Vec<_> = report.params.iter().filter(|p| p.name.starts_with("hhi")).collect();
        assert!(!hhi.is_empty());
        assert!(hhi.iter().all(|p| p.zero_gradient && p.max_rel_error == 0.0));
        assert!(report.params.iter().filter(|p| p.name.starts_with("decoder")).all(|p| !p.zero_gradient));
        assert!(report.passed(), "worst {:?}", report.worst());
        let sorted = report.params.windows(2).all(|w| w[0].max_rel_error >= w[1].max_rel_error);
        assert!(sorted);
    }

    #[test]
    fn step_shrinks_across_a_kink() {
        // max(x, 2x - 2e-6) switches branch at 2e-6, inside the default step.
        let f = |x: f64| x.max(2.0 * x - 2e-6);
        let (d, refined) = central_difference(f(0.0), |h| Ok(f(h))).unwrap();
        assert!(refined);
        assert!((d - 1.0).abs() < 1e-9, "{d}");
        let (d, refined) = central_difference(0.0, |h| Ok(3.0 * h)).unwrap();
        assert!(!refined);
        assert!((d - 3.0).abs() < 1e-9);
    }

    #[test]
    fn entry_selection() {
        assert_eq!(entries(3, Some(8)), vec![0, 1, 2]);
        assert_eq!(entries(10, Some(4)), vec![0, 2, 5, 7]);
        assert_eq!(entries(4, None).len(), 4);
    }

    #[test]
    fn failure_names_worst() {
        let report = GradcheckReport {
            epsilon: EPSILON,
            tolerance: TOLERANCE,
            params: vec![ParamCheck {
                name: "x".into(),
                entries: 1,
                max_rel_error: 0.5,
                max_abs_error: 1.0,
                max_abs_gradient: 1.0,
                refined: 0,
                zero_gradient: false,
            }],
        };
        let err = report.into_result().unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains('x'));
    }
}

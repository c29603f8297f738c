#![allow(dead_code)]

use humof_core::config::{RunConfig, ScenarioKind};
use humof_core::data::Sample;
use humof_core::synth::generate_raw_sample;

/// Tiny config with the given person counts and an even scenario mix.
pub fn tiny(others: &[usize]) -> RunConfig {
    let mut cfg = RunConfig::tiny();
    cfg.data.generator.others = others.to_vec();
    cfg
}

/// Raw generated sample, rounded through `f32`.
pub fn raw_sample(cfg: &RunConfig, index: u64) -> Sample {
    let (_, mut s) = generate_raw_sample(&cfg.data.generator, &cfg.model, index).unwrap();
    s.quantize_f32();
    s
}

pub fn only(cfg: &mut RunConfig, kind: ScenarioKind) {
    cfg.data.generator.mix = [(kind, 1.0)].into_iter().collect();
}

pub fn max_abs_diff<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn same_bits<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> bool {
    a.into_iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

//! JSON dump of the interaction features a sample produces.

use serde::Serialize;

use crate::config::ModelConfig;
use crate::data::{canonicalize_sample_or_floor, Sample};
use crate::error::Result;
use crate::hhi::relation_spectra;
use crate::hsi::{point_interaction_features, HierarchyDump, SceneHierarchy};

fn rows(a: &ndarray::Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct PersonDump {
    pub person: usize,
    /// Spectra of the person's joints' proximity to the target (`J × C`).
    pub joint_to_target: Vec<Vec<f64>>,
    /// Spectra of the target's joints' proximity to the person (`J × C`).
    pub target_to_person: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InspectDump {
    pub joints: usize,
    pub history: usize,
    pub coeffs: usize,
    pub hhi: Vec<PersonDump>,
    /// Level-0 point features, one row per scene point.
    pub hsi_features: Vec<Vec<f64>>,
    pub hierarchy: HierarchyDump,
}

/// Builds the dump; raw samples are canonicalised first with `seed`.
pub fn inspect(config: &ModelConfig, sample: &Sample, seed: u64) -> Result<InspectDump> {
    let canon = if sample.canonical {
        sample.clone()
    } else {
        canonicalize_sample_or_floor(sample, config.scene_points, seed)?
    };
    let c = config.dct_coeffs;
    let hhi = canon
        .others
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let r = relation_spectra(&canon.target, o, config.sigma_hh, c)?;
            Ok(PersonDump {
                person: i,
                joint_to_target: rows(&r.joint_to_target),
                target_to_person: rows(&r.target_to_person),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let features = point_interaction_features(&canon.scene, &canon.target, config.sigma_hs, c)?;
    let hierarchy = SceneHierarchy::build(&canon.scene.points, &config.levels)?;
    Ok(InspectDump {
        joints: canon.joints(),
        history: canon.history(),
        coeffs: c,
        hhi,
        hsi_features: rows(&features.features),
        hierarchy: HierarchyDump::from(&hierarchy),
    })
}

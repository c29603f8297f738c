//! Spectral human motion forecasting with human-human and human-scene
//! interaction tokens.

pub mod checkpoint;
pub mod config;
pub mod container;
pub mod data;
pub mod decode;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod hhi;
pub mod hsi;
pub mod inspect;
pub mod model;
pub mod nn;
pub mod params;
pub mod reasoning;
pub mod spectral;
pub mod synth;
pub mod tape;
pub mod train;

pub use error::{HumofError, Result};

//! Detector for AI-generated images built on spatial texture splitting and
//! learnable spectral attention.

pub mod error;
pub mod config;
pub mod freq_attention;
pub mod model;
pub mod image_pipeline;
pub mod smash;
pub mod srm;
pub mod tensor;

pub use error::{Error, Result};

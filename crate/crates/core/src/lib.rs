pub mod concept_layer;
pub mod data;
pub mod diffmath;
pub mod encoder;
pub mod error;
pub mod fuzzy;
pub mod metrics;
pub mod params;
pub mod predictor;
pub mod reasoner;
pub mod seed;
pub mod training;

pub use error::{Error, Result};

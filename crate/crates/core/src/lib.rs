//! Instrumental-variable analysis of ordered treatments when the instrument
//! moves units only along the extensive margin.

pub mod bounds;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod moments;
pub mod resample;
pub mod rng;
pub mod simplex;
pub mod simulate;

pub use dataset::Dataset;
pub use error::{Error, Result};

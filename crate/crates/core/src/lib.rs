//! Latent space joint modelling of binary item-response data.

pub mod baseline;
pub mod clustering;
pub mod data;
pub mod error;
pub mod likelihood;
pub mod pipeline;
pub mod plot;
pub mod postprocess;
pub mod report;
pub mod sampler;
pub mod simgen;

pub use error::{Error, Result};

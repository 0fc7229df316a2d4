//! Salient object detection on a grid of fixed-size particles.
//!
//! Each particle is described by the mean of its local binary pattern codes
//! and by spatial color histograms compared against the average histogram of
//! salient training particles. The two are combined into one normalized
//! feature per template and labeled jointly by a binary grid conditional
//! random field trained with stochastic gradient ascent.

pub mod cli;
pub mod config;
pub mod crf;
pub mod dataset;
pub mod error;
pub mod integrate;
pub mod lbp;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod raster;
pub mod shf;
pub mod synth;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use model::ModelFile;

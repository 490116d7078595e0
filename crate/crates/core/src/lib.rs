//! Hypoelliptic diffusion maps on the unit tangent bundle of S².

pub mod afap;
pub mod bundle_graph;
pub mod cloud;
pub mod config;
pub mod embedding;
pub mod error;
pub mod geometry;
pub mod io;
pub mod laplacian;
pub mod oracle;
pub mod pipeline;
pub mod sparse;
pub mod spectral;
pub mod svg;
pub mod tangent_pca;

pub use config::{RunConfig, SamplingMode};
pub use error::{HdmError, Result};

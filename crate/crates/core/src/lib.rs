//! Multi-objective point-cloud autoencoder.
//!
//! A PointNet-style encoder maps a two-phase, three-substructure anatomy
//! point cloud to a variational latent code. A coarse-to-fine folding
//! decoder reconstructs the six point-cloud channels from that code, and a
//! small dropout + sigmoid head predicts a binary outcome. Training combines
//! Chamfer reconstruction, KL and cross-entropy terms under annealed weights.
//!
//! Numeric code is generic over [`numcore::Scalar`] (`f32` or `f64`); the
//! aliases below fix the double-precision configuration used throughout the
//! command-line driver and the test suites.

pub mod cloud;
pub mod config;
pub mod error;
pub mod evalsuite;
pub mod model;
pub mod numcore;
pub mod objective;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};

pub type Tensor = numcore::Tensor<f64>;
pub type Tensor32 = numcore::Tensor<f32>;
pub type Graph = numcore::Graph<f64>;
pub type Weights = model::Weights<f64>;
pub type Model = model::Model<f64>;
pub type PointCloudPair = cloud::PointCloudPair<f64>;
pub type SubCloud = cloud::SubCloud<f64>;
pub type ReconstructionOutput = model::ReconstructionOutput<f64>;
pub type LossBreakdown = objective::LossBreakdown<f64>;

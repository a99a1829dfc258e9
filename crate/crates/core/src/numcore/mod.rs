//! Numeric substrate: tensors, reverse-mode autodiff, Adam, a seeded RNG and
//! dense symmetric eigensolvers.

mod adam;
mod eig;
mod graph;
pub mod nearest;
mod rng;
mod scalar;
mod tensor;

pub use adam::{AdamConfig, AdamState, ParamMap};
pub use eig::{cholesky, sym_eig, sym_eig_generalized, SymEig};
pub use graph::{sigmoid, softplus, Gradients, Graph, Var, BCE_EPS};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tensor::Tensor;

pub(crate) use graph::{chamfer_value, clamp_prob};

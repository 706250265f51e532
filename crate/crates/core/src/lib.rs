//! Feed-forward networks whose activation functions are themselves small
//! trainable networks.
//!
//! Every hidden neuron's fixed nonlinearity can be replaced by a 1-k-1
//! subnetwork `z = sum_j beta_j * g(alpha_j * a + alpha0_j) + beta0`
//! (a *VAF*, variable activation function). A VAF layer either shares one
//! parameter set across all of its neurons or keeps one per neuron.
//!
//! The crate provides:
//!
//! - [`linalg`]: a small dense matrix type.
//! - [`activation`]: the fixed activations (identity, ReLU, tanh, sigmoid).
//! - [`vaf`]: VAF evaluation, exact gradients and the two initializations.
//! - [`network`]: layered networks with batched forward/backward passes.
//! - [`optim`]: SGD, Adam, RMSProp and iRprop-.
//! - [`train`]: the epoch loop with best-on-validation checkpointing.
//! - [`eval`]: K-fold cross-validation with a hyperparameter grid.
//! - [`data`]: CSV ingestion, normalization, splits and synthetic sets.
//!
//! All numeric code is generic over [`Scalar`], implemented for `f32` and
//! `f64`. The aliases at the crate root fix the scalar to `f64`, which is
//! what gradient checking and the experiment runner use.
//!
//! ```
//! use vafnet::{ActivationKind, LayerSpec, VafInit, Network};
//!
//! let specs = [
//!     LayerSpec::Dense { input: 2, output: 4 },
//!     LayerSpec::Vaf { k: 3, g: ActivationKind::Tanh, shared: true },
//!     LayerSpec::Dense { input: 4, output: 1 },
//! ];
//! let net: Network = Network::build(&specs, VafInit::Random, 7).unwrap();
//! assert_eq!(net.param_count(), 2 * 4 + 4 + 10 + 4 + 1);
//! ```

pub mod activation;
pub mod data;
mod error;
pub mod eval;
pub mod linalg;
pub mod network;
pub mod optim;
mod scalar;
pub mod train;
pub mod vaf;

pub use activation::ActivationKind;
pub use error::{Error, Result};
pub use network::{Architecture, LayerSpec, VafInit};
pub use scalar::Scalar;
pub use vaf::parameter_count;

/// Dense matrix of `f64`.
pub type Matrix = linalg::Matrix<f64>;
/// Dense matrix of `f32`.
pub type Matrix32 = linalg::Matrix<f32>;
/// VAF parameters over `f64`.
pub type VafParams = vaf::VafParams<f64>;
/// VAF parameters over `f32`.
pub type VafParams32 = vaf::VafParams<f32>;
/// Network over `f64`.
pub type Network = network::Network<f64>;
/// Network over `f32`.
pub type Network32 = network::Network<f32>;
/// Dataset over `f64`.
pub type Dataset = data::Dataset<f64>;
/// Optimizer over `f64`.
pub type Optimizer = optim::Optimizer<f64>;

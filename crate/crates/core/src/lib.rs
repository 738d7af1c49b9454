//! Interpretable classifier discovery on disentangled features.
//!
//! The crate trains a small total-correlation VAE on synthetic nucleus
//! images, fits dense, RigL-sparsified and symbolic classification heads on
//! its latent code, and provides the tooling to inspect and attack them.

pub mod advattack;
pub mod autodiff;
pub mod bench;
pub mod error;
pub mod fsio;
pub mod heads;
pub mod introspect;
pub mod label;
pub mod nn;
pub mod scalar;
pub mod scheme;
pub mod seed;
pub mod symreg;
pub mod synthcells;
pub mod tcvae;

pub use error::{Error, Result};
pub use label::{classify, Label};
pub use scalar::Scalar;
pub use scheme::Scheme;

/// Double-precision tensor used throughout the training pipeline.
pub type Tensor = autodiff::Tensor<f64>;
/// Double-precision compute graph.
pub type Graph = autodiff::Graph<f64>;
/// Double-precision dense network.
pub type Mlp = nn::Mlp<f64>;
/// Double-precision trainable parameter.
pub type Parameter = nn::Parameter<f64>;

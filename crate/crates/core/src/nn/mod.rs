//! Layer kit: parameters, dense networks with Mish, batch-norm, dropout, Adam.

mod adam;
pub mod codec;
mod mlp;
mod parameter;

pub use adam::{Adam, AdamHyper};
pub use mlp::{BatchNormState, DenseLayer, Mlp, MlpNodes, OutputActivation, Pass};
pub use parameter::Parameter;

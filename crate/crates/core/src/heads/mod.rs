//! Classification heads for schemes 1-3 and the sparse RigL trainer.
//!
//! Every head ends in a single scalar `f(x)`; `f(x) < 0` is interphase and
//! `f(x) >= 0` metaphase.

mod io;
mod mask;
mod prune;
mod rigl;
mod search;
mod train;

#[cfg(test)]
mod tests;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Label;
use crate::{Mlp, Scheme, Tensor};

pub use io::{decode_head, encode_head, load_head, log_csv, save_head, HEAD_MAGIC};
pub use mask::{MaskLayer, TopologyMask};
pub use prune::{post_prune, PruneReport};
pub use rigl::{active_target, cosine_decay, erdos_renyi_allocation, rigl_update, RigLConfig};
pub use search::{hparam_search, SearchRanges, SearchResult, TrialOutcome, TrialRecord};
pub use train::{train_head, HeadData, LogRow, RigLTrace, TrainedHead};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    /// Hidden widths of the classification head.
    pub hidden: Vec<usize>,
    /// Hidden widths of the pixel feature stack (scheme 1 only).
    pub features: Vec<usize>,
    pub dropout: f64,
    /// Batch-norm in the head (scheme 1 only).
    pub batch_norm: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Random dihedral transforms of the training images (scheme 1 only).
    pub augment: bool,
    pub rigl: RigLConfig,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self::for_scheme(Scheme::LatentDense)
    }
}

impl HeadConfig {
    pub fn for_scheme(scheme: Scheme) -> Self {
        let pixel = scheme == Scheme::PixelDense;
        Self {
            hidden: vec![16, 16, 16],
            features: vec![256, 64, 32],
            dropout: if scheme == Scheme::LatentSparse {
                0.0
            } else {
                0.3
            },
            batch_norm: pixel,
            epochs: 100,
            batch_size: 64,
            learning_rate: 3e-3,
            augment: pixel,
            rigl: RigLConfig::paper(),
        }
    }

    /// Head widths `[input, hidden.., 1]`.
    pub fn head_widths(&self, input: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend(&self.hidden);
        w.push(1);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) || self.features.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        self.rigl.validate()
    }
}

/// A trained head: an optional pixel feature stack followed by the
/// classification network.
#[derive(Clone, Debug)]
pub struct HeadModel {
    pub scheme: Scheme,
    pub features: Option<Mlp>,
    pub head: Mlp,
}

impl HeadModel {
    pub fn input_dim(&self) -> usize {
        self.features.as_ref().unwrap_or(&self.head).input_dim()
    }

    /// `f(x)` for every row of `x`.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        match &self.features {
            Some(f) => self.head.forward(&f.forward(x)),
            None => self.head.forward(x),
        }
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.forward(&Tensor::row(x.to_vec())).values()[0]
    }

    pub fn scores(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        if xs.is_empty() {
            return Ok(vec![]);
        }
        if xs.iter().any(|x| x.len() != self.input_dim()) {
            return Err(Error::invalid(format!(
                "head expects {} inputs",
                self.input_dim()
            )));
        }
        Ok(self.forward(&Tensor::from_rows(xs)?).into_values())
    }

    pub fn classify(&self, x: &[f64]) -> Result<Label> {
        crate::classify(self.score(x))
    }

    pub fn accuracy(&self, xs: &[Vec<f64>], labels: &[Label]) -> Result<f64> {
        Ok(crate::label::accuracy(&self.scores(xs)?, labels))
    }
}

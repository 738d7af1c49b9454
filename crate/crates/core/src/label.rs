use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cell state. Interphase is the negative class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Interphase,
    Metaphase,
}

impl Label {
    /// `-1` for interphase, `+1` for metaphase.
    pub fn sign(self) -> f64 {
        match self {
            Label::Interphase => -1.0,
            Label::Metaphase => 1.0,
        }
    }

    pub fn from_sign(v: f64) -> Self {
        if v < 0.0 {
            Label::Interphase
        } else {
            Label::Metaphase
        }
    }
}

/// Decision rule on the scalar model output: negative scores are
/// interphase, zero and positive scores metaphase.
pub fn classify(score: f64) -> Result<Label> {
    if !score.is_finite() {
        return Err(Error::NonFinite(format!("classification score {score}")));
    }
    Ok(if score < 0.0 {
        Label::Interphase
    } else {
        Label::Metaphase
    })
}

/// Fraction of `scores` whose sign rule agrees with `labels`. Non-finite
/// scores count as wrong.
pub fn accuracy(scores: &[f64], labels: &[Label]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| classify(s).is_ok_and(|p| p == l))
        .count();
    hits as f64 / scores.len() as f64
}

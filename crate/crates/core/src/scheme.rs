use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The four model families compared in the Rashomon study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    /// Dense pixel network with a batch-normalized dense head.
    PixelDense,
    /// Dense head on VAE latents.
    LatentDense,
    /// RigL-sparsified head on VAE latents.
    LatentSparse,
    /// Symbolic expression on VAE latents.
    Symbolic,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::PixelDense,
        Scheme::LatentDense,
        Scheme::LatentSparse,
        Scheme::Symbolic,
    ];

    pub fn number(self) -> u8 {
        match self {
            Scheme::PixelDense => 1,
            Scheme::LatentDense => 2,
            Scheme::LatentSparse => 3,
            Scheme::Symbolic => 4,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.number() == n)
    }

    /// Whether the model reads VAE latents rather than pixels.
    pub fn uses_latents(self) -> bool {
        self != Scheme::PixelDense
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "scheme{}", self.number())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let digits = s.strip_prefix("scheme").unwrap_or(s);
        digits
            .parse::<u8>()
            .ok()
            .and_then(Scheme::from_number)
            .ok_or_else(|| Error::Config(format!("unknown scheme `{s}`")))
    }
}

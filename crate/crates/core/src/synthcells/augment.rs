use rand::Rng;

use crate::error::{Error, Result};

/// One element of the symmetry group of the square: an optional
/// horizontal flip followed by `rot` counter-clockwise quarter turns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dihedral {
    pub flip: bool,
    pub rot: u8,
}

impl Dihedral {
    pub const IDENTITY: Self = Self {
        flip: false,
        rot: 0,
    };

    pub fn from_index(k: usize) -> Self {
        Self {
            flip: (k / 4) % 2 == 1,
            rot: (k % 4) as u8,
        }
    }

    pub fn all() -> impl Iterator<Item = Self> {
        (0..8).map(Self::from_index)
    }
}

/// Applies `t` to a square row-major image with side `n`.
pub fn augment(img: &[f64], height: usize, width: usize, t: Dihedral) -> Result<Vec<f64>> {
    if height != width {
        return Err(Error::invalid(format!(
            "augment needs a square image, got {height}x{width}"
        )));
    }
    if img.len() != height * width {
        return Err(Error::invalid(format!(
            "image has {} pixels, expected {}",
            img.len(),
            height * width
        )));
    }
    let n = width;
    let mut out: Vec<f64> = if t.flip {
        (0..n * n)
            .map(|k| img[(k / n) * n + (n - 1 - k % n)])
            .collect()
    } else {
        img.to_vec()
    };
    for _ in 0..t.rot % 4 {
        out = (0..n * n)
            .map(|k| out[(k % n) * n + (n - 1 - k / n)])
            .collect();
    }
    Ok(out)
}

/// Applies a uniformly drawn dihedral transform.
pub fn augment_random(
    img: &[f64],
    height: usize,
    width: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    augment(
        img,
        height,
        width,
        Dihedral::from_index(rng.random_range(0..8)),
    )
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthcells::FactorVector;

/// Pearson correlation; 0 when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return 0.0;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut c, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        c += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        c / (va * vb).sqrt()
    }
}

pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() == 1 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// Ground-truth factors compared against each latent dim. Eccentricity is
/// orientation-dependent in image space, so it enters through its two
/// quadrupole components `ecc·cos 2θ` and `ecc·sin 2θ`.
pub const FACTOR_NAMES: [&str; 7] = [
    "size",
    "ecc",
    "ecc_cos",
    "ecc_sin",
    "neighbors",
    "offset_x",
    "offset_y",
];

fn factor_columns(f: &[FactorVector]) -> [Vec<f64>; 7] {
    [
        f.iter().map(|v| v.size).collect(),
        f.iter().map(|v| v.ecc).collect(),
        f.iter().map(|v| v.ecc * (2.0 * v.angle).cos()).collect(),
        f.iter().map(|v| v.ecc * (2.0 * v.angle).sin()).collect(),
        f.iter().map(|v| v.neighbors.len() as f64).collect(),
        f.iter().map(|v| v.offset.0).collect(),
        f.iter().map(|v| v.offset.1).collect(),
    ]
}

/// `corr[d][k]`: correlation of latent dim `d` with factor `FACTOR_NAMES[k]`.
pub fn latent_factor_correlations(
    z: &[Vec<f64>],
    factors: &[FactorVector],
) -> Result<Vec<[f64; 7]>> {
    if z.len() != factors.len() || z.is_empty() {
        return Err(Error::invalid(
            "latents and factors must be non-empty and of equal length",
        ));
    }
    let cols = factor_columns(factors);
    let dims = z[0].len();
    Ok((0..dims)
        .map(|d| {
            let zd: Vec<f64> = z.iter().map(|r| r[d]).collect();
            let mut row = [0.0; 7];
            for (k, c) in cols.iter().enumerate() {
                row[k] = pearson(&zd, c);
            }
            row
        })
        .collect())
}

/// Latent dims a minimal size/eccentricity classifier should read.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedSupport {
    pub size_dim: usize,
    pub ecc_cos_dim: usize,
    pub ecc_sin_dim: usize,
    /// Sorted union of the three.
    pub dims: Vec<usize>,
}

fn argmax_abs(corr: &[[f64; 7]], k: usize) -> usize {
    let mut best = 0;
    for d in 1..corr.len() {
        if corr[d][k].abs() > corr[best][k].abs() {
            best = d;
        }
    }
    best
}

/// The dim most correlated (in absolute value) with size, and those most
/// correlated with each eccentricity component.
pub fn expected_support(corr: &[[f64; 7]]) -> Result<ExpectedSupport> {
    if corr.is_empty() {
        return Err(Error::invalid("no latent dims"));
    }
    let size_dim = argmax_abs(corr, 0);
    let ecc_cos_dim = argmax_abs(corr, 2);
    let ecc_sin_dim = argmax_abs(corr, 3);
    let mut dims = vec![size_dim, ecc_cos_dim, ecc_sin_dim];
    dims.sort_unstable();
    dims.dedup();
    Ok(ExpectedSupport {
        size_dim,
        ecc_cos_dim,
        ecc_sin_dim,
        dims,
    })
}

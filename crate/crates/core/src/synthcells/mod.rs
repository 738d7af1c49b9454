//! Synthetic nucleus images with known generative factors.
//!
//! Each image shows one anisotropic Gaussian "nucleus" near the centre,
//! a few smaller neighbouring blobs and additive noise. The class is a
//! deterministic function of the central blob's size and eccentricity:
//! small elongated nuclei are metaphase, everything else interphase.
//!
//! Sampling rejects factor pairs that lie close to either threshold or on
//! the wrong side of the diagonal through the threshold corner, so the two
//! classes are separated by a margin in the (size, ecc) plane and can be
//! told apart by a linear rule that still depends on both factors.

mod augment;
mod io;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Label;
use crate::seed::{derive_seed, rng_for};

pub use augment::{augment, augment_random, Dihedral};
pub use io::{read_dataset, write_dataset, CSV_HEADER};

const NOISE_TAG: u64 = 0x6e6f_6973_65;
const MAX_REJECTIONS: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    /// Centre in pixel coordinates (x to the right, y down).
    pub x: f64,
    pub y: f64,
    pub size: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorVector {
    pub size: f64,
    pub ecc: f64,
    pub angle: f64,
    pub offset: (f64, f64),
    pub neighbors: Vec<Neighbor>,
    pub noise_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub id: usize,
    /// Row-major, `height * width` values in `[0, 1]`.
    pub pixels: Vec<f64>,
    pub label: Label,
    pub factors: FactorVector,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub size_min: f64,
    pub size_max: f64,
    pub ecc_max: f64,
    pub size_threshold: f64,
    pub ecc_threshold: f64,
    /// Excluded band around each decision boundary, as a fraction of the
    /// respective factor range.
    pub margin: f64,
    pub max_offset: f64,
    pub noise_sigma: f64,
    pub neighbor_mean: f64,
    pub neighbor_max: usize,
    /// Slope of the neighbour rate in the relative nucleus size; 0 makes
    /// the neighbourhood independent of size, 2 is the steepest allowed.
    pub neighbor_coupling: f64,
    pub neighbor_size_min: f64,
    pub neighbor_size_max: f64,
    /// Minimum distance between a neighbour and the image centre.
    pub neighbor_min_dist: f64,
    pub test_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            size_min: 1.5,
            size_max: 3.0,
            ecc_max: 3.0,
            size_threshold: 2.325,
            ecc_threshold: 1.35,
            margin: 0.04,
            max_offset: 0.5,
            noise_sigma: 0.05,
            neighbor_mean: 2.0,
            neighbor_max: 4,
            neighbor_coupling: 1.0,
            neighbor_size_min: 0.6,
            neighbor_size_max: 1.0,
            neighbor_min_dist: 5.5,
            test_fraction: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.height > 0
            && self.width > 0
            && 0.0 < self.size_min
            && self.size_min < self.size_threshold
            && self.size_threshold < self.size_max
            && 0.0 < self.ecc_threshold
            && self.ecc_threshold < self.ecc_max
            && (0.0..0.5).contains(&self.margin)
            && self.max_offset >= 0.0
            && self.noise_sigma >= 0.0
            && self.neighbor_mean >= 0.0
            && (0.0..=2.0).contains(&self.neighbor_coupling)
            && 0.0 < self.neighbor_size_min
            && self.neighbor_size_min <= self.neighbor_size_max
            && (0.0..1.0).contains(&self.test_fraction);
        if !ok {
            return Err(Error::Config(format!(
                "inconsistent synthcells config {self:?}"
            )));
        }
        if self.max_offset >= self.width.min(self.height) as f64 / 2.0 {
            return Err(Error::Config(
                "max_offset pushes the nucleus out of frame".into(),
            ));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Signed distances to the size and ecc thresholds in units of each
    /// factor's range.
    fn normalized(&self, size: f64, ecc: f64) -> (f64, f64) {
        (
            (size - self.size_threshold) / (self.size_max - self.size_min),
            (ecc - self.ecc_threshold) / self.ecc_max,
        )
    }

    /// Whether a (size, ecc) pair may be emitted by the generator.
    pub fn admissible(&self, size: f64, ecc: f64) -> bool {
        let (u, v) = self.normalized(size, ecc);
        let m = self.margin;
        if u.abs() < m || v.abs() < m {
            return false;
        }
        // Interphase points must also lie below the diagonal v = u, which
        // makes the classes linearly separable.
        let d = (v - u) / std::f64::consts::SQRT_2;
        match label_rule_with(self, size, ecc) {
            Label::Metaphase => true,
            Label::Interphase => d <= -m,
        }
    }
}

fn label_rule_with(cfg: &SynthConfig, size: f64, ecc: f64) -> Label {
    if size < cfg.size_threshold && ecc > cfg.ecc_threshold {
        Label::Metaphase
    } else {
        Label::Interphase
    }
}

/// Ground-truth class of a factor vector under `cfg`'s thresholds.
pub fn label_rule(f: &FactorVector, cfg: &SynthConfig) -> Label {
    label_rule_with(cfg, f.size, f.ecc)
}

fn check_factors(f: &FactorVector) -> Result<()> {
    if !(f.size > 0.0 && f.size.is_finite()) {
        return Err(Error::invalid(format!(
            "size must be positive, got {}",
            f.size
        )));
    }
    if !(f.ecc >= 0.0 && f.ecc.is_finite()) {
        return Err(Error::invalid(format!(
            "ecc must be non-negative, got {}",
            f.ecc
        )));
    }
    if !(f.angle.is_finite() && f.offset.0.is_finite() && f.offset.1.is_finite()) {
        return Err(Error::invalid("non-finite angle or offset"));
    }
    Ok(())
}

/// Renders a factor vector to an `height x width` row-major image.
pub fn render(f: &FactorVector, height: usize, width: usize, noise_sigma: f64) -> Result<Vec<f64>> {
    check_factors(f)?;
    let cx = width as f64 / 2.0 + f.offset.0;
    let cy = height as f64 / 2.0 + f.offset.1;
    if !(0.0..=width as f64).contains(&cx) || !(0.0..=height as f64).contains(&cy) {
        return Err(Error::invalid(format!(
            "nucleus centre ({cx}, {cy}) outside {width}x{height} frame"
        )));
    }
    let stretch = (1.0 + f.ecc).sqrt();
    let (sa, sb) = (f.size * stretch, f.size / stretch);
    let (sin, cos) = f.angle.sin_cos();
    let mut px = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            let x = c as f64 + 0.5 - cx;
            let y = r as f64 + 0.5 - cy;
            let q = if f.ecc == 0.0 {
                (x * x + y * y) / (sa * sa)
            } else {
                let xr = x * cos + y * sin;
                let yr = -x * sin + y * cos;
                (xr / sa).powi(2) + (yr / sb).powi(2)
            };
            let mut v = (-0.5 * q).exp();
            for n in &f.neighbors {
                let dx = c as f64 + 0.5 - n.x;
                let dy = r as f64 + 0.5 - n.y;
                v = v.max((-0.5 * (dx * dx + dy * dy) / (n.size * n.size)).exp());
            }
            px.push(v);
        }
    }
    if noise_sigma > 0.0 {
        let noise = Normal::new(0.0, noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(f.noise_seed);
        for v in &mut px {
            *v += noise.sample(&mut rng);
        }
    }
    for v in &mut px {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(px)
}

/// Noise seed assigned to sample `id` of the dataset generated from `seed`.
pub fn noise_seed(seed: u64, id: usize) -> u64 {
    derive_seed(seed, &[NOISE_TAG, id as u64])
}

/// Draws one admissible factor vector.
pub fn sample_factors(
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
    noise_seed: u64,
) -> Result<FactorVector> {
    let (size, ecc) = (0..MAX_REJECTIONS)
        .map(|_| {
            (
                rng.random_range(cfg.size_min..cfg.size_max),
                rng.random_range(0.0..cfg.ecc_max),
            )
        })
        .find(|&(s, e)| cfg.admissible(s, e))
        .ok_or_else(|| Error::Config("margin leaves no admissible (size, ecc) pairs".into()))?;
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    let offset = if cfg.max_offset > 0.0 {
        (
            rng.random_range(-cfg.max_offset..=cfg.max_offset),
            rng.random_range(-cfg.max_offset..=cfg.max_offset),
        )
    } else {
        (0.0, 0.0)
    };
    // Larger nuclei get fewer neighbours; the rate averages to
    // `neighbor_mean` over the uniform size prior.
    let rel = (size - cfg.size_min) / (cfg.size_max - cfg.size_min);
    let lambda = cfg.neighbor_mean * (1.0 + cfg.neighbor_coupling * (0.5 - rel));
    let count = if lambda > 0.0 {
        let p = Poisson::new(lambda).map_err(|e| Error::invalid(e.to_string()))?;
        (p.sample(rng) as usize).min(cfg.neighbor_max)
    } else {
        0
    };
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let mut neighbors = Vec::with_capacity(count);
    while neighbors.len() < count {
        let x = rng.random_range(0.0..w);
        let y = rng.random_range(0.0..h);
        if (x - w / 2.0).hypot(y - h / 2.0) < cfg.neighbor_min_dist {
            continue;
        }
        let size = rng.random_range(cfg.neighbor_size_min..=cfg.neighbor_size_max);
        neighbors.push(Neighbor { x, y, size });
    }
    Ok(FactorVector {
        size,
        ecc,
        angle,
        offset,
        neighbors,
        noise_seed,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: SynthConfig,
    pub seed: u64,
    pub samples: Vec<ImageSample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ImageSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn metaphase_fraction(&self) -> f64 {
        let n = self
            .samples
            .iter()
            .filter(|s| s.label == Label::Metaphase)
            .count();
        n as f64 / self.samples.len().max(1) as f64
    }
}

/// Generates `n` samples deterministically from `seed`, with a label-
/// stratified train/test split.
pub fn generate_dataset(n: usize, seed: u64, cfg: &SynthConfig) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be positive"));
    }
    cfg.validate()?;
    let mut samples = (0..n)
        .into_par_iter()
        .map(|id| {
            let mut rng = rng_for(seed, &[id as u64]);
            let factors = sample_factors(cfg, &mut rng, noise_seed(seed, id))?;
            let pixels = render(&factors, cfg.height, cfg.width, cfg.noise_sigma)?;
            Ok(ImageSample {
                id,
                pixels,
                label: label_rule(&factors, cfg),
                factors,
                split: Split::Train,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rng = rng_for(seed, &[u64::MAX]);
    for class in [Label::Interphase, Label::Metaphase] {
        let mut idx: Vec<usize> = samples
            .iter()
            .filter(|s| s.label == class)
            .map(|s| s.id)
            .collect();
        idx.shuffle(&mut rng);
        let n_test = (idx.len() as f64 * cfg.test_fraction).round() as usize;
        for &i in &idx[..n_test] {
            samples[i].split = Split::Test;
        }
    }
    Ok(Dataset {
        config: cfg.clone(),
        seed,
        samples,
    })
}

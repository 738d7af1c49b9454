use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigLConfig {
    /// Global fraction of inactive weights.
    pub sparsity: f64,
    /// Iterations between topology updates.
    pub delta_t: usize,
    /// Initial update fraction.
    pub alpha: f64,
    /// Last topology update, as a fraction of the post-warm-up iterations.
    pub t_end_fraction: f64,
    /// Dense warm-up length in epochs.
    pub warmup_epochs: usize,
}

impl RigLConfig {
    /// Values reported by the original hyper-parameter search.
    pub fn paper() -> Self {
        Self {
            sparsity: 0.951,
            delta_t: 115,
            alpha: 0.758,
            t_end_fraction: 0.75,
            warmup_epochs: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(Error::Config(format!(
                "sparsity {} outside [0, 1)",
                self.sparsity
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!(
                "alpha {} outside (0, 1]",
                self.alpha
            )));
        }
        if self.delta_t == 0 {
            return Err(Error::Config("delta_t must be at least 1".into()));
        }
        if !(self.t_end_fraction > 0.0 && self.t_end_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "t_end_fraction {} outside (0, 1]",
                self.t_end_fraction
            )));
        }
        Ok(())
    }

    /// `T_end` in iterations for a run with `post_warmup` iterations after
    /// the warm-up; at least 1 so the first pruning step always happens.
    pub fn t_end(&self, post_warmup: usize) -> usize {
        ((self.t_end_fraction * post_warmup as f64).round() as usize).max(1)
    }
}

impl Default for RigLConfig {
    fn default() -> Self {
        Self::paper()
    }
}

/// Per-layer sparsities `s^l` for a dense network with `widths`, scaled by
/// the Erdős-Rényi rule and normalized to the global sparsity `s`.
///
/// Layers whose density would exceed 1 are made dense and the scale is
/// re-solved over the remaining layers.
pub fn erdos_renyi_allocation(widths: &[usize], s: f64) -> Result<Vec<f64>> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::invalid(format!("bad layer widths {widths:?}")));
    }
    if !(0.0..1.0).contains(&s) {
        return Err(Error::invalid(format!("sparsity {s} outside [0, 1)")));
    }
    let sizes: Vec<f64> = widths.windows(2).map(|w| (w[0] * w[1]) as f64).collect();
    let scale: Vec<f64> = widths
        .windows(2)
        .map(|w| (w[0] + w[1]) as f64 / (w[0] * w[1]) as f64)
        .collect();
    let total: f64 = sizes.iter().sum();
    let mut dense = vec![false; sizes.len()];
    loop {
        let fixed: f64 = sizes
            .iter()
            .zip(&dense)
            .filter(|(_, &d)| d)
            .map(|(n, _)| n)
            .sum();
        let budget = (1.0 - s) * total - fixed;
        let free: f64 = sizes
            .iter()
            .zip(&scale)
            .zip(&dense)
            .filter(|(_, &d)| !d)
            .map(|((n, r), _)| n * r)
            .sum();
        if free == 0.0 {
            if budget.abs() > 1e-9 * total {
                return Err(Error::invalid(format!(
                    "sparsity {s} is infeasible for {widths:?}"
                )));
            }
            return Ok(vec![0.0; sizes.len()]);
        }
        let c = budget / free;
        let mut clamped = false;
        for l in 0..sizes.len() {
            if !dense[l] && c * scale[l] > 1.0 {
                dense[l] = true;
                clamped = true;
            }
        }
        if !clamped {
            return Ok((0..sizes.len())
                .map(|l| if dense[l] { 0.0 } else { 1.0 - c * scale[l] })
                .collect());
        }
    }
}

/// Active-weight target `round((1 - s) N)` of a layer with `n` weights.
pub fn active_target(n: usize, s: f64) -> usize {
    (((1.0 - s) * n as f64).round() as usize).min(n)
}

/// Cosine-annealed update fraction; zero after `t_end`.
pub fn cosine_decay(t: usize, alpha: f64, t_end: usize) -> f64 {
    if t > t_end || t_end == 0 {
        return 0.0;
    }
    alpha / 2.0 * (1.0 + (t as f64 * std::f64::consts::PI / t_end as f64).cos())
}

/// Indices ordered by descending score, ties by ascending index.
fn ranked(idx: impl Iterator<Item = usize>, score: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut v: Vec<usize> = idx.collect();
    v.sort_by(|&a, &b| {
        score(b)
            .partial_cmp(&score(a))
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    v
}

/// One prune/grow step on a flattened layer. Keeps the `target - k`
/// largest-magnitude active weights and grows the `k` connections outside
/// that set with the largest gradient magnitude. Returns the new mask.
pub fn rigl_update(
    weights: &[f64],
    grads: &[f64],
    mask: &[bool],
    sparsity: f64,
    k: usize,
) -> Vec<bool> {
    let n = weights.len();
    let target = active_target(n, sparsity);
    let keep_n = target.saturating_sub(k);
    let active = ranked((0..n).filter(|&i| mask[i]), |i| weights[i].abs());
    let mut out = vec![false; n];
    for &i in active.iter().take(keep_n) {
        out[i] = true;
    }
    let grow_n = target - keep_n.min(active.len());
    let candidates = ranked((0..n).filter(|&i| !out[i]), |i| grads[i].abs());
    for &i in candidates.iter().take(grow_n) {
        out[i] = true;
    }
    out
}

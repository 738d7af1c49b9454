use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::RigLConfig;
use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Uniform sampling ranges for the random search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchRanges {
    pub sparsity: [f64; 2],
    pub delta_t: [usize; 2],
    pub alpha: [f64; 2],
}

impl Default for SearchRanges {
    fn default() -> Self {
        Self {
            sparsity: [0.95, 0.97],
            delta_t: [100, 200],
            alpha: [0.7, 0.9],
        }
    }
}

impl SearchRanges {
    fn sample(&self, base: &RigLConfig, rng: &mut impl Rng) -> RigLConfig {
        RigLConfig {
            sparsity: rng.random_range(self.sparsity[0]..=self.sparsity[1]),
            delta_t: rng.random_range(self.delta_t[0]..=self.delta_t[1]),
            alpha: rng.random_range(self.alpha[0]..=self.alpha[1]),
            ..base.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.sparsity[0] <= self.sparsity[1]
            && self.delta_t[0] <= self.delta_t[1]
            && self.alpha[0] <= self.alpha[1];
        if !ok {
            return Err(Error::Config(
                "search range with lower bound above upper bound".into(),
            ));
        }
        Ok(())
    }
}

/// Result of one training run inside a trial.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub val_accuracy: f64,
    /// Fraction of inactive head weights after post-pruning.
    pub sparsity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub config: RigLConfig,
    pub val_accuracy: f64,
    pub sparsity: f64,
    /// `val_accuracy + sparsity`, both averaged over runs.
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: RigLConfig,
    pub best_trial: usize,
    pub trials: Vec<TrialRecord>,
}

/// Random search maximizing mean validation accuracy plus mean final
/// sparsity. `run(config, seed)` trains and scores one model; each trial and
/// run gets its own seed derived from `(seed, trial, run)`. Configurations
/// are fixed by `seed` alone, so the trial sequence does not depend on how
/// trials are scheduled. Ties go to the earlier trial.
pub fn hparam_search<F>(
    ranges: &SearchRanges,
    base: &RigLConfig,
    trials: usize,
    runs_per_trial: usize,
    seed: u64,
    run: F,
) -> Result<SearchResult>
where
    F: Fn(&RigLConfig, u64) -> Result<TrialOutcome> + Sync,
{
    if trials == 0 || runs_per_trial == 0 {
        return Err(Error::Config(
            "hparam_search needs at least one trial and one run".into(),
        ));
    }
    ranges.validate()?;
    let configs: Vec<RigLConfig> = (0..trials)
        .map(|t| ranges.sample(base, &mut rng_for(seed, &[0x6870, t as u64])))
        .collect();
    let records = configs
        .par_iter()
        .enumerate()
        .map(|(trial, config)| {
            let mut acc = 0.0;
            let mut sp = 0.0;
            for r in 0..runs_per_trial {
                let o = run(
                    config,
                    crate::seed::derive_seed(seed, &[trial as u64, r as u64]),
                )?;
                acc += o.val_accuracy;
                sp += o.sparsity;
            }
            let val_accuracy = acc / runs_per_trial as f64;
            let sparsity = sp / runs_per_trial as f64;
            Ok(TrialRecord {
                trial,
                config: config.clone(),
                val_accuracy,
                sparsity,
                objective: val_accuracy + sparsity,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = best_trial(&records);
    Ok(SearchResult {
        best: records[best].config.clone(),
        best_trial: best,
        trials: records,
    })
}

pub(super) fn best_trial(records: &[TrialRecord]) -> usize {
    let mut best = 0;
    for (i, r) in records.iter().enumerate() {
        if r.objective > records[best].objective {
            best = i;
        }
    }
    best
}

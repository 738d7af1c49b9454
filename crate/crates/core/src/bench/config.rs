use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::advattack::AttackLoss;
use crate::error::{Error, Result};
use crate::heads::{HeadConfig, SearchRanges};
use crate::introspect::DEFAULT_GRID;
use crate::symreg::{LossMode, SymRegConfig};
use crate::synthcells::SynthConfig;
use crate::tcvae::VaeConfig;
use crate::Scheme;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataParams {
    pub samples: usize,
    pub synth: SynthConfig,
}

impl Default for DataParams {
    fn default() -> Self {
        Self {
            samples: 8000,
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchParams {
    /// Run the RigL search before training the scheme-3 heads; otherwise
    /// `scheme3.rigl` is used as given.
    pub enabled: bool,
    pub trials: usize,
    pub runs_per_trial: usize,
    /// Shortened training length of each search run.
    pub epochs: usize,
    /// Fraction of the training split held out for validation.
    pub validation_fraction: f64,
    pub ranges: SearchRanges,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            enabled: true,
            trials: 8,
            runs_per_trial: 1,
            epochs: 40,
            validation_fraction: 0.1,
            ranges: SearchRanges::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SymregParams {
    /// Loss whose expressions fill the scheme-4 row of the report.
    pub report_mode: LossMode,
    pub gp: SymRegConfig,
}

impl Default for SymregParams {
    fn default() -> Self {
        Self {
            report_mode: LossMode::Hinge,
            gp: SymRegConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackParams {
    pub image_epsilons: Vec<f64>,
    pub latent_epsilons: Vec<f64>,
    pub loss: AttackLoss,
}

impl Default for AttackParams {
    fn default() -> Self {
        Self {
            image_epsilons: vec![0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5],
            latent_epsilons: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            loss: AttackLoss::Hinge,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeParams {
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_steps: usize,
}

impl Default for AnalyzeParams {
    fn default() -> Self {
        let (grid_min, grid_max, grid_steps) = DEFAULT_GRID;
        Self {
            grid_min,
            grid_max,
            grid_steps,
        }
    }
}

/// Everything a pipeline run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Models trained per scheme.
    pub seeds: usize,
    pub data: DataParams,
    pub vae: VaeConfig,
    pub scheme1: HeadConfig,
    pub scheme2: HeadConfig,
    pub scheme3: HeadConfig,
    pub search: SearchParams,
    pub symreg: SymregParams,
    pub attack: AttackParams,
    pub analyze: AnalyzeParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            seeds: 10,
            data: DataParams::default(),
            vae: VaeConfig::default(),
            scheme1: HeadConfig::for_scheme(Scheme::PixelDense),
            scheme2: HeadConfig::for_scheme(Scheme::LatentDense),
            scheme3: HeadConfig::for_scheme(Scheme::LatentSparse),
            search: SearchParams::default(),
            symreg: SymregParams::default(),
            attack: AttackParams::default(),
            analyze: AnalyzeParams::default(),
        }
    }
}

fn check_epsilons(name: &str, eps: &[f64]) -> Result<()> {
    if eps.first() != Some(&0.0)
        || eps.windows(2).any(|w| !(w[0] < w[1]))
        || eps.iter().any(|e| !e.is_finite())
    {
        return Err(Error::Config(format!(
            "{name} must start at 0 and increase strictly"
        )));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn head(&self, scheme: Scheme) -> Result<&HeadConfig> {
        match scheme {
            Scheme::PixelDense => Ok(&self.scheme1),
            Scheme::LatentDense => Ok(&self.scheme2),
            Scheme::LatentSparse => Ok(&self.scheme3),
            Scheme::Symbolic => Err(Error::Config("scheme 4 has no neural head config".into())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_dir.as_os_str().is_empty() {
            return Err(Error::Config("out_dir must not be empty".into()));
        }
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be at least 1".into()));
        }
        if self.data.samples < 10 {
            return Err(Error::Config("data.samples must be at least 10".into()));
        }
        self.data
            .synth
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        let v = &self.vae;
        if v.latent_dim == 0 || v.epochs == 0 || v.batch_size < 2 || v.hidden.contains(&0) {
            return Err(Error::Config(
                "vae needs positive widths, latent_dim, epochs and batch_size >= 2".into(),
            ));
        }
        if !(v.learning_rate > 0.0 && v.decoder_sigma > 0.0) {
            return Err(Error::Config(
                "vae learning_rate and decoder_sigma must be positive".into(),
            ));
        }
        for s in [
            Scheme::PixelDense,
            Scheme::LatentDense,
            Scheme::LatentSparse,
        ] {
            self.head(s)?.validate()?;
        }
        if self.scheme3.batch_norm {
            return Err(Error::Config(
                "scheme3 heads are trained without batch-norm".into(),
            ));
        }
        let s = &self.search;
        if s.enabled {
            if s.trials == 0 || s.runs_per_trial == 0 || s.epochs == 0 {
                return Err(Error::Config(
                    "search needs positive trials, runs_per_trial and epochs".into(),
                ));
            }
            if s.epochs <= self.scheme3.rigl.warmup_epochs {
                return Err(Error::Config(
                    "search.epochs must exceed the scheme3 warm-up".into(),
                ));
            }
            if !(s.validation_fraction > 0.0 && s.validation_fraction < 1.0) {
                return Err(Error::Config(
                    "search.validation_fraction must lie in (0, 1)".into(),
                ));
            }
        }
        self.symreg.gp.validate()?;
        check_epsilons("attack.image_epsilons", &self.attack.image_epsilons)?;
        check_epsilons("attack.latent_epsilons", &self.attack.latent_epsilons)?;
        let a = &self.analyze;
        if !(a.grid_min < a.grid_max) || a.grid_steps < 2 {
            return Err(Error::Config(
                "analyze grid needs grid_min < grid_max and at least 2 steps".into(),
            ));
        }
        Ok(())
    }
}

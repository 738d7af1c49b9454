//! Pipeline orchestration: a TOML run config, one command per stage,
//! content-hashed stage manifests and the Rashomon report comparing the
//! four schemes.
//!
//! Artifacts live under `out_dir`:
//!
//! * `data/`: the synthetic dataset;
//! * `vae/`: encoder checkpoint, loss history and latent codes;
//! * `heads/scheme{k}/seed{i}/`: neural heads with logs and masks;
//! * `symreg/{mode}/`: hall-of-fame CSVs and the selected expressions;
//! * `attacks/{space}[-restriction]/`: attack curves and example images;
//! * `analysis/`: latent/factor correlations, feature selection, sparse
//!   head graphs and response maps, blank-image probes;
//! * `report/`: the Rashomon table as CSV and text;
//! * `manifests/{stage}.json`: hashes of every input and output.

mod config;
mod harness;
mod manifest;
mod report;
mod stages;

#[cfg(test)]
mod tests;

pub use config::{AnalyzeParams, AttackParams, DataParams, RunConfig, SearchParams, SymregParams};
pub use harness::{
    expected_support, latent_factor_correlations, mean_sd, pearson, ExpectedSupport, FACTOR_NAMES,
};
pub use manifest::{manifest_path, read_manifest, sha256_hex, Manifest, StageRun, MANIFEST_DIR};
pub use report::{ModelRow, RashomonReport, RashomonRow};
pub use stages::{
    config_hash, report, run_pipeline, run_stage, summarize_attack, AttackRow, AttackSummaryRow,
    HeadRow, Restrict, SelectionRow, Stage, SymbolicRow, DATA_FILES, VAE_LATENTS, VAE_MODEL,
};

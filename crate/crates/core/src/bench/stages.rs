use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::RunConfig;
use super::harness::{
    expected_support, latent_factor_correlations, mean_sd, ExpectedSupport, FACTOR_NAMES,
};
use super::manifest::{sha256_hex, Manifest, StageRun, MANIFEST_DIR};
use super::report::{write_report, RashomonReport};
use crate::advattack::{
    attack, attack_curve, pgm_triplet, AttackConfig, AttackSpace, AttackedSample, Head, Pipeline,
};
use crate::error::{Error, Result};
use crate::fsio::csv_bytes;
use crate::heads::{
    decode_head, encode_head, hparam_search, log_csv, train_head, HeadData, HeadModel,
    SearchResult, TrialOutcome,
};
use crate::introspect::{
    export_dot, linspace, response_csv, size_report, subnetwork_response, suggest_cuts, Cut,
    NetGraph,
};
use crate::label::{accuracy, Label};
use crate::seed::{derive_seed, rng_for};
use crate::symreg::{fit, hall_of_fame_csv, Expr, HofEntry, LossMode, SymData};
use crate::synthcells::{generate_dataset, read_dataset, write_dataset, Dataset, Split};
use crate::tcvae::{
    decode_checkpoint, encode_checkpoint, encode_dataset, latent_csv, read_latent_csv, train_vae,
    LatentTable, VaeModel,
};
use crate::Scheme;

const TAG_DATA: u64 = 1;
const TAG_VAE: u64 = 2;
const TAG_HEAD: u64 = 3;
const TAG_SEARCH: u64 = 4;
const TAG_SYMREG: u64 = 5;

pub const DATA_FILES: [&str; 4] = [
    "data/images.pgm",
    "data/factors.csv",
    "data/neighbors.csv",
    "data/dataset.json",
];
pub const VAE_MODEL: &str = "vae/model.ckpt";
pub const VAE_LATENTS: &str = "vae/latents.csv";

/// Which inputs a restricted attack may change.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Restrict {
    Dims(Vec<usize>),
    /// Latent dims outside every scheme-3 support and scheme-4 expression.
    Unselected,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Stage {
    GenData,
    TrainVae,
    TrainHead(Scheme),
    Symreg(LossMode),
    Attack {
        space: AttackSpace,
        restrict: Option<Restrict>,
    },
    Analyze,
    Report,
}

fn mode_name(m: LossMode) -> &'static str {
    match m {
        LossMode::Hinge => "hinge",
        LossMode::Mse => "mse",
    }
}

fn space_name(s: AttackSpace) -> &'static str {
    match s {
        AttackSpace::Image => "image",
        AttackSpace::Latent => "latent",
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::GenData => write!(f, "gen-data"),
            Stage::TrainVae => write!(f, "train-vae"),
            Stage::TrainHead(s) => write!(f, "train-head-scheme{}", s.number()),
            Stage::Symreg(m) => write!(f, "symreg-{}", mode_name(*m)),
            Stage::Attack { space, restrict } => {
                write!(f, "attack-{}", space_name(*space))?;
                match restrict {
                    None => Ok(()),
                    Some(Restrict::Unselected) => write!(f, "-unselected"),
                    Some(Restrict::Dims(d)) if d.len() <= 8 => {
                        let s: Vec<String> = d.iter().map(usize::to_string).collect();
                        write!(f, "-dims-{}", s.join("-"))
                    }
                    Some(Restrict::Dims(d)) => {
                        let s: Vec<String> = d.iter().map(usize::to_string).collect();
                        write!(f, "-dims-{}", &sha256_hex(s.join(",").as_bytes())[..12])
                    }
                }
            }
            Stage::Analyze => write!(f, "analyze"),
            Stage::Report => write!(f, "report"),
        }
    }
}

impl Stage {
    /// Stages whose artifacts this one always reads. `analyze` also reads
    /// the other heads when they are present, and `report` reads every
    /// attack run (at least one is required).
    pub fn dependencies(&self, cfg: &RunConfig) -> Vec<Stage> {
        let sym = Stage::Symreg(cfg.symreg.report_mode);
        let heads = |ks: &[Scheme]| ks.iter().map(|&k| Stage::TrainHead(k)).collect::<Vec<_>>();
        match self {
            Stage::GenData => vec![],
            Stage::TrainVae => vec![Stage::GenData],
            Stage::TrainHead(Scheme::PixelDense) => vec![Stage::GenData],
            Stage::TrainHead(_) => vec![Stage::TrainVae],
            Stage::Symreg(_) => vec![Stage::TrainVae, Stage::TrainHead(Scheme::LatentSparse)],
            Stage::Attack { space, .. } => {
                let mut d = match space {
                    AttackSpace::Image => vec![Stage::GenData, Stage::TrainVae],
                    AttackSpace::Latent => vec![Stage::TrainVae],
                };
                if *space == AttackSpace::Image {
                    d.push(Stage::TrainHead(Scheme::PixelDense));
                }
                d.extend(heads(&[Scheme::LatentDense, Scheme::LatentSparse]));
                d.push(sym);
                d
            }
            Stage::Analyze => vec![
                Stage::GenData,
                Stage::TrainVae,
                Stage::TrainHead(Scheme::LatentSparse),
            ],
            Stage::Report => {
                let mut d = vec![Stage::GenData, Stage::TrainVae];
                d.extend(heads(&[
                    Scheme::PixelDense,
                    Scheme::LatentDense,
                    Scheme::LatentSparse,
                ]));
                d.push(sym);
                d.push(Stage::Analyze);
                d
            }
        }
    }
}

/// Configuration sections a stage depends on, directly or through its
/// inputs.
fn config_view(cfg: &RunConfig, stage: &Stage) -> Result<serde_json::Value> {
    let v = match stage {
        Stage::GenData => json!({"seed": cfg.seed, "data": cfg.data}),
        Stage::TrainVae => json!({"seed": cfg.seed, "data": cfg.data, "vae": cfg.vae}),
        Stage::TrainHead(Scheme::PixelDense) => {
            json!({"seed": cfg.seed, "data": cfg.data, "seeds": cfg.seeds, "scheme1": cfg.scheme1})
        }
        Stage::TrainHead(Scheme::LatentDense) => {
            json!({"seed": cfg.seed, "data": cfg.data, "vae": cfg.vae, "seeds": cfg.seeds, "scheme2": cfg.scheme2})
        }
        Stage::TrainHead(Scheme::LatentSparse) => json!({
            "seed": cfg.seed, "data": cfg.data, "vae": cfg.vae, "seeds": cfg.seeds,
            "scheme3": cfg.scheme3, "search": cfg.search
        }),
        Stage::TrainHead(Scheme::Symbolic) => {
            return Err(Error::Config(
                "scheme 4 is fitted by the symreg stage".into(),
            ))
        }
        Stage::Symreg(_) => json!({
            "seed": cfg.seed, "data": cfg.data, "vae": cfg.vae, "seeds": cfg.seeds,
            "scheme3": cfg.scheme3, "search": cfg.search, "gp": cfg.symreg.gp
        }),
        Stage::Attack { .. } | Stage::Analyze | Stage::Report => {
            let mut all = serde_json::to_value(cfg)?;
            let obj = all.as_object_mut().expect("config serializes to a table");
            obj.remove("out_dir");
            match stage {
                Stage::Attack { .. } => {
                    obj.remove("analyze");
                }
                Stage::Analyze => {
                    obj.remove("attack");
                }
                _ => {}
            }
            all
        }
    };
    Ok(v)
}

pub fn config_hash(cfg: &RunConfig, stage: &Stage) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(&config_view(cfg, stage)?)?))
}

fn require(run: &mut StageRun, cfg: &RunConfig, stage: &Stage) -> Result<Manifest> {
    run.require(&stage.to_string(), &config_hash(cfg, stage)?)
}

fn is_current(run: &StageRun, cfg: &RunConfig, stage: &Stage) -> Result<bool> {
    run.available(&stage.to_string(), &config_hash(cfg, stage)?)
}

/// Runs one pipeline stage and returns its manifest.
pub fn run_stage(stage: &Stage, cfg: &RunConfig) -> Result<Manifest> {
    execute(stage, cfg).map(|(m, _)| m)
}

/// Runs the report stage and returns the Rashomon table it wrote.
pub fn report(cfg: &RunConfig) -> Result<RashomonReport> {
    let (_, rep) = execute(&Stage::Report, cfg)?;
    Ok(rep.expect("the report stage returns its table"))
}

fn execute(stage: &Stage, cfg: &RunConfig) -> Result<(Manifest, Option<RashomonReport>)> {
    cfg.validate()?;
    let mut run = StageRun::begin(
        &cfg.out_dir,
        &stage.to_string(),
        cfg.seed,
        config_hash(cfg, stage)?,
    )?;
    for dep in stage.dependencies(cfg) {
        require(&mut run, cfg, &dep)?;
    }
    let mut table = None;
    match stage {
        Stage::GenData => gen_data(&mut run, cfg)?,
        Stage::TrainVae => train_vae_stage(&mut run, cfg)?,
        Stage::TrainHead(s) => train_heads(&mut run, cfg, *s)?,
        Stage::Symreg(m) => symreg_stage(&mut run, cfg, *m)?,
        Stage::Attack { space, restrict } => {
            attack_stage(&mut run, cfg, *space, restrict.as_ref())?
        }
        Stage::Analyze => analyze(&mut run, cfg)?,
        Stage::Report => {
            report_deps(&mut run, cfg)?;
            table = Some(write_report(&mut run, cfg)?);
        }
    }
    Ok((run.finish()?, table))
}

/// Runs every stage in order, with one unrestricted attack per space.
pub fn run_pipeline(cfg: &RunConfig) -> Result<Vec<Manifest>> {
    let stages = [
        Stage::GenData,
        Stage::TrainVae,
        Stage::TrainHead(Scheme::PixelDense),
        Stage::TrainHead(Scheme::LatentDense),
        Stage::TrainHead(Scheme::LatentSparse),
        Stage::Symreg(LossMode::Hinge),
        Stage::Symreg(LossMode::Mse),
        Stage::Attack {
            space: AttackSpace::Image,
            restrict: None,
        },
        Stage::Attack {
            space: AttackSpace::Latent,
            restrict: None,
        },
        Stage::Attack {
            space: AttackSpace::Latent,
            restrict: Some(Restrict::Unselected),
        },
        Stage::Analyze,
        Stage::Report,
    ];
    stages.iter().map(|s| run_stage(s, cfg)).collect()
}

fn report_deps(run: &mut StageRun, cfg: &RunConfig) -> Result<()> {
    let dir = cfg.out_dir.join(MANIFEST_DIR);
    let mut names: Vec<String> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().map(str::to_string))
        .filter(|n| n.starts_with("attack-") && n.ends_with(".json"))
        .map(|n| n.trim_end_matches(".json").to_string())
        .collect();
    names.sort();
    let hash = config_hash(
        cfg,
        &Stage::Attack {
            space: AttackSpace::Image,
            restrict: None,
        },
    )?;
    let mut any = false;
    for n in names {
        if run.available(&n, &hash)? {
            run.require(&n, &hash)?;
            any = true;
        }
    }
    if !any {
        return Err(Error::Dependency {
            stage: run.stage().to_string(),
            needed: "attack".into(),
        });
    }
    Ok(())
}

pub(super) fn load_dataset(run: &mut StageRun) -> Result<Dataset> {
    for f in DATA_FILES {
        run.read_path(f)?;
    }
    read_dataset(&run.out().join("data"))
}

pub(super) fn load_vae(run: &mut StageRun) -> Result<VaeModel> {
    decode_checkpoint(&run.read(VAE_MODEL)?)
}

pub(super) fn load_latents(run: &mut StageRun) -> Result<LatentTable> {
    read_latent_csv(&run.read(VAE_LATENTS)?)
}

pub(super) fn head_path(scheme: Scheme, seed: usize) -> String {
    format!("heads/scheme{}/seed{seed}/head.bin", scheme.number())
}

pub(super) fn load_heads(
    run: &mut StageRun,
    cfg: &RunConfig,
    scheme: Scheme,
) -> Result<Vec<HeadModel>> {
    (0..cfg.seeds)
        .map(|i| decode_head(&run.read(&head_path(scheme, i))?))
        .collect()
}

/// One fitted scheme-4 model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolicRow {
    pub seed: usize,
    pub inputs: String,
    pub expression: String,
    pub complexity: u32,
    pub expression_size: usize,
    pub loss: f64,
    pub fitness: f64,
    pub test_accuracy: f64,
}

pub(super) fn symbolic_summary(mode: LossMode) -> String {
    format!("symreg/{}/summary.csv", mode_name(mode))
}

pub(super) fn load_symbolic(
    run: &mut StageRun,
    mode: LossMode,
) -> Result<Vec<(SymbolicRow, Expr)>> {
    let bytes = run.read(&symbolic_summary(mode))?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    r.deserialize::<SymbolicRow>()
        .map(|row| {
            let row = row?;
            let e: Expr = row.expression.parse()?;
            Ok((row, e))
        })
        .collect()
}

pub(super) fn dims_string(d: &[usize]) -> String {
    d.iter()
        .map(|i| format!("z{i}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn gen_data(run: &mut StageRun, cfg: &RunConfig) -> Result<()> {
    let ds = generate_dataset(
        cfg.data.samples,
        derive_seed(cfg.seed, &[TAG_DATA]),
        &cfg.data.synth,
    )?;
    write_dataset(&run.out().join("data"), &ds)?;
    for f in DATA_FILES {
        run.record(f)?;
    }
    Ok(())
}

fn train_vae_stage(run: &mut StageRun, cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(run)?;
    let (h, w) = (ds.config.height, ds.config.width);
    let model = VaeModel::from_config(&cfg.vae, h, w, &mut rng_for(cfg.seed, &[TAG_VAE, 0]))?;
    let trained = train_vae(model, &ds, &cfg.vae, derive_seed(cfg.seed, &[TAG_VAE, 1]))?;
    run.write(VAE_MODEL, &encode_checkpoint(&trained.model))?;
    run.write("vae/history.csv", &csv_bytes(&trained.history)?)?;
    run.write(
        VAE_LATENTS,
        &latent_csv(&encode_dataset(&trained.model, &ds)?)?,
    )?;
    Ok(())
}

fn pixel_split(ds: &Dataset, split: Split) -> (Vec<Vec<f64>>, Vec<Label>) {
    ds.split(split).map(|s| (s.pixels.clone(), s.label)).unzip()
}

fn head_data(run: &mut StageRun, scheme: Scheme) -> Result<(HeadData, HeadData)> {
    if scheme == Scheme::PixelDense {
        let ds = load_dataset(run)?;
        let (h, w) = (ds.config.height, ds.config.width);
        let (x, y) = pixel_split(&ds, Split::Train);
        let (tx, ty) = pixel_split(&ds, Split::Test);
        Ok((HeadData::images(x, y, h, w), HeadData::images(tx, ty, h, w)))
    } else {
        let t = load_latents(run)?;
        let (x, y) = t.split(Split::Train);
        let (tx, ty) = t.split(Split::Test);
        Ok((HeadData::new(x, y), HeadData::new(tx, ty)))
    }
}

fn search_rigl(cfg: &RunConfig, train: &HeadData) -> Result<SearchResult> {
    let n = train.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(cfg.seed, &[TAG_SEARCH, 0]));
    let n_val = ((n as f64 * cfg.search.validation_fraction).round() as usize)
        .clamp(1, n.saturating_sub(1));
    if n_val == 0 || n_val >= n {
        return Err(Error::Config(
            "training split too small for a validation hold-out".into(),
        ));
    }
    let pick = |ix: &[usize]| {
        HeadData::new(
            ix.iter().map(|&i| train.x[i].clone()).collect(),
            ix.iter().map(|&i| train.y[i]).collect(),
        )
    };
    let val = pick(&idx[..n_val]);
    let sub = pick(&idx[n_val..]);
    let mut base = cfg.scheme3.clone();
    base.epochs = cfg.search.epochs;
    hparam_search(
        &cfg.search.ranges,
        &base.rigl,
        cfg.search.trials,
        cfg.search.runs_per_trial,
        derive_seed(cfg.seed, &[TAG_SEARCH, 1]),
        |rigl, seed| {
            let mut hc = base.clone();
            hc.rigl = rigl.clone();
            let t = train_head(Scheme::LatentSparse, &sub, None, &hc, seed)?;
            let total: usize = t
                .model
                .head
                .layers
                .iter()
                .map(|l| l.weight.value.len())
                .sum();
            let active = t.mask.as_ref().map_or(total, |m| m.active_total());
            Ok(TrialOutcome {
                val_accuracy: t.model.accuracy(&val.x, &val.y)?,
                sparsity: 1.0 - active as f64 / total as f64,
            })
        },
    )
}

/// One trained neural head in the per-scheme summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadRow {
    pub seed: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub active_params: usize,
    pub expression_size: usize,
    pub inputs: String,
}

pub(super) fn head_support(h: &HeadModel) -> Result<Vec<usize>> {
    Ok(NetGraph::from_mlp(&h.head)?.input_support())
}

fn train_heads(run: &mut StageRun, cfg: &RunConfig, scheme: Scheme) -> Result<()> {
    let (train, test) = head_data(run, scheme)?;
    let dir = format!("heads/scheme{}", scheme.number());
    let mut hc = cfg.head(scheme)?.clone();
    if scheme == Scheme::LatentSparse && cfg.search.enabled {
        let res = search_rigl(cfg, &train)?;
        run.write(
            &format!("{dir}/search.json"),
            &serde_json::to_vec_pretty(&res)?,
        )?;
        hc.rigl = res.best;
    }
    let trained = (0..cfg.seeds)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(cfg.seed, &[TAG_HEAD, u64::from(scheme.number()), i as u64]);
            train_head(scheme, &train, Some(&test), &hc, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(trained.len());
    for (i, t) in trained.iter().enumerate() {
        let m = &t.model;
        run.write(&head_path(scheme, i), &encode_head(m))?;
        run.write(&format!("{dir}/seed{i}/log.csv"), &log_csv(&t.log)?)?;
        if let Some(mask) = &t.mask {
            run.write(&format!("{dir}/seed{i}/mask.json"), &mask.to_json()?)?;
        }
        let size = size_report(scheme, &m.head)?;
        let inputs = if scheme == Scheme::LatentSparse {
            dims_string(&head_support(m)?)
        } else {
            String::new()
        };
        rows.push(HeadRow {
            seed: i,
            train_accuracy: m.accuracy(&train.x, &train.y)?,
            test_accuracy: m.accuracy(&test.x, &test.y)?,
            active_params: size.active_params,
            expression_size: size.expression_size,
            inputs,
        });
    }
    run.write(&format!("{dir}/summary.csv"), &csv_bytes(&rows)?)?;
    Ok(())
}

fn columns(rows: &[Vec<f64>], dims: &[usize]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| dims.iter().map(|&d| r[d]).collect())
        .collect()
}

fn symreg_stage(run: &mut StageRun, cfg: &RunConfig, mode: LossMode) -> Result<()> {
    let t = load_latents(run)?;
    let heads = load_heads(run, cfg, Scheme::LatentSparse)?;
    let (x, y) = t.split(Split::Train);
    let (tx, ty) = t.split(Split::Test);
    let dir = format!("symreg/{}", mode_name(mode));
    let fits = heads
        .par_iter()
        .enumerate()
        .map(|(i, h)| {
            let mut support = head_support(h)?;
            if support.is_empty() {
                support = (0..t.latent_dim()).collect();
            }
            let xs = columns(&x, &support);
            let data = match mode {
                LossMode::Hinge => SymData::labeled(xs, &y)?,
                LossMode::Mse => SymData::new(xs, h.scores(&x)?)?,
            };
            let txs = columns(&tx, &support);
            let seed = derive_seed(cfg.seed, &[TAG_SYMREG, mode as u64, i as u64]);
            let res = fit(&data, Some((&txs, &ty)), mode, &cfg.symreg.gp, seed)?;
            let front = res
                .front
                .into_iter()
                .map(|e| {
                    Ok(HofEntry {
                        expr: e.expr.remap_vars(&support)?,
                        ..e
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((support, front))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(fits.len());
    for (i, (support, front)) in fits.iter().enumerate() {
        run.write(
            &format!("{dir}/seed{i}/hall_of_fame.csv"),
            &hall_of_fame_csv(front)?,
        )?;
        let best = front
            .iter()
            .reduce(|a, b| if b.fitness < a.fitness { b } else { a })
            .ok_or_else(|| Error::Contract("empty hall of fame".into()))?;
        rows.push(SymbolicRow {
            seed: i,
            inputs: dims_string(support),
            expression: best.expr.to_string(),
            complexity: best.complexity,
            expression_size: best.expression_size,
            loss: best.loss,
            fitness: best.fitness,
            test_accuracy: accuracy(&best.expr.eval_rows(&tx), &ty),
        });
    }
    run.write(&symbolic_summary(mode), &csv_bytes(&rows)?)?;
    Ok(())
}

enum Owned {
    Neural(HeadModel),
    Symbolic(Expr),
}

struct Model {
    scheme: Scheme,
    seed: usize,
    head: Owned,
}

impl Model {
    fn pipeline<'a>(&'a self, vae: &'a VaeModel) -> Result<Pipeline<'a>> {
        match &self.head {
            Owned::Neural(h) => {
                let enc = (self.scheme != Scheme::PixelDense).then_some(vae);
                Pipeline::new(self.scheme, enc, Head::Neural(h))
            }
            Owned::Symbolic(e) => Pipeline::new(self.scheme, Some(vae), Head::Symbolic(e)),
        }
    }

    /// Latent dims the model reads; `None` for pixel models.
    fn latent_support(&self) -> Result<Option<Vec<usize>>> {
        match &self.head {
            Owned::Neural(h) if h.scheme == Scheme::LatentSparse => Ok(Some(head_support(h)?)),
            Owned::Symbolic(e) => Ok(Some(e.variables())),
            _ => Ok(None),
        }
    }
}

fn load_models(run: &mut StageRun, cfg: &RunConfig, schemes: &[Scheme]) -> Result<Vec<Model>> {
    let mut out = Vec::new();
    for &s in schemes {
        if s == Scheme::Symbolic {
            for (row, e) in load_symbolic(run, cfg.symreg.report_mode)? {
                out.push(Model {
                    scheme: s,
                    seed: row.seed,
                    head: Owned::Symbolic(e),
                });
            }
        } else {
            for (i, h) in load_heads(run, cfg, s)?.into_iter().enumerate() {
                out.push(Model {
                    scheme: s,
                    seed: i,
                    head: Owned::Neural(h),
                });
            }
        }
    }
    Ok(out)
}

/// Accuracy of one model at one perturbation size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub scheme: u8,
    pub seed: usize,
    pub epsilon: f64,
    pub accuracy: f64,
    pub n_flipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSummaryRow {
    pub scheme: u8,
    pub epsilon: f64,
    pub accuracy_mean: f64,
    pub accuracy_sd: f64,
    pub models: usize,
}

/// Curve rows of one model, with the gradient taken once.
fn model_curve(
    m: &Model,
    vae: &VaeModel,
    xs: &[Vec<f64>],
    ys: &[Label],
    eps: &[f64],
    acfg: &AttackConfig,
) -> Result<Vec<AttackRow>> {
    let p = m.pipeline(vae)?;
    let rep = attack_curve(&p, xs, ys, eps, acfg)?;
    Ok(rep
        .rows
        .into_iter()
        .map(|r| AttackRow {
            scheme: r.scheme,
            seed: m.seed,
            epsilon: r.epsilon,
            accuracy: r.accuracy,
            n_flipped: r.n_flipped,
        })
        .collect())
}

pub fn summarize_attack(rows: &[AttackRow]) -> Vec<AttackSummaryRow> {
    let mut keys: Vec<(u8, u64)> = rows
        .iter()
        .map(|r| (r.scheme, r.epsilon.to_bits()))
        .collect();
    keys.dedup();
    let mut seen = BTreeSet::new();
    keys.retain(|k| seen.insert(*k));
    keys.into_iter()
        .map(|(s, e)| {
            let acc: Vec<f64> = rows
                .iter()
                .filter(|r| r.scheme == s && r.epsilon.to_bits() == e)
                .map(|r| r.accuracy)
                .collect();
            let (m, sd) = mean_sd(&acc);
            AttackSummaryRow {
                scheme: s,
                epsilon: f64::from_bits(e),
                accuracy_mean: m,
                accuracy_sd: sd,
                models: acc.len(),
            }
        })
        .collect()
}

fn attack_stage(
    run: &mut StageRun,
    cfg: &RunConfig,
    space: AttackSpace,
    restrict: Option<&Restrict>,
) -> Result<()> {
    let vae = load_vae(run)?;
    let (xs, ys, eps, schemes) = match space {
        AttackSpace::Image => {
            let ds = load_dataset(run)?;
            let (x, y) = pixel_split(&ds, Split::Test);
            (
                x,
                y,
                cfg.attack.image_epsilons.clone(),
                Scheme::ALL.to_vec(),
            )
        }
        AttackSpace::Latent => {
            let (x, y) = load_latents(run)?.split(Split::Test);
            (
                x,
                y,
                cfg.attack.latent_epsilons.clone(),
                Scheme::ALL[1..].to_vec(),
            )
        }
    };
    let models = load_models(run, cfg, &schemes)?;
    let width = xs.first().map_or(0, Vec::len);
    let mut acfg = match space {
        AttackSpace::Image => AttackConfig::image(0.0),
        AttackSpace::Latent => AttackConfig::latent(0.0),
    };
    acfg.loss = cfg.attack.loss;
    let dir = format!("attacks/{}", run.stage().trim_start_matches("attack-"));
    if let Some(r) = restrict {
        let dims = match r {
            Restrict::Dims(d) => d.clone(),
            Restrict::Unselected => {
                if space != AttackSpace::Latent {
                    return Err(Error::Config(
                        "`unselected` restricts latent dims; use --space latent".into(),
                    ));
                }
                let mut used = BTreeSet::new();
                for m in &models {
                    if let Some(s) = m.latent_support()? {
                        used.extend(s);
                    }
                }
                (0..width).filter(|d| !used.contains(d)).collect()
            }
        };
        if dims.is_empty() || dims.iter().any(|&d| d >= width) {
            return Err(Error::Config(format!(
                "restricted dims must be non-empty and below {width}"
            )));
        }
        run.write(
            &format!("{dir}/allowed_dims.json"),
            &serde_json::to_vec(&dims)?,
        )?;
        acfg = acfg.restricted(dims);
    }
    let rows: Vec<AttackRow> = models
        .par_iter()
        .map(|m| model_curve(m, &vae, &xs, &ys, &eps, &acfg))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    run.write(&format!("{dir}/curves.csv"), &csv_bytes(&rows)?)?;
    run.write(
        &format!("{dir}/summary.csv"),
        &csv_bytes(summarize_attack(&rows))?,
    )?;

    let top = *eps.last().expect("epsilons are non-empty");
    let mut at_top = acfg.clone();
    at_top.epsilon = top;
    for m in models.iter().filter(|m| m.seed == 0) {
        let p = m.pipeline(&vae)?;
        let probe: Vec<Vec<f64>> = xs.iter().take(64).cloned().collect();
        let hit = attack(&p, &probe, &at_top)?;
        let Some(s) = hit.iter().find(|s| s.flipped).or(hit.first()) else {
            continue;
        };
        let (h, w) = (vae.height, vae.width);
        let pgms = match space {
            AttackSpace::Image => pgm_triplet(s, h, w, top)?,
            AttackSpace::Latent => {
                let decoded = AttackedSample {
                    original: vae.decode(&s.original)?,
                    perturbed: vae.decode(&s.perturbed)?,
                    ..s.clone()
                };
                let span = decoded
                    .original
                    .iter()
                    .zip(&decoded.perturbed)
                    .map(|(a, b)| (a - b).abs())
                    .fold(1e-12, f64::max);
                pgm_triplet(&decoded, h, w, span)?
            }
        };
        for (name, bytes) in ["original", "perturbed", "diff"].iter().zip(pgms) {
            run.write(
                &format!("{dir}/examples/scheme{}_{name}.pgm", m.scheme.number()),
                &bytes,
            )?;
        }
    }
    Ok(())
}

/// Scheme-3 feature selection against the correlation harness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub seed: usize,
    pub inputs: String,
    pub expected: String,
    pub exact_match: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BlankRow {
    scheme: u8,
    seed: usize,
    score: f64,
    label: i8,
    latent: String,
}

#[derive(Serialize)]
struct SparseSummary<'a> {
    seed: usize,
    support: &'a [usize],
    expected: &'a ExpectedSupport,
    exact_match: bool,
    active_params: usize,
    expression_size: usize,
    merge_neurons: Vec<(usize, usize)>,
}

fn analyze(run: &mut StageRun, cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(run)?;
    let t = load_latents(run)?;
    let vae = load_vae(run)?;
    let factors: Vec<_> = ds.samples.iter().map(|s| s.factors.clone()).collect();
    let corr = latent_factor_correlations(&t.z, &factors)?;
    let expected = expected_support(&corr)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["dim".to_string()];
    header.extend(FACTOR_NAMES.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for (d, row) in corr.iter().enumerate() {
        let mut rec = vec![d.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    run.write("analysis/latent_factors.csv", &bytes)?;
    run.write(
        "analysis/expected_support.json",
        &serde_json::to_vec_pretty(&expected)?,
    )?;

    let (train_x, _) = t.split(Split::Train);
    let mean: Vec<f64> = (0..t.latent_dim())
        .map(|d| train_x.iter().map(|r| r[d]).sum::<f64>() / train_x.len().max(1) as f64)
        .collect();
    let grid = linspace(
        cfg.analyze.grid_min,
        cfg.analyze.grid_max,
        cfg.analyze.grid_steps,
    );
    let heads = load_heads(run, cfg, Scheme::LatentSparse)?;
    let mut selection = Vec::new();
    for (i, h) in heads.iter().enumerate() {
        let dir = format!("analysis/scheme3/seed{i}");
        let g = NetGraph::from_mlp(&h.head)?;
        let support = g.input_support();
        run.write(&format!("{dir}/graph.dot"), export_dot(&g).as_bytes())?;
        let pairs: Vec<Vec<usize>> = match support.len() {
            0 => vec![],
            1 => vec![support.clone()],
            _ => support
                .iter()
                .enumerate()
                .flat_map(|(k, &a)| support[k + 1..].iter().map(move |&b| vec![a, b]))
                .collect(),
        };
        for swept in pairs {
            let fixed: Vec<(usize, f64)> = support
                .iter()
                .filter(|d| !swept.contains(d))
                .map(|&d| (d, mean[d]))
                .collect();
            let map = subnetwork_response(&g, Cut::Output, &swept, &grid, &fixed)?;
            let name = swept
                .iter()
                .map(|d| format!("z{d}"))
                .collect::<Vec<_>>()
                .join("_");
            run.write(&format!("{dir}/response_{name}.csv"), &response_csv(&map)?)?;
        }
        let size = size_report(Scheme::LatentSparse, &h.head)?;
        let exact = support == expected.dims;
        let summary = SparseSummary {
            seed: i,
            support: &support,
            expected: &expected,
            exact_match: exact,
            active_params: size.active_params,
            expression_size: size.expression_size,
            merge_neurons: suggest_cuts(&g),
        };
        run.write(
            &format!("{dir}/summary.json"),
            &serde_json::to_vec_pretty(&summary)?,
        )?;
        selection.push(SelectionRow {
            seed: i,
            inputs: dims_string(&support),
            expected: dims_string(&expected.dims),
            exact_match: exact,
        });
    }
    run.write("analysis/feature_selection.csv", &csv_bytes(&selection)?)?;

    let mut schemes = Vec::new();
    for s in [Scheme::PixelDense, Scheme::LatentDense] {
        let st = Stage::TrainHead(s);
        if is_current(run, cfg, &st)? {
            require(run, cfg, &st)?;
            schemes.push(s);
        }
    }
    schemes.push(Scheme::LatentSparse);
    let sym = Stage::Symreg(cfg.symreg.report_mode);
    if is_current(run, cfg, &sym)? {
        require(run, cfg, &sym)?;
        schemes.push(Scheme::Symbolic);
    }
    let models = load_models(run, cfg, &schemes)?;
    let mut blank = Vec::with_capacity(models.len());
    for m in &models {
        let b = m.pipeline(&vae)?.blank_probe()?;
        blank.push(BlankRow {
            scheme: b.scheme,
            seed: m.seed,
            score: b.score,
            label: b.label.sign() as i8,
            latent: b
                .latent
                .map(|z| z.iter().map(f64::to_string).collect::<Vec<_>>().join(" "))
                .unwrap_or_default(),
        });
    }
    run.write("analysis/blank_probe.csv", &csv_bytes(&blank)?)?;
    Ok(())
}

use std::path::Path;

use super::*;
use crate::advattack::AttackSpace;
use crate::symreg::LossMode;
use crate::{Error, Scheme};

const DEFAULT_TOML: &str = include_str!("../../../../configs/default.toml");
const SMOKE_TOML: &str = include_str!("../../../../configs/smoke.toml");

fn smoke(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::from_toml(SMOKE_TOML).unwrap();
    cfg.out_dir = out.to_path_buf();
    cfg
}

#[test]
fn documented_defaults_match_the_code() {
    assert_eq!(
        RunConfig::from_toml(DEFAULT_TOML).unwrap(),
        RunConfig::default()
    );
    assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = RunConfig::from_toml(SMOKE_TOML).unwrap();
    assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
}

#[test]
fn bad_configs_are_config_errors() {
    for text in [
        "sedd = 1",
        "seeds = 0",
        "[attack]\nimage_epsilons = [0.1, 0.2]",
        "[attack]\nlatent_epsilons = [0.0, 0.5, 0.5]",
        "[search]\nepochs = 10",
        "[scheme3]\nbatch_norm = true",
        "[data]\nsamples = 3",
        "[analyze]\ngrid_steps = 1",
    ] {
        assert!(
            matches!(RunConfig::from_toml(text), Err(Error::Config(_))),
            "{text}"
        );
    }
}

#[test]
fn stage_names() {
    let names: Vec<String> = [
        Stage::GenData,
        Stage::TrainHead(Scheme::LatentSparse),
        Stage::Symreg(LossMode::Mse),
        Stage::Attack {
            space: AttackSpace::Latent,
            restrict: Some(Restrict::Dims(vec![0, 4])),
        },
        Stage::Attack {
            space: AttackSpace::Image,
            restrict: None,
        },
    ]
    .iter()
    .map(ToString::to_string)
    .collect();
    assert_eq!(
        names,
        [
            "gen-data",
            "train-head-scheme3",
            "symreg-mse",
            "attack-latent-dims-0-4",
            "attack-image"
        ]
    );
}

#[test]
fn gen_data_twice_gives_identical_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = smoke(dir.path());
    cfg.data.samples = 50;
    let a = run_stage(&Stage::GenData, &cfg).unwrap();
    let b = run_stage(&Stage::GenData, &cfg).unwrap();
    assert_eq!(a.outputs, b.outputs);
    assert_eq!(a.outputs.len(), DATA_FILES.len());
}

#[test]
fn missing_dependencies_name_the_stage_to_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = smoke(dir.path());
    cfg.data.samples = 50;
    match run_stage(&Stage::TrainVae, &cfg) {
        Err(Error::Dependency { stage, needed }) => {
            assert_eq!(stage, "train-vae");
            assert_eq!(needed, "gen-data");
        }
        other => panic!("{other:?}"),
    }
    run_stage(&Stage::GenData, &cfg).unwrap();
    match run_stage(&Stage::Report, &cfg) {
        Err(Error::Dependency { needed, .. }) => assert_eq!(needed, "train-vae"),
        other => panic!("{other:?}"),
    }
    match run_stage(&Stage::TrainHead(Scheme::PixelDense), &{
        let mut c = cfg.clone();
        c.data.samples = 60;
        c
    }) {
        Err(Error::Dependency { needed, .. }) => assert_eq!(needed, "gen-data"),
        other => panic!("stale data must be rejected: {other:?}"),
    }
}

#[test]
fn tampered_artifacts_invalidate_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = smoke(dir.path());
    cfg.data.samples = 50;
    run_stage(&Stage::GenData, &cfg).unwrap();
    std::fs::write(dir.path().join("data/factors.csv"), "id\n").unwrap();
    assert!(matches!(
        run_stage(&Stage::TrainVae, &cfg),
        Err(Error::Dependency { .. })
    ));
}

#[test]
fn undeclared_reads_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = StageRun::begin(dir.path(), "probe", 0, "x".into()).unwrap();
    std::fs::write(dir.path().join("loose.txt"), "hi").unwrap();
    assert!(matches!(run.read("loose.txt"), Err(Error::Contract(_))));
}

#[test]
fn single_seed_pipeline_reports_four_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = smoke(dir.path());
    cfg.seeds = 1;
    cfg.vae.latent_dim = 32;
    let manifests = run_pipeline(&cfg).unwrap();

    let mut order = std::collections::BTreeMap::new();
    for (k, m) in manifests.iter().enumerate() {
        order.insert(m.stage.clone(), k);
    }
    for m in &manifests {
        for d in &m.depends_on {
            assert!(
                order[d] < order[&m.stage],
                "{} depends on later {d}",
                m.stage
            );
        }
        for (path, hash) in &m.inputs {
            let listed = m
                .depends_on
                .iter()
                .any(|d| manifests[order[d]].outputs.get(path) == Some(hash));
            assert!(listed, "{} reads {path} outside its dependencies", m.stage);
        }
    }

    let rep = report(&cfg).unwrap();
    assert_eq!(rep.rows.len(), 4);
    assert_eq!(rep.rows[0].expression_size_mean, 9697.0);
    assert_eq!(rep.rows[1].expression_size_mean, 8641.0);
    assert_eq!(rep.rows[0].active_params_mean, Some(1040.0));
    assert_eq!(rep.rows[3].active_params_mean, None);
    for r in &rep.rows {
        assert_eq!(r.models, 1);
        assert_eq!(r.accuracy_sd, 0.0);
        assert_eq!(r.expression_size_sd, 0.0);
    }
    let sym = std::fs::read(dir.path().join("symreg/hinge/summary.csv")).unwrap();
    let chosen: SymbolicRow = csv::Reader::from_reader(sym.as_slice())
        .deserialize()
        .next()
        .unwrap()
        .unwrap();
    assert_eq!(
        rep.rows[3].expression_size_mean,
        chosen.expression_size as f64
    );
    let text = std::fs::read_to_string(dir.path().join("report/rashomon.txt")).unwrap();
    assert!(text.contains(&chosen.expression), "{text}");
    for f in [
        "report/rashomon.csv",
        "report/models.csv",
        "analysis/blank_probe.csv",
        "attacks/latent-unselected/curves.csv",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::harness::mean_sd;
use super::manifest::StageRun;
use super::stages::{
    dims_string, head_support, load_dataset, load_heads, load_latents, load_symbolic,
    AttackSummaryRow, SelectionRow,
};
use crate::error::{Error, Result};
use crate::fsio::csv_bytes;
use crate::introspect::size_report;
use crate::label::accuracy;
use crate::synthcells::Split;
use crate::Scheme;

/// One model behind a Rashomon row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub scheme: u8,
    pub seed: usize,
    pub test_accuracy: f64,
    pub active_params: Option<usize>,
    pub expression_size: usize,
    pub inputs: String,
    pub expression: String,
    /// Loss plus parsimony times complexity (scheme 4 only).
    pub fitness: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RashomonRow {
    pub scheme: u8,
    pub encoder: String,
    pub head: String,
    pub models: usize,
    /// Active head weights; empty for symbolic heads.
    pub active_params_mean: Option<f64>,
    pub active_params_sd: Option<f64>,
    pub expression_size_mean: f64,
    pub expression_size_sd: f64,
    pub accuracy_mean: f64,
    pub accuracy_sd: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RashomonReport {
    pub rows: Vec<RashomonRow>,
    pub models: Vec<ModelRow>,
    /// The scheme-4 model with the lowest loss + parsimony·complexity.
    pub best_symbolic: Option<ModelRow>,
}

fn kinds(s: Scheme) -> (&'static str, &'static str) {
    match s {
        Scheme::PixelDense => ("pixel-mlp", "dense"),
        Scheme::LatentDense => ("tc-vae", "dense"),
        Scheme::LatentSparse => ("tc-vae", "sparse"),
        Scheme::Symbolic => ("tc-vae", "symbolic"),
    }
}

fn row(scheme: Scheme, models: &[ModelRow]) -> RashomonRow {
    let ms: Vec<&ModelRow> = models
        .iter()
        .filter(|m| m.scheme == scheme.number())
        .collect();
    let acc: Vec<f64> = ms.iter().map(|m| m.test_accuracy).collect();
    let size: Vec<f64> = ms.iter().map(|m| m.expression_size as f64).collect();
    let params: Option<Vec<f64>> = ms
        .iter()
        .map(|m| m.active_params.map(|p| p as f64))
        .collect();
    let (am, asd) = mean_sd(&acc);
    let (sm, ssd) = mean_sd(&size);
    let p = params.map(|p| mean_sd(&p));
    let (encoder, head) = kinds(scheme);
    RashomonRow {
        scheme: scheme.number(),
        encoder: encoder.into(),
        head: head.into(),
        models: ms.len(),
        active_params_mean: p.map(|p| p.0),
        active_params_sd: p.map(|p| p.1),
        expression_size_mean: sm,
        expression_size_sd: ssd,
        accuracy_mean: am,
        accuracy_sd: asd,
    }
}

fn collect_models(run: &mut StageRun, cfg: &RunConfig) -> Result<Vec<ModelRow>> {
    let ds = load_dataset(run)?;
    let (px, py): (Vec<Vec<f64>>, Vec<_>) = ds
        .split(Split::Test)
        .map(|s| (s.pixels.clone(), s.label))
        .unzip();
    let (zx, zy) = load_latents(run)?.split(Split::Test);
    let mut out = Vec::new();
    for s in [
        Scheme::PixelDense,
        Scheme::LatentDense,
        Scheme::LatentSparse,
    ] {
        let (x, y) = if s == Scheme::PixelDense {
            (&px, &py)
        } else {
            (&zx, &zy)
        };
        for (i, h) in load_heads(run, cfg, s)?.iter().enumerate() {
            let size = size_report(s, &h.head)?;
            out.push(ModelRow {
                scheme: s.number(),
                seed: i,
                test_accuracy: h.accuracy(x, y)?,
                active_params: Some(size.active_params),
                expression_size: size.expression_size,
                inputs: if s == Scheme::LatentSparse {
                    dims_string(&head_support(h)?)
                } else {
                    String::new()
                },
                expression: String::new(),
                fitness: None,
            });
        }
    }
    for (r, e) in load_symbolic(run, cfg.symreg.report_mode)? {
        out.push(ModelRow {
            scheme: Scheme::Symbolic.number(),
            seed: r.seed,
            test_accuracy: accuracy(&e.eval_rows(&zx), &zy),
            active_params: None,
            expression_size: e.size(),
            inputs: dims_string(&e.variables()),
            expression: e.to_string(),
            fitness: Some(r.fitness),
        });
    }
    Ok(out)
}

fn pm(m: f64, sd: f64, digits: usize) -> String {
    format!("{m:.digits$} ± {sd:.digits$}")
}

fn read_rows<T: serde::de::DeserializeOwned>(run: &mut StageRun, rel: &str) -> Result<Vec<T>> {
    let bytes = run.read(rel)?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    r.deserialize().map(|x| x.map_err(Error::from)).collect()
}

fn text(cfg: &RunConfig, rep: &RashomonReport, extra: &str) -> String {
    let mut t = String::new();
    let _ = writeln!(
        t,
        "Rashomon report: {} models per scheme, master seed {}",
        cfg.seeds, cfg.seed
    );
    let _ = writeln!(t);
    let _ = writeln!(
        t,
        "{:<7} {:<10} {:<9} {:>16} {:>18} {:>16}",
        "scheme", "encoder", "head", "head params", "expression size", "accuracy (%)"
    );
    for r in &rep.rows {
        let params = match (r.active_params_mean, r.active_params_sd) {
            (Some(m), Some(sd)) => pm(m, sd, 0),
            _ => "N/A".into(),
        };
        let _ = writeln!(
            t,
            "{:<7} {:<10} {:<9} {:>16} {:>18} {:>16}",
            r.scheme,
            r.encoder,
            r.head,
            params,
            pm(r.expression_size_mean, r.expression_size_sd, 0),
            pm(100.0 * r.accuracy_mean, 100.0 * r.accuracy_sd, 1)
        );
    }
    let _ = writeln!(t);
    let _ = writeln!(t, "Scheme 3 selected inputs:");
    for m in rep.models.iter().filter(|m| m.scheme == 3) {
        let _ = writeln!(
            t,
            "  seed {}: {}",
            m.seed,
            if m.inputs.is_empty() {
                "(none)"
            } else {
                &m.inputs
            }
        );
    }
    let _ = writeln!(t);
    let _ = writeln!(
        t,
        "Scheme 4 expressions ({:?} loss):",
        cfg.symreg.report_mode
    );
    for m in rep.models.iter().filter(|m| m.scheme == 4) {
        let _ = writeln!(
            t,
            "  seed {}: {}  [size {}, accuracy {:.1}%]",
            m.seed,
            m.expression,
            m.expression_size,
            100.0 * m.test_accuracy
        );
    }
    if let Some(b) = &rep.best_symbolic {
        let _ = writeln!(
            t,
            "  best (lowest loss + parsimony·complexity): seed {}: {}",
            b.seed, b.expression
        );
    }
    t.push_str(extra);
    t
}

pub(super) fn write_report(run: &mut StageRun, cfg: &RunConfig) -> Result<RashomonReport> {
    let models = collect_models(run, cfg)?;
    let rows = Scheme::ALL.iter().map(|&s| row(s, &models)).collect();
    let best_symbolic = models
        .iter()
        .filter(|m| m.scheme == 4)
        .reduce(|a, b| if b.fitness < a.fitness { b } else { a })
        .cloned();
    let rep = RashomonReport {
        rows,
        models,
        best_symbolic,
    };

    let mut extra = String::new();
    let sel: Vec<SelectionRow> = read_rows(run, "analysis/feature_selection.csv")?;
    let hits = sel.iter().filter(|s| s.exact_match).count();
    let _ = writeln!(extra);
    let _ = writeln!(
        extra,
        "Scheme 3 supports equal to the size/eccentricity dims ({}): {hits} of {}",
        sel.first().map_or("", |s| s.expected.as_str()),
        sel.len()
    );
    let mut attacks: Vec<String> = run.listed_stages("attack-");
    attacks.sort();
    for a in attacks {
        let tag = a.trim_start_matches("attack-").to_string();
        let rows: Vec<AttackSummaryRow> = read_rows(run, &format!("attacks/{tag}/summary.csv"))?;
        let Some(top) = rows.iter().map(|r| r.epsilon).reduce(f64::max) else {
            continue;
        };
        let _ = writeln!(extra);
        let _ = writeln!(extra, "Attack {tag}: accuracy (%) at epsilon 0 and {top}:");
        for s in Scheme::ALL.map(Scheme::number) {
            let at = |e: f64| rows.iter().find(|r| r.scheme == s && r.epsilon == e);
            if let (Some(a), Some(b)) = (at(0.0), at(top)) {
                let _ = writeln!(
                    extra,
                    "  scheme {s}: {} -> {}",
                    pm(100.0 * a.accuracy_mean, 100.0 * a.accuracy_sd, 1),
                    pm(100.0 * b.accuracy_mean, 100.0 * b.accuracy_sd, 1)
                );
            }
        }
    }

    run.write("report/rashomon.csv", &csv_bytes(&rep.rows)?)?;
    run.write("report/models.csv", &csv_bytes(&rep.models)?)?;
    run.write("report/rashomon.txt", text(cfg, &rep, &extra).as_bytes())?;
    Ok(rep)
}

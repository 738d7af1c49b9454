//! On-disk layout of a generated dataset:
//!
//! * `images.pgm`: all samples stacked vertically in one 16-bit PGM, sample
//!   `id` occupying rows `id * height .. (id + 1) * height`;
//! * `factors.csv`: one row per sample with [`CSV_HEADER`];
//! * `neighbors.csv`: neighbour blobs as `id,x,y,size`;
//! * `dataset.json`: seed and generator config.
//!
//! Noise seeds are not stored; they are re-derived from the dataset seed.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{noise_seed, Dataset, FactorVector, ImageSample, Neighbor, Split, SynthConfig};
use crate::error::{Error, Result};
use crate::fsio::{csv_bytes, decode_pgm16, encode_pgm16, read_csv, write_atomic};
use crate::label::Label;

pub const CSV_HEADER: &str = "id,label,size,ecc,angle,dx,dy,n_neighbors,split";

#[derive(Serialize, Deserialize)]
struct FactorRow {
    id: usize,
    label: i8,
    size: f64,
    ecc: f64,
    angle: f64,
    dx: f64,
    dy: f64,
    n_neighbors: usize,
    split: Split,
}

#[derive(Serialize, Deserialize)]
struct NeighborRow {
    id: usize,
    x: f64,
    y: f64,
    size: f64,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    seed: u64,
    n: usize,
    config: SynthConfig,
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    let cfg = &ds.config;
    let pixels: Vec<f64> = ds
        .samples
        .iter()
        .flat_map(|s| s.pixels.iter().copied())
        .collect();
    write_atomic(
        &dir.join("images.pgm"),
        &encode_pgm16(cfg.width, cfg.height * ds.samples.len(), &pixels)?,
    )?;
    let rows = ds.samples.iter().map(|s| FactorRow {
        id: s.id,
        label: s.label.sign() as i8,
        size: s.factors.size,
        ecc: s.factors.ecc,
        angle: s.factors.angle,
        dx: s.factors.offset.0,
        dy: s.factors.offset.1,
        n_neighbors: s.factors.neighbors.len(),
        split: s.split,
    });
    write_atomic(&dir.join("factors.csv"), &csv_bytes(rows)?)?;
    let nrows = ds.samples.iter().flat_map(|s| {
        s.factors.neighbors.iter().map(move |n| NeighborRow {
            id: s.id,
            x: n.x,
            y: n.y,
            size: n.size,
        })
    });
    write_atomic(&dir.join("neighbors.csv"), &csv_bytes(nrows)?)?;
    let meta = Meta {
        seed: ds.seed,
        n: ds.samples.len(),
        config: cfg.clone(),
    };
    write_atomic(
        &dir.join("dataset.json"),
        &serde_json::to_vec_pretty(&meta)?,
    )?;
    Ok(())
}

/// Loads a dataset written by [`write_dataset`]. Pixels come back
/// quantized to 16 bits.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let meta: Meta = serde_json::from_slice(&fs::read(dir.join("dataset.json"))?)?;
    let cfg = meta.config;
    let (w, h, pixels) = decode_pgm16(&fs::read(dir.join("images.pgm"))?)?;
    if w != cfg.width || h != cfg.height * meta.n {
        return Err(Error::Format(format!(
            "images.pgm is {w}x{h}, expected {}x{}",
            cfg.width,
            cfg.height * meta.n
        )));
    }
    let rows: Vec<FactorRow> = read_csv(&dir.join("factors.csv"))?;
    if rows.len() != meta.n {
        return Err(Error::Format(format!(
            "factors.csv has {} rows, expected {}",
            rows.len(),
            meta.n
        )));
    }
    let mut neighbors = vec![Vec::new(); meta.n];
    for r in read_csv::<NeighborRow>(&dir.join("neighbors.csv"))? {
        let slot = neighbors
            .get_mut(r.id)
            .ok_or_else(|| Error::Format(format!("neighbor row for unknown id {}", r.id)))?;
        slot.push(Neighbor {
            x: r.x,
            y: r.y,
            size: r.size,
        });
    }
    let np = cfg.pixels();
    let samples = rows
        .into_iter()
        .zip(neighbors)
        .enumerate()
        .map(|(i, (r, nb))| {
            if r.id != i || nb.len() != r.n_neighbors {
                return Err(Error::Format(format!(
                    "factors.csv row {i} is inconsistent"
                )));
            }
            Ok(ImageSample {
                id: r.id,
                pixels: pixels[i * np..(i + 1) * np].to_vec(),
                label: Label::from_sign(r.label as f64),
                factors: FactorVector {
                    size: r.size,
                    ecc: r.ecc,
                    angle: r.angle,
                    offset: (r.dx, r.dy),
                    neighbors: nb,
                    noise_seed: noise_seed(meta.seed, r.id),
                },
                split: r.split,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        config: cfg,
        seed: meta.seed,
        samples,
    })
}

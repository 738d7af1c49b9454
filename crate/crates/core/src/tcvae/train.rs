use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{standard_normal, EncodeMode, TcvaeWeights, VaeModel};
use crate::error::{Error, Result};
use crate::label::Label;
use crate::nn::{Adam, Parameter};
use crate::seed::derive_seed;
use crate::synthcells::{augment_random, Dataset, Split};
use crate::{Graph, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weights: TcvaeWeights,
    /// Random flips and quarter turns of each training image.
    pub augment: bool,
    pub decoder_sigma: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 32],
            latent_dim: 8,
            epochs: 30,
            batch_size: 64,
            learning_rate: 5e-4,
            weights: TcvaeWeights::default(),
            augment: true,
            decoder_sigma: super::DEFAULT_DECODER_SIGMA,
        }
    }
}

/// One row of the loss history. Epoch 0 is the untrained model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub recon: f64,
    pub index_code_mi: f64,
    pub total_corr: f64,
    pub dimwise_kl: f64,
    /// Reconstruction error of `decode(μ)` on the test split.
    pub val_recon: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedVae {
    pub model: VaeModel,
    pub history: Vec<EpochRecord>,
}

fn params_mut(m: &mut VaeModel) -> Vec<&mut Parameter<f64>> {
    let mut out = m.trunk.params_mut();
    out.extend(m.mu_head.params_mut());
    out.extend(m.logvar_head.params_mut());
    out.extend(m.decoder.params_mut());
    out
}

fn stack(ds: &Dataset, idx: &[usize]) -> Tensor {
    let p = ds.config.pixels();
    let mut v = Vec::with_capacity(idx.len() * p);
    for &i in idx {
        v.extend_from_slice(&ds.samples[i].pixels);
    }
    Tensor::new(idx.len(), p, v).expect("shape")
}

/// Reconstruction term of `decode(μ)` averaged over `idx`.
fn recon_error(model: &VaeModel, ds: &Dataset, idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let x = stack(ds, idx);
    let h = model.trunk.forward(&x);
    let xr = model.decoder.forward(&model.mu_head.forward(&h));
    let se: f64 = x
        .values()
        .iter()
        .zip(xr.values())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    se / idx.len() as f64 * 0.5 / (model.decoder_sigma * model.decoder_sigma)
}

/// Trains `model` on the train split of `ds`. Fully determined by `seed`.
pub fn train_vae(
    mut model: VaeModel,
    ds: &Dataset,
    cfg: &VaeConfig,
    seed: u64,
) -> Result<TrainedVae> {
    if model.pixels() != ds.config.pixels() {
        return Err(Error::invalid(
            "VAE input size does not match the dataset images",
        ));
    }
    let train: Vec<usize> = ds.split(Split::Train).map(|s| s.id).collect();
    let test: Vec<usize> = ds.split(Split::Test).map(|s| s.id).collect();
    if train.len() < 2 {
        return Err(Error::invalid(
            "VAE training needs at least two training images",
        ));
    }
    let bs = cfg.batch_size.clamp(2, train.len());
    let n = train.len();
    let (h, w) = (ds.config.height, ds.config.width);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x7661_65]));
    let mut adam = Adam::new(cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs + 1);

    let initial = {
        let mut acc = [0.0; 5];
        let mut batches = 0.0;
        for chunk in train.chunks(bs).filter(|c| c.len() >= 2) {
            let t =
                model.loss_terms(&stack(ds, chunk), cfg.weights, n, EncodeMode::Deterministic)?;
            for (a, v) in acc.iter_mut().zip([
                t.total(),
                t.recon,
                t.index_code_mi,
                t.total_corr,
                t.dimwise_kl,
            ]) {
                *a += v;
            }
            batches += 1.0;
        }
        acc.map(|a| a / batches)
    };
    history.push(EpochRecord {
        epoch: 0,
        loss: initial[0],
        recon: initial[1],
        index_code_mi: initial[2],
        total_corr: initial[3],
        dimwise_kl: initial[4],
        val_recon: recon_error(&model, ds, &test),
    });

    let mut order = train.clone();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut acc = [0.0; 5];
        let mut batches = 0.0;
        for chunk in order.chunks(bs).filter(|c| c.len() >= 2) {
            let b = chunk.len();
            let mut x = Vec::with_capacity(b * h * w);
            for &i in chunk {
                let px = &ds.samples[i].pixels;
                if cfg.augment && h == w {
                    x.extend(augment_random(px, h, w, &mut rng)?);
                } else {
                    x.extend_from_slice(px);
                }
            }
            let x = Tensor::new(b, h * w, x)?;
            let noise = standard_normal(&mut rng, b, model.latent_dim);
            let mut g = Graph::new();
            let xn = g.constant(x);
            let nodes = model.build_loss(&mut g, xn, b, Some(noise), cfg.weights, n);
            g.evaluate()?;
            let t = nodes.terms(&g, cfg.weights);
            if !t.total().is_finite() {
                return Err(Error::NonFinite(format!(
                    "VAE loss diverged in epoch {epoch}"
                )));
            }
            g.backward()?;
            let [trunk, mu, lv, dec] = &nodes.nets;
            model.trunk.collect_grads(&g, trunk);
            model.mu_head.collect_grads(&g, mu);
            model.logvar_head.collect_grads(&g, lv);
            model.decoder.collect_grads(&g, dec);
            adam.step(&mut params_mut(&mut model));
            for (a, v) in acc.iter_mut().zip([
                t.total(),
                t.recon,
                t.index_code_mi,
                t.total_corr,
                t.dimwise_kl,
            ]) {
                *a += v;
            }
            batches += 1.0;
        }
        let m = acc.map(|a| a / batches);
        history.push(EpochRecord {
            epoch,
            loss: m[0],
            recon: m[1],
            index_code_mi: m[2],
            total_corr: m[3],
            dimwise_kl: m[4],
            val_recon: recon_error(&model, ds, &test),
        });
    }
    Ok(TrainedVae { model, history })
}

/// Deterministic latent codes (`z = μ`) of every sample.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTable {
    pub ids: Vec<usize>,
    pub z: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
    pub splits: Vec<Split>,
}

impl LatentTable {
    pub fn latent_dim(&self) -> usize {
        self.z.first().map_or(0, Vec::len)
    }

    /// Rows of one split as `(z, label)` pairs.
    pub fn split(&self, split: Split) -> (Vec<Vec<f64>>, Vec<Label>) {
        let mut z = Vec::new();
        let mut y = Vec::new();
        for k in 0..self.ids.len() {
            if self.splits[k] == split {
                z.push(self.z[k].clone());
                y.push(self.labels[k]);
            }
        }
        (z, y)
    }
}

pub fn encode_dataset(model: &VaeModel, ds: &Dataset) -> Result<LatentTable> {
    let idx: Vec<usize> = (0..ds.samples.len()).collect();
    let mut z = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(512) {
        let (mu, _) = model.encode_params(&stack(ds, chunk))?;
        for r in 0..mu.rows() {
            z.push(mu.row_slice(r).to_vec());
        }
    }
    Ok(LatentTable {
        ids: ds.samples.iter().map(|s| s.id).collect(),
        z,
        labels: ds.samples.iter().map(|s| s.label).collect(),
        splits: ds.samples.iter().map(|s| s.split).collect(),
    })
}

/// CSV with header `id,z0..z{L-1},label,split`.
pub fn latent_csv(t: &LatentTable) -> Result<Vec<u8>> {
    let l = t.latent_dim();
    let mut header = vec!["id".to_string()];
    header.extend((0..l).map(|d| format!("z{d}")));
    header.push("label".into());
    header.push("split".into());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for k in 0..t.ids.len() {
        let mut rec = vec![t.ids[k].to_string()];
        rec.extend(t.z[k].iter().map(|v| v.to_string()));
        rec.push((t.labels[k].sign() as i8).to_string());
        rec.push(t.splits[k].as_str().to_string());
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

/// Parses a table written by [`latent_csv`].
pub fn read_latent_csv(bytes: &[u8]) -> Result<LatentTable> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers()?.clone();
    let l = header
        .len()
        .checked_sub(3)
        .ok_or_else(|| Error::Format("latent csv header too short".into()))?;
    let mut t = LatentTable {
        ids: vec![],
        z: vec![],
        labels: vec![],
        splits: vec![],
    };
    let bad = |m: String| Error::Format(format!("latent csv: {m}"));
    for rec in r.records() {
        let rec = rec?;
        let num = |k: usize| rec[k].parse::<f64>().map_err(|e| bad(e.to_string()));
        t.ids.push(
            rec[0]
                .parse()
                .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
        );
        t.z.push((1..=l).map(num).collect::<Result<_>>()?);
        t.labels.push(Label::from_sign(num(l + 1)?));
        t.splits.push(match &rec[l + 2] {
            "train" => Split::Train,
            "test" => Split::Test,
            s => return Err(bad(format!("unknown split {s}"))),
        });
    }
    Ok(t)
}

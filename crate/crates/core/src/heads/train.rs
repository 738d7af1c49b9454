use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::prune::{post_prune, PruneReport};
use super::rigl::{active_target, cosine_decay, erdos_renyi_allocation, rigl_update};
use super::{HeadConfig, HeadModel, TopologyMask};
use crate::autodiff::hinge;
use crate::error::{Error, Result};
use crate::label::Label;
use crate::nn::{Adam, OutputActivation, Pass};
use crate::seed::derive_seed;
use crate::synthcells::augment_random;
use crate::{Graph, Mlp, Parameter, Scheme, Tensor};

/// Inputs and labels for a head. `image` marks rows as `h x w` images,
/// which enables augmentation.
#[derive(Clone, Debug, Default)]
pub struct HeadData {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Label>,
    pub image: Option<[usize; 2]>,
}

impl HeadData {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<Label>) -> Self {
        Self { x, y, image: None }
    }

    pub fn images(x: Vec<Vec<f64>>, y: Vec<Label>, height: usize, width: usize) -> Self {
        Self {
            x,
            y,
            image: Some([height, width]),
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    fn check(&self) -> Result<()> {
        if self.x.is_empty() {
            return Err(Error::invalid("head training needs a non-empty dataset"));
        }
        if self.x.len() != self.y.len() {
            return Err(Error::invalid("inputs and labels differ in length"));
        }
        let d = self.dim();
        if d == 0 || self.x.iter().any(|r| r.len() != d) {
            return Err(Error::invalid(
                "inputs must be non-empty rows of equal length",
            ));
        }
        if let Some([h, w]) = self.image {
            if h * w != d {
                return Err(Error::invalid(format!(
                    "{h}x{w} images do not have {d} pixels"
                )));
            }
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub active_weights: usize,
}

/// Per-step record of a sparse run.
#[derive(Clone, Debug, PartialEq)]
pub struct RigLTrace {
    /// Per-layer sparsities `s^l`.
    pub sparsities: Vec<f64>,
    /// Per-layer active-weight targets.
    pub targets: Vec<usize>,
    pub warmup_steps: usize,
    pub t_end: usize,
    /// Per-layer active counts after every iteration.
    pub active: Vec<Vec<usize>>,
    /// Iterations at which the topology was updated.
    pub updates: Vec<usize>,
    /// Iterations at which the mask actually changed.
    pub mask_changes: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct TrainedHead {
    pub model: HeadModel,
    pub log: Vec<LogRow>,
    /// Final topology (scheme 3), after post-pruning.
    pub mask: Option<TopologyMask>,
    pub trace: Option<RigLTrace>,
    /// Sparse head before post-pruning (scheme 3).
    pub pre_prune: Option<Mlp>,
    pub prune: Option<PruneReport>,
}

fn active_weights(model: &HeadModel) -> usize {
    model
        .features
        .iter()
        .chain(std::iter::once(&model.head))
        .flat_map(|m| &m.layers)
        .map(|l| l.weight.active_count())
        .sum()
}

fn evaluate(model: &HeadModel, data: &HeadData) -> Result<(f64, f64)> {
    let scores = model.scores(&data.x)?;
    let loss = scores
        .iter()
        .zip(&data.y)
        .map(|(&s, l)| hinge(s, l.sign()))
        .sum::<f64>()
        / scores.len() as f64;
    Ok((loss, crate::label::accuracy(&scores, &data.y)))
}

struct Sparse {
    sparsities: Vec<f64>,
    targets: Vec<usize>,
}

/// Trains a scheme 1-3 head with the hinge loss on labels `±1`. Scheme 3
/// runs the dense warm-up, RigL updates and post-pruning. `eval` is only
/// used for the log. Fully determined by `seed`.
pub fn train_head(
    scheme: Scheme,
    train: &HeadData,
    eval: Option<&HeadData>,
    cfg: &HeadConfig,
    seed: u64,
) -> Result<TrainedHead> {
    cfg.validate()?;
    train.check()?;
    if let Some(e) = eval {
        e.check()?;
        if e.dim() != train.dim() {
            return Err(Error::invalid(
                "evaluation inputs differ in width from training inputs",
            ));
        }
    }
    if scheme == Scheme::Symbolic {
        return Err(Error::invalid(
            "scheme 4 is fitted by symbolic regression, not train_head",
        ));
    }
    let sparse = scheme == Scheme::LatentSparse;
    if sparse && cfg.batch_norm {
        return Err(Error::Config(
            "sparse heads are trained without batch-norm".into(),
        ));
    }
    if sparse && cfg.rigl.warmup_epochs >= cfg.epochs {
        return Err(Error::Config(format!(
            "warm-up of {} epochs leaves no sparse training in {} epochs",
            cfg.rigl.warmup_epochs, cfg.epochs
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        seed,
        &[u64::from(scheme.number()), 0x6865_6164],
    ));
    let features = if scheme == Scheme::PixelDense {
        let mut w = vec![train.dim()];
        w.extend(&cfg.features);
        Some(Mlp::new(&w, false, OutputActivation::Mish, &mut rng)?)
    } else {
        None
    };
    let head_in = features.as_ref().map_or(train.dim(), Mlp::output_dim);
    let widths = cfg.head_widths(head_in);
    let head = Mlp::new(
        &widths,
        cfg.batch_norm,
        OutputActivation::Identity,
        &mut rng,
    )?;
    let mut model = HeadModel {
        scheme,
        features,
        head,
    };

    let plan = if sparse {
        let sparsities = erdos_renyi_allocation(&widths, cfg.rigl.sparsity)?;
        let targets = model
            .head
            .layers
            .iter()
            .zip(&sparsities)
            .map(|(l, &s)| active_target(l.weight.value.len(), s))
            .collect();
        Some(Sparse {
            sparsities,
            targets,
        })
    } else {
        None
    };

    let n = train.len();
    let bs = cfg.batch_size.min(n);
    let min_batch = if cfg.batch_norm { 2 } else { 1 };
    let iters = (0..n)
        .step_by(bs)
        .filter(|&s| (n - s).min(bs) >= min_batch)
        .count();
    if iters == 0 {
        return Err(Error::invalid("no batch is large enough for batch-norm"));
    }
    let warmup_steps = cfg.rigl.warmup_epochs * iters;
    let t_end = cfg
        .rigl
        .t_end((cfg.epochs * iters).saturating_sub(warmup_steps));
    let mut trace = plan.as_ref().map(|p| RigLTrace {
        sparsities: p.sparsities.clone(),
        targets: p.targets.clone(),
        warmup_steps,
        t_end,
        active: Vec::new(),
        updates: Vec::new(),
        mask_changes: Vec::new(),
    });

    let mut adam = Adam::new(cfg.learning_rate);
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    let mut t = 0usize;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(bs).filter(|c| c.len() >= min_batch) {
            let b = chunk.len();
            let mut x = Vec::with_capacity(b * train.dim());
            for &i in chunk {
                match train.image {
                    Some([h, w]) if cfg.augment && h == w => {
                        x.extend(augment_random(&train.x[i], h, w, &mut rng)?)
                    }
                    _ => x.extend_from_slice(&train.x[i]),
                }
            }
            let target: Vec<f64> = chunk.iter().map(|&i| train.y[i].sign()).collect();
            let mut g = Graph::new();
            let xn = g.constant(Tensor::new(b, train.dim(), x)?);
            let tn = g.constant(Tensor::column(target));
            let fnodes = model.features.as_ref().map(|f| {
                f.build(
                    &mut g,
                    xn,
                    b,
                    Pass::Train {
                        dropout: cfg.dropout,
                        rng: &mut rng,
                    },
                )
            });
            let hin = fnodes.as_ref().map_or(xn, |f| f.output);
            let hnodes = model.head.build(
                &mut g,
                hin,
                b,
                Pass::Train {
                    dropout: cfg.dropout,
                    rng: &mut rng,
                },
            );
            let per = g.hinge(hnodes.output, tn);
            let loss = g.mean(per);
            g.set_root(loss);
            let value = g.evaluate()?.values()[0];
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "head loss diverged in epoch {epoch}"
                )));
            }
            g.backward()?;
            if let (Some(f), Some(nodes)) = (model.features.as_mut(), fnodes.as_ref()) {
                f.collect_grads(&g, nodes);
            }
            model.head.collect_grads(&g, &hnodes);
            model.head.update_running_stats(&g, &hnodes);

            let tau = t.checked_sub(warmup_steps);
            let update = match (&plan, tau) {
                (Some(_), Some(tau)) => tau % cfg.rigl.delta_t == 0 && tau < t_end,
                _ => false,
            };
            if let (true, Some(p), Some(tau), Some(tr)) = (update, &plan, tau, trace.as_mut()) {
                // Topology step: dense gradients, no optimizer step.
                let f = cosine_decay(tau, cfg.rigl.alpha, t_end);
                let mut changed = false;
                for (l, layer) in model.head.layers.iter_mut().enumerate() {
                    let len = layer.weight.value.len();
                    let mask: Vec<bool> = (0..len).map(|k| layer.weight.is_active(k)).collect();
                    let k = (f * (1.0 - p.sparsities[l]) * len as f64).floor() as usize;
                    let new = rigl_update(
                        layer.weight.value.values(),
                        layer.weight.grad.values(),
                        &mask,
                        p.sparsities[l],
                        k,
                    );
                    changed |= new != mask;
                    let m = new.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
                    layer
                        .weight
                        .set_mask(Tensor::new(layer.fan_in(), layer.fan_out(), m)?)?;
                }
                tr.updates.push(t);
                if changed {
                    tr.mask_changes.push(t);
                }
            } else {
                let mut params: Vec<&mut Parameter> = Vec::new();
                if let Some(f) = model.features.as_mut() {
                    params.extend(f.params_mut());
                }
                params.extend(model.head.params_mut());
                adam.step(&mut params);
            }
            if let Some(tr) = trace.as_mut() {
                tr.active.push(
                    model
                        .head
                        .layers
                        .iter()
                        .map(|l| l.weight.active_count())
                        .collect(),
                );
            }
            t += 1;
        }
        let active = active_weights(&model);
        let (loss, accuracy) = evaluate(&model, train)?;
        log.push(LogRow {
            epoch,
            split: "train".into(),
            loss,
            accuracy,
            active_weights: active,
        });
        if let Some(e) = eval {
            let (loss, accuracy) = evaluate(&model, e)?;
            log.push(LogRow {
                epoch,
                split: "test".into(),
                loss,
                accuracy,
                active_weights: active,
            });
        }
    }

    let (mask, pre_prune, prune) = if sparse {
        let before = model.head.clone();
        let report = post_prune(&mut model.head)?;
        (
            Some(TopologyMask::from_mlp(&model.head)),
            Some(before),
            Some(report),
        )
    } else {
        (None, None, None)
    };
    Ok(TrainedHead {
        model,
        log,
        mask,
        trace,
        pre_prune,
        prune,
    })
}

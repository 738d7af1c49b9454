use crate::autodiff::mish;
use crate::error::{Error, Result};
use crate::{Mlp, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PruneReport {
    pub leaf_removed: usize,
    pub bias_removed: usize,
}

fn ensure_mask(mlp: &mut Mlp) -> Vec<Tensor> {
    mlp.layers
        .iter()
        .map(|l| {
            l.weight
                .mask()
                .cloned()
                .unwrap_or_else(|| Tensor::full(l.fan_in(), l.fan_out(), 1.0))
        })
        .collect()
}

/// Removes connections that cannot influence the output ("leaf" weights
/// into neurons without outgoing connections) and folds connections out of
/// input-less neurons into the target biases, until neither rule applies.
/// The network function is unchanged up to rounding.
pub fn post_prune(mlp: &mut Mlp) -> Result<PruneReport> {
    if mlp.has_batch_norm() {
        return Err(Error::Contract(
            "post_prune needs a network without batch-norm; bias folding would ignore the normalization".into(),
        ));
    }
    let mut masks = ensure_mask(mlp);
    let n_layers = mlp.layers.len();
    let mut report = PruneReport::default();
    loop {
        let mut changed = false;
        // Leaf rule: hidden neuron j between layer h-1 and h with no active
        // outgoing connection in layer h.
        for h in 1..n_layers {
            let (rows, cols) = (masks[h].rows(), masks[h].cols());
            for j in 0..rows {
                if (0..cols).any(|k| masks[h].get(j, k) != 0.0) {
                    continue;
                }
                let prev = &mut masks[h - 1];
                for i in 0..prev.rows() {
                    if prev.get(i, j) != 0.0 {
                        prev.set(i, j, 0.0);
                        report.leaf_removed += 1;
                        changed = true;
                    }
                }
            }
        }
        // Bias rule: a hidden neuron with no active input outputs the
        // constant mish(bias); push that constant into its targets.
        for h in 1..n_layers {
            let (rows, cols) = (masks[h].rows(), masks[h].cols());
            for j in 0..rows {
                let prev = &masks[h - 1];
                if (0..prev.rows()).any(|i| prev.get(i, j) != 0.0) {
                    continue;
                }
                let c = mish(mlp.layers[h - 1].bias.value.values()[j]);
                for k in 0..cols {
                    if masks[h].get(j, k) == 0.0 {
                        continue;
                    }
                    let w = mlp.layers[h].weight.value.get(j, k);
                    mlp.layers[h].bias.value.values_mut()[k] += w * c;
                    masks[h].set(j, k, 0.0);
                    report.bias_removed += 1;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    for (layer, m) in mlp.layers.iter_mut().zip(masks) {
        layer.weight.set_mask(m)?;
    }
    Ok(report)
}

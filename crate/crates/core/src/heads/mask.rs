use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{Mlp, Tensor};

/// Active connections of one weight matrix (`shape = [fan_in, fan_out]`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskLayer {
    pub shape: [usize; 2],
    pub active: Vec<[usize; 2]>,
}

/// Sparse topology in the JSON sidecar layout
/// `{"layers":[{"shape":[m,n],"active":[[i,j],...]}]}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyMask {
    pub layers: Vec<MaskLayer>,
}

impl TopologyMask {
    /// Reads the masks of `mlp`; unmasked layers count as fully active.
    pub fn from_mlp(mlp: &Mlp) -> Self {
        let layers = mlp
            .layers
            .iter()
            .map(|l| {
                let (m, n) = (l.fan_in(), l.fan_out());
                let active = (0..m * n)
                    .filter(|&k| l.weight.is_active(k))
                    .map(|k| [k / n, k % n])
                    .collect();
                MaskLayer {
                    shape: [m, n],
                    active,
                }
            })
            .collect();
        Self { layers }
    }

    /// Installs the mask on `mlp`, zeroing inactive weights.
    pub fn apply(&self, mlp: &mut Mlp) -> Result<()> {
        if self.layers.len() != mlp.layers.len() {
            return Err(Error::Format(format!(
                "mask has {} layers, network {}",
                self.layers.len(),
                mlp.layers.len()
            )));
        }
        for (ml, layer) in self.layers.iter().zip(&mut mlp.layers) {
            let [m, n] = ml.shape;
            if [m, n] != [layer.fan_in(), layer.fan_out()] {
                return Err(Error::Format(format!(
                    "mask shape {:?} does not match layer",
                    ml.shape
                )));
            }
            let mut t = Tensor::zeros(m, n);
            for &[i, j] in &ml.active {
                if i >= m || j >= n {
                    return Err(Error::Format(format!(
                        "mask index [{i},{j}] outside {m}x{n}"
                    )));
                }
                t.set(i, j, 1.0);
            }
            layer.weight.set_mask(t)?;
        }
        Ok(())
    }

    pub fn active_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.active.len()).collect()
    }

    pub fn active_total(&self) -> usize {
        self.layers.iter().map(|l| l.active.len()).sum()
    }

    /// Input neurons with at least one active outgoing connection.
    pub fn input_support(&self) -> Vec<usize> {
        let Some(first) = self.layers.first() else {
            return vec![];
        };
        let mut s: Vec<usize> = first.active.iter().map(|a| a[0]).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }
}

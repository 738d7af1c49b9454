//! Parsimony accounting and anatomy of (sparse) classification heads.

mod dot;
mod stream;

use serde::{Deserialize, Serialize};

pub use dot::{export_dot, parse_dot_edges};
pub use stream::{
    default_grid, extract_stream, extract_stream_to, linspace, response_csv, subnetwork_response,
    suggest_cuts, Cut, ResponseMap, DEFAULT_GRID,
};

use crate::error::{Error, Result};
use crate::nn::OutputActivation;
use crate::{Mlp, Scheme};

/// Active connection `(layer - 1, from) -> (layer, to)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    /// Layer of the target neuron; inputs are layer 0.
    pub layer: usize,
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

/// Neurons and active connections of a head. Hidden neurons apply Mish;
/// the single output neuron applies `output`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetGraph {
    pub widths: Vec<usize>,
    /// Biases per layer; layer 0 (inputs) has none.
    pub biases: Vec<Vec<f64>>,
    /// Sorted by `(layer, to, from)`.
    pub edges: Vec<Edge>,
    pub output: OutputActivation,
}

impl NetGraph {
    /// Builds a graph from explicit edges. Zero-weight edges are dropped.
    pub fn new(
        widths: Vec<usize>,
        biases: Vec<Vec<f64>>,
        edges: Vec<Edge>,
        output: OutputActivation,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::invalid(format!("bad layer widths {widths:?}")));
        }
        if widths[widths.len() - 1] != 1 {
            return Err(Error::invalid("a head graph has exactly one output neuron"));
        }
        if biases.len() != widths.len() || !biases[0].is_empty() {
            return Err(Error::invalid(
                "one bias vector per non-input layer expected",
            ));
        }
        for (l, b) in biases.iter().enumerate().skip(1) {
            if b.len() != widths[l] {
                return Err(Error::invalid(format!(
                    "layer {l} has {} biases for {} neurons",
                    b.len(),
                    widths[l]
                )));
            }
        }
        let mut kept = Vec::with_capacity(edges.len());
        for e in edges {
            if e.layer == 0
                || e.layer >= widths.len()
                || e.from >= widths[e.layer - 1]
                || e.to >= widths[e.layer]
            {
                return Err(Error::invalid(format!(
                    "edge {e:?} outside the layer widths"
                )));
            }
            if e.weight != 0.0 {
                kept.push(e);
            }
        }
        kept.sort_by_key(|e| (e.layer, e.to, e.from));
        if kept
            .windows(2)
            .any(|w| (w[0].layer, w[0].to, w[0].from) == (w[1].layer, w[1].to, w[1].from))
        {
            return Err(Error::invalid("duplicate edge"));
        }
        Ok(Self {
            widths,
            biases,
            edges: kept,
            output,
        })
    }

    /// Active connections of a head network. A weight is active when its
    /// mask entry (if any) is set and its value is nonzero.
    pub fn from_mlp(mlp: &Mlp) -> Result<Self> {
        if mlp.has_batch_norm() {
            return Err(Error::Contract(
                "graph export needs a network without batch normalization".into(),
            ));
        }
        let widths = mlp.widths();
        let mut biases = vec![Vec::new()];
        let mut edges = Vec::new();
        for (l, layer) in mlp.layers.iter().enumerate() {
            biases.push(layer.bias.value.values().to_vec());
            let cols = layer.fan_out();
            for (k, &w) in layer.weight.value.values().iter().enumerate() {
                if layer.weight.is_active(k) && w != 0.0 {
                    edges.push(Edge {
                        layer: l + 1,
                        from: k / cols,
                        to: k % cols,
                        weight: w,
                    });
                }
            }
        }
        Self::new(widths, biases, edges, mlp.output)
    }

    pub fn output_layer(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn in_degree(&self, layer: usize, j: usize) -> usize {
        self.edges
            .iter()
            .filter(|e| e.layer == layer && e.to == j)
            .count()
    }

    pub fn out_degree(&self, layer: usize, j: usize) -> usize {
        self.edges
            .iter()
            .filter(|e| e.layer == layer + 1 && e.from == j)
            .count()
    }

    /// Inputs with at least one outgoing edge.
    pub fn input_support(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .edges
            .iter()
            .filter(|e| e.layer == 1)
            .map(|e| e.from)
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// True when no hidden neuron is a leaf (inputs but no outputs) or a
    /// pure bias source (outputs but no inputs).
    pub fn is_pruned(&self) -> bool {
        (1..self.output_layer()).all(|l| {
            (0..self.widths[l]).all(|j| (self.in_degree(l, j) == 0) == (self.out_degree(l, j) == 0))
        })
    }
}

/// Number of active connection weights; biases are not counted.
pub fn count_active_params(g: &NetGraph) -> usize {
    g.edges.len()
}

/// Expression size of a fully connected head with layer widths `widths`
/// (input first). Batch-normalized hidden neurons (`scheme` 1) cost
/// `8n + 30`, plain Mish neurons `8(n + 1)`, the linear output `4n + 1`.
pub fn dense_head_expression_size(widths: &[usize], scheme: Scheme) -> Result<usize> {
    if widths.len() < 2 {
        return Err(Error::invalid("at least two layers are needed"));
    }
    let per_hidden = match scheme {
        Scheme::PixelDense => |n: usize| 8 * n + 30,
        Scheme::LatentDense => |n: usize| 8 * (n + 1),
        other => {
            return Err(Error::invalid(format!(
                "scheme {} has no dense size formula",
                other.number()
            )))
        }
    };
    let i = widths.len();
    let out = widths[i - 1] * (4 * widths[i - 2] + 1);
    let hidden: usize = (0..i - 2)
        .map(|k| widths[k + 1] * per_hidden(widths[k]))
        .sum();
    Ok(out + hidden)
}

/// Per-neuron cost of a hidden Mish neuron with `m` sources.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparseSizeRule {
    /// `8m + 1`, the closed form used for the sparse head sizes.
    #[default]
    Printed,
    /// `8(m + 1)`, the per-neuron count of the Mish tree derivation.
    Derived,
}

/// Expression size of a post-pruned sparse head: `4M + 1` for the output
/// neuron plus the hidden-neuron cost for every hidden neuron with inputs.
pub fn sparse_expression_size(g: &NetGraph, rule: SparseSizeRule) -> Result<usize> {
    if !g.is_pruned() {
        return Err(Error::Contract(
            "expression size needs a post-pruned graph".into(),
        ));
    }
    let out_l = g.output_layer();
    let mut e = 4 * g.in_degree(out_l, 0) + 1;
    for l in 1..out_l {
        for j in 0..g.widths[l] {
            let m = g.in_degree(l, j);
            if m > 0 {
                e += match rule {
                    SparseSizeRule::Printed => 8 * m + 1,
                    SparseSizeRule::Derived => 8 * (m + 1),
                };
            }
        }
    }
    Ok(e)
}

/// Parsimony summary of one head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeReport {
    pub scheme: u8,
    pub widths: Vec<usize>,
    pub active_params: usize,
    pub expression_size: usize,
}

/// Size report of a trained neural head: dense formulas for schemes 1
/// and 2, the sparse formula for scheme 3.
pub fn size_report(scheme: Scheme, head: &Mlp) -> Result<SizeReport> {
    let widths = head.widths();
    let (active_params, expression_size) = match scheme {
        Scheme::PixelDense | Scheme::LatentDense => {
            let n = widths.windows(2).map(|w| w[0] * w[1]).sum();
            (n, dense_head_expression_size(&widths, scheme)?)
        }
        Scheme::LatentSparse => {
            let g = NetGraph::from_mlp(head)?;
            (
                count_active_params(&g),
                sparse_expression_size(&g, SparseSizeRule::Printed)?,
            )
        }
        Scheme::Symbolic => {
            return Err(Error::invalid(
                "symbolic heads are sized by their expression tree",
            ))
        }
    };
    Ok(SizeReport {
        scheme: scheme.number(),
        widths,
        active_params,
        expression_size,
    })
}

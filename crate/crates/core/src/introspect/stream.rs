use std::collections::{BTreeSet, HashSet};

use super::NetGraph;
use crate::autodiff::{mish, sigmoid};
use crate::error::{Error, Result};
use crate::nn::OutputActivation;

/// `(lo, hi, steps)` of the default response grid.
pub const DEFAULT_GRID: (f64, f64, usize) = (-3.0, 3.0, 61);

/// Neuron whose value a sub-network reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cut {
    /// The output neuron, after the output activation.
    Output,
    /// A hidden neuron, before its activation.
    Neuron { layer: usize, index: usize },
}

impl Cut {
    fn target(self, g: &NetGraph) -> Result<(usize, usize)> {
        match self {
            Cut::Output => Ok((g.output_layer(), 0)),
            Cut::Neuron { layer, index } => {
                if layer == 0 || layer >= g.widths.len() || index >= g.widths[layer] {
                    return Err(Error::invalid(format!(
                        "no neuron {index} in layer {layer}"
                    )));
                }
                Ok((layer, index))
            }
        }
    }
}

/// Sub-graph of the edges on some path from `inputs` to `target`.
pub fn extract_stream_to(g: &NetGraph, inputs: &[usize], target: (usize, usize)) -> NetGraph {
    let mut fwd: HashSet<(usize, usize)> = inputs.iter().map(|&i| (0, i)).collect();
    for e in &g.edges {
        if fwd.contains(&(e.layer - 1, e.from)) {
            fwd.insert((e.layer, e.to));
        }
    }
    let mut bwd: HashSet<(usize, usize)> = HashSet::from([target]);
    for e in g.edges.iter().rev() {
        if bwd.contains(&(e.layer, e.to)) {
            bwd.insert((e.layer - 1, e.from));
        }
    }
    let edges = g
        .edges
        .iter()
        .filter(|e| fwd.contains(&(e.layer - 1, e.from)) && bwd.contains(&(e.layer, e.to)))
        .copied()
        .collect();
    NetGraph { edges, ..g.clone() }
}

/// Stream of `inputs`: every edge on a path from one of them to the output.
pub fn extract_stream(g: &NetGraph, inputs: &[usize]) -> NetGraph {
    extract_stream_to(g, inputs, (g.output_layer(), 0))
}

/// Output of a sub-network swept over a grid of one or two inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseMap {
    pub dims: Vec<usize>,
    pub grid: Vec<f64>,
    pub fixed: Vec<(usize, f64)>,
    /// Row-major: the first swept dim varies slowest.
    pub response: Vec<f64>,
}

impl ResponseMap {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        if self.dims.len() == 1 {
            self.response[i]
        } else {
            self.response[i * self.grid.len() + j]
        }
    }
}

/// `steps` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => vec![],
        1 => vec![lo],
        _ => (0..steps)
            .map(|k| lo + (hi - lo) * k as f64 / (steps - 1) as f64)
            .collect(),
    }
}

fn output_activation(act: OutputActivation, v: f64) -> f64 {
    match act {
        OutputActivation::Identity => v,
        OutputActivation::Sigmoid => sigmoid(v),
        OutputActivation::Mish => mish(v),
    }
}

/// The default sweep: -3 to 3 in steps of 0.1.
pub fn default_grid() -> Vec<f64> {
    let (lo, hi, n) = DEFAULT_GRID;
    linspace(lo, hi, n)
}

/// Value of `target` for the given input values, using only `sub`'s edges.
fn evaluate(sub: &NetGraph, target: (usize, usize), cut: Cut, inputs: &[(usize, f64)]) -> f64 {
    let mut vals: Vec<Vec<f64>> = sub.widths.iter().map(|&w| vec![0.0; w]).collect();
    for &(d, v) in inputs {
        vals[0][d] = v;
    }
    let mut pre: Vec<Vec<f64>> = sub.widths.iter().map(|&w| vec![0.0; w]).collect();
    let mut e = 0;
    for l in 1..=target.0 {
        let mut live = BTreeSet::new();
        while e < sub.edges.len() && sub.edges[e].layer == l {
            let edge = sub.edges[e];
            pre[l][edge.to] += edge.weight * vals[l - 1][edge.from];
            live.insert(edge.to);
            e += 1;
        }
        for (p, b) in pre[l].iter_mut().zip(&sub.biases[l]) {
            *p += b;
        }
        if l < target.0 {
            for j in live {
                vals[l][j] = mish(pre[l][j]);
            }
        }
    }
    let v = pre[target.0][target.1];
    match cut {
        Cut::Output => output_activation(sub.output, v),
        Cut::Neuron { .. } => v,
    }
}

/// Response of the sub-network feeding `cut` from the swept and fixed
/// inputs. Inputs outside that set do not enter the computation.
pub fn subnetwork_response(
    g: &NetGraph,
    cut: Cut,
    swept: &[usize],
    grid: &[f64],
    fixed: &[(usize, f64)],
) -> Result<ResponseMap> {
    if swept.is_empty() || swept.len() > 2 || (swept.len() == 2 && swept[0] == swept[1]) {
        return Err(Error::invalid("sweep one or two distinct inputs"));
    }
    let n_in = g.widths[0];
    if swept
        .iter()
        .chain(fixed.iter().map(|f| &f.0))
        .any(|&d| d >= n_in)
    {
        return Err(Error::invalid(format!(
            "input index out of range (width {n_in})"
        )));
    }
    if fixed.iter().any(|f| swept.contains(&f.0)) {
        return Err(Error::invalid("an input cannot be both swept and fixed"));
    }
    let target = cut.target(g)?;
    let mut inputs: Vec<usize> = swept.to_vec();
    inputs.extend(fixed.iter().map(|f| f.0));
    let sub = extract_stream_to(g, &inputs, target);
    for &d in swept {
        if !sub.edges.iter().any(|e| e.layer == 1 && e.from == d) {
            return Err(Error::invalid(format!(
                "z{d} does not reach the cut neuron"
            )));
        }
    }
    let mut point: Vec<(usize, f64)> = swept.iter().map(|&d| (d, 0.0)).collect();
    point.extend_from_slice(fixed);
    let mut response = Vec::with_capacity(grid.len().pow(swept.len() as u32));
    for &a in grid {
        point[0].1 = a;
        if swept.len() == 1 {
            response.push(evaluate(&sub, target, cut, &point));
        } else {
            for &b in grid {
                point[1].1 = b;
                response.push(evaluate(&sub, target, cut, &point));
            }
        }
    }
    Ok(ResponseMap {
        dims: swept.to_vec(),
        grid: grid.to_vec(),
        fixed: fixed.to_vec(),
        response,
    })
}

/// CSV `dim1,dim2,response`; `dim2` is empty for one-dimensional maps.
pub fn response_csv(map: &ResponseMap) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["dim1", "dim2", "response"])?;
    let n = map.grid.len();
    for i in 0..n {
        if map.dims.len() == 1 {
            w.write_record([
                map.grid[i].to_string(),
                String::new(),
                map.at(i, 0).to_string(),
            ])?;
        } else {
            for j in 0..n {
                w.write_record([
                    map.grid[i].to_string(),
                    map.grid[j].to_string(),
                    map.at(i, j).to_string(),
                ])?;
            }
        }
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

/// Hidden neurons where streams from different input sets merge: at least
/// two incoming edges whose sources are reached by different inputs.
pub fn suggest_cuts(g: &NetGraph) -> Vec<(usize, usize)> {
    let mut reach: Vec<Vec<BTreeSet<usize>>> =
        g.widths.iter().map(|&w| vec![BTreeSet::new(); w]).collect();
    for (i, s) in reach[0].iter_mut().enumerate() {
        s.insert(i);
    }
    let mut out = Vec::new();
    for l in 1..g.output_layer() {
        for j in 0..g.widths[l] {
            let sources: Vec<BTreeSet<usize>> = g
                .edges
                .iter()
                .filter(|e| e.layer == l && e.to == j)
                .map(|e| reach[l - 1][e.from].clone())
                .collect();
            let distinct: BTreeSet<&BTreeSet<usize>> = sources.iter().collect();
            if distinct.len() >= 2 {
                out.push((l, j));
            }
            reach[l][j] = sources.into_iter().flatten().collect();
        }
    }
    out
}

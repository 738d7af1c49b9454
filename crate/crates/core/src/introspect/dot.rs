use std::collections::BTreeSet;
use std::fmt::Write;

use super::{Edge, NetGraph};
use crate::error::{Error, Result};

const MAX_PEN: f64 = 4.0;

fn node_id(layer: usize, j: usize) -> String {
    format!("n{layer}_{j}")
}

/// DOT digraph of the active connections. Positive weights are blue,
/// negative red, pen width is proportional to `|w|`, edge labels carry the
/// exact weight and hidden/output node labels the bias.
pub fn export_dot(g: &NetGraph) -> String {
    let max_w = g.edges.iter().map(|e| e.weight.abs()).fold(0.0, f64::max);
    let mut nodes: BTreeSet<(usize, usize)> = BTreeSet::from([(g.output_layer(), 0)]);
    for e in &g.edges {
        nodes.insert((e.layer - 1, e.from));
        nodes.insert((e.layer, e.to));
    }
    let mut s = String::from("digraph head {\n  rankdir=TB;\n  node [shape=circle];\n");
    for &(l, j) in &nodes {
        let label = if l == 0 {
            format!("z{j}")
        } else {
            format!("b={}", g.biases[l][j])
        };
        writeln!(s, "  {} [label=\"{label}\"];", node_id(l, j)).expect("string write");
    }
    for e in &g.edges {
        let color = if e.weight > 0.0 { "blue" } else { "red" };
        let pen = MAX_PEN * e.weight.abs() / max_w;
        writeln!(
            s,
            "  {} -> {} [color={color}, penwidth={pen:.4}, label=\"{}\"];",
            node_id(e.layer - 1, e.from),
            node_id(e.layer, e.to),
            e.weight
        )
        .expect("string write");
    }
    s.push_str("}\n");
    s
}

fn parse_node(s: &str) -> Option<(usize, usize)> {
    let (l, j) = s.trim().strip_prefix('n')?.split_once('_')?;
    Some((l.parse().ok()?, j.parse().ok()?))
}

/// Edges of a digraph written by [`export_dot`].
pub fn parse_dot_edges(text: &str) -> Result<Vec<Edge>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let Some((lhs, rest)) = line.split_once("->") else {
            continue;
        };
        let bad = || Error::Format(format!("dot line {}: {line}", no + 1));
        let (rhs, attrs) = rest.split_once('[').ok_or_else(bad)?;
        let (la, from) = parse_node(lhs).ok_or_else(bad)?;
        let (lb, to) = parse_node(rhs).ok_or_else(bad)?;
        if lb != la + 1 {
            return Err(bad());
        }
        let w = attrs
            .split_once("label=\"")
            .and_then(|(_, r)| r.split_once('"'))
            .and_then(|(v, _)| v.parse::<f64>().ok())
            .ok_or_else(bad)?;
        out.push(Edge {
            layer: lb,
            from,
            to,
            weight: w,
        });
    }
    Ok(out)
}

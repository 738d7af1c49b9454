//! Define-then-run reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] is built by pushing nodes; every node's parents are pushed
//! before it, so insertion order is a topological order. [`Graph::forward`]
//! binds the declared inputs and caches every intermediate value;
//! [`Graph::backward`] then accumulates gradients of the (scalar) root into
//! every node that needs one.

use crate::autodiff::ops;
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Input,
    Leaf,
    MatMul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Offset(NodeId, T),
    Mish(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Square(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SumCols(NodeId),
    MeanRows(NodeId),
    Hinge(NodeId, NodeId),
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: T,
    },
    GaussPair {
        z: NodeId,
        mu: NodeId,
        logvar: NodeId,
    },
    LogSumExpGroups(NodeId, usize),
}

impl<T> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Mish(..) => "mish",
            Op::Sigmoid(..) => "sigmoid",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Square(..) => "square",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumCols(..) => "sum_cols",
            Op::MeanRows(..) => "mean_rows",
            Op::Hinge(..) => "hinge",
            Op::BatchNorm { .. } => "batch_norm",
            Op::GaussPair { .. } => "gauss_pair_log_density",
            Op::LogSumExpGroups(..) => "logsumexp_groups",
        }
    }

    fn parents(&self) -> Vec<NodeId> {
        match *self {
            Op::Input | Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Hinge(a, b) => vec![a, b],
            Op::Scale(a, _)
            | Op::Offset(a, _)
            | Op::Mish(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Square(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumCols(a)
            | Op::MeanRows(a)
            | Op::LogSumExpGroups(a, _) => vec![a],
            Op::BatchNorm { x, gamma, beta, .. } => vec![x, gamma, beta],
            Op::GaussPair { z, mu, logvar } => vec![z, mu, logvar],
        }
    }
}

/// Per-node forward cache used by ops whose backward needs more than the
/// output value.
#[derive(Clone, Debug, Default)]
pub(crate) struct BatchNormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Clone, Debug)]
pub(crate) struct Node<T> {
    pub op: Op<T>,
    pub declared: Option<[usize; 2]>,
    pub value: Option<Tensor<T>>,
    pub needs_grad: bool,
    pub bn: Option<BatchNormCache<T>>,
}

#[derive(Clone, Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    inputs: Vec<NodeId>,
    grads: Vec<Option<Tensor<T>>>,
    forwarded: bool,
    root: Option<NodeId>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            inputs: Vec::new(),
            grads: Vec::new(),
            forwarded: false,
            root: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(
        &mut self,
        op: Op<T>,
        declared: Option<[usize; 2]>,
        value: Option<Tensor<T>>,
        needs_grad: bool,
    ) -> NodeId {
        let needs_grad = needs_grad || op.parents().iter().any(|p| self.nodes[p.0].needs_grad);
        self.forwarded = false;
        self.nodes.push(Node {
            op,
            declared,
            value,
            needs_grad,
            bn: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Declares an input bound at [`Graph::forward`] time.
    pub fn input(&mut self, rows: usize, cols: usize) -> NodeId {
        let id = self.push(Op::Input, Some([rows, cols]), None, false);
        self.inputs.push(id);
        id
    }

    /// Declares an input whose gradient is tracked (used for input attacks).
    pub fn input_with_grad(&mut self, rows: usize, cols: usize) -> NodeId {
        let id = self.push(Op::Input, Some([rows, cols]), None, true);
        self.inputs.push(id);
        id
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        let shape = value.shape();
        self.push(Op::Leaf, Some(shape), Some(value), true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        let shape = value.shape();
        self.push(Op::Leaf, Some(shape), Some(value), false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b), None, None, false)
    }

    /// `a (B x n) + b (1 x n)` broadcast over rows.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::AddRow(a, b), None, None, false)
    }

    /// `a (B x n) * b (1 x n)` broadcast over rows.
    pub fn mul_row(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MulRow(a, b), None, None, false)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b), None, None, false)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b), None, None, false)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b), None, None, false)
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        self.push(Op::Scale(a, c), None, None, false)
    }

    pub fn offset(&mut self, a: NodeId, c: T) -> NodeId {
        self.push(Op::Offset(a, c), None, None, false)
    }

    pub fn mish(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mish(a), None, None, false)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sigmoid(a), None, None, false)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Exp(a), None, None, false)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Log(a), None, None, false)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Square(a), None, None, false)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a), None, None, false)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a), None, None, false)
    }

    /// Row sums: `B x n -> B x 1`.
    pub fn sum_cols(&mut self, a: NodeId) -> NodeId {
        self.push(Op::SumCols(a), None, None, false)
    }

    /// Column means: `B x n -> 1 x n`.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        self.push(Op::MeanRows(a), None, None, false)
    }

    /// Elementwise `max(0, 1 - t*y)`; `target` is never differentiated.
    pub fn hinge(&mut self, y: NodeId, target: NodeId) -> NodeId {
        self.push(Op::Hinge(y, target), None, None, false)
    }

    /// Batch normalization using the statistics of the current batch.
    pub fn batch_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: T) -> NodeId {
        self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                eps,
            },
            None,
            None,
            false,
        )
    }

    /// All-pairs diagonal Gaussian log densities. With `z`, `mu`, `logvar`
    /// all `B x L`, output row `i*B + j` holds `log N(z_i; mu_j, exp(logvar_j))`
    /// per dimension.
    pub fn gauss_pair_log_density(&mut self, z: NodeId, mu: NodeId, logvar: NodeId) -> NodeId {
        self.push(Op::GaussPair { z, mu, logvar }, None, None, false)
    }

    /// Log-sum-exp over consecutive blocks of `group` rows:
    /// `(R*group) x n -> R x n`.
    pub fn logsumexp_groups(&mut self, a: NodeId, group: usize) -> NodeId {
        self.push(Op::LogSumExpGroups(a, group), None, None, false)
    }

    /// Overrides the root (defaults to the most recently pushed node).
    pub fn set_root(&mut self, id: NodeId) {
        self.root = Some(id);
    }

    pub fn root(&self) -> Option<NodeId> {
        self.root
            .or_else(|| self.nodes.len().checked_sub(1).map(NodeId))
    }

    pub fn declared_inputs(&self) -> &[NodeId] {
        &self.inputs
    }

    /// Binds inputs in declaration order and evaluates every node.
    pub fn forward(&mut self, inputs: &[Tensor<T>]) -> Result<&Tensor<T>> {
        if inputs.len() != self.inputs.len() {
            return Err(Error::invalid(format!(
                "graph declares {} inputs, {} given",
                self.inputs.len(),
                inputs.len()
            )));
        }
        for (&id, t) in self.inputs.iter().zip(inputs) {
            let node = &mut self.nodes[id.0];
            let want = node.declared.expect("inputs declare a shape");
            if t.shape() != want {
                return Err(Error::Shape {
                    node: id.0,
                    op: "input",
                    detail: format!("declared {:?}, bound {:?}", want, t.shape()),
                });
            }
            node.value = Some(t.clone());
        }
        self.evaluate()
    }

    /// Re-evaluates with the currently bound inputs and leaf values.
    pub fn evaluate(&mut self) -> Result<&Tensor<T>> {
        self.forwarded = false;
        self.grads.clear();
        for i in 0..self.nodes.len() {
            let (done, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            match node.op {
                Op::Input | Op::Leaf => {
                    if node.value.is_none() {
                        return Err(Error::Shape {
                            node: i,
                            op: "input",
                            detail: "unbound input".into(),
                        });
                    }
                }
                _ => {
                    let (value, bn) = ops::forward(i, &node.op, done)?;
                    node.value = Some(value);
                    node.bn = bn;
                }
            }
        }
        self.forwarded = true;
        let root = self.root().ok_or_else(|| Error::invalid("empty graph"))?;
        Ok(self.nodes[root.0].value.as_ref().expect("evaluated"))
    }

    pub fn value(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes[id.0].value.as_ref()
    }

    /// Replaces a leaf or input value in place (shape must match).
    pub fn set_value(&mut self, id: NodeId, value: Tensor<T>) -> Result<()> {
        let node = &mut self.nodes[id.0];
        if !matches!(node.op, Op::Input | Op::Leaf) {
            return Err(Error::invalid(format!("node {} is not a leaf", id.0)));
        }
        if node.declared != Some(value.shape()) {
            return Err(Error::Shape {
                node: id.0,
                op: node.op.name(),
                detail: format!("declared {:?}, got {:?}", node.declared, value.shape()),
            });
        }
        node.value = Some(value);
        self.forwarded = false;
        Ok(())
    }

    /// Batch mean and (biased) variance seen by a batch-norm node on the
    /// last forward pass.
    pub fn batch_stats(&self, id: NodeId) -> Option<(&[T], &[T])> {
        self.nodes[id.0]
            .bn
            .as_ref()
            .map(|c| (c.mean.as_slice(), c.var.as_slice()))
    }

    /// Reverse accumulation from the scalar root.
    pub fn backward(&mut self) -> Result<()> {
        if !self.forwarded {
            return Err(Error::NotForwarded);
        }
        let root = self.root().ok_or(Error::NotForwarded)?;
        let rv = self.nodes[root.0]
            .value
            .as_ref()
            .ok_or(Error::NotForwarded)?;
        if rv.shape() != [1, 1] {
            return Err(Error::NonScalarRoot {
                rows: rv.rows(),
                cols: rv.cols(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            for (parent, pg) in ops::backward(i, &node.op, node, &self.nodes, &g) {
                if !self.nodes[parent.0].needs_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the root with respect to `id`, after [`Graph::backward`].
    /// Nodes that do not influence the root get a zero gradient.
    pub fn grad(&self, id: NodeId) -> Option<Tensor<T>> {
        if self.grads.is_empty() {
            return None;
        }
        match &self.grads[id.0] {
            Some(g) => Some(g.clone()),
            None => self.nodes[id.0]
                .value
                .as_ref()
                .map(|v| Tensor::zeros(v.rows(), v.cols())),
        }
    }
}

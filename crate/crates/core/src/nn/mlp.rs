use rand::{Rng, RngCore};

use crate::autodiff::{batchnorm_scalar, mish, sigmoid, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::nn::Parameter;
use crate::scalar::Scalar;

/// Frozen-able batch normalization state for one layer.
#[derive(Clone, Debug)]
pub struct BatchNormState<T> {
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
    pub momentum: T,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(n: usize) -> Self {
        Self {
            gamma: Parameter::new(Tensor::full(1, n, T::one())),
            beta: Parameter::new(Tensor::zeros(1, n)),
            running_mean: vec![T::zero(); n],
            running_var: vec![T::one(); n],
            eps: T::lit(1e-5),
            momentum: T::lit(0.1),
        }
    }

    /// Inference-mode normalization of one activation vector.
    pub fn infer(&self, x: &[T]) -> Vec<T> {
        x.iter()
            .enumerate()
            .map(|(c, &v)| {
                batchnorm_scalar(
                    v,
                    self.running_mean[c],
                    self.running_var[c],
                    self.gamma.value.values()[c],
                    self.beta.value.values()[c],
                    self.eps,
                )
            })
            .collect()
    }

    fn update_running(&mut self, mean: &[T], var: &[T]) {
        let m = self.momentum;
        for c in 0..mean.len() {
            self.running_mean[c] = (T::one() - m) * self.running_mean[c] + m * mean[c];
            self.running_var[c] = (T::one() - m) * self.running_var[c] + m * var[c];
        }
    }
}

#[derive(Clone, Debug)]
pub struct DenseLayer<T> {
    /// `fan_in x fan_out`
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    pub norm: Option<BatchNormState<T>>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn fan_in(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.value.cols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    Sigmoid,
    /// Same non-linearity as the hidden layers, for trunks feeding further
    /// layers.
    Mish,
}

pub enum Pass<'a> {
    Eval,
    Train {
        dropout: f64,
        rng: &'a mut dyn RngCore,
    },
}

/// Graph handles produced by [`Mlp::build`].
#[derive(Clone, Debug)]
pub struct MlpNodes {
    pub output: NodeId,
    /// Same order as [`Mlp::params_mut`].
    pub params: Vec<NodeId>,
    norms: Vec<Option<NodeId>>,
}

/// Fully-connected network: Mish on hidden layers, optional batch-norm
/// before each hidden activation, configurable output squashing.
#[derive(Clone, Debug)]
pub struct Mlp<T> {
    pub layers: Vec<DenseLayer<T>>,
    pub output: OutputActivation,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(
        widths: &[usize],
        batch_norm: bool,
        output: OutputActivation,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::invalid(format!("bad layer widths {widths:?}")));
        }
        let n = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let values = (0..fan_in * fan_out)
                    .map(|_| T::lit(rng.random_range(-a..a)))
                    .collect();
                DenseLayer {
                    weight: Parameter::new(Tensor::new(fan_in, fan_out, values).expect("shape")),
                    bias: Parameter::new(Tensor::zeros(1, fan_out)),
                    norm: (batch_norm && l + 1 < n).then(|| BatchNormState::new(fan_out)),
                }
            })
            .collect();
        Ok(Self { layers, output })
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].fan_in()];
        w.extend(self.layers.iter().map(DenseLayer::fan_out));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::fan_out)
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers.iter().any(|l| l.norm.is_some())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
            if let Some(n) = &mut l.norm {
                out.push(&mut n.gamma);
                out.push(&mut n.beta);
            }
        }
        out
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(&l.weight);
            out.push(&l.bias);
            if let Some(n) = &l.norm {
                out.push(&n.gamma);
                out.push(&n.beta);
            }
        }
        out
    }

    /// Appends the network to `g` on top of node `x` (`B x fan_in`).
    pub fn build(&self, g: &mut Graph<T>, x: NodeId, batch: usize, mut pass: Pass<'_>) -> MlpNodes {
        let mut params = Vec::new();
        let mut norms = Vec::new();
        let mut h = x;
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let w = g.param(layer.weight.value.clone());
            let b = g.param(layer.bias.value.clone());
            params.push(w);
            params.push(b);
            let xw = g.matmul(h, w);
            h = g.add_row(xw, b);
            let mut norm_node = None;
            if let Some(bn) = &layer.norm {
                let gamma = g.param(bn.gamma.value.clone());
                let beta = g.param(bn.beta.value.clone());
                params.push(gamma);
                params.push(beta);
                match pass {
                    Pass::Train { .. } => {
                        let node = g.batch_norm(h, gamma, beta, bn.eps);
                        norm_node = Some(node);
                        h = node;
                    }
                    Pass::Eval => {
                        // Frozen statistics folded into a per-neuron affine map.
                        let n = bn.running_mean.len();
                        let mut scale = Vec::with_capacity(n);
                        let mut shift = Vec::with_capacity(n);
                        for c in 0..n {
                            let s = T::one() / (bn.running_var[c] + bn.eps).sqrt();
                            scale.push(s);
                            shift.push(-bn.running_mean[c] * s);
                        }
                        let sc = g.constant(Tensor::row(scale));
                        let sh = g.constant(Tensor::row(shift));
                        let xn = g.mul_row(h, sc);
                        let xn = g.add_row(xn, sh);
                        let xn = g.mul_row(xn, gamma);
                        h = g.add_row(xn, beta);
                    }
                }
            }
            norms.push(norm_node);
            if l < last {
                h = g.mish(h);
                if let Pass::Train {
                    dropout,
                    ref mut rng,
                } = pass
                {
                    if dropout > 0.0 {
                        let keep = T::lit(1.0 / (1.0 - dropout));
                        let (rows, cols) = (batch, layer.fan_out());
                        let mask = (0..rows * cols)
                            .map(|_| {
                                if rng.random::<f64>() < dropout {
                                    T::zero()
                                } else {
                                    keep
                                }
                            })
                            .collect();
                        let m = g.constant(Tensor::new(rows, cols, mask).expect("shape"));
                        h = g.mul(h, m);
                    }
                }
            } else {
                match self.output {
                    OutputActivation::Identity => {}
                    OutputActivation::Sigmoid => h = g.sigmoid(h),
                    OutputActivation::Mish => h = g.mish(h),
                }
            }
        }
        MlpNodes {
            output: h,
            params,
            norms,
        }
    }

    /// Copies gradients from a backward pass into the parameters.
    pub fn collect_grads(&mut self, g: &Graph<T>, nodes: &MlpNodes) {
        for (p, &id) in self.params_mut().into_iter().zip(&nodes.params) {
            if let Some(grad) = g.grad(id) {
                p.grad = grad;
            }
        }
    }

    /// Folds the batch statistics of the last training pass into the
    /// running estimates.
    pub fn update_running_stats(&mut self, g: &Graph<T>, nodes: &MlpNodes) {
        for (layer, node) in self.layers.iter_mut().zip(&nodes.norms) {
            if let (Some(bn), Some(id)) = (&mut layer.norm, node) {
                if let Some((mean, var)) = g.batch_stats(*id) {
                    let (mean, var) = (mean.to_vec(), var.to_vec());
                    bn.update_running(&mean, &var);
                }
            }
        }
    }

    /// Eval-mode forward pass without building a graph.
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = h.matmul(&layer.weight.value);
            let n = z.cols();
            for (k, v) in z.values_mut().iter_mut().enumerate() {
                *v += layer.bias.value.values()[k % n];
            }
            if let Some(bn) = &layer.norm {
                for r in 0..z.rows() {
                    let row = bn.infer(z.row_slice(r));
                    for (c, v) in row.into_iter().enumerate() {
                        z.set(r, c, v);
                    }
                }
            }
            h = match (l < last, self.output) {
                (true, _) | (false, OutputActivation::Mish) => z.map(mish),
                (false, OutputActivation::Sigmoid) => z.map(sigmoid),
                (false, OutputActivation::Identity) => z,
            };
        }
        h
    }

    /// Output for a single input row.
    pub fn forward_one(&self, x: &[T]) -> Vec<T> {
        self.forward(&Tensor::row(x.to_vec())).into_values()
    }
}

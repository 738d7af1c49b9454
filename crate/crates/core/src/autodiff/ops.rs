//! Forward and backward kernels for every graph op.

use crate::autodiff::functions::{hinge, hinge_grad, mish, mish_grad, sigmoid};
use crate::autodiff::graph::{BatchNormCache, Node, NodeId, Op};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn val<T>(nodes: &[Node<T>], id: NodeId) -> &Tensor<T> {
    nodes[id.0].value.as_ref().expect("parents evaluate first")
}

fn mismatch<T>(node: usize, op: &Op<T>, detail: String) -> Error {
    Error::Shape {
        node,
        op: op.name(),
        detail,
    }
}

fn same_shape<T: Scalar>(node: usize, op: &Op<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(mismatch(
            node,
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn row_broadcast<T: Scalar>(node: usize, op: &Op<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if b.rows() != 1 || b.cols() != a.cols() {
        return Err(mismatch(
            node,
            op,
            format!(
                "row operand {:?} does not broadcast over {:?}",
                b.shape(),
                a.shape()
            ),
        ));
    }
    Ok(())
}

fn logsumexp<T: Scalar>(xs: impl Iterator<Item = T> + Clone) -> T {
    let m = xs.clone().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<T>().ln()
}

pub(crate) fn forward<T: Scalar>(
    i: usize,
    op: &Op<T>,
    nodes: &[Node<T>],
) -> Result<(Tensor<T>, Option<BatchNormCache<T>>)> {
    let out = match *op {
        Op::Input | Op::Leaf => unreachable!("leaves are bound, not computed"),
        Op::MatMul(a, b) => {
            let (a, b) = (val(nodes, a), val(nodes, b));
            if a.cols() != b.rows() {
                return Err(mismatch(
                    i,
                    op,
                    format!("{:?} x {:?}", a.shape(), b.shape()),
                ));
            }
            a.matmul(b)
        }
        Op::AddRow(a, b) | Op::MulRow(a, b) => {
            let (a, b) = (val(nodes, a), val(nodes, b));
            row_broadcast(i, op, a, b)?;
            let mul = matches!(op, Op::MulRow(..));
            let mut out = a.clone();
            let n = a.cols();
            for (k, v) in out.values_mut().iter_mut().enumerate() {
                let r = b.values()[k % n];
                if mul {
                    *v *= r;
                } else {
                    *v += r;
                }
            }
            out
        }
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
            let (a, b) = (val(nodes, a), val(nodes, b));
            same_shape(i, op, a, b)?;
            match op {
                Op::Add(..) => a.zip_map(b, |x, y| x + y),
                Op::Sub(..) => a.zip_map(b, |x, y| x - y),
                _ => a.zip_map(b, |x, y| x * y),
            }
        }
        Op::Scale(a, c) => val(nodes, a).map(|x| x * c),
        Op::Offset(a, c) => val(nodes, a).map(|x| x + c),
        Op::Mish(a) => val(nodes, a).map(mish),
        Op::Sigmoid(a) => val(nodes, a).map(sigmoid),
        Op::Exp(a) => val(nodes, a).map(T::exp),
        Op::Log(a) => val(nodes, a).map(T::ln),
        Op::Square(a) => val(nodes, a).map(|x| x * x),
        Op::Sum(a) => Tensor::scalar(val(nodes, a).values().iter().copied().sum()),
        Op::Mean(a) => {
            let a = val(nodes, a);
            if a.is_empty() {
                return Err(mismatch(i, op, "mean of empty tensor".into()));
            }
            Tensor::scalar(a.values().iter().copied().sum::<T>() / T::lit(a.len() as f64))
        }
        Op::SumCols(a) => {
            let a = val(nodes, a);
            Tensor::column(
                (0..a.rows())
                    .map(|r| a.row_slice(r).iter().copied().sum())
                    .collect(),
            )
        }
        Op::MeanRows(a) => {
            let a = val(nodes, a);
            if a.rows() == 0 {
                return Err(mismatch(i, op, "mean over zero rows".into()));
            }
            let inv = T::one() / T::lit(a.rows() as f64);
            let mut out = vec![T::zero(); a.cols()];
            for r in 0..a.rows() {
                for (o, &v) in out.iter_mut().zip(a.row_slice(r)) {
                    *o += v;
                }
            }
            Tensor::row(out.into_iter().map(|v| v * inv).collect())
        }
        Op::Hinge(y, t) => {
            let (y, t) = (val(nodes, y), val(nodes, t));
            same_shape(i, op, y, t)?;
            y.zip_map(t, hinge)
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            eps,
        } => {
            let (x, g, b) = (val(nodes, x), val(nodes, gamma), val(nodes, beta));
            row_broadcast(i, op, x, g)?;
            row_broadcast(i, op, x, b)?;
            if x.rows() < 2 {
                return Err(mismatch(
                    i,
                    op,
                    "batch statistics need at least 2 rows".into(),
                ));
            }
            let (bsz, n) = (x.rows(), x.cols());
            let inv_b = T::one() / T::lit(bsz as f64);
            let mut mean = vec![T::zero(); n];
            let mut var = vec![T::zero(); n];
            for r in 0..bsz {
                for (m, &v) in mean.iter_mut().zip(x.row_slice(r)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m *= inv_b);
            for r in 0..bsz {
                for c in 0..n {
                    let d = x.get(r, c) - mean[c];
                    var[c] += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v *= inv_b);
            let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            let mut xhat = Vec::with_capacity(bsz * n);
            let mut out = Vec::with_capacity(bsz * n);
            for r in 0..bsz {
                for c in 0..n {
                    let h = (x.get(r, c) - mean[c]) * inv_std[c];
                    xhat.push(h);
                    out.push(h * g.values()[c] + b.values()[c]);
                }
            }
            return Ok((
                Tensor::new(bsz, n, out)?,
                Some(BatchNormCache {
                    xhat,
                    inv_std,
                    mean,
                    var,
                }),
            ));
        }
        Op::GaussPair { z, mu, logvar } => {
            let (z, mu, lv) = (val(nodes, z), val(nodes, mu), val(nodes, logvar));
            same_shape(i, op, z, mu)?;
            same_shape(i, op, z, lv)?;
            let (b, l) = (z.rows(), z.cols());
            let ln2pi = T::lit((2.0 * std::f64::consts::PI).ln());
            let half = T::lit(0.5);
            let mut out = Vec::with_capacity(b * b * l);
            for zi in 0..b {
                for j in 0..b {
                    for d in 0..l {
                        let diff = z.get(zi, d) - mu.get(j, d);
                        let lvj = lv.get(j, d);
                        out.push(-half * (ln2pi + lvj + diff * diff * (-lvj).exp()));
                    }
                }
            }
            Tensor::new(b * b, l, out)?
        }
        Op::LogSumExpGroups(a, group) => {
            let a = val(nodes, a);
            if group == 0 || a.rows() % group != 0 {
                return Err(mismatch(
                    i,
                    op,
                    format!("{} rows do not split into groups of {group}", a.rows()),
                ));
            }
            let groups = a.rows() / group;
            let mut out = Vec::with_capacity(groups * a.cols());
            for gi in 0..groups {
                for c in 0..a.cols() {
                    out.push(logsumexp((0..group).map(|k| a.get(gi * group + k, c))));
                }
            }
            Tensor::new(groups, a.cols(), out)?
        }
    };
    Ok((out, None))
}

/// Returns `(parent, contribution)` pairs for the upstream gradient `g`.
pub(crate) fn backward<T: Scalar>(
    _i: usize,
    op: &Op<T>,
    node: &Node<T>,
    nodes: &[Node<T>],
    g: &Tensor<T>,
) -> Vec<(NodeId, Tensor<T>)> {
    let out = node.value.as_ref().expect("forwarded");
    match *op {
        Op::Input | Op::Leaf => vec![],
        Op::MatMul(a, b) => {
            let (av, bv) = (val(nodes, a), val(nodes, b));
            let mut res = Vec::with_capacity(2);
            if nodes[a.0].needs_grad {
                res.push((a, g.matmul_t(bv)));
            }
            if nodes[b.0].needs_grad {
                res.push((b, av.t_matmul(g)));
            }
            res
        }
        Op::AddRow(a, b) => {
            let n = g.cols();
            let mut gb = vec![T::zero(); n];
            for r in 0..g.rows() {
                for (o, &v) in gb.iter_mut().zip(g.row_slice(r)) {
                    *o += v;
                }
            }
            vec![(a, g.clone()), (b, Tensor::row(gb))]
        }
        Op::MulRow(a, b) => {
            let (av, bv) = (val(nodes, a), val(nodes, b));
            let n = g.cols();
            let mut ga = g.clone();
            let mut gb = vec![T::zero(); n];
            for (k, v) in ga.values_mut().iter_mut().enumerate() {
                gb[k % n] += *v * av.values()[k];
                *v *= bv.values()[k % n];
            }
            vec![(a, ga), (b, Tensor::row(gb))]
        }
        Op::Add(a, b) => vec![(a, g.clone()), (b, g.clone())],
        Op::Sub(a, b) => vec![(a, g.clone()), (b, g.map(|v| -v))],
        Op::Mul(a, b) => {
            let (av, bv) = (val(nodes, a), val(nodes, b));
            vec![
                (a, g.zip_map(bv, |x, y| x * y)),
                (b, g.zip_map(av, |x, y| x * y)),
            ]
        }
        Op::Scale(a, c) => vec![(a, g.map(|v| v * c))],
        Op::Offset(a, _) => vec![(a, g.clone())],
        Op::Mish(a) => {
            let av = val(nodes, a);
            vec![(a, g.zip_map(av, |gv, x| gv * mish_grad(x)))]
        }
        Op::Sigmoid(a) => vec![(a, g.zip_map(out, |gv, s| gv * s * (T::one() - s)))],
        Op::Exp(a) => vec![(a, g.zip_map(out, |gv, e| gv * e))],
        Op::Log(a) => {
            let av = val(nodes, a);
            vec![(a, g.zip_map(av, |gv, x| gv / x))]
        }
        Op::Square(a) => {
            let av = val(nodes, a);
            vec![(a, g.zip_map(av, |gv, x| gv * (x + x)))]
        }
        Op::Sum(a) => {
            let av = val(nodes, a);
            let s = g.values()[0];
            vec![(a, Tensor::full(av.rows(), av.cols(), s))]
        }
        Op::Mean(a) => {
            let av = val(nodes, a);
            let s = g.values()[0] / T::lit(av.len() as f64);
            vec![(a, Tensor::full(av.rows(), av.cols(), s))]
        }
        Op::SumCols(a) => {
            let av = val(nodes, a);
            let mut ga = Tensor::zeros(av.rows(), av.cols());
            for r in 0..av.rows() {
                for c in 0..av.cols() {
                    ga.set(r, c, g.values()[r]);
                }
            }
            vec![(a, ga)]
        }
        Op::MeanRows(a) => {
            let av = val(nodes, a);
            let inv = T::one() / T::lit(av.rows() as f64);
            let mut ga = Tensor::zeros(av.rows(), av.cols());
            for r in 0..av.rows() {
                for c in 0..av.cols() {
                    ga.set(r, c, g.values()[c] * inv);
                }
            }
            vec![(a, ga)]
        }
        Op::Hinge(y, t) => {
            let (yv, tv) = (val(nodes, y), val(nodes, t));
            let local = yv.zip_map(tv, hinge_grad);
            vec![(y, g.zip_map(&local, |a, b| a * b))]
        }
        Op::BatchNorm { x, gamma, beta, .. } => {
            let cache = node.bn.as_ref().expect("batch-norm cache");
            let gv = val(nodes, gamma);
            let (bsz, n) = (g.rows(), g.cols());
            let bs = T::lit(bsz as f64);
            let mut dgamma = vec![T::zero(); n];
            let mut dbeta = vec![T::zero(); n];
            let mut sum_dxhat = vec![T::zero(); n];
            let mut sum_dxhat_xhat = vec![T::zero(); n];
            for r in 0..bsz {
                for c in 0..n {
                    let k = r * n + c;
                    let dy = g.values()[k];
                    let xh = cache.xhat[k];
                    dgamma[c] += dy * xh;
                    dbeta[c] += dy;
                    let dxh = dy * gv.values()[c];
                    sum_dxhat[c] += dxh;
                    sum_dxhat_xhat[c] += dxh * xh;
                }
            }
            let mut dx = Vec::with_capacity(bsz * n);
            for r in 0..bsz {
                for c in 0..n {
                    let k = r * n + c;
                    let dxh = g.values()[k] * gv.values()[c];
                    dx.push(
                        cache.inv_std[c] / bs
                            * (bs * dxh - sum_dxhat[c] - cache.xhat[k] * sum_dxhat_xhat[c]),
                    );
                }
            }
            vec![
                (x, Tensor::new(bsz, n, dx).expect("shape")),
                (gamma, Tensor::row(dgamma)),
                (beta, Tensor::row(dbeta)),
            ]
        }
        Op::GaussPair { z, mu, logvar } => {
            let (zv, muv, lvv) = (val(nodes, z), val(nodes, mu), val(nodes, logvar));
            let (b, l) = (zv.rows(), zv.cols());
            let half = T::lit(0.5);
            let mut gz = Tensor::zeros(b, l);
            let mut gmu = Tensor::zeros(b, l);
            let mut glv = Tensor::zeros(b, l);
            for zi in 0..b {
                for j in 0..b {
                    for d in 0..l {
                        let up = g.get(zi * b + j, d);
                        if up == T::zero() {
                            continue;
                        }
                        let diff = zv.get(zi, d) - muv.get(j, d);
                        let prec = (-lvv.get(j, d)).exp();
                        let dz = -diff * prec * up;
                        gz.values_mut()[zi * l + d] += dz;
                        gmu.values_mut()[j * l + d] -= dz;
                        glv.values_mut()[j * l + d] += (-half + half * diff * diff * prec) * up;
                    }
                }
            }
            vec![(z, gz), (mu, gmu), (logvar, glv)]
        }
        Op::LogSumExpGroups(a, group) => {
            let av = val(nodes, a);
            let mut ga = Tensor::zeros(av.rows(), av.cols());
            for gi in 0..out.rows() {
                for c in 0..av.cols() {
                    let lse = out.get(gi, c);
                    let up = g.get(gi, c);
                    for k in 0..group {
                        let r = gi * group + k;
                        ga.set(r, c, up * (av.get(r, c) - lse).exp());
                    }
                }
            }
            vec![(a, ga)]
        }
    }
}

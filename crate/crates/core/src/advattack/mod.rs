//! Fast-gradient-sign attacks on image and latent inputs.

#[cfg(test)]
mod tests;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio::encode_pgm16;
use crate::heads::HeadModel;
use crate::label::{accuracy, classify, Label};
use crate::nn::Pass;
use crate::symreg::Expr;
use crate::tcvae::VaeModel;
use crate::{Graph, Scalar, Scheme, Tensor};

const CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackSpace {
    Image,
    Latent,
}

/// Loss whose input gradient drives the attack, with the predicted label
/// as target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackLoss {
    /// `max(0, 1 - y f)`, the head training loss; zero gradient once the
    /// margin exceeds 1.
    #[default]
    Hinge,
    /// `-y f`, never saturates.
    Margin,
}

impl AttackLoss {
    /// `dL/df` at score `f` for predicted sign `y`.
    pub fn dscore(self, y: f64, f: f64) -> f64 {
        match self {
            AttackLoss::Hinge if y * f >= 1.0 => 0.0,
            _ => -y,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub space: AttackSpace,
    /// Input indices the attack may change; all when absent.
    pub allowed_dims: Option<Vec<usize>>,
    /// Elementwise output range; images default to `[0, 1]`.
    pub clip_range: Option<[f64; 2]>,
    pub loss: AttackLoss,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self::image(0.0)
    }
}

impl AttackConfig {
    pub fn image(epsilon: f64) -> Self {
        Self {
            epsilon,
            space: AttackSpace::Image,
            allowed_dims: None,
            clip_range: Some([0.0, 1.0]),
            loss: AttackLoss::default(),
        }
    }

    pub fn latent(epsilon: f64) -> Self {
        Self {
            epsilon,
            space: AttackSpace::Latent,
            allowed_dims: None,
            clip_range: None,
            loss: AttackLoss::default(),
        }
    }

    pub fn restricted(mut self, dims: Vec<usize>) -> Self {
        self.allowed_dims = Some(dims);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon {} must be finite and >= 0",
                self.epsilon
            )));
        }
        if self.allowed_dims.as_ref().is_some_and(Vec::is_empty) {
            return Err(Error::Config("allowed_dims must not be empty".into()));
        }
        if let Some([lo, hi]) = self.clip_range {
            if !(lo <= hi) {
                return Err(Error::Config(format!("clip range [{lo}, {hi}] is empty")));
            }
        }
        Ok(())
    }
}

/// `x + ε sign(g)` with `sign(0) = 0`, clipped to `clip`. Clipping never
/// moves a coordinate further than `ε` from its original value.
pub fn fgsm_perturb<T: Scalar>(
    x: &[T],
    grad: &[T],
    epsilon: T,
    clip: Option<[T; 2]>,
) -> Result<Vec<T>> {
    if x.len() != grad.len() {
        return Err(Error::invalid(format!(
            "input has {} entries, gradient {}",
            x.len(),
            grad.len()
        )));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("attack gradient".into()));
    }
    if epsilon == T::zero() {
        return Ok(x.to_vec());
    }
    Ok(x.iter()
        .zip(grad)
        .map(|(&v, &g)| {
            let s = g.sign0();
            let mut step = epsilon;
            let mut p = v + step * s;
            // Rounding of `v + ε` can overshoot the bound by an ulp.
            while (p - v).abs() > epsilon {
                step = step * (T::one() - T::epsilon());
                p = v + step * s;
            }
            match clip {
                Some([lo, hi]) => p.max(lo.min(v)).min(hi.max(v)),
                None => p,
            }
        })
        .collect())
}

/// Head of an attacked pipeline.
#[derive(Clone, Copy, Debug)]
pub enum Head<'a> {
    Neural(&'a HeadModel),
    /// Expression over latent indices.
    Symbolic(&'a Expr),
}

/// Deterministic classifier: optional encoder (`z = μ`) feeding a head.
#[derive(Clone, Copy, Debug)]
pub struct Pipeline<'a> {
    pub scheme: Scheme,
    pub encoder: Option<&'a VaeModel>,
    pub head: Head<'a>,
}

impl<'a> Pipeline<'a> {
    /// Scheme 1 takes pixels directly; the other schemes need an encoder.
    pub fn new(scheme: Scheme, encoder: Option<&'a VaeModel>, head: Head<'a>) -> Result<Self> {
        match (scheme, encoder, head) {
            (Scheme::PixelDense, None, Head::Neural(h)) if h.scheme == scheme => {}
            (Scheme::Symbolic, Some(_), Head::Symbolic(_)) => {}
            (Scheme::LatentDense | Scheme::LatentSparse, Some(_), Head::Neural(h))
                if h.scheme == scheme => {}
            _ => {
                return Err(Error::invalid(format!(
                    "inconsistent pipeline for scheme {}",
                    scheme.number()
                )))
            }
        }
        Ok(Self {
            scheme,
            encoder,
            head,
        })
    }

    pub fn input_dim(&self, space: AttackSpace) -> Result<usize> {
        match (space, self.encoder, self.head) {
            (AttackSpace::Image, Some(e), _) => Ok(e.pixels()),
            (AttackSpace::Image, None, Head::Neural(h)) => Ok(h.input_dim()),
            (AttackSpace::Latent, Some(e), _) => Ok(e.latent_dim),
            _ => Err(Error::invalid(format!(
                "scheme {} has no latent space",
                self.scheme.number()
            ))),
        }
    }

    fn check(&self, space: AttackSpace, xs: &[Vec<f64>]) -> Result<()> {
        let d = self.input_dim(space)?;
        if xs.iter().any(|x| x.len() != d) {
            return Err(Error::invalid(format!(
                "attack inputs must have {d} entries"
            )));
        }
        Ok(())
    }

    fn latents(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let enc = self.encoder.expect("checked by input_dim");
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(CHUNK) {
            let (mu, _) = enc.encode_params(&Tensor::from_rows(chunk)?)?;
            out.extend((0..mu.rows()).map(|r| mu.row_slice(r).to_vec()));
        }
        Ok(out)
    }

    fn head_scores(&self, zs: &[Vec<f64>]) -> Result<Vec<f64>> {
        match self.head {
            Head::Neural(h) => h.scores(zs),
            Head::Symbolic(e) => Ok(e.eval_rows(zs)),
        }
    }

    /// Scores `f(x)`; errors on any non-finite score.
    pub fn scores(&self, space: AttackSpace, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check(space, xs)?;
        let s = match (space, self.encoder) {
            (AttackSpace::Image, Some(_)) => self.head_scores(&self.latents(xs)?)?,
            _ => self.head_scores(xs)?,
        };
        if let Some(k) = s.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("score of attack input {k}")));
        }
        Ok(s)
    }

    /// `∇_x f` for every row.
    pub fn score_grads(&self, space: AttackSpace, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.check(space, xs)?;
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(CHUNK) {
            out.extend(self.chunk_grads(space, chunk)?);
        }
        Ok(out)
    }

    fn chunk_grads(&self, space: AttackSpace, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let b = xs.len();
        if b == 0 {
            return Ok(vec![]);
        }
        if let (AttackSpace::Latent, Head::Symbolic(e)) = (space, self.head) {
            return xs.iter().map(|z| e.grad(z).map(|(_, g)| g)).collect();
        }
        let d = xs[0].len();
        let mut g = Graph::new();
        let x = g.input_with_grad(b, d);
        let mut h = x;
        if let (AttackSpace::Image, Some(enc)) = (space, self.encoder) {
            h = enc.trunk.build(&mut g, h, b, Pass::Eval).output;
            h = enc.mu_head.build(&mut g, h, b, Pass::Eval).output;
        }
        let root = match self.head {
            Head::Neural(m) => {
                if let Some(f) = &m.features {
                    h = f.build(&mut g, h, b, Pass::Eval).output;
                }
                let s = m.head.build(&mut g, h, b, Pass::Eval).output;
                g.sum(s)
            }
            Head::Symbolic(e) => {
                // Chain rule through the encoder: seed μ with ∂f/∂z.
                let zs = self.latents(xs)?;
                let dz: Vec<Vec<f64>> = zs
                    .iter()
                    .map(|z| e.grad(z).map(|(_, g)| g))
                    .collect::<Result<_>>()?;
                let c = g.constant(Tensor::from_rows(&dz)?);
                let prod = g.mul(h, c);
                g.sum(prod)
            }
        };
        g.set_root(root);
        g.forward(&[Tensor::from_rows(xs)?])?;
        g.backward()?;
        let gx = g.grad(x).ok_or(Error::NotForwarded)?;
        if gx.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input gradient".into()));
        }
        Ok((0..b).map(|r| gx.row_slice(r).to_vec()).collect())
    }

    /// Loss gradients `∇_x L` at the predicted labels, zeroed outside
    /// `allowed_dims`.
    fn loss_grads(
        &self,
        xs: &[Vec<f64>],
        scores: &[f64],
        cfg: &AttackConfig,
    ) -> Result<Vec<Vec<f64>>> {
        let d = self.input_dim(cfg.space)?;
        if let Some(dims) = &cfg.allowed_dims {
            if dims.iter().any(|&k| k >= d) {
                return Err(Error::invalid(format!("allowed dim outside 0..{d}")));
            }
        }
        let grads = self.score_grads(cfg.space, xs)?;
        let mut out = Vec::with_capacity(xs.len());
        for (gf, &f) in grads.into_iter().zip(scores) {
            let y = classify(f)?.sign();
            let dl = cfg.loss.dscore(y, f);
            let mut gl: Vec<f64> = gf.into_iter().map(|v| dl * v).collect();
            if let Some(dims) = &cfg.allowed_dims {
                for (k, v) in gl.iter_mut().enumerate() {
                    if !dims.contains(&k) {
                        *v = 0.0;
                    }
                }
            }
            out.push(gl);
        }
        Ok(out)
    }

    /// Classification of an all-zero image.
    pub fn blank_probe(&self) -> Result<BlankProbe> {
        let blank = vec![0.0; self.input_dim(AttackSpace::Image)?];
        let latent = match self.encoder {
            Some(_) => Some(self.latents(std::slice::from_ref(&blank))?.remove(0)),
            None => None,
        };
        let score = self.scores(AttackSpace::Image, &[blank])?[0];
        Ok(BlankProbe {
            scheme: self.scheme.number(),
            latent,
            score,
            label: classify(score)?,
        })
    }
}

/// One attacked input.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackedSample {
    pub original: Vec<f64>,
    pub perturbed: Vec<f64>,
    pub clean_score: f64,
    pub score: f64,
    pub flipped: bool,
}

/// Attacks each row of `xs` at `cfg.epsilon`.
pub fn attack(
    p: &Pipeline<'_>,
    xs: &[Vec<f64>],
    cfg: &AttackConfig,
) -> Result<Vec<AttackedSample>> {
    cfg.validate()?;
    let clean = p.scores(cfg.space, xs)?;
    let grads = p.loss_grads(xs, &clean, cfg)?;
    let perturbed: Vec<Vec<f64>> = xs
        .iter()
        .zip(&grads)
        .map(|(x, g)| fgsm_perturb(x, g, cfg.epsilon, cfg.clip_range))
        .collect::<Result<_>>()?;
    let after = p.scores(cfg.space, &perturbed)?;
    Ok(xs
        .iter()
        .zip(perturbed)
        .zip(clean.iter().zip(after))
        .map(|((x, xp), (&c, s))| AttackedSample {
            original: x.clone(),
            perturbed: xp,
            clean_score: c,
            score: s,
            flipped: (c < 0.0) != (s < 0.0),
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epsilon: f64,
    pub scheme: u8,
    pub accuracy: f64,
    pub n_flipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub clean_accuracy: f64,
    pub rows: Vec<CurveRow>,
}

/// Test accuracy after an FGSM step of each size in `epsilons` (ascending,
/// starting at 0). The gradient is taken once at the clean inputs.
pub fn attack_curve(
    p: &Pipeline<'_>,
    xs: &[Vec<f64>],
    labels: &[Label],
    epsilons: &[f64],
    cfg: &AttackConfig,
) -> Result<AttackReport> {
    cfg.validate()?;
    if xs.len() != labels.len() {
        return Err(Error::invalid("inputs and labels differ in length"));
    }
    if epsilons.first() != Some(&0.0) || epsilons.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config(
            "epsilons must start at 0 and increase strictly".into(),
        ));
    }
    let clean = p.scores(cfg.space, xs)?;
    let clean_accuracy = accuracy(&clean, labels);
    let grads = p.loss_grads(xs, &clean, cfg)?;
    let mut rows = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let xp: Vec<Vec<f64>> = xs
            .iter()
            .zip(&grads)
            .map(|(x, g)| fgsm_perturb(x, g, eps, cfg.clip_range))
            .collect::<Result<_>>()?;
        let s = p.scores(cfg.space, &xp)?;
        rows.push(CurveRow {
            epsilon: eps,
            scheme: p.scheme.number(),
            accuracy: accuracy(&s, labels),
            n_flipped: s
                .iter()
                .zip(&clean)
                .filter(|(a, b)| (**a < 0.0) != (**b < 0.0))
                .count(),
        });
    }
    Ok(AttackReport {
        clean_accuracy,
        rows,
    })
}

/// CSV `epsilon,scheme,accuracy,n_flipped`.
pub fn curve_csv(rows: &[CurveRow]) -> Result<Vec<u8>> {
    crate::fsio::csv_bytes(rows)
}

/// Original, perturbed and rescaled signed difference (`0.5` = unchanged,
/// `0`/`1` = `∓ε`) as 16-bit PGM images.
pub fn pgm_triplet(
    s: &AttackedSample,
    height: usize,
    width: usize,
    epsilon: f64,
) -> Result<[Vec<u8>; 3]> {
    let diff: Vec<f64> = s
        .original
        .iter()
        .zip(&s.perturbed)
        .map(|(a, b)| {
            if epsilon > 0.0 {
                ((b - a) / (2.0 * epsilon) + 0.5).clamp(0.0, 1.0)
            } else {
                0.5
            }
        })
        .collect();
    Ok([
        encode_pgm16(width, height, &s.original)?,
        encode_pgm16(width, height, &s.perturbed)?,
        encode_pgm16(width, height, &diff)?,
    ])
}

/// Behaviour of a pipeline on an all-zero image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlankProbe {
    pub scheme: u8,
    pub latent: Option<Vec<f64>>,
    pub score: f64,
    pub label: Label,
}

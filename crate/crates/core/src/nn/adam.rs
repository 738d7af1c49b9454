use crate::autodiff::Tensor;
use crate::nn::Parameter;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are keyed by parameter position,
/// so the same parameter order must be passed on every step.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub hyper: AdamHyper,
    step: i32,
    moments: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self::with_hyper(lr, AdamHyper::default())
    }

    pub fn with_hyper(lr: f64, hyper: AdamHyper) -> Self {
        Self {
            lr,
            hyper,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// Applies one update. Masked gradients and moments are zeroed first and
    /// masked values stay exactly 0.
    pub fn step(&mut self, params: &mut [&mut Parameter<T>]) {
        if self.moments.len() != params.len() {
            self.moments = params
                .iter()
                .map(|p| {
                    let (r, c) = (p.value.rows(), p.value.cols());
                    (Tensor::zeros(r, c), Tensor::zeros(r, c))
                })
                .collect();
        }
        self.step += 1;
        let b1 = T::lit(self.hyper.beta1);
        let b2 = T::lit(self.hyper.beta2);
        let eps = T::lit(self.hyper.eps);
        let lr = T::lit(self.lr);
        let bc1 = T::one() - b1.powi(self.step);
        let bc2 = T::one() - b2.powi(self.step);
        for (p, (m, v)) in params.iter_mut().zip(self.moments.iter_mut()) {
            if !p.trainable {
                continue;
            }
            p.zero_masked_grad();
            for k in 0..p.value.len() {
                if !p.is_active(k) {
                    m.values_mut()[k] = T::zero();
                    v.values_mut()[k] = T::zero();
                    continue;
                }
                let g = p.grad.values()[k];
                let mk = b1 * m.values()[k] + (T::one() - b1) * g;
                let vk = b2 * v.values()[k] + (T::one() - b2) * g * g;
                m.values_mut()[k] = mk;
                v.values_mut()[k] = vk;
                let mhat = mk / bc1;
                let vhat = vk / bc2;
                p.value.values_mut()[k] -= lr * mhat / (vhat.sqrt() + eps);
            }
            p.apply_mask();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_values() {
        let mut p = Parameter::new(Tensor::row(vec![0.3, -1.2, 4.0]));
        let before = p.value.clone();
        let mut opt = Adam::new(1e-2);
        for _ in 0..5 {
            opt.step(&mut [&mut p]);
        }
        assert_eq!(p.value, before);
    }

    #[test]
    fn masked_entry_stays_zero() {
        let mut p = Parameter::new(Tensor::row(vec![0.5, 0.7]));
        p.set_mask(Tensor::row(vec![1.0, 0.0])).unwrap();
        let mut opt = Adam::new(1e-1);
        for _ in 0..10 {
            p.grad = Tensor::row(vec![1.0, -3.0]);
            opt.step(&mut [&mut p]);
            assert_eq!(p.value.values()[1], 0.0);
        }
        assert!(p.value.values()[0] < 0.5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Parameter::new(Tensor::scalar(1.0f64));
        p.grad = Tensor::scalar(1.0);
        let mut opt = Adam::new(1e-3);
        opt.step(&mut [&mut p]);
        let moved = 1.0 - p.value.values()[0];
        assert!((moved - 1e-3).abs() < 1e-9, "{moved}");
    }
}

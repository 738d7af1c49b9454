use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Trainable tensor with its gradient and an optional binary mask.
///
/// Wherever the mask is 0 the value is kept at exactly 0.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    mask: Option<Tensor<T>>,
    pub trainable: bool,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.rows(), value.cols());
        Self {
            value,
            grad,
            mask: None,
            trainable: true,
        }
    }

    pub fn frozen(value: Tensor<T>) -> Self {
        Self {
            trainable: false,
            ..Self::new(value)
        }
    }

    pub fn mask(&self) -> Option<&Tensor<T>> {
        self.mask.as_ref()
    }

    /// Installs a mask and zeroes the masked entries.
    pub fn set_mask(&mut self, mask: Tensor<T>) -> Result<()> {
        if mask.shape() != self.value.shape() {
            return Err(Error::invalid(format!(
                "mask {:?} does not match parameter {:?}",
                mask.shape(),
                self.value.shape()
            )));
        }
        self.mask = Some(mask);
        self.apply_mask();
        Ok(())
    }

    pub fn clear_mask(&mut self) {
        self.mask = None;
    }

    pub fn is_active(&self, k: usize) -> bool {
        self.mask
            .as_ref()
            .is_none_or(|m| m.values()[k] != T::zero())
    }

    pub fn active_count(&self) -> usize {
        (0..self.value.len()).filter(|&k| self.is_active(k)).count()
    }

    pub fn apply_mask(&mut self) {
        if let Some(m) = &self.mask {
            for (v, &keep) in self.value.values_mut().iter_mut().zip(m.values()) {
                if keep == T::zero() {
                    *v = T::zero();
                }
            }
        }
    }

    pub fn zero_masked_grad(&mut self) {
        if let Some(m) = &self.mask {
            for (g, &keep) in self.grad.values_mut().iter_mut().zip(m.values()) {
                if keep == T::zero() {
                    *g = T::zero();
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad
            .values_mut()
            .iter_mut()
            .for_each(|g| *g = T::zero());
    }
}

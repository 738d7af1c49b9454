//! Scalar activation and normalization kernels.

use crate::scalar::Scalar;

/// Overflow-safe `log(1 + e^x)`.
#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Mish activation, `x * tanh(softplus(x))`.
#[inline]
pub fn mish<T: Scalar>(x: T) -> T {
    x * softplus(x).tanh()
}

/// Derivative of [`mish`].
#[inline]
pub fn mish_grad<T: Scalar>(x: T) -> T {
    let t = softplus(x).tanh();
    t + x * (T::one() - t * t) * sigmoid(x)
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Frozen (inference-mode) batch normalization of a single value.
#[inline]
pub fn batchnorm_scalar<T: Scalar>(x: T, mean: T, var: T, gamma: T, beta: T, eps: T) -> T {
    (x - mean) / (var + eps).sqrt() * gamma + beta
}

/// `max(0, 1 - target * y)`.
#[inline]
pub fn hinge<T: Scalar>(y: T, target: T) -> T {
    (T::one() - target * y).max(T::zero())
}

/// Subgradient of [`hinge`] in `y`. The kink `target * y == 1` takes the
/// active-side value `-target`.
#[inline]
pub fn hinge_grad<T: Scalar>(y: T, target: T) -> T {
    if T::one() - target * y >= T::zero() {
        -target
    } else {
        T::zero()
    }
}

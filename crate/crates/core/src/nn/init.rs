use rand::Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Glorot/Xavier uniform sample over `shape`.
pub fn glorot_uniform<T: Scalar>(
    shape: impl Into<Vec<usize>>,
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::c(rng.gen_range(-limit..=limit)))
}

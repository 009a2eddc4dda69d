//! Seeded parameter initializers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::real::Real;
use crate::tensor::Tensor;

/// Uniform in `[-bound, bound]`.
pub fn uniform<T: Real>(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::new(shape, data).expect("shape and length agree")
}

/// Weight `[din, dout]` and bias `[dout]`, both uniform in `±1/√din`.
pub fn linear<T: Real>(din: usize, dout: usize, rng: &mut ChaCha8Rng) -> (Tensor<T>, Tensor<T>) {
    let bound = 1.0 / (din as f64).sqrt();
    (uniform(&[din, dout], bound, rng), uniform(&[dout], bound, rng))
}

/// Kernel `[cout, cin, k...]` and bias `[cout]`, uniform in `±1/√(cin·k...)`.
pub fn conv<T: Real>(kernel_shape: &[usize], rng: &mut ChaCha8Rng) -> (Tensor<T>, Tensor<T>) {
    let fan_in: usize = kernel_shape[1..].iter().product();
    let bound = 1.0 / (fan_in as f64).sqrt();
    (
        uniform(kernel_shape, bound, rng),
        uniform(&[kernel_shape[0]], bound, rng),
    )
}

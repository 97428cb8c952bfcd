use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use super::Element;

pub fn uniform_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Zero-mean uniform samples in `±sqrt(6 / (fan_in + fan_out))`.
pub fn fan_uniform<F: Element, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> ArrayD<F> {
    let bound = uniform_bound(fan_in, fan_out);
    let n: usize = shape.iter().product();
    let data: Vec<F> = (0..n).map(|_| F::of(rng.random_range(-bound..bound))).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape matches data")
}

//! Finite-difference gradient oracle and fixtures shared by the unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{grad, no_grad, Tensor};

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Vec<f64> {
    (0..shape.iter().product::<usize>())
        .map(|_| rng.random_range(lo..hi))
        .collect()
}

pub fn param(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::param(uniform(rng, shape, -1.0, 1.0), shape).unwrap()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale < 1e-300 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of a scalar function with respect to every element
/// of `t`, perturbing it in place.
pub fn numeric_grad(t: &Tensor, f: &mut dyn FnMut() -> f64, h: f64) -> Vec<f64> {
    (0..t.numel())
        .map(|i| {
            let orig = t.data()[i];
            t.data_mut()[i] = orig + h;
            let fp = f();
            t.data_mut()[i] = orig - h;
            let fm = f();
            t.data_mut()[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Largest relative error between reverse-mode and central-difference
/// gradients of `f` over all `inputs`.
pub fn grad_check(inputs: &[&Tensor], f: impl Fn() -> Tensor) -> f64 {
    let out = f();
    let analytic = grad(&out, inputs, None, false).unwrap();
    inputs
        .iter()
        .zip(&analytic)
        .map(|(t, a)| {
            let numeric = numeric_grad(t, &mut || no_grad(|| f().item()), FD_STEP);
            rel_err(&a.to_vec(), &numeric)
        })
        .fold(0.0, f64::max)
}

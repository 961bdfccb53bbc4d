//! Central finite-difference oracle for checking tape gradients.
//!
//! Only forward values are used here, so the check stays independent of the
//! backward rules it verifies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for relative errors of near-zero gradients.
const REL_FLOOR: f64 = 1e-6;

/// `∂f/∂x` by central differences with step `h`.
pub fn numerical_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest element-wise `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
        .fold(0.0, f64::max)
}

/// Reduces `v` to a scalar through fixed pseudo-random weights, so every
/// output entry sends a distinct upstream gradient.
pub fn weighted_sum(tape: &mut Tape, v: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(v).to_vec();
    let n = tape.value(v).len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w = tape.constant(shape, w)?;
    let prod = tape.mul(v, w)?;
    Ok(tape.sum(prod))
}

/// Compares tape gradients of the scalar built by `build` against central
/// differences, for every input. Returns the worst relative error.
pub fn check(inputs: &[Tensor], build: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(&t.clone().with_grad()))
        .collect();
    let out = build(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let mut worst = 0.0_f64;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; input.numel()]);
        let numeric = numerical_gradient(input.data(), FD_STEP, |x| {
            let mut t = Tape::new();
            let vs: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, other)| {
                    if j == k {
                        t.leaf(&Tensor::new(other.shape().to_vec(), x.to_vec()).expect("same shape"))
                    } else {
                        t.leaf(other)
                    }
                })
                .collect();
            let o = build(&mut t, &vs).expect("forward succeeded once");
            t.value(o)[0]
        });
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// Uniform random tensor in `[-1, 1)`.
pub fn random_tensor(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).expect("length matches shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_recovers_polynomial_derivative() {
        let g = numerical_gradient(&[2.0, -1.0], FD_STEP, |x| x[0].powi(3) + 4.0 * x[1]);
        assert!((g[0] - 12.0).abs() < 1e-8);
        assert!((g[1] - 4.0).abs() < 1e-8);
    }
}

//! Independent reference computations used to check the fast paths: Gauss
//! quadrature, brute-force Godunov search, central differences and a
//! straight-line network evaluator.

use crate::network::{Activation, MlpParams};

/// Five-point Gauss-Legendre rule on `[a, b]`.
pub fn gauss_legendre_5(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    const NODES: [f64; 5] = [
        0.0,
        -0.538_469_310_105_683_1,
        0.538_469_310_105_683_1,
        -0.906_179_845_938_664,
        0.906_179_845_938_664,
    ];
    const WEIGHTS: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    NODES
        .iter()
        .zip(WEIGHTS.iter())
        .map(|(&x, &w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

/// Godunov flux by grid search: min of `f` over `[um, up]` when `um < up`,
/// max over `[up, um]` otherwise, using `points` equispaced samples.
pub fn godunov_brute_force(f: impl Fn(f64) -> f64, um: f64, up: f64, points: usize) -> f64 {
    if um == up {
        return f(um);
    }
    let (a, b) = if um < up { (um, up) } else { (up, um) };
    let samples = (0..points).map(|k| f(a + (b - a) * k as f64 / (points - 1) as f64));
    if um < up {
        samples.fold(f64::INFINITY, f64::min)
    } else {
        samples.fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Central-difference gradient of `f` at `x`.
pub fn central_difference_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            let orig = probe[k];
            probe[k] = orig + step;
            let fp = f(&probe);
            probe[k] = orig - step;
            let fm = f(&probe);
            probe[k] = orig;
            (fp - fm) / (2.0 * step)
        })
        .collect()
}

fn activate(act: Activation, x: f64) -> f64 {
    match act {
        Activation::Tanh => x.tanh(),
        Activation::Relu => {
            if x > 0.0 {
                x
            } else {
                0.0
            }
        }
        Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
    }
}

/// Scalar loop evaluation of a network straight from its flat parameters.
pub fn reference_forward(params: &MlpParams, input: &[f64]) -> f64 {
    let arch = *params.arch();
    let theta = params.as_slice();
    let w = arch.width;
    let mut cursor = 0;
    let mut z: Vec<f64> = input.to_vec();
    let mut block_input: Vec<f64> = {
        let mut padded = vec![0.0; w];
        for (p, &x) in padded.iter_mut().zip(input) {
            *p = x;
        }
        padded
    };
    for layer in 0..arch.hidden_layers {
        let fan_in = z.len();
        let weights = &theta[cursor..cursor + w * fan_in];
        cursor += w * fan_in;
        let bias = &theta[cursor..cursor + w];
        cursor += w;
        let mut next = vec![0.0; w];
        for r in 0..w {
            let mut acc = bias[r];
            for c in 0..fan_in {
                acc += weights[r * fan_in + c] * z[c];
            }
            next[r] = activate(arch.activation, acc);
        }
        let block = layer / 2;
        if layer % 2 == 1 && block < arch.shortcuts {
            for r in 0..w {
                next[r] += block_input[r];
            }
        }
        if layer % 2 == 1 {
            block_input = next.clone();
        }
        z = next;
    }
    let mut out = 0.0;
    for r in 0..w {
        out += theta[cursor + r] * z[r];
    }
    if arch.output_bias {
        out += theta[cursor + w];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_exact_for_degree_nine() {
        let q = gauss_legendre_5(&|x| x.powi(9) + x.powi(8), -1.0, 2.0);
        let exact = (2f64.powi(10) - 1.0) / 10.0 + (2f64.powi(9) + 1.0) / 9.0;
        assert!((q - exact).abs() < 1e-10 * exact);
    }

    #[test]
    fn brute_force_godunov_endpoints() {
        let f = |u: f64| 0.5 * u * u;
        assert_eq!(godunov_brute_force(f, 1.0, 0.0, 10_000), 0.5);
        assert_eq!(godunov_brute_force(f, 0.0, 1.0, 10_000), 0.0);
    }
}

//! Exact solutions, moment oracles and the classical explicit solver.

use rand::Rng;

use crate::error::{Error, Result};
use crate::flux::NumericalFlux;
use crate::mesh::UniformMesh;
use crate::problem::{Boundary, Problem};
use crate::sampling::{OmegaDistribution, Welford};

/// Pointwise exact solution.
pub fn exact_eval(problem: &Problem, t: f64, x: &[f64], omega: Option<&[f64]>) -> f64 {
    problem.exact(t, x, omega)
}

/// `E[u(1, x)]` for the stochastic Riemann problem when `z` is uniform on
/// `[1 - eps, 1 + eps]`.
pub fn burgers_expectation_analytic(x: f64, eps: f64) -> f64 {
    burgers_expectation_at(1.0, x, eps)
}

/// `E[u(t, x)]` with the shock at `z t / 2` and `z ~ U[1 - eps, 1 + eps]`.
pub fn burgers_expectation_at(t: f64, x: f64, eps: f64) -> f64 {
    let (zl, zh) = (1.0 - eps, 1.0 + eps);
    if t <= 0.0 {
        return if x < 0.0 { 1.0 } else { 0.0 };
    }
    let zc = 2.0 * x / t;
    if zc <= zl {
        1.0
    } else if zc >= zh {
        0.0
    } else {
        (zh * zh - zc * zc) / (4.0 * eps)
    }
}

/// `Var[u(t, x)]` under the same law.
pub fn burgers_variance_at(t: f64, x: f64, eps: f64) -> f64 {
    let (zl, zh) = (1.0 - eps, 1.0 + eps);
    if t <= 0.0 {
        return 0.0;
    }
    let lo = (2.0 * x / t).clamp(zl, zh);
    let second = (zh.powi(3) - lo.powi(3)) / (6.0 * eps);
    let mean = burgers_expectation_at(t, x, eps);
    (second - mean * mean).max(0.0)
}

/// Per-point sample moments with standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub mean_std_error: Vec<f64>,
    pub variance_std_error: Vec<f64>,
}

/// Monte-Carlo mean and unbiased variance of the exact solution at each
/// `(t, x)` point.
pub fn mc_moments<R: Rng>(
    problem: &Problem,
    dist: &OmegaDistribution,
    n_samples: usize,
    points: &[(f64, Vec<f64>)],
    rng: &mut R,
) -> Result<Moments> {
    if n_samples < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least two samples, got {n_samples}"
        )));
    }
    let mut acc = vec![Welford::default(); points.len()];
    for _ in 0..n_samples {
        let w = if problem.is_stochastic() {
            Some(dist.sample_one(rng))
        } else {
            None
        };
        for (a, (t, x)) in acc.iter_mut().zip(points) {
            a.push(problem.exact(*t, x, w.as_deref()));
        }
    }
    Ok(Moments {
        mean: acc.iter().map(Welford::mean).collect(),
        variance: acc.iter().map(Welford::variance).collect(),
        mean_std_error: acc.iter().map(Welford::std_error_mean).collect(),
        variance_std_error: acc.iter().map(Welford::std_error_variance).collect(),
    })
}

/// Time history of the explicit scheme: `values[n][cell]` for `n = 0..=steps`.
#[derive(Debug, Clone)]
pub struct ClassicalSolution {
    pub mesh: UniformMesh,
    pub dt: f64,
    pub values: Vec<Vec<f64>>,
}

impl ClassicalSolution {
    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn final_values(&self) -> &[f64] {
        self.values.last().unwrap()
    }
}

/// March `c (U^{n+1} - U^n) / dt + sum_k (F_{i+1/2} - F_{i-1/2}) / h = 0` from
/// point values of the initial data, with `dt = lambda h`, up to `t_final`.
pub fn classical_upwind_solve(
    problem: &Problem,
    cells_per_dim: usize,
    lambda: f64,
    t_final: f64,
    omega: Option<&[f64]>,
) -> Result<ClassicalSolution> {
    problem.validate()?;
    let (lo, hi) = problem.domain();
    let mesh = UniformMesh::new(problem.dim(), cells_per_dim, lo, hi)?;
    let h = mesh.h();
    let dt = lambda * h;
    let flux = problem.flux().resolve(omega)?;
    let c = problem.time_coeff();
    let boundary = problem.default_boundary();
    let nf = problem.default_numerical_flux();
    let mut u: Vec<f64> = (0..mesh.num_cells())
        .map(|cell| problem.initial_coeff(0, &mesh.center(&mesh.multi_index(cell)), omega))
        .collect();
    let max_speed = u
        .iter()
        .map(|&v| flux.derivative(v).abs())
        .fold(0.0, f64::max);
    let cfl = lambda * max_speed * mesh.dim() as f64 / c;
    if cfl > 1.0 + 1e-12 {
        return Err(Error::Cfl(cfl));
    }
    let steps = (t_final / dt).round() as usize;
    if steps == 0 || ((steps as f64) * dt - t_final).abs() > 1e-9 * t_final.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "time step {dt} does not divide the horizon {t_final}"
        )));
    }
    let mut values = Vec::with_capacity(steps + 1);
    values.push(u.clone());
    let r = dt / (c * h);
    let mut next = u.clone();
    for _ in 0..steps {
        for cell in 0..u.len() {
            let mut div = 0.0;
            for axis in 0..mesh.dim() {
                let left = boundary.neighbor(&mesh, cell, axis, -1);
                let right = boundary.neighbor(&mesh, cell, axis, 1);
                let fr = flux.numerical(nf, u[cell], u[right]).0;
                let fl = flux.numerical(nf, u[left], u[cell]).0;
                div += fr - fl;
            }
            next[cell] = u[cell] - r * div;
        }
        std::mem::swap(&mut u, &mut next);
        values.push(u.clone());
    }
    Ok(ClassicalSolution { mesh, dt, values })
}

/// Total variation of a 1D profile.
pub fn total_variation(u: &[f64]) -> f64 {
    u.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Position where a decreasing 1D profile first drops below `level`,
/// linearly interpolated between cell centers.
pub fn crossing_position(mesh: &UniformMesh, u: &[f64], level: f64) -> Option<f64> {
    let xs = mesh.centers_1d();
    u.windows(2).enumerate().find_map(|(i, w)| {
        if w[0] >= level && w[1] < level {
            let s = (w[0] - level) / (w[0] - w[1]);
            Some(xs[i] + s * mesh.h())
        } else {
            None
        }
    })
}

/// Boundary rule the classical solver uses for a problem.
pub fn boundary_for(problem: &Problem) -> Boundary {
    problem.default_boundary()
}

/// Numerical flux the classical solver uses for a problem.
pub fn numerical_flux_for(problem: &Problem) -> NumericalFlux {
    problem.default_numerical_flux()
}

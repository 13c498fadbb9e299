//! Self-check suites: each compares a fast path against an independent oracle.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::basis::{stiffness, LegendreBasis};
use crate::error::{Error, Result};
use crate::flux::{godunov_flux, FluxSpec};
use crate::mesh::UniformMesh;
use crate::metrics::{convergence_order, rel_error};
use crate::network::{Architecture, MlpParams};
use crate::oracle::{central_difference_gradient, gauss_legendre_5, godunov_brute_force};
use crate::problem::Problem;
use crate::reference::{classical_upwind_solve, crossing_position, total_variation};
use crate::residual::{Level, LossEngine, SampleSet, SampleSpec, SchemeSpec, SolutionRep, TimeMode};
use crate::sampling::{sample_indices, stream, StreamKind};

pub const SUITES: [&str; 5] = ["counts", "gradients", "fluxes", "basis", "reference"];

/// One compared quantity.
#[derive(Debug, Clone)]
pub struct CheckItem {
    pub name: String,
    pub detail: String,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub suite: String,
    pub items: Vec<CheckItem>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.pass)
    }

    fn push(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) {
        self.items.push(CheckItem {
            name: name.into(),
            detail: detail.into(),
            pass,
        });
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in &self.items {
            writeln!(f, "[{}] {}/{}: {}", if i.pass { "PASS" } else { "FAIL" }, self.suite, i.name, i.detail)?;
        }
        let failed = self.items.iter().filter(|i| !i.pass).count();
        write!(f, "{}: {} checks, {} failed", self.suite, self.items.len(), failed)
    }
}

/// Run one suite by name.
pub fn check(suite: &str) -> Result<CheckReport> {
    let mut r = CheckReport {
        suite: suite.to_string(),
        items: Vec::new(),
    };
    match suite {
        "counts" => counts(&mut r),
        "gradients" => gradients(&mut r)?,
        "fluxes" => fluxes(&mut r)?,
        "basis" => basis(&mut r)?,
        "reference" => reference(&mut r)?,
        _ => {
            return Err(Error::Unknown {
                kind: "check suite",
                id: suite.to_string(),
            })
        }
    }
    Ok(r)
}

/// `(input_dim, hidden_layers, width, shortcuts, published count)`.
pub const PUBLISHED_COUNTS: [(usize, usize, usize, usize, usize); 10] = [
    (2, 4, 20, 2, 1341),
    (3, 4, 40, 2, 5121),
    (4, 4, 60, 2, 11341),
    (4, 6, 40, 3, 8441),
    (12, 6, 50, 3, 13451),
    (52, 6, 100, 3, 55901),
    (102, 6, 200, 3, 221801),
    (202, 6, 400, 3, 883601),
    (54, 6, 100, 3, 56101),
    (104, 6, 200, 3, 222201),
];

/// Printed counts the formula does not reproduce: `(label, architecture, printed)`.
pub fn count_discrepancies() -> Vec<(&'static str, Architecture, usize)> {
    vec![
        ("s=5 width 50, 7 inputs", Architecture::new(7, 6, 50, 3), 13211),
        ("second order 6 layers width 60", Architecture::new(2, 6, 60, 2), 12951),
    ]
}

fn counts(r: &mut CheckReport) {
    for (inp, l, w, s, expected) in PUBLISHED_COUNTS {
        let got = Architecture::new(inp, l, w, s).param_count();
        r.push(format!("in{inp}-L{l}-w{w}"), got == expected, format!("{got} (published {expected})"));
    }
    // Reported, not gated.
    for (label, a, printed) in count_discrepancies() {
        r.push(
            format!("discrepancy {label}"),
            true,
            format!("formula {} vs printed {printed}", a.param_count()),
        );
    }
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-12);
    num / den
}

/// Gradient tolerance shared by every instance.
pub const GRADIENT_TOL: f64 = 1e-6;

fn gradients(r: &mut CheckReport) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let n_net = 50;
    for case in 0..n_net {
        let layers = 2 + case % 5;
        let a = Architecture::new(1 + case % 4, layers, 3 + case % 6, (case % 3).min(layers / 2));
        let p = MlpParams::init(a, case as u64)?;
        let x: Vec<f64> = (0..a.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, g, gx) = p.backprop(&x)?;
        let fd = central_difference_gradient(
            |theta| MlpParams::from_flat(a, theta.to_vec()).and_then(|q| q.forward(&x)).unwrap_or(f64::NAN),
            p.as_slice(),
            1e-5,
        );
        let fdx = central_difference_gradient(|xx| p.forward(xx).unwrap_or(f64::NAN), &x, 1e-5);
        worst = worst.max(rel_diff(&g, &fd)).max(rel_diff(&gx, &fdx));
    }
    r.push(
        "network forward",
        worst <= GRADIENT_TOL,
        format!("{n_net} instances, max relative error {worst:.2e}"),
    );

    let variants: [(Problem, TimeMode, usize); 5] = [
        (Problem::LinearDet { dim: 1 }, TimeMode::ForwardEuler, 1),
        (Problem::LinearDet { dim: 2 }, TimeMode::SemiDiscrete, 1),
        (Problem::LinearDet { dim: 1 }, TimeMode::ForwardEuler, 2),
        (Problem::BurgersDet, TimeMode::ForwardEuler, 1),
        (Problem::LinearStoch { dim: 1, s: 3 }, TimeMode::ForwardEuler, 1),
    ];
    let mut worst: f64 = 0.0;
    let mut n_loss = 0;
    for (v, (problem, time, order)) in variants.into_iter().enumerate() {
        for inst in 0..10u64 {
            let seed = 100 * v as u64 + inst;
            worst = worst.max(loss_gradient_error(problem, time, order, seed)?);
            n_loss += 1;
        }
    }
    r.push(
        "mini-batch loss",
        worst <= GRADIENT_TOL,
        format!("{n_loss} instances, max relative error {worst:.2e}"),
    );
    Ok(())
}

/// Relative error between reverse-mode and central-difference gradients of
/// a random mini-batch loss.
pub fn loss_gradient_error(problem: Problem, time: TimeMode, order: usize, seed: u64) -> Result<f64> {
    let (lo, hi) = problem.domain();
    let n = 4;
    let dt = if order == 2 { 1.0 / 16.0 } else { 0.25 };
    let mesh = UniformMesh::new(problem.dim(), n, lo, hi)?;
    let level = Level::new(mesh, SchemeSpec::for_problem(&problem, time, order, dt))?;
    let levels = [level];
    let arch = Architecture::new(problem.input_dim(), 3, 5, 1);
    let nets = (0..order)
        .map(|j| MlpParams::init(arch, seed * 7 + j as u64))
        .collect::<Result<Vec<_>>>()?;
    let rep = SolutionRep::new(problem, nets, problem.default_construction(), problem.default_boundary())?;
    let mut rng = stream(seed, StreamKind::Indices, 0);
    let mut grid = levels[0].grid();
    let mut samples = Vec::new();
    let mut omegas = Vec::new();
    for j in 0..order {
        grid.bases = 1;
        for mut index in sample_indices(grid, 12, &mut rng) {
            index.basis = j;
            let omega = if problem.is_stochastic() {
                omegas.push((0..problem.random_dim()).map(|_| rng.gen_range(0.0..1.0)).collect());
                Some(omegas.len() - 1)
            } else {
                None
            };
            samples.push(SampleSpec {
                level: 0,
                index,
                omega,
                weight: rng.gen_range(0.5..1.5),
            });
        }
    }
    let set = SampleSet { samples, omegas };
    let engine = LossEngine::new(&levels);
    let batch = engine.prepare(&rep, &set)?;
    let all = vec![true; order];
    let eval = engine.evaluate(&rep, &batch, &all)?;
    let mut worst: f64 = 0.0;
    for j in 0..order {
        let fd = central_difference_gradient(
            |theta| {
                let mut q = rep.clone();
                q.networks[j].as_mut_slice().copy_from_slice(theta);
                engine.evaluate(&q, &batch, &[]).map(|e| e.loss).unwrap_or(f64::NAN)
            },
            rep.networks[j].as_slice(),
            1e-6,
        );
        worst = worst.max(rel_diff(&eval.grads[j], &fd));
    }
    Ok(worst)
}

fn fluxes(r: &mut CheckReport) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let spec = FluxSpec::Burgers;
    let f = |u: f64| 0.5 * u * u;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let um = rng.gen_range(-2.0..2.0);
        let up = rng.gen_range(-2.0..2.0);
        let closed = godunov_flux(&spec, um, up)?;
        worst = worst.max((closed - godunov_brute_force(f, um, up, 10_000)).abs());
    }
    r.push("godunov burgers", worst <= 1e-6, format!("1000 pairs, max deviation {worst:.2e}"));
    Ok(())
}

fn basis(r: &mut CheckReport) -> Result<()> {
    let b = LegendreBasis::new(1)?;
    let mut worst: f64 = 0.0;
    let mut worst_mass: f64 = 0.0;
    for h in [1.0, 0.1, 1.0 / 40.0, 1.0 / 320.0] {
        let st = stiffness(1, h)?;
        let phi = |j: usize, x: f64| if j == 0 { 1.0 } else { x };
        let dphi = |j: usize| if j == 0 { 0.0 } else { 1.0 };
        for k in 0..2 {
            for j in 0..2 {
                let q = gauss_legendre_5(&|x| phi(k, x) * dphi(j), -h / 2.0, h / 2.0);
                worst = worst.max((st.linear[k][j] - q).abs());
                for l in 0..2 {
                    let q = gauss_legendre_5(&|x| phi(k, x) * phi(l, x) * dphi(j), -h / 2.0, h / 2.0);
                    worst = worst.max((st.quadratic[k][l][j] - q).abs());
                }
                let m = gauss_legendre_5(&|x| phi(k, x) * phi(j, x), -h / 2.0, h / 2.0);
                let expect = match (k, j) {
                    (0, 0) => h,
                    (1, 1) => h * h * h / 12.0,
                    _ => 0.0,
                };
                worst_mass = worst_mass.max((m - expect).abs());
                if k == j {
                    worst_mass = worst_mass.max((b.mass(j, h) - expect).abs());
                }
            }
        }
    }
    r.push("stiffness vs quadrature", worst <= 1e-12, format!("max deviation {worst:.2e}"));
    r.push("mass and orthogonality", worst_mass <= 1e-12, format!("max deviation {worst_mass:.2e}"));
    Ok(())
}

/// Final-time relative L2 errors of the classical linear solver.
pub fn classical_linear_errors(levels: &[usize]) -> Result<Vec<f64>> {
    let p = Problem::LinearDet { dim: 1 };
    levels
        .iter()
        .map(|&n| {
            let sol = classical_upwind_solve(&p, n, 1.0, 1.0, None)?;
            let exact: Vec<f64> = sol.mesh.centers_1d().iter().map(|&x| p.exact(1.0, &[x], None)).collect();
            rel_error(sol.final_values(), &exact, 2, None)
        })
        .collect()
}

fn reference(r: &mut CheckReport) -> Result<()> {
    let levels = [20, 40, 80, 160];
    let errs = classical_linear_errors(&levels)?;
    for (w, n) in errs.windows(2).zip(&levels[1..]) {
        let o = convergence_order(w[0], w[1], 2.0)?;
        r.push(format!("upwind order at 1/{n}"), (0.9..=1.1).contains(&o), format!("{o:.3}"));
    }
    let sol = classical_upwind_solve(&Problem::BurgersDet, 80, 1.0, 1.0, None)?;
    let tvd = sol
        .values
        .windows(2)
        .all(|w| total_variation(&w[1]) <= total_variation(&w[0]) + 1e-12);
    r.push("burgers total variation", tvd, "non-increasing in time");
    let x = crossing_position(&sol.mesh, sol.final_values(), 0.5);
    let pass = x.is_some_and(|x| (x - 0.5).abs() <= sol.mesh.h());
    r.push("burgers shock position", pass, format!("{x:?} vs 0.5, h = {}", sol.mesh.h()));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_suites_pass() {
        for s in ["counts", "fluxes", "basis", "reference"] {
            let r = check(s).unwrap();
            assert!(r.passed(), "{r}");
        }
        assert!(check("nope").is_err());
    }
}

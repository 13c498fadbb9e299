//! Local element basis `phi^0 = 1`, `phi^1 = x - x_center` and its
//! stiffness coefficients.
//!
//! The basis is the shifted-monomial form rather than L2-normalized Legendre
//! polynomials, so the diagonal mass entries are `h` and `h^3 / 12`.

use crate::error::{Error, Result};
use crate::mesh::UniformMesh;

/// Highest supported polynomial order.
pub const MAX_ORDER: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LegendreBasis {
    order: usize,
}

impl LegendreBasis {
    pub fn new(order: usize) -> Result<Self> {
        if order > MAX_ORDER {
            return Err(Error::BasisOrder {
                order,
                max: MAX_ORDER,
            });
        }
        Ok(Self { order })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.order + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `phi^j` on the reference offset `s = x - x_center`.
    pub fn local(&self, j: usize, s: f64) -> f64 {
        match j {
            0 => 1.0,
            _ => s,
        }
    }

    /// `d phi^j / dx`.
    pub fn local_derivative(&self, j: usize) -> f64 {
        match j {
            0 => 0.0,
            _ => 1.0,
        }
    }

    /// Diagonal mass entry `(phi^j, phi^j)` on a cell of width `h`.
    pub fn mass(&self, j: usize, h: f64) -> f64 {
        match j {
            0 => h,
            _ => h * h * h / 12.0,
        }
    }

    /// Trace of `phi^j` at the right end of its cell (one-sided from inside).
    pub fn right_trace(&self, j: usize, h: f64) -> f64 {
        self.local(j, 0.5 * h)
    }

    /// Trace of `phi^j` at the left end of its cell.
    pub fn left_trace(&self, j: usize, h: f64) -> f64 {
        self.local(j, -0.5 * h)
    }

    /// Evaluate `phi^j` supported on `cell` at `x`; zero outside the cell.
    pub fn eval(&self, mesh: &UniformMesh, j: usize, cell: &[usize], x: &[f64]) -> Result<f64> {
        if j > self.order {
            return Err(Error::BasisOrder {
                order: j,
                max: self.order,
            });
        }
        if x.len() != mesh.dim() || cell.len() != mesh.dim() {
            return Err(Error::DimensionMismatch {
                expected: mesh.dim(),
                got: x.len().min(cell.len()),
            });
        }
        if j > 0 && mesh.dim() > 1 {
            return Err(Error::Unsupported(
                "first-order basis is one-dimensional only".into(),
            ));
        }
        if !mesh.contains(cell, x) {
            return Ok(0.0);
        }
        Ok(self.local(j, x[0] - mesh.center_1d(cell[0])))
    }
}

/// `phi^j` of `cell` at `x`.
pub fn eval_basis(
    mesh: &UniformMesh,
    basis: &LegendreBasis,
    j: usize,
    cell: &[usize],
    x: &[f64],
) -> Result<f64> {
    basis.eval(mesh, j, cell, x)
}

/// Stiffness coefficients on a uniform cell.
///
/// `linear[k][j] = (phi^k, phi^j')` and `quadratic[l][m][j] = (phi^l phi^m, phi^j')`.
#[derive(Debug, Clone, PartialEq)]
pub struct StiffnessCoeffs {
    pub order: usize,
    pub h: f64,
    pub linear: Vec<Vec<f64>>,
    pub quadratic: Vec<Vec<Vec<f64>>>,
}

pub fn stiffness(order: usize, h: f64) -> Result<StiffnessCoeffs> {
    LegendreBasis::new(order)?;
    let n = order + 1;
    // Moments of s = x - x_c over [-h/2, h/2]: int 1 = h, int s = 0, int s^2 = h^3/12.
    let moment = |p: usize| -> f64 {
        match p {
            0 => h,
            1 => 0.0,
            2 => h * h * h / 12.0,
            _ => unreachable!("order <= 1"),
        }
    };
    // phi^j' is 1 for j = 1 and 0 otherwise, and phi^k = s^k.
    let linear = (0..n)
        .map(|k| {
            (0..n)
                .map(|j| if j == 0 { 0.0 } else { moment(k) })
                .collect()
        })
        .collect();
    let quadratic = (0..n)
        .map(|l| {
            (0..n)
                .map(|m| {
                    (0..n)
                        .map(|j| if j == 0 { 0.0 } else { moment(l + m) })
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(StiffnessCoeffs {
        order,
        h,
        linear,
        quadratic,
    })
}

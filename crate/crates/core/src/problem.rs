//! The four model problems: deterministic / stochastic linear advection on
//! `[0,1]^d` and deterministic / stochastic Burgers Riemann problems on
//! `[-1,1]`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flux::{stochastic_speed, FluxSpec, NumericalFlux};
use crate::mesh::UniformMesh;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Problem {
    /// `2 d pi u_t - sum_k u_{x_k} = 0`, periodic, `u(0,x) = sin(2 pi sum x)`.
    LinearDet { dim: usize },
    /// `u_t + (u^2/2)_x = 0`, reflecting, jump from 1 to 0 at `x = 0`.
    BurgersDet,
    /// Linear problem with the random speed `1 + exp(-sum w)^2`.
    LinearStoch { dim: usize, s: usize },
    /// Burgers with left state `z = 1 + eps sum w`.
    BurgersStoch { s: usize, eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Periodic,
    Reflecting,
}

impl Boundary {
    /// Map a cell index that may sit one cell outside `[0, n)` back inside.
    #[inline]
    pub fn wrap(self, i: i64, n: usize) -> Result<usize> {
        let ni = n as i64;
        if i < -1 || i > ni {
            return Err(Error::IndexOutOfRange { index: i, cells: n });
        }
        Ok(match (self, i) {
            (_, i) if (0..ni).contains(&i) => i as usize,
            (Boundary::Periodic, -1) => n - 1,
            (Boundary::Periodic, _) => 0,
            (Boundary::Reflecting, -1) => 0,
            (Boundary::Reflecting, _) => n - 1,
        })
    }

    /// Linear index of the neighbour of `cell` shifted by `delta` along `axis`.
    #[inline]
    pub fn neighbor(self, mesh: &UniformMesh, cell: usize, axis: usize, delta: i64) -> usize {
        let n = mesh.cells_per_dim();
        let stride = n.pow((mesh.dim() - 1 - axis) as u32);
        let coord = (cell / stride) % n;
        let moved = self
            .wrap(coord as i64 + delta, n)
            .expect("neighbour offset is at most one cell");
        cell - coord * stride + moved * stride
    }
}

/// How network outputs become DG coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    /// `U(t) = t N(t, x, w) + g(x, w)`.
    TimeFactor,
    /// `U(t) = N(t, x, w)` for `t > 0` and the exact data at `t = 0`.
    ExactAtT0,
}

impl Problem {
    pub fn dim(&self) -> usize {
        match *self {
            Problem::LinearDet { dim } | Problem::LinearStoch { dim, .. } => dim,
            Problem::BurgersDet | Problem::BurgersStoch { .. } => 1,
        }
    }

    pub fn random_dim(&self) -> usize {
        match *self {
            Problem::LinearStoch { s, .. } | Problem::BurgersStoch { s, .. } => s,
            _ => 0,
        }
    }

    pub fn is_stochastic(&self) -> bool {
        self.random_dim() > 0
    }

    /// Network input width: time, space, random inputs.
    pub fn input_dim(&self) -> usize {
        1 + self.dim() + self.random_dim()
    }

    pub fn is_burgers(&self) -> bool {
        matches!(self, Problem::BurgersDet | Problem::BurgersStoch { .. })
    }

    pub fn domain(&self) -> (f64, f64) {
        if self.is_burgers() {
            (-1.0, 1.0)
        } else {
            (0.0, 1.0)
        }
    }

    pub fn flux(&self) -> FluxSpec {
        match self {
            Problem::LinearDet { .. } => FluxSpec::Linear { speed: -1.0 },
            Problem::LinearStoch { .. } => FluxSpec::StochasticLinear { sign: -1.0 },
            _ => FluxSpec::Burgers,
        }
    }

    /// Coefficient `c` of `u_t`.
    pub fn time_coeff(&self) -> f64 {
        if self.is_burgers() {
            1.0
        } else {
            2.0 * self.dim() as f64 * PI
        }
    }

    pub fn default_numerical_flux(&self) -> NumericalFlux {
        if self.is_burgers() {
            NumericalFlux::Godunov
        } else {
            NumericalFlux::Upwind
        }
    }

    pub fn default_boundary(&self) -> Boundary {
        if self.is_burgers() {
            Boundary::Reflecting
        } else {
            Boundary::Periodic
        }
    }

    pub fn default_construction(&self) -> Construction {
        if self.is_burgers() {
            Construction::ExactAtT0
        } else {
            Construction::TimeFactor
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Problem::LinearDet { dim } | Problem::LinearStoch { dim, .. } if !(1..=3).contains(&dim) => {
                Err(Error::Config(format!("spatial dimension {dim} not in 1..=3")))
            }
            Problem::LinearStoch { s: 0, .. } | Problem::BurgersStoch { s: 0, .. } => {
                Err(Error::Config("stochastic problem needs s >= 1".into()))
            }
            Problem::BurgersStoch { eps, .. } if !(eps > 0.0 && eps < 1.0) => {
                Err(Error::Config(format!("eps = {eps} must lie in (0, 1)")))
            }
            _ => Ok(()),
        }
    }

    fn omega_or_empty(omega: Option<&[f64]>) -> &[f64] {
        omega.unwrap_or(&[])
    }

    /// Left Riemann state `z = 1 + eps sum w`.
    pub fn burgers_left_state(&self, omega: Option<&[f64]>) -> f64 {
        match *self {
            Problem::BurgersStoch { eps, .. } => {
                1.0 + eps * Self::omega_or_empty(omega).iter().sum::<f64>()
            }
            _ => 1.0,
        }
    }

    /// Advection speed multiplying `t` in the linear exact solution.
    pub fn linear_phase_speed(&self, omega: Option<&[f64]>) -> f64 {
        match self {
            Problem::LinearStoch { .. } => stochastic_speed(Self::omega_or_empty(omega)),
            _ => 1.0,
        }
    }

    /// Initial DG coefficient of basis order `j` at the cell center `x`:
    /// the point value for `j = 0`, the `x`-derivative for `j = 1`.
    pub fn initial_coeff(&self, j: usize, x: &[f64], omega: Option<&[f64]>) -> f64 {
        self.exact_coeff(j, 0.0, x, omega)
    }

    /// Exact point value (`j = 0`) or `x`-derivative (`j = 1`).
    pub fn exact_coeff(&self, j: usize, t: f64, x: &[f64], omega: Option<&[f64]>) -> f64 {
        if self.is_burgers() {
            let z = self.burgers_left_state(omega);
            return match j {
                0 => {
                    if x[0] < 0.5 * z * t {
                        z
                    } else {
                        0.0
                    }
                }
                _ => 0.0,
            };
        }
        let phase = self.linear_phase_speed(omega) * t + 2.0 * PI * x.iter().sum::<f64>();
        match j {
            0 => phase.sin(),
            _ => 2.0 * PI * phase.cos(),
        }
    }

    pub fn exact(&self, t: f64, x: &[f64], omega: Option<&[f64]>) -> f64 {
        self.exact_coeff(0, t, x, omega)
    }
}

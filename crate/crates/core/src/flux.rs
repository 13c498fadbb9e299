//! Physical fluxes and the upwind / Godunov numerical fluxes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical flux `f(u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FluxSpec {
    /// `f(u) = speed * u`.
    Linear { speed: f64 },
    /// `f(u) = u^2 / 2`.
    Burgers,
    /// `f(u; w) = sign * (1 + exp(-2 sum w)) * u`.
    StochasticLinear { sign: f64 },
}

/// Random wave speed `1 + (exp(-sum w))^2`.
pub fn stochastic_speed(omega: &[f64]) -> f64 {
    let s: f64 = omega.iter().sum();
    1.0 + (-2.0 * s).exp()
}

impl FluxSpec {
    pub fn is_stochastic(&self) -> bool {
        matches!(self, FluxSpec::StochasticLinear { .. })
    }

    /// Fix the random input, yielding a deterministic flux.
    pub fn resolve(&self, omega: Option<&[f64]>) -> Result<ResolvedFlux> {
        Ok(match *self {
            FluxSpec::Linear { speed } => ResolvedFlux::Linear(speed),
            FluxSpec::Burgers => ResolvedFlux::Burgers,
            FluxSpec::StochasticLinear { sign } => {
                let omega = omega.ok_or(Error::MissingOmega)?;
                ResolvedFlux::Linear(sign * stochastic_speed(omega))
            }
        })
    }
}

/// A flux with any random input already substituted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResolvedFlux {
    Linear(f64),
    Burgers,
}

impl ResolvedFlux {
    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            ResolvedFlux::Linear(a) => a * u,
            ResolvedFlux::Burgers => 0.5 * u * u,
        }
    }

    #[inline]
    pub fn derivative(&self, u: f64) -> f64 {
        match *self {
            ResolvedFlux::Linear(a) => a,
            ResolvedFlux::Burgers => u,
        }
    }

    /// Upwind flux and its partials `(value, d/du_minus, d/du_plus)`.
    ///
    /// Takes `f(u_minus)` for a rightward characteristic and `f(u_plus)` for a
    /// leftward one. Burgers uses the sign of the mean state.
    #[inline]
    pub fn upwind(&self, um: f64, up: f64) -> (f64, f64, f64) {
        let rightward = match *self {
            ResolvedFlux::Linear(a) => a >= 0.0,
            ResolvedFlux::Burgers => um + up >= 0.0,
        };
        if rightward {
            (self.eval(um), self.derivative(um), 0.0)
        } else {
            (self.eval(up), 0.0, self.derivative(up))
        }
    }

    /// Godunov flux for convex `f` and its partials `(value, d/du_minus, d/du_plus)`.
    #[inline]
    pub fn godunov(&self, um: f64, up: f64) -> (f64, f64, f64) {
        match *self {
            ResolvedFlux::Burgers => {
                // max(f(max(um, 0)), f(min(up, 0))), f minimal at 0.
                let a = um.max(0.0);
                let b = up.min(0.0);
                let (fa, fb) = (0.5 * a * a, 0.5 * b * b);
                if fa >= fb {
                    (fa, a, 0.0)
                } else {
                    (fb, 0.0, b)
                }
            }
            ResolvedFlux::Linear(a) => {
                let (fm, fp) = (a * um, a * up);
                let take_minus = if um <= up { fm <= fp } else { fm >= fp };
                if take_minus {
                    (fm, a, 0.0)
                } else {
                    (fp, 0.0, a)
                }
            }
        }
    }

    /// Which traces a numerical flux can depend on: `(minus, plus)`.
    pub fn dependence(&self, kind: NumericalFlux) -> (bool, bool) {
        match (*self, kind) {
            (ResolvedFlux::Linear(a), _) => (a >= 0.0, a < 0.0),
            (ResolvedFlux::Burgers, _) => (true, true),
        }
    }

    #[inline]
    pub fn numerical(&self, kind: NumericalFlux, um: f64, up: f64) -> (f64, f64, f64) {
        match kind {
            NumericalFlux::Upwind => self.upwind(um, up),
            NumericalFlux::Godunov => self.godunov(um, up),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumericalFlux {
    Upwind,
    Godunov,
}

/// `f(u)` for `spec`; `omega` must be supplied exactly for stochastic fluxes.
pub fn phys_flux(spec: &FluxSpec, u: f64, omega: Option<&[f64]>) -> Result<f64> {
    if !spec.is_stochastic() && omega.is_some() {
        return Err(Error::InvalidArgument(
            "random input given for a deterministic flux".into(),
        ));
    }
    Ok(spec.resolve(omega)?.eval(u))
}

pub fn upwind_flux(spec: &FluxSpec, um: f64, up: f64, omega: Option<&[f64]>) -> Result<f64> {
    Ok(spec.resolve(omega)?.upwind(um, up).0)
}

pub fn godunov_flux(spec: &FluxSpec, um: f64, up: f64) -> Result<f64> {
    if spec.is_stochastic() {
        return Err(Error::MissingOmega);
    }
    Ok(spec.resolve(None)?.godunov(um, up).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::godunov_brute_force;
    use proptest::prelude::*;

    #[test]
    fn physical_values() {
        assert_eq!(phys_flux(&FluxSpec::Burgers, 2.0, None).unwrap(), 2.0);
        assert_eq!(
            phys_flux(&FluxSpec::Linear { speed: -1.0 }, 3.0, None).unwrap(),
            -3.0
        );
        let sl = FluxSpec::StochasticLinear { sign: 1.0 };
        assert_eq!(phys_flux(&sl, 1.0, Some(&[0.0, 0.0, 0.0])).unwrap(), 2.0);
        assert!(matches!(phys_flux(&sl, 1.0, None), Err(Error::MissingOmega)));
    }

    #[test]
    fn upwind_direction() {
        let right = FluxSpec::Linear { speed: 1.0 };
        let left = FluxSpec::Linear { speed: -1.0 };
        assert_eq!(upwind_flux(&right, 2.0, 5.0, None).unwrap(), 2.0);
        assert_eq!(upwind_flux(&left, 2.0, 5.0, None).unwrap(), -5.0);
    }

    #[test]
    fn godunov_burgers_cases() {
        assert_eq!(godunov_flux(&FluxSpec::Burgers, 1.0, 0.0).unwrap(), 0.5);
        assert_eq!(godunov_flux(&FluxSpec::Burgers, 0.0, 1.0).unwrap(), 0.0);
        assert_eq!(godunov_flux(&FluxSpec::Burgers, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(godunov_flux(&FluxSpec::Burgers, -1.0, 1.0).unwrap(), 0.0);
        assert_eq!(godunov_flux(&FluxSpec::Burgers, -2.0, -1.0).unwrap(), 0.5);
    }

    #[test]
    fn godunov_partials_match_differences() {
        let f = ResolvedFlux::Burgers;
        let eps = 1e-7;
        for &(a, b) in &[(0.7, -0.3), (0.2, 0.9), (-0.4, -0.9), (1.3, 0.1), (-0.5, 0.4)] {
            let (_, dm, dp) = f.godunov(a, b);
            let fdm = (f.godunov(a + eps, b).0 - f.godunov(a - eps, b).0) / (2.0 * eps);
            let fdp = (f.godunov(a, b + eps).0 - f.godunov(a, b - eps).0) / (2.0 * eps);
            assert!((dm - fdm).abs() < 1e-6, "{a} {b}");
            assert!((dp - fdp).abs() < 1e-6, "{a} {b}");
        }
    }

    proptest! {
        #[test]
        fn numerical_fluxes_are_consistent(u in -5.0f64..5.0, a in -3.0f64..3.0) {
            for f in [ResolvedFlux::Burgers, ResolvedFlux::Linear(a)] {
                prop_assert_eq!(f.upwind(u, u).0, f.eval(u));
                prop_assert_eq!(f.godunov(u, u).0, f.eval(u));
            }
        }

        #[test]
        fn godunov_matches_grid_search(um in -2.0f64..2.0, up in -2.0f64..2.0) {
            let f = ResolvedFlux::Burgers;
            let brute = godunov_brute_force(|u| f.eval(u), um, up, 10_000);
            prop_assert!((f.godunov(um, up).0 - brute).abs() <= 1e-6);
        }

        #[test]
        fn godunov_burgers_monotone(a in -2.0f64..2.0, b in -2.0f64..2.0, d in 0.0f64..1.0) {
            let f = ResolvedFlux::Burgers;
            prop_assert!(f.godunov(a + d, b).0 >= f.godunov(a, b).0);
            prop_assert!(f.godunov(a, b + d).0 <= f.godunov(a, b).0);
        }
    }
}

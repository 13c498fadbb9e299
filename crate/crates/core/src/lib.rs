//! Discontinuous Galerkin residual training for hyperbolic conservation laws.
//!
//! Cell coefficients of a DG solution are produced by small networks of
//! `(t, x, w)`; training minimizes the discrete DG residual over the
//! space-time grid. Classical solvers, exact solutions and Monte-Carlo
//! oracles provide the references.

pub mod basis;
pub mod check;
pub mod config;
pub mod error;
pub mod figures;
pub mod flux;
pub mod mesh;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod oracle;
pub mod problem;
pub mod reference;
pub mod residual;
pub mod sampling;
pub mod tables;
pub mod train;

pub use basis::{eval_basis, stiffness, LegendreBasis, StiffnessCoeffs};
pub use check::{check, CheckReport};
pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use figures::emit_figure_data;
pub use flux::{godunov_flux, phys_flux, upwind_flux, FluxSpec, NumericalFlux, ResolvedFlux};
pub use mesh::{build_mesh, UniformMesh};
pub use metrics::{convergence_order, rel_error, window_average, ErrorReport, Surface};
pub use network::{param_count, Activation, Architecture, MlpParams};
pub use optim::{AdamState, LrSchedule};
pub use problem::{Boundary, Construction, Problem};
pub use residual::{Level, LossEngine, SampleSet, SchemeSpec, SolutionRep, TimeMode};
pub use sampling::{OmegaDistribution, OmegaKind};
pub use tables::{reproduce_table, TableOptions};
pub use train::{run_experiment, train_level, LevelRecord, RunRecord};

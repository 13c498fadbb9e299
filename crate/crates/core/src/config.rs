//! Experiment configuration (TOML) and the named presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flux::NumericalFlux;
use crate::metrics::Surface;
use crate::network::{Activation, Architecture};
use crate::optim::LrSchedule;
use crate::problem::{Boundary, Construction, Problem};
use crate::residual::TimeMode;
use crate::sampling::OmegaKind;

/// Coupling of the time step to the mesh width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DtRule {
    EqualH,
    HSquared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FullSweep {
    /// Enumerate the whole grid when the batch is at least as large.
    #[default]
    Auto,
    Always,
    Never,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub time: TimeMode,
    pub order: usize,
    pub dt_rule: DtRule,
    #[serde(default = "one")]
    pub t_final: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numerical_flux: Option<NumericalFlux>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub construction: Option<Construction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<Boundary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    /// Mesh levels as `1 / h`.
    pub inv_h: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden_layers: usize,
    pub width: usize,
    pub shortcuts: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "yes")]
    pub output_bias: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    #[serde(default = "half")]
    pub lr_decay: f64,
    #[serde(default = "four")]
    pub lr_segments: usize,
    pub iterations: usize,
    pub batch: usize,
    /// Steps per block before switching (two-network schemes).
    #[serde(default = "ten")]
    pub inner_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<OmegaKind>,
    #[serde(default)]
    pub qmc: bool,
    #[serde(default)]
    pub mlmc: bool,
    /// Distinct random inputs per batch; defaults to one per residual.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_batch: Option<usize>,
    #[serde(default)]
    pub full_sweep: FullSweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub window: usize,
    pub surface: Surface,
    /// Evaluate the error every this many iterations inside the window.
    pub eval_every: usize,
    /// Random inputs used for the network's moments.
    pub eval_omega: usize,
    /// Samples of the exact solution behind Monte-Carlo reference moments.
    pub reference_samples: usize,
    /// Training-log cadence outside the window.
    pub log_every: usize,
    #[serde(default = "yes")]
    pub checkpoints: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    pub problem: Problem,
    pub scheme: SchemeConfig,
    pub mesh: MeshConfig,
    pub network: NetworkConfig,
    pub optimizer: OptimizerConfig,
    pub sampler: SamplerConfig,
    pub eval: EvalConfig,
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn four() -> usize {
    4
}
fn ten() -> usize {
    10
}
fn yes() -> bool {
    true
}
fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

/// Iteration and mesh caps of desk-scale mode.
pub const DESK_MAX_INV_H: usize = 40;
pub const DESK_MAX_ITERATIONS: usize = 20_000;

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!("invalid run name {:?}", self.name));
        }
        if !(1..=2).contains(&self.scheme.order) {
            return bad(format!("scheme order {} not in 1..=2", self.scheme.order));
        }
        if self.scheme.order == 2 && (self.problem.dim() != 1 || self.problem.is_stochastic()) {
            return bad("the second-order scheme is implemented for deterministic 1D problems".into());
        }
        if self.mesh.inv_h.is_empty() || self.mesh.inv_h.iter().any(|&n| n < 2) {
            return bad(format!("mesh levels {:?} need 1/h >= 2", self.mesh.inv_h));
        }
        if self.optimizer.batch == 0 {
            return bad("batch must be positive".into());
        }
        if !(self.optimizer.lr > 0.0) {
            return bad(format!("learning rate {} must be positive", self.optimizer.lr));
        }
        if self.eval.window == 0 || self.eval.eval_every == 0 || self.eval.log_every == 0 {
            return bad("window, eval_every and log_every must be positive".into());
        }
        if self.problem.is_stochastic() && self.eval.eval_omega < 2 {
            return bad("eval_omega must be at least 2".into());
        }
        if self.sampler.mlmc {
            if !self.problem.is_stochastic() {
                return bad("multilevel sampling needs a stochastic problem".into());
            }
            if self.mesh.inv_h.iter().any(|n| n % 2 != 0) {
                return bad("multilevel sampling needs even 1/h for the coarse level".into());
            }
        }
        if self.sampler.qmc && self.sampler.mlmc {
            return bad("qmc and mlmc are exclusive".into());
        }
        self.architecture().validate()?;
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        let n = &self.network;
        let mut a = Architecture::new(self.problem.input_dim(), n.hidden_layers, n.width, n.shortcuts)
            .with_activation(n.activation);
        a.output_bias = n.output_bias;
        a
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        LrSchedule {
            initial: self.optimizer.lr,
            factor: self.optimizer.lr_decay,
            segments: self.optimizer.lr_segments,
        }
    }

    pub fn omega_kind(&self) -> OmegaKind {
        self.sampler.distribution.unwrap_or(match self.problem {
            Problem::BurgersStoch { .. } => OmegaKind::SumUniform,
            _ => OmegaKind::Uniform01,
        })
    }

    pub fn construction(&self) -> Construction {
        self.scheme.construction.unwrap_or(self.problem.default_construction())
    }

    pub fn boundary(&self) -> Boundary {
        self.scheme.boundary.unwrap_or(self.problem.default_boundary())
    }

    pub fn numerical_flux(&self) -> NumericalFlux {
        self.scheme.numerical_flux.unwrap_or(self.problem.default_numerical_flux())
    }

    /// Apply desk-scale caps.
    pub fn desk(mut self) -> Self {
        self.mesh.inv_h.retain(|&n| n <= DESK_MAX_INV_H);
        self.optimizer.iterations = self.optimizer.iterations.min(DESK_MAX_ITERATIONS);
        self
    }

    /// Directory of this run's artifacts.
    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(&self.name)
    }

    /// Named configuration with the published defaults. See [`preset_names`].
    pub fn preset(id: &str) -> Result<Self> {
        let unknown = || Error::Unknown {
            kind: "preset",
            id: id.to_string(),
        };
        let parts: Vec<&str> = id.split('-').collect();
        let num = |s: &str, prefix: char| -> Option<usize> { s.strip_prefix(prefix)?.parse().ok() };
        let mut cfg = match parts.as_slice() {
            ["linear", d, time] => {
                let d = num(d, 'd').filter(|d| (1..=3).contains(d)).ok_or_else(unknown)?;
                let width = [20, 40, 60][d - 1];
                base(id, Problem::LinearDet { dim: d }, parse_time(time).ok_or_else(unknown)?, width, 4, 2)
            }
            ["linear", "wide"] => {
                let mut c = base(id, Problem::LinearDet { dim: 3 }, TimeMode::ForwardEuler, 200, 4, 2);
                c.mesh.inv_h = vec![10, 20, 40, 80, 160, 320, 640, 1280];
                c
            }
            ["second", "order"] => second_order(id, 20, 4),
            ["second", "order", "deep"] => {
                let mut c = second_order(id, 60, 6);
                c.mesh.inv_h.pop();
                c
            }
            ["burgers", time] => base(id, Problem::BurgersDet, parse_time(time).ok_or_else(unknown)?, 20, 4, 2),
            ["stoch", "linear", s] => {
                let s = num(s, 's').ok_or_else(unknown)?;
                let width = match s {
                    50 => 100,
                    100 => 200,
                    5 => 50,
                    _ => 40,
                };
                let mut c = base(id, Problem::LinearStoch { dim: 3, s }, TimeMode::ForwardEuler, width, 6, 3);
                c.mesh.inv_h = vec![40, 80, 160, 320];
                c.optimizer.batch = 200_000;
                c
            }
            ["stoch", "burgers", s, method] => {
                let s = num(s, 's').ok_or_else(unknown)?;
                let (width, eps) = stochastic_burgers_setup(s).ok_or_else(unknown)?;
                let mut c = base(id, Problem::BurgersStoch { s, eps }, TimeMode::ForwardEuler, width, 6, 3);
                match *method {
                    "mc10k" => c.mesh.inv_h = vec![40, 80],
                    "mc50k" => {
                        c.mesh.inv_h = vec![40, 80, 160, 320];
                        c.optimizer.batch = 50_000;
                    }
                    "qmc" => {
                        c.mesh.inv_h = vec![80, 160, 320];
                        c.optimizer.batch = 50_000;
                        c.sampler.qmc = true;
                    }
                    "mlmc" => {
                        c.mesh.inv_h = vec![80, 160, 320];
                        c.optimizer.batch = 50_000;
                        c.sampler.mlmc = true;
                    }
                    _ => return Err(unknown()),
                }
                c
            }
            _ => return Err(unknown()),
        };
        cfg.name = id.to_string();
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Every preset id accepted by [`ExperimentConfig::preset`].
pub fn preset_names() -> Vec<String> {
    let mut v = Vec::new();
    for d in 1..=3 {
        for t in ["fe", "semi"] {
            v.push(format!("linear-d{d}-{t}"));
        }
    }
    v.extend(["linear-wide", "second-order", "second-order-deep", "burgers-fe", "burgers-semi"].map(String::from));
    for s in [50, 100] {
        v.push(format!("stoch-linear-s{s}"));
    }
    v.extend(["stoch-linear-s2", "stoch-linear-s5"].map(String::from));
    for s in [2, 5, 10, 50, 100, 200] {
        for m in ["mc10k", "mc50k", "qmc", "mlmc"] {
            v.push(format!("stoch-burgers-s{s}-{m}"));
        }
    }
    v
}

/// Width and `eps` of the stochastic Burgers setups (`eps s = 1/2`).
pub fn stochastic_burgers_setup(s: usize) -> Option<(usize, f64)> {
    Some(match s {
        2 => (40, 0.25),
        5 => (50, 0.1),
        10 => (50, 0.05),
        50 => (100, 0.01),
        100 => (200, 0.005),
        200 => (400, 0.0025),
        _ => return None,
    })
}

fn parse_time(s: &str) -> Option<TimeMode> {
    match s {
        "fe" => Some(TimeMode::ForwardEuler),
        "semi" => Some(TimeMode::SemiDiscrete),
        _ => None,
    }
}

fn base(name: &str, problem: Problem, time: TimeMode, width: usize, layers: usize, shortcuts: usize) -> ExperimentConfig {
    let stochastic = problem.is_stochastic();
    ExperimentConfig {
        name: name.to_string(),
        seed: 1,
        out_dir: default_out(),
        problem,
        scheme: SchemeConfig {
            time,
            order: 1,
            dt_rule: DtRule::EqualH,
            t_final: 1.0,
            numerical_flux: None,
            construction: None,
            boundary: None,
        },
        mesh: MeshConfig {
            inv_h: vec![10, 20, 40, 80, 160, 320],
        },
        network: NetworkConfig {
            hidden_layers: layers,
            width,
            shortcuts,
            activation: Activation::Tanh,
            output_bias: true,
        },
        optimizer: OptimizerConfig {
            lr: 1e-3,
            lr_decay: 0.5,
            lr_segments: 4,
            iterations: 20_000,
            batch: 10_000,
            inner_steps: 10,
        },
        sampler: SamplerConfig {
            distribution: None,
            qmc: false,
            mlmc: false,
            omega_batch: None,
            full_sweep: FullSweep::Auto,
        },
        eval: EvalConfig {
            window: 1000,
            surface: if stochastic { Surface::FinalTime } else { Surface::SpaceTime },
            eval_every: if stochastic { 100 } else { 1 },
            eval_omega: 1000,
            reference_samples: 100_000,
            log_every: 100,
            checkpoints: true,
        },
    }
}

fn second_order(name: &str, width: usize, layers: usize) -> ExperimentConfig {
    let mut c = base(name, Problem::LinearDet { dim: 1 }, TimeMode::ForwardEuler, width, layers, 2);
    c.scheme.order = 2;
    c.scheme.dt_rule = DtRule::HSquared;
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip() {
        for id in preset_names() {
            let cfg = ExperimentConfig::preset(&id).unwrap();
            let text = cfg.to_toml().unwrap();
            let back = ExperimentConfig::from_toml(&text).unwrap();
            assert_eq!(cfg, back, "{id}");
        }
    }

    #[test]
    fn published_defaults() {
        let c = ExperimentConfig::preset("linear-d1-fe").unwrap();
        assert_eq!(c.architecture().param_count(), 1341);
        assert_eq!(c.optimizer.batch, 10_000);
        assert_eq!(c.mesh.inv_h, vec![10, 20, 40, 80, 160, 320]);
        assert_eq!(ExperimentConfig::preset("linear-d2-semi").unwrap().architecture().param_count(), 5121);
        assert_eq!(ExperimentConfig::preset("linear-d3-fe").unwrap().architecture().param_count(), 11341);
        assert_eq!(ExperimentConfig::preset("stoch-linear-s50").unwrap().architecture().param_count(), 56101);
        assert_eq!(ExperimentConfig::preset("stoch-linear-s100").unwrap().architecture().param_count(), 222201);
        assert_eq!(ExperimentConfig::preset("stoch-burgers-s10-mc50k").unwrap().architecture().param_count(), 13451);
        assert_eq!(ExperimentConfig::preset("stoch-burgers-s2-qmc").unwrap().optimizer.batch, 50_000);
        assert_eq!(ExperimentConfig::preset("second-order").unwrap().scheme.dt_rule, DtRule::HSquared);
        assert!(matches!(ExperimentConfig::preset("linear-d4-fe"), Err(Error::Unknown { .. })));
    }

    #[test]
    fn desk_caps() {
        let c = ExperimentConfig::preset("burgers-fe").unwrap().desk();
        assert_eq!(c.mesh.inv_h, vec![10, 20, 40]);
        assert!(c.optimizer.iterations <= DESK_MAX_ITERATIONS);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = ExperimentConfig::preset("linear-d1-fe").unwrap();
        c.mesh.inv_h = vec![];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let text = ExperimentConfig::preset("linear-d1-fe").unwrap().to_toml().unwrap();
        assert!(ExperimentConfig::from_toml(&format!("{text}\nbogus = 1\n")).is_err());
        assert!(ExperimentConfig::from_toml("name = 3").is_err());
    }
}

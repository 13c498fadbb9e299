//! The hybrid DG / network solution and every residual and loss built on it.
//!
//! A residual sample touches a small stencil of coefficient nodes
//! `(network j, time level n, cell)`. A batch deduplicates the nodes, runs one
//! batched forward pass per network, evaluates the stencil kernels and chains
//! the node adjoints back through one batched backward pass per network.

use ndarray::Array2;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flux::{FluxSpec, NumericalFlux, ResolvedFlux};
use crate::mesh::UniformMesh;
use crate::network::MlpParams;
use crate::problem::{Boundary, Construction, Problem};
use crate::sampling::{full_sweep, mlmc_estimate, GridShape, MlmcEstimate, OmegaDistribution, ResidualIndex};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeMode {
    SemiDiscrete,
    ForwardEuler,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub time: TimeMode,
    /// 1 (piecewise constant) or 2 (piecewise linear).
    pub order: usize,
    pub dt: f64,
    pub t_final: f64,
    pub flux: FluxSpec,
    pub numerical_flux: NumericalFlux,
    /// Factor `c` in `c u_t + div f(u) = 0`.
    pub time_coeff: f64,
}

impl SchemeSpec {
    pub fn for_problem(problem: &Problem, time: TimeMode, order: usize, dt: f64) -> Self {
        SchemeSpec {
            time,
            order,
            dt,
            t_final: 1.0,
            flux: problem.flux(),
            numerical_flux: problem.default_numerical_flux(),
            time_coeff: problem.time_coeff(),
        }
    }

    /// Number of time steps `N_t = T / dt`.
    pub fn steps(&self) -> Result<usize> {
        let n = (self.t_final / self.dt).round();
        if !(n >= 1.0) || (n * self.dt - self.t_final).abs() > 1e-9 * self.t_final {
            return Err(Error::InvalidArgument(format!(
                "dt = {} does not divide T = {}",
                self.dt, self.t_final
            )));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.order) {
            return Err(Error::Unsupported(format!("scheme order {}", self.order)));
        }
        self.steps().map(|_| ())
    }
}

/// A mesh paired with a time discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub mesh: UniformMesh,
    pub scheme: SchemeSpec,
    pub steps: usize,
}

impl Level {
    pub fn new(mesh: UniformMesh, scheme: SchemeSpec) -> Result<Self> {
        scheme.validate()?;
        if scheme.order == 2 && mesh.dim() != 1 {
            return Err(Error::Unsupported("second-order scheme in more than one dimension".into()));
        }
        let steps = scheme.steps()?;
        Ok(Level { mesh, scheme, steps })
    }

    pub fn bases(&self) -> usize {
        self.scheme.order
    }

    pub fn grid(&self) -> GridShape {
        GridShape {
            cells: self.mesh.num_cells(),
            bases: self.bases(),
            steps: self.steps,
        }
    }

    /// Measure `h^d dt` of one residual.
    pub fn measure(&self) -> f64 {
        self.mesh.cell_volume() * self.scheme.dt
    }
}

/// Coefficients `U^j_i(t)` produced by one network per basis order.
#[derive(Debug, Clone)]
pub struct SolutionRep {
    pub problem: Problem,
    pub networks: Vec<MlpParams>,
    pub construction: Construction,
    pub boundary: Boundary,
}

impl SolutionRep {
    pub fn new(problem: Problem, networks: Vec<MlpParams>, construction: Construction, boundary: Boundary) -> Result<Self> {
        if networks.is_empty() || networks.len() > 2 {
            return Err(Error::InvalidArgument(format!(
                "need one or two networks, got {}",
                networks.len()
            )));
        }
        for net in &networks {
            if net.arch().input_dim != problem.input_dim() {
                return Err(Error::DimensionMismatch {
                    expected: problem.input_dim(),
                    got: net.arch().input_dim,
                });
            }
        }
        Ok(SolutionRep {
            problem,
            networks,
            construction,
            boundary,
        })
    }

    /// Basis order `K`.
    pub fn order(&self) -> usize {
        self.networks.len() - 1
    }

    fn input_row(&self, t: f64, x: &[f64], omega: Option<&[f64]>, out: &mut Vec<f64>) -> Result<()> {
        out.push(t);
        out.extend_from_slice(x);
        let s = self.problem.random_dim();
        if s > 0 {
            let w = omega.ok_or(Error::MissingOmega)?;
            if w.len() != s {
                return Err(Error::DimensionMismatch { expected: s, got: w.len() });
            }
            out.extend_from_slice(w);
        }
        Ok(())
    }

    /// Coefficient `U^j` at time `t` in the cell with (possibly one-off)
    /// multi-index `cell`.
    pub fn coeff(&self, mesh: &UniformMesh, t: f64, cell: &[i64], j: usize, omega: Option<&[f64]>) -> Result<f64> {
        let (x, g) = self.locate(mesh, cell, j, omega)?;
        if t == 0.0 {
            return Ok(g);
        }
        let mut row = Vec::new();
        self.input_row(t, &x, omega, &mut row)?;
        let n = self.networks[j].forward(&row)?;
        Ok(construct(self.construction, t, false, n, 0.0, g).u)
    }

    /// `d/dt U^j` at time `t`, exact through the network input gradient.
    pub fn coeff_time_derivative(
        &self,
        mesh: &UniformMesh,
        t: f64,
        cell: &[i64],
        j: usize,
        omega: Option<&[f64]>,
    ) -> Result<f64> {
        let (x, g) = self.locate(mesh, cell, j, omega)?;
        let mut row = Vec::new();
        self.input_row(t, &x, omega, &mut row)?;
        let (n, nt) = self.networks[j].forward_with_tangent(&row, 0)?;
        Ok(construct(self.construction, t, t == 0.0, n, nt, g).ut)
    }

    fn locate(&self, mesh: &UniformMesh, cell: &[i64], j: usize, omega: Option<&[f64]>) -> Result<(Vec<f64>, f64)> {
        if cell.len() != mesh.dim() {
            return Err(Error::DimensionMismatch { expected: mesh.dim(), got: cell.len() });
        }
        if j > self.order() {
            return Err(Error::BasisOrder { order: j, max: self.order() });
        }
        let idx = cell
            .iter()
            .map(|&i| self.boundary.wrap(i, mesh.cells_per_dim()))
            .collect::<Result<Vec<_>>>()?;
        let x = mesh.center(&idx);
        let g = self.problem.initial_coeff(j, &x, omega);
        Ok((x, g))
    }
}

/// Coefficient value and time derivative with their partials with respect to
/// the network output `N` and its time derivative `N_t`.
#[derive(Debug, Clone, Copy, Default)]
struct NodeVal {
    u: f64,
    ut: f64,
    du_dn: f64,
    dut_dn: f64,
    dut_dnt: f64,
}

#[inline]
fn construct(c: Construction, t: f64, at_t0: bool, n: f64, nt: f64, g: f64) -> NodeVal {
    match c {
        Construction::TimeFactor => NodeVal {
            u: t * n + g,
            ut: n + t * nt,
            du_dn: t,
            dut_dn: 1.0,
            dut_dnt: t,
        },
        Construction::ExactAtT0 if at_t0 => NodeVal {
            u: g,
            ut: nt,
            du_dn: 0.0,
            dut_dn: 0.0,
            dut_dnt: 1.0,
        },
        Construction::ExactAtT0 => NodeVal {
            u: n,
            ut: nt,
            du_dn: 1.0,
            dut_dn: 0.0,
            dut_dnt: 1.0,
        },
    }
}

/// Coefficient value from a raw network output `n` at time `t`; at `t = 0`
/// both constructions return the initial datum `g`.
pub fn represented_value(c: Construction, t: f64, n: f64, g: f64) -> f64 {
    if t == 0.0 {
        g
    } else {
        construct(c, t, false, n, 0.0, g).u
    }
}

/// Stencil slots. First order: centre, centre at `n+1`, then per axis the
/// left and right neighbours. Second order: the four 1D slots for `U^0`
/// followed by the same four for `U^1`.
const MAX_SLOTS: usize = 8;
const SLOT_NOW: usize = 0;
const SLOT_NEXT: usize = 1;
const SLOT_LEFT: usize = 2;
const SLOT_RIGHT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    Unused,
    Fixed(f64),
    Net { net: u8, row: u32 },
}

/// One residual sample of a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSpec {
    pub level: usize,
    pub index: ResidualIndex,
    /// Row of [`SampleSet::omegas`] for stochastic problems.
    pub omega: Option<usize>,
    /// Multiplier of the squared residual in `loss^2`.
    pub weight: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SampleSet {
    pub samples: Vec<SampleSpec>,
    pub omegas: Vec<Vec<f64>>,
}

impl SampleSet {
    /// Every residual of `level` once, each weighted by `h^d dt`.
    pub fn full_grid(level_id: usize, level: &Level, omega: Option<Vec<f64>>) -> Self {
        let w = level.measure();
        let has_omega = omega.is_some();
        SampleSet {
            samples: full_sweep(level.grid())
                .into_iter()
                .map(|index| SampleSpec {
                    level: level_id,
                    index,
                    omega: has_omega.then_some(0),
                    weight: w,
                })
                .collect(),
            omegas: omega.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone)]
struct PreparedSample {
    spec: SampleSpec,
    flux: ResolvedFlux,
    slots: [Slot; MAX_SLOTS],
}

/// A batch with its node table resolved, reusable across parameter updates.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    inputs: Vec<Array2<f64>>,
    meta: Vec<Vec<(f64, bool, f64)>>,
    samples: Vec<PreparedSample>,
    tangent: bool,
}

impl PreparedBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct network evaluations per network.
    pub fn node_counts(&self) -> Vec<usize> {
        self.meta.iter().map(Vec::len).collect()
    }
}

#[derive(Debug, Clone)]
pub struct LossEval {
    /// Weighted sum of squared residuals.
    pub loss_sq: f64,
    /// `sqrt(max(loss_sq, 0))`.
    pub loss: f64,
    /// Gradient of `loss` per network; empty for networks not requested.
    pub grads: Vec<Vec<f64>>,
}

/// Residual assembly over one or more levels sharing a solution.
#[derive(Debug, Clone)]
pub struct LossEngine<'a> {
    pub levels: &'a [Level],
}

impl<'a> LossEngine<'a> {
    pub fn new(levels: &'a [Level]) -> Self {
        LossEngine { levels }
    }

    pub fn prepare(&self, rep: &SolutionRep, set: &SampleSet) -> Result<PreparedBatch> {
        let nets = rep.networks.len();
        let mut rows: Vec<Vec<f64>> = vec![Vec::new(); nets];
        let mut meta: Vec<Vec<(f64, bool, f64)>> = vec![Vec::new(); nets];
        let mut table: FxHashMap<(u64, u32), u32> = FxHashMap::default();
        let mut samples = Vec::with_capacity(set.samples.len());
        let mut tangent = false;
        let mut x = Vec::with_capacity(3);
        for spec in &set.samples {
            let level = self.levels.get(spec.level).ok_or_else(|| {
                Error::InvalidArgument(format!("sample refers to missing level {}", spec.level))
            })?;
            let scheme = &level.scheme;
            let semi = scheme.time == TimeMode::SemiDiscrete;
            if scheme.order != rep.networks.len() {
                return Err(Error::InvalidArgument(format!(
                    "order-{} scheme needs {} networks, got {}",
                    scheme.order,
                    scheme.order,
                    rep.networks.len()
                )));
            }
            if semi {
                tangent = true;
                if let Some(bad) = rep.networks.iter().find(|n| !n.arch().activation.is_smooth()) {
                    return Err(Error::Unsupported(format!(
                        "semi-discrete residual needs a smooth activation, got {}",
                        bad.arch().activation
                    )));
                }
            }
            let ResidualIndex { cell, basis, step } = spec.index;
            if cell >= level.mesh.num_cells() || basis >= level.bases() || step >= level.steps {
                return Err(Error::InvalidArgument(format!("sample {:?} outside the grid", spec.index)));
            }
            let omega = match (rep.problem.is_stochastic(), spec.omega) {
                (false, _) => None,
                (true, Some(k)) => Some(
                    set.omegas
                        .get(k)
                        .ok_or_else(|| Error::InvalidArgument(format!("missing omega row {k}")))?
                        .as_slice(),
                ),
                (true, None) => return Err(Error::MissingOmega),
            };
            let flux = scheme.flux.resolve(omega)?;
            let (dep_minus, dep_plus) = flux.dependence(scheme.numerical_flux);
            let mut slots = [Slot::Unused; MAX_SLOTS];
            let mut node = |net: usize, n: usize, c: usize| -> Result<Slot> {
                let t = n as f64 * scheme.dt;
                x.clear();
                let idx = level.mesh.multi_index(c);
                x.extend(idx.iter().map(|&i| level.mesh.center_1d(i)));
                let g = rep.problem.initial_coeff(net, &x, omega);
                if n == 0 && !semi {
                    return Ok(Slot::Fixed(g));
                }
                let key = ((spec.level as u64) << 60) | ((net as u64) << 56) | ((n as u64) << 32) | c as u64;
                let okey = spec.omega.map_or(u32::MAX, |k| k as u32);
                let next = meta[net].len() as u32;
                let row = *table.entry((key, okey)).or_insert(next);
                if row == next {
                    rep.input_row(t, &x, omega, &mut rows[net])?;
                    meta[net].push((t, n == 0, g));
                }
                Ok(Slot::Net { net: net as u8, row })
            };
            let b = rep.boundary;
            let mesh = &level.mesh;
            for net in 0..scheme.order {
                let base = 4 * net;
                if scheme.order == 1 {
                    slots[SLOT_NOW] = node(0, step, cell)?;
                    if !semi {
                        slots[SLOT_NEXT] = node(0, step + 1, cell)?;
                    }
                    for axis in 0..mesh.dim() {
                        if dep_minus {
                            slots[2 + 2 * axis] = node(0, step, b.neighbor(mesh, cell, axis, -1))?;
                        }
                        if dep_plus {
                            slots[3 + 2 * axis] = node(0, step, b.neighbor(mesh, cell, axis, 1))?;
                        }
                    }
                } else {
                    slots[base + SLOT_NOW] = node(net, step, cell)?;
                    if !semi {
                        slots[base + SLOT_NEXT] = node(net, step + 1, cell)?;
                    }
                    if dep_minus {
                        slots[base + SLOT_LEFT] = node(net, step, b.neighbor(mesh, cell, 0, -1))?;
                    }
                    if dep_plus {
                        slots[base + SLOT_RIGHT] = node(net, step, b.neighbor(mesh, cell, 0, 1))?;
                    }
                }
            }
            let mut spec = *spec;
            if scheme.order == 2 {
                // The second-order residuals carry an extra factor h relative
                // to the first-order ones; the loss measures r / h.
                spec.weight /= mesh.h() * mesh.h();
            }
            samples.push(PreparedSample { spec, flux, slots });
        }
        let inputs = rows
            .into_iter()
            .zip(&meta)
            .map(|(r, m)| {
                let n = m.len();
                Array2::from_shape_vec((n, rep.problem.input_dim()), r).expect("row width")
            })
            .collect();
        Ok(PreparedBatch {
            inputs,
            meta,
            samples,
            tangent,
        })
    }

    fn node_values(&self, rep: &SolutionRep, batch: &PreparedBatch) -> (Vec<Vec<NodeVal>>, Vec<Option<crate::network::BatchTape>>) {
        let mut vals = Vec::with_capacity(rep.networks.len());
        let mut tapes = Vec::with_capacity(rep.networks.len());
        for (j, net) in rep.networks.iter().enumerate() {
            if batch.meta[j].is_empty() {
                vals.push(Vec::new());
                tapes.push(None);
                continue;
            }
            let tape = net.forward_batch(batch.inputs[j].view(), batch.tangent.then_some(0));
            let n = tape.values();
            let nt = tape.tangents();
            vals.push(
                batch.meta[j]
                    .iter()
                    .enumerate()
                    .map(|(r, &(t, at_t0, g))| construct(rep.construction, t, at_t0, n[r], nt.map_or(0.0, |v| v[r]), g))
                    .collect(),
            );
            tapes.push(Some(tape));
        }
        (vals, tapes)
    }

    /// Literal residual of every sample (second-order residuals unscaled).
    pub fn residuals(&self, rep: &SolutionRep, batch: &PreparedBatch) -> Result<Vec<f64>> {
        let (vals, _) = self.node_values(rep, batch);
        let mut partials = [(0.0, 0.0); MAX_SLOTS];
        batch
            .samples
            .iter()
            .map(|s| {
                let v = gather(s, &vals);
                let r = self.kernel(s, &v, &mut partials);
                self.check_finite(s, r)
            })
            .collect()
    }

    fn check_finite(&self, s: &PreparedSample, r: f64) -> Result<f64> {
        if r.is_finite() {
            Ok(r)
        } else {
            Err(Error::NonFiniteResidual {
                cell: self.levels[s.spec.level].mesh.multi_index(s.spec.index.cell),
                basis: s.spec.index.basis,
                step: s.spec.index.step,
                value: r,
            })
        }
    }

    /// Loss and, for networks flagged in `want_grad`, its parameter gradient.
    pub fn evaluate(&self, rep: &SolutionRep, batch: &PreparedBatch, want_grad: &[bool]) -> Result<LossEval> {
        let nets = rep.networks.len();
        let (vals, tapes) = self.node_values(rep, batch);
        let any_grad = want_grad.iter().any(|&g| g);
        let mut adj: Vec<Vec<f64>> = vals.iter().map(|v| vec![0.0; if any_grad { v.len() } else { 0 }]).collect();
        let mut adj_t = adj.clone();
        let mut loss_sq = 0.0;
        let mut partials = [(0.0, 0.0); MAX_SLOTS];
        for s in &batch.samples {
            let v = gather(s, &vals);
            let r = self.kernel(s, &v, &mut partials);
            self.check_finite(s, r)?;
            loss_sq += s.spec.weight * r * r;
            if !any_grad {
                continue;
            }
            let scale = 2.0 * s.spec.weight * r;
            for (slot, &(du, dut)) in s.slots.iter().zip(&partials) {
                if let Slot::Net { net, row } = *slot {
                    let (net, row) = (net as usize, row as usize);
                    if !want_grad.get(net).copied().unwrap_or(false) {
                        continue;
                    }
                    let nv = &vals[net][row];
                    adj[net][row] += scale * (du * nv.du_dn + dut * nv.dut_dn);
                    adj_t[net][row] += scale * dut * nv.dut_dnt;
                }
            }
        }
        if !loss_sq.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: 0, value: loss_sq });
        }
        if loss_sq < 0.0 {
            log::warn!("loss^2 estimate {loss_sq} is negative; clamped to zero");
        }
        let loss = loss_sq.max(0.0).sqrt();
        let mut grads = vec![Vec::new(); nets];
        for j in 0..nets {
            if !want_grad.get(j).copied().unwrap_or(false) {
                continue;
            }
            let mut g = vec![0.0; rep.networks[j].len()];
            if let Some(tape) = &tapes[j] {
                if loss > 0.0 {
                    let k = 0.5 / loss;
                    adj[j].iter_mut().for_each(|a| *a *= k);
                    adj_t[j].iter_mut().for_each(|a| *a *= k);
                    let at = batch.tangent.then_some(adj_t[j].as_slice());
                    rep.networks[j].backward_batch(tape, &adj[j], at, &mut g, false);
                }
            }
            grads[j] = g;
        }
        Ok(LossEval { loss_sq, loss, grads })
    }

    /// Residual of one sample given its stencil values; fills `partials`
    /// with `(dr/du, dr/du_t)` per slot.
    fn kernel(&self, s: &PreparedSample, v: &[NodeVal; MAX_SLOTS], partials: &mut [(f64, f64); MAX_SLOTS]) -> f64 {
        let level = &self.levels[s.spec.level];
        let scheme = &level.scheme;
        let h = level.mesh.h();
        *partials = [(0.0, 0.0); MAX_SLOTS];
        if scheme.order == 1 {
            first_order_kernel(scheme, h, level.mesh.dim(), &s.flux, v, partials)
        } else {
            second_order_kernel(scheme, h, s.spec.index.basis, &s.flux, v, partials)
        }
    }
}

fn gather(s: &PreparedSample, vals: &[Vec<NodeVal>]) -> [NodeVal; MAX_SLOTS] {
    let mut out = [NodeVal::default(); MAX_SLOTS];
    for (o, slot) in out.iter_mut().zip(&s.slots) {
        *o = match *slot {
            Slot::Unused => NodeVal::default(),
            Slot::Fixed(g) => NodeVal { u: g, ..NodeVal::default() },
            Slot::Net { net, row } => vals[net as usize][row as usize],
        };
    }
    out
}

/// `c D_t U_i + sum_k (F(U_i, U_{i+e_k}) - F(U_{i-e_k}, U_i)) / h`.
fn first_order_kernel(
    scheme: &SchemeSpec,
    h: f64,
    dim: usize,
    flux: &ResolvedFlux,
    v: &[NodeVal; MAX_SLOTS],
    p: &mut [(f64, f64); MAX_SLOTS],
) -> f64 {
    let c = scheme.time_coeff;
    let mut r = match scheme.time {
        TimeMode::ForwardEuler => {
            let k = c / scheme.dt;
            p[SLOT_NOW].0 -= k;
            p[SLOT_NEXT].0 += k;
            k * (v[SLOT_NEXT].u - v[SLOT_NOW].u)
        }
        TimeMode::SemiDiscrete => {
            p[SLOT_NOW].1 += c;
            c * v[SLOT_NOW].ut
        }
    };
    let ui = v[SLOT_NOW].u;
    let inv_h = 1.0 / h;
    for axis in 0..dim {
        let (l, rt) = (2 + 2 * axis, 3 + 2 * axis);
        let (fr, fr_m, fr_p) = flux.numerical(scheme.numerical_flux, ui, v[rt].u);
        let (fl, fl_m, fl_p) = flux.numerical(scheme.numerical_flux, v[l].u, ui);
        r += (fr - fl) * inv_h;
        p[SLOT_NOW].0 += (fr_m - fl_p) * inv_h;
        p[rt].0 += fr_p * inv_h;
        p[l].0 -= fl_m * inv_h;
    }
    r
}

/// Piecewise-linear residual for basis `j` in 1D:
/// `c M_j D_t U^j - (f(u_h), phi^j') + F_r phi^j(x_r^-) - F_l phi^j(x_l^+)`.
fn second_order_kernel(
    scheme: &SchemeSpec,
    h: f64,
    j: usize,
    flux: &ResolvedFlux,
    v: &[NodeVal; MAX_SLOTS],
    p: &mut [(f64, f64); MAX_SLOTS],
) -> f64 {
    const U1: usize = 4;
    let c = scheme.time_coeff;
    let half = 0.5 * h;
    let mass = if j == 0 { h } else { h * h * h / 12.0 };
    let me = 4 * j;
    let mut r = match scheme.time {
        TimeMode::ForwardEuler => {
            let k = c * mass / scheme.dt;
            p[me + SLOT_NOW].0 -= k;
            p[me + SLOT_NEXT].0 += k;
            k * (v[me + SLOT_NEXT].u - v[me + SLOT_NOW].u)
        }
        TimeMode::SemiDiscrete => {
            p[me + SLOT_NOW].1 += c * mass;
            c * mass * v[me + SLOT_NOW].ut
        }
    };
    let (u0, u1) = (v[SLOT_NOW].u, v[U1 + SLOT_NOW].u);
    // Right interface: own right trace against the neighbour's left trace.
    let rm = u0 + half * u1;
    let rp = v[SLOT_RIGHT].u - half * v[U1 + SLOT_RIGHT].u;
    let (fr, fr_m, fr_p) = flux.numerical(scheme.numerical_flux, rm, rp);
    // Left interface.
    let lm = v[SLOT_LEFT].u + half * v[U1 + SLOT_LEFT].u;
    let lp = u0 - half * u1;
    let (fl, fl_m, fl_p) = flux.numerical(scheme.numerical_flux, lm, lp);
    // phi^j traces at the right and left ends of the cell.
    let (tr, tl) = if j == 0 { (1.0, 1.0) } else { (half, -half) };
    r += fr * tr - fl * tl;
    let dfr = |p: &mut [(f64, f64); MAX_SLOTS], k: f64| {
        p[SLOT_NOW].0 += k * fr_m;
        p[U1 + SLOT_NOW].0 += k * fr_m * half;
        p[SLOT_RIGHT].0 += k * fr_p;
        p[U1 + SLOT_RIGHT].0 -= k * fr_p * half;
    };
    dfr(p, tr);
    p[SLOT_LEFT].0 -= tl * fl_m;
    p[U1 + SLOT_LEFT].0 -= tl * fl_m * half;
    p[SLOT_NOW].0 -= tl * fl_p;
    p[U1 + SLOT_NOW].0 += tl * fl_p * half;
    if j == 1 {
        // Volume term (f(U^0 + U^1 s), 1) over the cell.
        let (vol, d0, d1) = match *flux {
            ResolvedFlux::Linear(a) => (a * h * u0, a * h, 0.0),
            ResolvedFlux::Burgers => {
                let m2 = h * h * h / 12.0;
                (0.5 * (h * u0 * u0 + m2 * u1 * u1), h * u0, m2 * u1)
            }
        };
        r -= vol;
        p[SLOT_NOW].0 -= d0;
        p[U1 + SLOT_NOW].0 -= d1;
    }
    r
}

/// Squared-residual sum of `set` when the coefficients come from a known
/// field `field(level, j, step, cell, omega) -> (U, dU/dt)` instead of
/// networks. Used for truncation and consistency measurements.
pub fn field_loss_sq(
    levels: &[Level],
    boundary: Boundary,
    set: &SampleSet,
    field: impl Fn(usize, usize, usize, usize, Option<&[f64]>) -> (f64, f64),
) -> Result<f64> {
    let r = field_residuals(levels, boundary, set, field)?;
    Ok(set
        .samples
        .iter()
        .zip(&r)
        .map(|(s, r)| {
            let scale = if levels[s.level].scheme.order == 2 {
                levels[s.level].mesh.h().powi(-2)
            } else {
                1.0
            };
            s.weight * scale * r * r
        })
        .sum())
}

/// Literal residuals of `set` for coefficients given by `field`.
pub fn field_residuals(
    levels: &[Level],
    boundary: Boundary,
    set: &SampleSet,
    field: impl Fn(usize, usize, usize, usize, Option<&[f64]>) -> (f64, f64),
) -> Result<Vec<f64>> {
    let engine = LossEngine::new(levels);
    let mut partials = [(0.0, 0.0); MAX_SLOTS];
    let mut out = Vec::with_capacity(set.samples.len());
    for spec in &set.samples {
        let level = &levels[spec.level];
        let scheme = &level.scheme;
        let omega = spec.omega.map(|k| set.omegas[k].as_slice());
        let flux = scheme.flux.resolve(omega)?;
        let ResidualIndex { cell, step, .. } = spec.index;
        let mut v = [NodeVal::default(); MAX_SLOTS];
        let mesh = &level.mesh;
        let at = |j: usize, n: usize, c: usize| {
            let (u, ut) = field(spec.level, j, n, c, omega);
            NodeVal { u, ut, ..NodeVal::default() }
        };
        for j in 0..scheme.order {
            if scheme.order == 1 {
                v[SLOT_NOW] = at(0, step, cell);
                v[SLOT_NEXT] = at(0, step + 1, cell);
                for axis in 0..mesh.dim() {
                    v[2 + 2 * axis] = at(0, step, boundary.neighbor(mesh, cell, axis, -1));
                    v[3 + 2 * axis] = at(0, step, boundary.neighbor(mesh, cell, axis, 1));
                }
            } else {
                let b = 4 * j;
                v[b + SLOT_NOW] = at(j, step, cell);
                v[b + SLOT_NEXT] = at(j, step + 1, cell);
                v[b + SLOT_LEFT] = at(j, step, boundary.neighbor(mesh, cell, 0, -1));
                v[b + SLOT_RIGHT] = at(j, step, boundary.neighbor(mesh, cell, 0, 1));
            }
        }
        let s = PreparedSample {
            spec: *spec,
            flux,
            slots: [Slot::Unused; MAX_SLOTS],
        };
        let r = engine.kernel(&s, &v, &mut partials);
        out.push(engine.check_finite(&s, r)?);
    }
    Ok(out)
}

/// Coefficients of the exact solution sampled at cell centres: the point
/// value for `j = 0` and the `x`-derivative for `j = 1`, with the exact time
/// derivative.
pub fn exact_projection(problem: &Problem, level: &Level, j: usize, step: usize, cell: usize, omega: Option<&[f64]>) -> (f64, f64) {
    let t = step as f64 * level.scheme.dt;
    let x = level.mesh.center(&level.mesh.multi_index(cell));
    let u = problem.exact_coeff(j, t, &x, omega);
    let ut = if problem.is_burgers() {
        0.0
    } else {
        // Linear problems: d/dt sin(a t + phase) = a cos(...).
        let a = problem.linear_phase_speed(omega);
        let phase = a * t + 2.0 * std::f64::consts::PI * x.iter().sum::<f64>();
        match j {
            0 => a * phase.cos(),
            _ => -2.0 * std::f64::consts::PI * a * phase.sin(),
        }
    };
    (u, ut)
}

/// Full-grid loss `sqrt(h^d dt sum r^2)` (second-order residuals divided by
/// `h`) with the exact solution projected onto the coefficients.
pub fn exact_loss(problem: &Problem, level: &Level, omega: Option<Vec<f64>>) -> Result<f64> {
    let levels = std::slice::from_ref(level);
    let set = SampleSet::full_grid(0, level, omega);
    let boundary = problem.default_boundary();
    field_loss_sq(levels, boundary, &set, |_, j, n, c, w| {
        exact_projection(problem, level, j, n, c, w)
    })
    .map(f64::sqrt)
}

fn single(rep: &SolutionRep, level: &Level, index: ResidualIndex, omega: Option<&[f64]>) -> Result<f64> {
    let levels = std::slice::from_ref(level);
    let engine = LossEngine::new(levels);
    let set = SampleSet {
        samples: vec![SampleSpec {
            level: 0,
            index,
            omega: omega.map(|_| 0),
            weight: 1.0,
        }],
        omegas: omega.map(|w| vec![w.to_vec()]).unwrap_or_default(),
    };
    let batch = engine.prepare(rep, &set)?;
    Ok(engine.residuals(rep, &batch)?[0])
}

fn require(level: &Level, time: TimeMode, order: usize) -> Result<()> {
    if level.scheme.time != time || level.scheme.order != order {
        return Err(Error::InvalidArgument(format!(
            "expected a {time:?} order-{order} scheme, got {:?} order {}",
            level.scheme.time, level.scheme.order
        )));
    }
    Ok(())
}

/// Forward-Euler first-order residual at `(cell, step)`.
pub fn residual_fe_first_order(rep: &SolutionRep, level: &Level, cell: usize, step: usize, omega: Option<&[f64]>) -> Result<f64> {
    require(level, TimeMode::ForwardEuler, 1)?;
    single(rep, level, ResidualIndex { cell, basis: 0, step }, omega)
}

/// Semi-discrete first-order residual at `(cell, step)`.
pub fn residual_semi_first_order(rep: &SolutionRep, level: &Level, cell: usize, step: usize, omega: Option<&[f64]>) -> Result<f64> {
    require(level, TimeMode::SemiDiscrete, 1)?;
    single(rep, level, ResidualIndex { cell, basis: 0, step }, omega)
}

/// Forward-Euler Godunov residual for Burgers at `(cell, step)`.
pub fn residual_fe_burgers(rep: &SolutionRep, level: &Level, cell: usize, step: usize, omega: Option<&[f64]>) -> Result<f64> {
    require(level, TimeMode::ForwardEuler, 1)?;
    if level.scheme.numerical_flux != NumericalFlux::Godunov || rep.boundary != Boundary::Reflecting {
        return Err(Error::InvalidArgument("Burgers residual needs the Godunov flux and reflecting boundaries".into()));
    }
    single(rep, level, ResidualIndex { cell, basis: 0, step }, omega)
}

/// The pair `(r0, r1)` of the forward-Euler piecewise-linear scheme.
pub fn residual_second_order(rep: &SolutionRep, level: &Level, cell: usize, step: usize) -> Result<(f64, f64)> {
    require(level, TimeMode::ForwardEuler, 2)?;
    Ok((
        single(rep, level, ResidualIndex { cell, basis: 0, step }, None)?,
        single(rep, level, ResidualIndex { cell, basis: 1, step }, None)?,
    ))
}

/// Telescoping estimate of `E_w[loss^2]` on nested levels (coarse first),
/// each level's loss taken over its full grid.
pub fn mlmc_loss_estimate<R: Rng>(
    rep: &SolutionRep,
    levels: &[Level],
    counts: &[usize],
    dist: &OmegaDistribution,
    rng: &mut R,
) -> Result<MlmcEstimate> {
    if counts.len() != levels.len() {
        return Err(Error::DimensionMismatch { expected: levels.len(), got: counts.len() });
    }
    let engine = LossEngine::new(levels);
    let mut failure = None;
    let est = mlmc_estimate(counts, dist, rng, |l, w| {
        let set = SampleSet::full_grid(l, &levels[l], Some(w.to_vec()));
        match engine.prepare(rep, &set).and_then(|b| engine.evaluate(rep, &b, &[])) {
            Ok(e) => e.loss_sq,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(est),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, Architecture};
    use crate::sampling::{sample_indices, stream, StreamKind};
    use std::f64::consts::PI;

    fn level(problem: &Problem, n: usize, time: TimeMode, order: usize, dt: f64) -> Level {
        let (lo, hi) = problem.domain();
        let mesh = UniformMesh::new(problem.dim(), n, lo, hi).unwrap();
        Level::new(mesh, SchemeSpec::for_problem(problem, time, order, dt)).unwrap()
    }

    fn rep(problem: Problem, order: usize, width: usize, seed: u64) -> SolutionRep {
        let arch = Architecture::new(problem.input_dim(), 2, width, 1);
        let nets = (0..=order)
            .map(|j| MlpParams::init(arch, seed + j as u64).unwrap())
            .collect();
        SolutionRep::new(
            problem,
            nets,
            problem.default_construction(),
            problem.default_boundary(),
        )
        .unwrap()
    }

    fn full_loss(r: &SolutionRep, levels: &[Level], omega: Option<Vec<f64>>) -> f64 {
        let engine = LossEngine::new(levels);
        let set = SampleSet::full_grid(0, &levels[0], omega);
        let b = engine.prepare(r, &set).unwrap();
        engine.evaluate(r, &b, &[]).unwrap().loss
    }

    #[test]
    fn unit_residuals_give_unit_loss() {
        let p = Problem::LinearDet { dim: 1 };
        let n = 8;
        let lv = level(&p, n, TimeMode::ForwardEuler, 1, 1.0 / 5.0);
        let set = SampleSet::full_grid(0, &lv, None);
        let c = p.time_coeff();
        let dt = lv.scheme.dt;
        let loss_sq = field_loss_sq(std::slice::from_ref(&lv), Boundary::Periodic, &set, |_, _, step, _, _| {
            (step as f64 * dt / c, 0.0)
        })
        .unwrap();
        assert!((loss_sq - 1.0).abs() < 1e-12, "{loss_sq}");
        let zero = field_loss_sq(std::slice::from_ref(&lv), Boundary::Periodic, &set, |_, _, _, _, _| (0.0, 0.0)).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn coefficient_rules() {
        let p = Problem::LinearDet { dim: 1 };
        let r = rep(p, 0, 4, 3);
        let mesh = UniformMesh::new(1, 10, 0.0, 1.0).unwrap();
        let g = (2.0 * PI * mesh.center_1d(7)).sin();
        assert_eq!(r.coeff(&mesh, 0.0, &[7], 0, None).unwrap(), g);
        let a = r.coeff(&mesh, 0.3, &[10], 0, None).unwrap();
        let b = r.coeff(&mesh, 0.3, &[0], 0, None).unwrap();
        assert_eq!(a, b);
        let a = r.coeff(&mesh, 0.3, &[-1], 0, None).unwrap();
        let b = r.coeff(&mesh, 0.3, &[9], 0, None).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            r.coeff(&mesh, 0.3, &[11], 0, None),
            Err(Error::IndexOutOfRange { .. })
        ));

        let bp = Problem::BurgersDet;
        let br = rep(bp, 0, 4, 3);
        let bm = UniformMesh::new(1, 4, -1.0, 1.0).unwrap();
        assert_eq!(bm.center_1d(1), -0.25);
        assert_eq!(br.coeff(&bm, 0.0, &[1], 0, None).unwrap(), 1.0);
        assert_eq!(br.coeff(&bm, 0.5, &[-1], 0, None).unwrap(), br.coeff(&bm, 0.5, &[0], 0, None).unwrap());
        assert_eq!(br.coeff(&bm, 0.5, &[4], 0, None).unwrap(), br.coeff(&bm, 0.5, &[3], 0, None).unwrap());
    }

    #[test]
    fn semi_time_derivative() {
        let p = Problem::LinearDet { dim: 1 };
        let r = rep(p, 0, 6, 5);
        let mesh = UniformMesh::new(1, 10, 0.0, 1.0).unwrap();
        for &t in &[0.2, 0.5, 0.9] {
            let d = 1e-5;
            let fd = (r.coeff(&mesh, t + d, &[3], 0, None).unwrap() - r.coeff(&mesh, t - d, &[3], 0, None).unwrap()) / (2.0 * d);
            let ad = r.coeff_time_derivative(&mesh, t, &[3], 0, None).unwrap();
            assert!((fd - ad).abs() <= 1e-6, "{fd} {ad}");
        }
        // At t = 0 the time derivative is the raw network output.
        let x = mesh.center_1d(3);
        let n0 = r.networks[0].forward(&[0.0, x]).unwrap();
        assert!((r.coeff_time_derivative(&mesh, 0.0, &[3], 0, None).unwrap() - n0).abs() < 1e-15);

        // Constant network output c.
        let arch = Architecture::new(2, 2, 4, 1);
        let mut data = vec![0.0; arch.param_count()];
        *data.last_mut().unwrap() = 0.7;
        let cr = SolutionRep::new(p, vec![MlpParams::from_flat(arch, data).unwrap()], Construction::TimeFactor, Boundary::Periodic).unwrap();
        assert!((cr.coeff_time_derivative(&mesh, 0.4, &[2], 0, None).unwrap() - 0.7).abs() < 1e-15);

        // Kinked activations are rejected.
        let relu = Architecture::new(2, 2, 4, 1).with_activation(Activation::Relu);
        let rr = SolutionRep::new(p, vec![MlpParams::init(relu, 1).unwrap()], Construction::TimeFactor, Boundary::Periodic).unwrap();
        let lv = level(&p, 10, TimeMode::SemiDiscrete, 1, 0.1);
        assert!(matches!(
            residual_semi_first_order(&rr, &lv, 2, 3, None),
            Err(Error::Unsupported(_))
        ));
        assert!(residual_semi_first_order(&r, &lv, 2, 3, None).is_ok());
    }

    #[test]
    fn first_order_matches_hand_formula() {
        let p = Problem::LinearDet { dim: 1 };
        let r = rep(p, 0, 5, 9);
        let lv = level(&p, 10, TimeMode::ForwardEuler, 1, 0.1);
        let m = &lv.mesh;
        let u = |n: usize, i: i64| r.coeff(m, n as f64 * 0.1, &[i], 0, None).unwrap();
        for (cell, step) in [(0usize, 0usize), (4, 3), (9, 9)] {
            let i = cell as i64;
            let want = 2.0 * PI * (u(step + 1, i) - u(step, i)) / 0.1 - (u(step, i + 1) - u(step, i)) / 0.1;
            let got = residual_fe_first_order(&r, &lv, cell, step, None).unwrap();
            assert!((want - got).abs() < 1e-11 * want.abs().max(1.0), "{want} {got}");
        }
        let semi = level(&p, 10, TimeMode::SemiDiscrete, 1, 0.1);
        let t = 0.3;
        let want = 2.0 * PI * r.coeff_time_derivative(m, t, &[4], 0, None).unwrap() - (u(3, 5) - u(3, 4)) / 0.1;
        let got = residual_semi_first_order(&r, &semi, 4, 3, None).unwrap();
        assert!((want - got).abs() < 1e-11 * want.abs().max(1.0));
        assert!(residual_semi_first_order(&r, &lv, 4, 3, None).is_err());
    }

    #[test]
    fn zero_network_gives_classical_truncation_in_3d() {
        let p = Problem::LinearDet { dim: 3 };
        let arch = Architecture::new(4, 2, 3, 1);
        let zero = MlpParams::zeros(arch).unwrap();
        let r = SolutionRep::new(p, vec![zero], Construction::TimeFactor, Boundary::Periodic).unwrap();
        let lv = level(&p, 5, TimeMode::ForwardEuler, 1, 0.2);
        let m = &lv.mesh;
        let g = |i: [usize; 3]| (2.0 * PI * m.center(&i).iter().sum::<f64>()).sin();
        for cell in [0usize, 31, 124] {
            let i = m.multi_index(cell);
            let ii = [i[0], i[1], i[2]];
            // U^1 = dt * 0 + g, so the time term vanishes.
            let mut want = 0.0;
            for k in 0..3 {
                let mut j = ii;
                j[k] = (j[k] + 1) % 5;
                want -= (g(j) - g(ii)) / 0.2;
            }
            let got = residual_fe_first_order(&r, &lv, cell, 0, None).unwrap();
            assert!((want - got).abs() < 1e-12, "{want} {got}");
        }
    }

    #[test]
    fn burgers_single_cell_flux() {
        let p = Problem::BurgersDet;
        let lv = level(&p, 8, TimeMode::ForwardEuler, 1, 0.25);
        let set = SampleSet {
            samples: vec![SampleSpec { level: 0, index: ResidualIndex { cell: 4, basis: 0, step: 1 }, omega: None, weight: 1.0 }],
            omegas: vec![],
        };
        // Time-constant state: U = 1 left of cell 4, 0 from cell 4 on.
        let r = field_residuals(std::slice::from_ref(&lv), Boundary::Reflecting, &set, |_, _, _, c, _| {
            (if c < 4 { 1.0 } else { 0.0 }, 0.0)
        })
        .unwrap();
        assert!((r[0] + 0.5 / lv.mesh.h()).abs() < 1e-14);
        // Constant state: only the time difference survives.
        let r = field_residuals(std::slice::from_ref(&lv), Boundary::Reflecting, &set, |_, _, n, _, _| {
            (0.3 + n as f64, 0.0)
        })
        .unwrap();
        assert!((r[0] - 1.0 / 0.25).abs() < 1e-12);
    }

    #[test]
    fn burgers_exact_shock_away_from_front() {
        // Shock speed 1/2 with dt = 2h moves exactly one cell per step.
        let p = Problem::BurgersDet;
        let n = 40;
        let lv = level(&p, n, TimeMode::ForwardEuler, 1, 2.0 * 2.0 / n as f64);
        let set = SampleSet::full_grid(0, &lv, None);
        let r = field_residuals(std::slice::from_ref(&lv), Boundary::Reflecting, &set, |_, j, s, c, w| {
            exact_projection(&p, &lv, j, s, c, w)
        })
        .unwrap();
        for (s, r) in set.samples.iter().zip(&r) {
            let t = s.index.step as f64 * lv.scheme.dt;
            let x = lv.mesh.center_1d(s.index.cell);
            if (x - 0.5 * t).abs() > 3.0 * lv.mesh.h() {
                assert!(r.abs() < 1e-12, "{:?} {r}", s.index);
            }
        }
    }

    #[test]
    fn second_order_hand_case() {
        let p = Problem::LinearDet { dim: 1 };
        let lv = level(&p, 3, TimeMode::ForwardEuler, 2, 1.0 / 9.0);
        let h = 1.0 / 3.0;
        let dt = 1.0 / 9.0;
        let u0 = |n: usize, c: usize| [0.3, -0.2, 0.5][c] + 0.1 * n as f64;
        let u1 = |n: usize, c: usize| [1.0, 2.0, -1.5][c] - 0.05 * n as f64;
        let field = |_: usize, j: usize, n: usize, c: usize, _: Option<&[f64]>| {
            (if j == 0 { u0(n, c) } else { u1(n, c) }, 0.0)
        };
        for cell in 0..3 {
            let right = (cell + 1) % 3;
            let set = SampleSet {
                samples: (0..2)
                    .map(|basis| SampleSpec { level: 0, index: ResidualIndex { cell, basis, step: 2 }, omega: None, weight: 1.0 })
                    .collect(),
                omegas: vec![],
            };
            let r = field_residuals(std::slice::from_ref(&lv), Boundary::Periodic, &set, field).unwrap();
            // f(u) = -u, upwind takes the downstream (right) trace.
            let fr = -(u0(2, right) - 0.5 * h * u1(2, right));
            let fl = -(u0(2, cell) - 0.5 * h * u1(2, cell));
            let r0 = 2.0 * PI * (u0(3, cell) - u0(2, cell)) / dt * h + fr - fl;
            let r1 = 2.0 * PI * (u1(3, cell) - u1(2, cell)) / dt * h.powi(3) / 12.0 + h * u0(2, cell) + 0.5 * h * (fr + fl);
            assert!((r[0] - r0).abs() < 1e-12, "{} {r0}", r[0]);
            assert!((r[1] - r1).abs() < 1e-12, "{} {r1}", r[1]);
        }
    }

    #[test]
    fn second_order_reduces_to_first_order() {
        let p = Problem::LinearDet { dim: 1 };
        let n = 6;
        let dt = 1.0 / 36.0;
        let l2 = level(&p, n, TimeMode::ForwardEuler, 2, dt);
        let mut l1 = level(&p, n, TimeMode::ForwardEuler, 1, dt);
        l1.scheme.time_coeff = 2.0 * PI;
        let f = |_: usize, j: usize, s: usize, c: usize, _: Option<&[f64]>| {
            (if j == 0 { ((c * 7 + s * 3) % 5) as f64 * 0.1 } else { 0.0 }, 0.0)
        };
        let s2 = SampleSet::full_grid(0, &l2, None);
        let s1 = SampleSet::full_grid(0, &l1, None);
        let r2 = field_residuals(std::slice::from_ref(&l2), Boundary::Periodic, &s2, f).unwrap();
        let r1 = field_residuals(std::slice::from_ref(&l1), Boundary::Periodic, &s1, f).unwrap();
        let h = 1.0 / n as f64;
        for (a, b) in s2.samples.iter().zip(&r2).filter(|(a, _)| a.index.basis == 0) {
            let k = s1.samples.iter().position(|s| s.index.cell == a.index.cell && s.index.step == a.index.step).unwrap();
            assert!((b - h * r1[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn consistency_first_order() {
        let p = Problem::LinearDet { dim: 1 };
        let losses: Vec<f64> = [20, 40, 80]
            .iter()
            .map(|&n| exact_loss(&p, &level(&p, n, TimeMode::ForwardEuler, 1, 1.0 / n as f64), None).unwrap())
            .collect();
        for w in losses.windows(2) {
            let ratio = w[1] / w[0];
            assert!((0.4..=0.6).contains(&ratio), "{losses:?}");
        }
        // Pointwise size at h = dt = 1/20.
        let lv = level(&p, 20, TimeMode::ForwardEuler, 1, 0.05);
        let set = SampleSet::full_grid(0, &lv, None);
        let r = field_residuals(std::slice::from_ref(&lv), Boundary::Periodic, &set, |_, j, s, c, w| exact_projection(&p, &lv, j, s, c, w)).unwrap();
        let max = r.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(max <= 1.5, "{max}");
    }

    #[test]
    fn consistency_second_order() {
        let p = Problem::LinearDet { dim: 1 };
        let losses: Vec<f64> = [10, 20, 40]
            .iter()
            .map(|&n| {
                let h = 1.0 / n as f64;
                exact_loss(&p, &level(&p, n, TimeMode::ForwardEuler, 2, h * h), None).unwrap()
            })
            .collect();
        for w in losses.windows(2) {
            let ratio = w[1] / w[0];
            assert!((0.2..=0.3).contains(&ratio), "{losses:?}");
        }
    }

    #[test]
    fn periodic_shift_invariance() {
        let p = Problem::LinearDet { dim: 1 };
        let n = 12;
        let lv = level(&p, n, TimeMode::ForwardEuler, 1, 1.0 / 6.0);
        let set = SampleSet::full_grid(0, &lv, None);
        let base = |s: usize, c: usize| ((c * c + 3 * s) % 7) as f64 - 2.0;
        for shift in [1usize, 5, 11] {
            let a = field_residuals(std::slice::from_ref(&lv), Boundary::Periodic, &set, |_, _, s, c, _| (base(s, c), 0.0)).unwrap();
            let b = field_residuals(std::slice::from_ref(&lv), Boundary::Periodic, &set, |_, _, s, c, _| (base(s, (c + shift) % n), 0.0)).unwrap();
            for (k, smp) in set.samples.iter().enumerate() {
                let moved = set
                    .samples
                    .iter()
                    .position(|o| o.index.step == smp.index.step && o.index.cell == (smp.index.cell + shift) % n)
                    .unwrap();
                assert_eq!(b[k], a[moved]);
            }
        }
    }

    #[test]
    fn flux_terms_telescope() {
        let p = Problem::LinearDet { dim: 1 };
        let n = 16;
        let lv = level(&p, n, TimeMode::ForwardEuler, 1, 0.25);
        let set = SampleSet::full_grid(0, &lv, None);
        let u = |s: usize, c: usize| ((c as f64) * 0.7 + s as f64).sin();
        let r = field_residuals(std::slice::from_ref(&lv), Boundary::Periodic, &set, |_, _, s, c, _| (u(s, c), 0.0)).unwrap();
        let h = lv.mesh.h();
        for step in 0..lv.steps {
            let lhs: f64 = set.samples.iter().zip(&r).filter(|(s, _)| s.index.step == step).map(|(_, r)| r * h).sum();
            let rhs: f64 = (0..n).map(|c| p.time_coeff() * (u(step + 1, c) - u(step, c)) / 0.25 * h).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    fn check_gradient(r: &SolutionRep, levels: &[Level], set: &SampleSet) {
        let engine = LossEngine::new(levels);
        let b = engine.prepare(r, set).unwrap();
        let all = vec![true; r.networks.len()];
        let eval = engine.evaluate(r, &b, &all).unwrap();
        for j in 0..r.networks.len() {
            let mut fd = vec![0.0; r.networks[j].len()];
            for k in 0..fd.len() {
                let step = 1e-6;
                let mut plus = r.clone();
                plus.networks[j].as_mut_slice()[k] += step;
                let mut minus = r.clone();
                minus.networks[j].as_mut_slice()[k] -= step;
                let lp = engine.evaluate(&plus, &b, &[]).unwrap().loss;
                let lm = engine.evaluate(&minus, &b, &[]).unwrap().loss;
                fd[k] = (lp - lm) / (2.0 * step);
            }
            let num: f64 = fd.iter().zip(&eval.grads[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den: f64 = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(num <= 1e-6 * den, "net {j}: {num} vs {den}");
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let p = Problem::LinearDet { dim: 1 };
        for time in [TimeMode::ForwardEuler, TimeMode::SemiDiscrete] {
            let r = rep(p, 0, 5, 11);
            let lv = vec![level(&p, 4, time, 1, 0.5)];
            check_gradient(&r, &lv, &SampleSet::full_grid(0, &lv[0], None));
        }
        let r = rep(p, 1, 4, 21);
        let lv = vec![level(&p, 4, TimeMode::ForwardEuler, 2, 0.5)];
        check_gradient(&r, &lv, &SampleSet::full_grid(0, &lv[0], None));

        let b = Problem::BurgersDet;
        let r = rep(b, 0, 5, 31);
        let lv = vec![level(&b, 4, TimeMode::ForwardEuler, 1, 0.5)];
        check_gradient(&r, &lv, &SampleSet::full_grid(0, &lv[0], None));

        let s = Problem::LinearStoch { dim: 2, s: 3 };
        let r = rep(s, 0, 5, 41);
        let lv = vec![level(&s, 3, TimeMode::ForwardEuler, 1, 0.5)];
        check_gradient(&r, &lv, &SampleSet::full_grid(0, &lv[0], Some(vec![0.1, 0.5, 0.9])));
    }

    #[test]
    fn minibatch_estimator_is_unbiased() {
        let p = Problem::LinearDet { dim: 1 };
        let r = rep(p, 0, 5, 3);
        let lv = vec![level(&p, 10, TimeMode::ForwardEuler, 1, 0.1)];
        let engine = LossEngine::new(&lv);
        let full = full_loss(&r, &lv, None).powi(2);
        let count = lv[0].grid().count() as f64;
        let batch = 20;
        let mut acc = crate::sampling::Welford::default();
        for it in 0..1000 {
            let idx = sample_indices(lv[0].grid(), batch, &mut stream(5, StreamKind::Indices, it));
            let set = SampleSet {
                samples: idx
                    .into_iter()
                    .map(|index| SampleSpec { level: 0, index, omega: None, weight: lv[0].measure() * count / batch as f64 })
                    .collect(),
                omegas: vec![],
            };
            let b = engine.prepare(&r, &set).unwrap();
            acc.push(engine.evaluate(&r, &b, &[]).unwrap().loss_sq);
        }
        assert!((acc.mean() - full).abs() <= 3.0 * acc.std_error_mean(), "{} {full}", acc.mean());
    }

    #[test]
    fn single_level_mlmc_is_plain_mc() {
        let p = Problem::LinearStoch { dim: 1, s: 2 };
        let r = rep(p, 0, 4, 7);
        let lv = vec![level(&p, 5, TimeMode::ForwardEuler, 1, 0.2)];
        let dist = OmegaDistribution::new(crate::sampling::OmegaKind::Uniform01, 2);
        let a = mlmc_loss_estimate(&r, &lv, &[16], &dist, &mut stream(1, StreamKind::Multilevel, 0)).unwrap();
        let mut rng = stream(1, StreamKind::Multilevel, 0);
        let mut acc = crate::sampling::Welford::default();
        for _ in 0..16 {
            let w = dist.sample_one(&mut rng);
            acc.push(full_loss(&r, &lv, Some(w)).powi(2));
        }
        assert!((a.raw - acc.mean()).abs() <= 1e-12 * acc.mean());
    }

    #[test]
    fn non_finite_residual_reports_coordinates() {
        let p = Problem::LinearDet { dim: 1 };
        let mut r = rep(p, 0, 4, 7);
        *r.networks[0].as_mut_slice().last_mut().unwrap() = f64::NAN;
        let lv = vec![level(&p, 4, TimeMode::ForwardEuler, 1, 0.5)];
        let engine = LossEngine::new(&lv);
        let b = engine.prepare(&r, &SampleSet::full_grid(0, &lv[0], None)).unwrap();
        assert!(matches!(
            engine.evaluate(&r, &b, &[true]),
            Err(Error::NonFiniteResidual { .. })
        ));
    }
}

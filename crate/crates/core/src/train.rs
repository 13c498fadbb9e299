//! Training runs: batches, the optimizer loop, error tracking and artifacts.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{s, Array2};
use rand::RngCore;

use crate::config::{DtRule, ExperimentConfig, FullSweep};
use crate::error::{Error, Result};
use crate::mesh::UniformMesh;
use crate::metrics::{convergence_order, rel_error, window_average, ErrorReport, Surface};
use crate::network::{write_checkpoint, MlpParams};
use crate::optim::{alternating_minimize, AdamState, AlternatingSchedule, BlockObjective};
use crate::problem::Problem;
use crate::reference::{burgers_expectation_at, burgers_variance_at, mc_moments};
use crate::residual::{represented_value, Level, LossEngine, PreparedBatch, SampleSet, SampleSpec, SchemeSpec, SolutionRep};
use crate::sampling::{full_sweep, sample_indices, stream, GridShape, OmegaDistribution, OmegaKind, ResidualIndex, StreamKind, Welford};

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub loss: f64,
    pub error: f64,
    pub wall_clock: f64,
}

/// Outcome of training on one mesh level.
#[derive(Debug, Clone)]
pub struct LevelRecord {
    pub inv_h: usize,
    pub h: f64,
    pub dt: f64,
    pub report: ErrorReport,
    /// Loss before every optimizer step (sum over blocks for two networks).
    pub losses: Vec<f64>,
    pub log: Vec<LogRow>,
    pub networks: Vec<MlpParams>,
    pub wall_clock: f64,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub levels: Vec<LevelRecord>,
    pub wall_clock: f64,
}

impl RunRecord {
    /// Observed order between each level and the previous one.
    pub fn orders(&self) -> Vec<Option<f64>> {
        level_orders(&self.levels)
    }
}

fn level_orders(levels: &[LevelRecord]) -> Vec<Option<f64>> {
    let mut out = vec![None];
    for w in levels.windows(2) {
        let ratio = w[1].inv_h as f64 / w[0].inv_h as f64;
        out.push(convergence_order(w[0].report.windowed, w[1].report.windowed, ratio).ok());
    }
    out
}

/// Meshes, schemes and the initial solution for one level.
pub struct Setup {
    pub config: ExperimentConfig,
    pub inv_h: usize,
    /// One level, or coarse then fine for multilevel sampling.
    pub levels: Vec<Level>,
    pub rep: SolutionRep,
}

impl Setup {
    pub fn new(config: &ExperimentConfig, inv_h: usize) -> Result<Self> {
        config.validate()?;
        let problem = config.problem;
        let fine = make_level(config, inv_h)?;
        let mut levels = Vec::new();
        if config.sampler.mlmc {
            levels.push(make_level(config, inv_h / 2)?);
        }
        levels.push(fine);
        let arch = config.architecture();
        let networks = (0..config.scheme.order)
            .map(|j| MlpParams::init(arch, stream(config.seed, StreamKind::Init, j as u64).next_u64()))
            .collect::<Result<Vec<_>>>()?;
        let rep = SolutionRep::new(problem, networks, config.construction(), config.boundary())?;
        Ok(Setup {
            config: config.clone(),
            inv_h,
            levels,
            rep,
        })
    }

    pub fn fine(&self) -> &Level {
        self.levels.last().unwrap()
    }
}

fn make_level(config: &ExperimentConfig, inv_h: usize) -> Result<Level> {
    let problem = &config.problem;
    let (lo, hi) = problem.domain();
    let cells = ((hi - lo) * inv_h as f64).round() as usize;
    let mesh = UniformMesh::new(problem.dim(), cells, lo, hi)?;
    let h = 1.0 / inv_h as f64;
    let dt = match config.scheme.dt_rule {
        DtRule::EqualH => h,
        DtRule::HSquared => h * h,
    };
    let scheme = SchemeSpec {
        time: config.scheme.time,
        order: config.scheme.order,
        dt,
        t_final: config.scheme.t_final,
        flux: problem.flux(),
        numerical_flux: config.numerical_flux(),
        time_coeff: problem.time_coeff(),
    };
    Level::new(mesh, scheme)
}

/// Builds the residual samples of each iteration.
struct Batcher<'a> {
    config: &'a ExperimentConfig,
    levels: &'a [Level],
    dist: OmegaDistribution,
}

impl Batcher<'_> {
    fn fine_id(&self) -> usize {
        self.levels.len() - 1
    }

    fn grid(&self, level: usize) -> GridShape {
        GridShape {
            bases: 1,
            ..self.levels[level].grid()
        }
    }

    /// Whether every iteration uses the same (full) deterministic set.
    fn is_fixed(&self) -> bool {
        !self.config.problem.is_stochastic() && self.full(self.fine_id())
    }

    fn full(&self, level: usize) -> bool {
        match self.config.sampler.full_sweep {
            FullSweep::Always => true,
            FullSweep::Never => false,
            FullSweep::Auto => self.config.optimizer.batch >= self.grid(level).count(),
        }
    }

    fn omegas(&self, count: usize, iteration: usize, kind: StreamKind) -> Result<Vec<Vec<f64>>> {
        if self.config.sampler.qmc {
            self.dist.sample_halton(count, iteration * count)
        } else {
            Ok(self.dist.sample(count, &mut stream(self.config.seed, kind, iteration as u64)))
        }
    }

    /// Indices on `level` for one basis order; full sweep or sampled.
    fn indices(&self, level: usize, batch: usize, basis: usize, iteration: usize, kind: StreamKind) -> (Vec<ResidualIndex>, f64) {
        let grid = self.grid(level);
        let count = grid.count() as f64;
        let mut idx = if self.full(level) && !self.config.problem.is_stochastic() {
            full_sweep(grid)
        } else {
            sample_indices(grid, batch, &mut stream(self.config.seed, kind, iteration as u64))
        };
        idx.iter_mut().for_each(|i| i.basis = basis);
        let w = self.levels[level].measure() * count / idx.len() as f64;
        (idx, w)
    }

    fn build(&self, iteration: usize, basis: usize) -> Result<SampleSet> {
        let batch = self.config.optimizer.batch;
        let stochastic = self.config.problem.is_stochastic();
        let mut set = SampleSet::default();
        let push = |set: &mut SampleSet, level: usize, idx: Vec<ResidualIndex>, w: f64, omegas: Vec<Vec<f64>>| {
            let base = set.omegas.len();
            let m = omegas.len();
            for (k, index) in idx.into_iter().enumerate() {
                set.samples.push(SampleSpec {
                    level,
                    index,
                    omega: (m > 0).then(|| base + k % m),
                    weight: w,
                });
            }
            set.omegas.extend(omegas);
        };
        let draws = |n: usize| self.config.sampler.omega_batch.unwrap_or(n).clamp(1, n);
        if self.config.sampler.mlmc {
            // Coarse level with its own draws, then M fine/coarse pairs
            // sharing their random inputs.
            let (idx0, w0) = self.indices(0, batch, basis, iteration, StreamKind::Indices);
            let om = self.omegas(draws(idx0.len()), iteration, StreamKind::Omega)?;
            push(&mut set, 0, idx0, w0, om);
            let pairs = (batch / 4).max(1);
            let om = self.omegas(draws(pairs), iteration, StreamKind::Multilevel)?;
            let (idx1, w1) = self.indices(1, pairs, basis, iteration, StreamKind::Multilevel);
            let mut rng = stream(self.config.seed ^ 0x5eed, StreamKind::Multilevel, iteration as u64);
            let idxc = sample_indices(self.grid(0), pairs, &mut rng)
                .into_iter()
                .map(|mut i| {
                    i.basis = basis;
                    i
                })
                .collect();
            let wc = -self.levels[0].measure() * self.grid(0).count() as f64 / pairs as f64;
            push(&mut set, 1, idx1, w1, om.clone());
            push(&mut set, 0, idxc, wc, om);
        } else {
            let (idx, w) = self.indices(self.fine_id(), batch, basis, iteration, StreamKind::Indices);
            let om = if stochastic {
                self.omegas(draws(idx.len()), iteration, StreamKind::Omega)?
            } else {
                Vec::new()
            };
            push(&mut set, self.fine_id(), idx, w, om);
        }
        Ok(set)
    }
}

/// All error measures of one network state.
#[derive(Debug, Clone, Copy, Default)]
pub struct Measured {
    pub headline: f64,
    pub rel_l2: f64,
    pub rel_l1: f64,
    pub final_time_rel_l2: f64,
    pub expectation: Option<(f64, f64)>,
    pub variance: Option<(f64, f64)>,
}

/// Evaluates the trained coefficient `U^0` at cell centres against the
/// exact solution (or, for random inputs, its moments).
pub struct Evaluator {
    problem: Problem,
    surface: Surface,
    /// Network input per row (`t > 0` nodes only).
    inputs: Array2<f64>,
    /// For each evaluation point: row in `inputs` or `None` at `t = 0`,
    /// time, initial datum.
    points: Vec<(Option<usize>, f64, f64)>,
    exact: Vec<f64>,
    /// Points at the final time.
    final_points: Vec<usize>,
    /// Points on the headline surface.
    surface_points: Vec<usize>,
    /// Stochastic: number of random inputs per location, reference moments
    /// per location (locations = points / draws).
    draws: usize,
    locations: Vec<(f64, Vec<f64>)>,
    ref_mean: Vec<f64>,
    ref_var: Vec<f64>,
}

const EVAL_CHUNK: usize = 1 << 14;

impl Evaluator {
    pub fn new(config: &ExperimentConfig, level: &Level) -> Result<Self> {
        let problem = config.problem;
        let mesh = &level.mesh;
        let steps = level.steps;
        let dt = level.scheme.dt;
        let stochastic = problem.is_stochastic();
        let surface = config.eval.surface;
        // Spatial locations: every cell, or the diagonal for random inputs in
        // several dimensions.
        let cells: Vec<usize> = if stochastic && mesh.dim() > 1 {
            (0..mesh.cells_per_dim()).map(|i| mesh.linear_index(&vec![i; mesh.dim()])).collect()
        } else {
            (0..mesh.num_cells()).collect()
        };
        let times: Vec<usize> = if stochastic && surface == Surface::FinalTime {
            vec![steps]
        } else {
            (0..=steps).collect()
        };
        let omegas: Vec<Option<Vec<f64>>> = if stochastic {
            let dist = OmegaDistribution::new(config.omega_kind(), problem.random_dim());
            dist.sample(config.eval.eval_omega, &mut stream(config.seed, StreamKind::Evaluation, 0))
                .into_iter()
                .map(Some)
                .collect()
        } else {
            vec![None]
        };
        let draws = omegas.len();
        let width = problem.input_dim();
        let mut rows = Vec::new();
        let mut points = Vec::new();
        let mut exact = Vec::new();
        let mut final_points = Vec::new();
        let mut surface_points = Vec::new();
        let mut locations = Vec::new();
        let mut nrows = 0;
        for &n in &times {
            let t = n as f64 * dt;
            for &c in &cells {
                let x = mesh.center(&mesh.multi_index(c));
                locations.push((t, x.clone()));
                for w in &omegas {
                    let w = w.as_deref();
                    let idx = points.len();
                    if n == steps {
                        final_points.push(idx);
                    }
                    if surface == Surface::SpaceTime || n == steps {
                        surface_points.push(idx);
                    }
                    let g = problem.initial_coeff(0, &x, w);
                    let row = if n == 0 {
                        None
                    } else {
                        rows.push(t);
                        rows.extend_from_slice(&x);
                        rows.extend_from_slice(w.unwrap_or(&[]));
                        nrows += 1;
                        Some(nrows - 1)
                    };
                    points.push((row, t, g));
                    exact.push(problem.exact(t, &x, w));
                }
            }
        }
        let inputs = Array2::from_shape_vec((nrows, width), rows).expect("row width");
        let (ref_mean, ref_var) = if !stochastic {
            (Vec::new(), Vec::new())
        } else if let (Problem::BurgersStoch { eps, .. }, OmegaKind::SumUniform) = (problem, config.omega_kind()) {
            (
                locations.iter().map(|(t, x)| burgers_expectation_at(*t, x[0], eps)).collect(),
                locations.iter().map(|(t, x)| burgers_variance_at(*t, x[0], eps)).collect(),
            )
        } else {
            let dist = OmegaDistribution::new(config.omega_kind(), problem.random_dim());
            let m = mc_moments(
                &problem,
                &dist,
                config.eval.reference_samples.max(2),
                &locations,
                &mut stream(config.seed, StreamKind::Reference, 0),
            )?;
            (m.mean, m.variance)
        };
        Ok(Evaluator {
            problem,
            surface,
            inputs,
            points,
            exact,
            final_points,
            surface_points,
            draws,
            locations,
            ref_mean,
            ref_var,
        })
    }

    /// `U^0` at every evaluation point.
    pub fn values(&self, rep: &SolutionRep) -> Vec<f64> {
        let net = &rep.networks[0];
        let mut raw = Vec::with_capacity(self.inputs.nrows());
        let mut start = 0;
        while start < self.inputs.nrows() {
            let end = (start + EVAL_CHUNK).min(self.inputs.nrows());
            let tape = net.forward_batch(self.inputs.slice(s![start..end, ..]), None);
            raw.extend_from_slice(tape.values());
            start = end;
        }
        self.points
            .iter()
            .map(|&(row, t, g)| represented_value(rep.construction, t, row.map_or(0.0, |r| raw[r]), g))
            .collect()
    }

    /// Sample mean and variance of `U^0` per location (stochastic problems).
    fn moments(&self, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut mean = Vec::with_capacity(self.ref_mean.len());
        let mut var = Vec::with_capacity(self.ref_mean.len());
        for chunk in v.chunks(self.draws) {
            let mut acc = Welford::default();
            chunk.iter().for_each(|&x| acc.push(x));
            mean.push(acc.mean());
            var.push(acc.variance());
        }
        (mean, var)
    }

    /// Moment profiles: `(t, x, mean, variance, reference mean, reference variance)`.
    pub fn moment_profiles(&self, rep: &SolutionRep) -> Vec<(f64, Vec<f64>, f64, f64, f64, f64)> {
        let (mean, var) = self.moments(&self.values(rep));
        self.locations
            .iter()
            .enumerate()
            .map(|(i, (t, x))| (*t, x.clone(), mean[i], var[i], self.ref_mean[i], self.ref_var[i]))
            .collect()
    }

    pub fn measure(&self, rep: &SolutionRep) -> Measured {
        let v = self.values(rep);
        let pick = |ids: &[usize], src: &[f64]| ids.iter().map(|&i| src[i]).collect::<Vec<_>>();
        let err = |a: &[f64], b: &[f64], p| rel_error(a, b, p, None).unwrap_or(f64::NAN);
        let sv = pick(&self.surface_points, &v);
        let se = pick(&self.surface_points, &self.exact);
        let mut m = Measured {
            rel_l2: err(&sv, &se, 2),
            rel_l1: err(&sv, &se, 1),
            final_time_rel_l2: err(&pick(&self.final_points, &v), &pick(&self.final_points, &self.exact), 2),
            ..Measured::default()
        };
        if self.problem.is_stochastic() {
            let (mean, var) = self.moments(&v);
            m.expectation = Some((err(&mean, &self.ref_mean, 2), err(&mean, &self.ref_mean, 1)));
            m.variance = Some((err(&var, &self.ref_var, 2), err(&var, &self.ref_var, 1)));
            m.headline = m.expectation.unwrap().0;
        } else {
            m.headline = m.rel_l2;
        }
        m
    }

    pub fn surface(&self) -> Surface {
        self.surface
    }
}

/// Error bookkeeping during training.
struct Tracker<'a> {
    evaluator: &'a Evaluator,
    iterations: usize,
    window_start: usize,
    eval_every: usize,
    log_every: usize,
    window: Vec<f64>,
    log: Vec<LogRow>,
    losses: Vec<f64>,
    started: Instant,
}

impl<'a> Tracker<'a> {
    fn new(config: &ExperimentConfig, evaluator: &'a Evaluator) -> Self {
        let iterations = config.optimizer.iterations;
        Tracker {
            evaluator,
            iterations,
            window_start: iterations.saturating_sub(config.eval.window),
            eval_every: config.eval.eval_every,
            log_every: config.eval.log_every,
            window: Vec::new(),
            log: Vec::new(),
            losses: Vec::with_capacity(iterations),
            started: Instant::now(),
        }
    }

    fn observe(&mut self, it: usize, loss: f64, rep: &SolutionRep) {
        self.losses.push(loss);
        let in_window = it >= self.window_start && (it - self.window_start).is_multiple_of(self.eval_every);
        let logged = it.is_multiple_of(self.log_every) || it + 1 == self.iterations;
        if !(in_window || logged) {
            return;
        }
        let e = self.evaluator.measure(rep).headline;
        if in_window {
            self.window.push(e);
        }
        if logged {
            self.log.push(LogRow {
                iteration: it,
                loss,
                error: e,
                wall_clock: self.started.elapsed().as_secs_f64(),
            });
        }
    }
}

fn check_loss(it: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss { iteration: it, value: loss })
    }
}

/// Train on mesh level `1 / inv_h`.
pub fn train_level(config: &ExperimentConfig, inv_h: usize) -> Result<LevelRecord> {
    let started = Instant::now();
    let mut setup = Setup::new(config, inv_h)?;
    let evaluator = Evaluator::new(config, setup.fine())?;
    let mut tracker = Tracker::new(config, &evaluator);
    let engine = LossEngine::new(&setup.levels);
    let batcher = Batcher {
        config,
        levels: &setup.levels,
        dist: OmegaDistribution::new(config.omega_kind(), config.problem.random_dim()),
    };
    let iterations = config.optimizer.iterations;
    let schedule = config.lr_schedule();
    let mut rep = setup.rep.clone();
    let losses;
    if config.scheme.order == 1 {
        let fixed = if batcher.is_fixed() {
            Some(engine.prepare(&rep, &batcher.build(0, 0)?)?)
        } else {
            None
        };
        let mut adam = AdamState::new(rep.networks[0].len(), schedule.initial);
        for it in 0..iterations {
            let owned;
            let batch: &PreparedBatch = match &fixed {
                Some(b) => b,
                None => {
                    owned = engine.prepare(&rep, &batcher.build(it, 0)?)?;
                    &owned
                }
            };
            let eval = engine.evaluate(&rep, batch, &[true]).map_err(|e| at_iteration(e, it))?;
            check_loss(it, eval.loss)?;
            tracker.observe(it, eval.loss, &rep);
            adam.lr = schedule.at(it, iterations);
            adam.step(rep.networks[0].as_mut_slice(), &eval.grads[0])?;
        }
        losses = std::mem::take(&mut tracker.losses);
    } else {
        let fixed = if batcher.is_fixed() {
            Some([
                engine.prepare(&rep, &batcher.build(0, 0)?)?,
                engine.prepare(&rep, &batcher.build(0, 1)?)?,
            ])
        } else {
            None
        };
        let mut blocks = [rep.networks[0].as_slice().to_vec(), rep.networks[1].as_slice().to_vec()];
        let mut objective = TwoBlock {
            rep: rep.clone(),
            engine: &engine,
            batcher: &batcher,
            fixed: fixed.as_ref(),
            tracker: &mut tracker,
        };
        let alt = AlternatingSchedule {
            inner_steps: config.optimizer.inner_steps,
            iterations,
            lr: schedule,
        };
        let history = alternating_minimize(&mut objective, &mut blocks, &alt)?;
        for (j, b) in blocks.iter().enumerate() {
            rep.networks[j].as_mut_slice().copy_from_slice(b);
        }
        losses = history.losses[0].iter().zip(&history.losses[1]).map(|(a, b)| a + b).collect();
    }
    // Zero-iteration runs report the initial state.
    if tracker.window.is_empty() {
        tracker.window.push(evaluator.measure(&rep).headline);
    }
    let last = evaluator.measure(&rep);
    let window = tracker.window.len();
    let report = ErrorReport {
        rel_l2: last.rel_l2,
        rel_l1: last.rel_l1,
        final_time_rel_l2: last.final_time_rel_l2,
        expectation_l2: last.expectation.map(|e| e.0),
        expectation_l1: last.expectation.map(|e| e.1),
        variance_l2: last.variance.map(|e| e.0),
        variance_l1: last.variance.map(|e| e.1),
        surface: evaluator.surface(),
        windowed: window_average(&tracker.window, window)?,
        window,
    };
    let fine = setup.fine().clone();
    setup.rep = rep;
    Ok(LevelRecord {
        inv_h,
        h: 1.0 / inv_h as f64,
        dt: fine.scheme.dt,
        report,
        losses,
        log: std::mem::take(&mut tracker.log),
        networks: setup.rep.networks,
        wall_clock: started.elapsed().as_secs_f64(),
    })
}

fn at_iteration(e: Error, it: usize) -> Error {
    match e {
        Error::NonFiniteLoss { value, .. } => Error::NonFiniteLoss { iteration: it, value },
        e => e,
    }
}

/// Block `j` minimizes the basis-`j` residuals over network `j`.
struct TwoBlock<'a, 'b> {
    rep: SolutionRep,
    engine: &'a LossEngine<'a>,
    batcher: &'a Batcher<'a>,
    fixed: Option<&'b [PreparedBatch; 2]>,
    tracker: &'b mut Tracker<'a>,
}

impl BlockObjective for TwoBlock<'_, '_> {
    fn eval_block(&mut self, block: usize, blocks: &[Vec<f64>; 2], iteration: usize) -> Result<(f64, Vec<f64>)> {
        for (j, b) in blocks.iter().enumerate() {
            self.rep.networks[j].as_mut_slice().copy_from_slice(b);
        }
        let owned;
        let batch = match self.fixed {
            Some(f) => &f[block],
            None => {
                owned = self.engine.prepare(&self.rep, &self.batcher.build(iteration, block)?)?;
                &owned
            }
        };
        let mut want = [false; 2];
        want[block] = true;
        let mut eval = self.engine.evaluate(&self.rep, batch, &want).map_err(|e| at_iteration(e, iteration))?;
        check_loss(iteration, eval.loss)?;
        if block == 0 {
            self.tracker.observe(iteration, eval.loss, &self.rep);
        }
        Ok((eval.loss, std::mem::take(&mut eval.grads[block])))
    }
}

/// Train every mesh level of `config` and write the artifacts under
/// `config.run_dir()`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunRecord> {
    config.validate()?;
    let started = Instant::now();
    let dir = config.run_dir();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.toml"), config.to_toml()?)?;
    let mut levels = Vec::new();
    for &inv_h in &config.mesh.inv_h {
        log::info!("{}: training at h = 1/{inv_h}", config.name);
        let rec = train_level(config, inv_h)?;
        write_level(config, &dir, &rec)?;
        log::info!(
            "{}: h = 1/{inv_h} windowed error {:.3e} ({:.1} s)",
            config.name,
            rec.report.windowed,
            rec.wall_clock
        );
        levels.push(rec);
    }
    write_report(&dir.join("report.csv"), &levels)?;
    Ok(RunRecord {
        config: config.clone(),
        levels,
        wall_clock: started.elapsed().as_secs_f64(),
    })
}

/// Directory of one level's artifacts.
pub fn level_dir(run_dir: &Path, inv_h: usize) -> PathBuf {
    run_dir.join(format!("h{inv_h}"))
}

/// Checkpoint path of network `j`.
pub fn checkpoint_path(run_dir: &Path, inv_h: usize, j: usize) -> PathBuf {
    level_dir(run_dir, inv_h).join(format!("net{j}.ckpt"))
}

fn write_level(config: &ExperimentConfig, dir: &Path, rec: &LevelRecord) -> Result<()> {
    let ldir = level_dir(dir, rec.inv_h);
    fs::create_dir_all(&ldir)?;
    let mut w = csv::Writer::from_path(ldir.join("train_log.csv"))?;
    w.write_record(["iteration", "loss", "error", "wall_clock"])?;
    for r in &rec.log {
        w.write_record([
            r.iteration.to_string(),
            sci(r.loss),
            sci(r.error),
            format!("{:.3}", r.wall_clock),
        ])?;
    }
    w.flush()?;
    if config.eval.checkpoints {
        for (j, net) in rec.networks.iter().enumerate() {
            let f = fs::File::create(checkpoint_path(dir, rec.inv_h, j))?;
            let mut out = BufWriter::new(f);
            write_checkpoint(net, &mut out)?;
            out.flush()?;
        }
    }
    Ok(())
}

/// Four significant digits in scientific notation; empty for missing values.
pub fn sci(v: f64) -> String {
    format!("{v:.3e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(sci).unwrap_or_default()
}

/// Per-level summary: `(h, dt, error, order)` plus every other measure.
pub fn write_report(path: &Path, levels: &[LevelRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "h",
        "dt",
        "error",
        "order",
        "rel_l2",
        "rel_l1",
        "final_time_rel_l2",
        "expectation_l2",
        "expectation_l1",
        "variance_l2",
        "variance_l1",
        "final_loss",
    ])?;
    for (rec, order) in levels.iter().zip(level_orders(levels)) {
        let r = &rec.report;
        w.write_record([
            format!("1/{}", rec.inv_h),
            sci(rec.dt),
            sci(r.windowed),
            order.map(|o| format!("{o:.2}")).unwrap_or_default(),
            sci(r.rel_l2),
            sci(r.rel_l1),
            sci(r.final_time_rel_l2),
            opt(r.expectation_l2),
            opt(r.expectation_l1),
            opt(r.variance_l2),
            opt(r.variance_l1),
            rec.losses.last().map(|&l| sci(l)).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Trained state of one level reloaded from a run directory.
pub struct LoadedLevel {
    pub config: ExperimentConfig,
    pub level: Level,
    pub rep: SolutionRep,
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact(path))
    }
}

/// Levels of a run directory that have checkpoints, coarse to fine.
pub fn checkpointed_levels(run_dir: &Path) -> Result<Vec<usize>> {
    let config = ExperimentConfig::load(&require(run_dir.join("config.toml"))?)?;
    let mut out: Vec<usize> = config
        .mesh
        .inv_h
        .iter()
        .copied()
        .filter(|&n| checkpoint_path(run_dir, n, 0).exists())
        .collect();
    out.sort_unstable();
    Ok(out)
}

/// Reload the networks of level `1 / inv_h`.
pub fn load_level(run_dir: &Path, inv_h: usize) -> Result<LoadedLevel> {
    let config = ExperimentConfig::load(&require(run_dir.join("config.toml"))?)?;
    let networks = (0..config.scheme.order)
        .map(|j| {
            let f = fs::File::open(require(checkpoint_path(run_dir, inv_h, j))?)?;
            crate::network::read_checkpoint(std::io::BufReader::new(f))
        })
        .collect::<Result<Vec<_>>>()?;
    let level = make_level(&config, inv_h)?;
    let rep = SolutionRep::new(config.problem, networks, config.construction(), config.boundary())?;
    Ok(LoadedLevel { config, level, rep })
}

/// `U^0` at the cell centres of a 1D mesh at time `t`.
pub fn profile_1d(rep: &SolutionRep, mesh: &UniformMesh, t: f64, omega: Option<&[f64]>) -> Result<Vec<f64>> {
    (0..mesh.num_cells())
        .map(|i| rep.coeff(mesh, t, &[i as i64], 0, omega))
        .collect()
}

/// Rows `(h, dt, windowed error)` of a report file.
pub fn read_report(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut r = csv::Reader::from_path(require(path.to_path_buf())?)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let err = rec[2]
            .parse()
            .map_err(|_| Error::Config(format!("bad error value {:?} in {}", &rec[2], path.display())))?;
        out.push((rec[0].to_string(), err));
    }
    Ok(out)
}

//! Seeded random streams, mini-batch index sampling, random-input
//! distributions, Halton points and a telescoping multilevel estimator.
//!
//! Every generator here is a pure function of `(seed, stream kind, counter)`:
//! a fresh ChaCha8 generator is keyed by the master seed and positioned on a
//! stream id derived from the kind and the counter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamKind {
    Init = 1,
    Indices = 2,
    Omega = 3,
    Evaluation = 4,
    Reference = 5,
    Multilevel = 6,
}

/// Generator for `(seed, kind, counter)`.
pub fn stream(seed: u64, kind: StreamKind, counter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((kind as u64) << 56) ^ (counter & ((1 << 56) - 1)));
    rng
}

/// Size of the residual index set: cells x basis orders x time steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridShape {
    pub cells: usize,
    pub bases: usize,
    pub steps: usize,
}

impl GridShape {
    pub fn count(&self) -> usize {
        self.cells * self.bases * self.steps
    }
}

/// One residual coordinate: linear cell index, basis order, time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ResidualIndex {
    pub cell: usize,
    pub basis: usize,
    pub step: usize,
}

/// Uniform draw with replacement.
pub fn sample_indices<R: Rng>(grid: GridShape, batch: usize, rng: &mut R) -> Vec<ResidualIndex> {
    (0..batch)
        .map(|_| ResidualIndex {
            cell: rng.gen_range(0..grid.cells),
            basis: rng.gen_range(0..grid.bases),
            step: rng.gen_range(0..grid.steps),
        })
        .collect()
}

/// Every residual coordinate exactly once.
pub fn full_sweep(grid: GridShape) -> Vec<ResidualIndex> {
    let mut out = Vec::with_capacity(grid.count());
    for step in 0..grid.steps {
        for basis in 0..grid.bases {
            for cell in 0..grid.cells {
                out.push(ResidualIndex { cell, basis, step });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaKind {
    /// `w_j` iid on `[0, 1]`.
    Uniform01,
    /// `w_j` iid on `[-1/s, 1/s]`.
    IidScaled,
    /// `w_j = xi / s` for a single `xi` uniform on `[-1, 1]`.
    SumUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OmegaDistribution {
    pub kind: OmegaKind,
    pub dim: usize,
}

impl OmegaDistribution {
    pub fn new(kind: OmegaKind, dim: usize) -> Self {
        Self { kind, dim }
    }

    /// Number of independent uniforms one draw consumes.
    pub fn uniforms_per_draw(&self) -> usize {
        match self.kind {
            OmegaKind::SumUniform => 1,
            _ => self.dim,
        }
    }

    /// Map uniforms on `[0, 1)` (one draw's worth) onto the support.
    pub fn map_unit(&self, u: &[f64]) -> Vec<f64> {
        let s = self.dim as f64;
        match self.kind {
            OmegaKind::Uniform01 => u[..self.dim].to_vec(),
            OmegaKind::IidScaled => u[..self.dim].iter().map(|&x| (2.0 * x - 1.0) / s).collect(),
            OmegaKind::SumUniform => vec![(2.0 * u[0] - 1.0) / s; self.dim],
        }
    }

    pub fn sample_one<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let u: Vec<f64> = (0..self.uniforms_per_draw()).map(|_| rng.gen::<f64>()).collect();
        self.map_unit(&u)
    }

    pub fn sample<R: Rng>(&self, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..count).map(|_| self.sample_one(rng)).collect()
    }

    /// Quasi-random draws from Halton points `skip .. skip + count`.
    pub fn sample_halton(&self, count: usize, skip: usize) -> Result<Vec<Vec<f64>>> {
        Ok(halton(self.uniforms_per_draw(), count, skip)?
            .iter()
            .map(|u| self.map_unit(u))
            .collect())
    }
}

pub fn sample_omega<R: Rng>(dist: &OmegaDistribution, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    dist.sample(count, rng)
}

/// The first `n` primes.
pub fn primes(n: usize) -> Vec<u64> {
    let mut out: Vec<u64> = Vec::with_capacity(n);
    let mut c = 2u64;
    while out.len() < n {
        if out.iter().take_while(|&&p| p * p <= c).all(|&p| c % p != 0) {
            out.push(c);
        }
        c += 1;
    }
    out
}

/// Van der Corput radical inverse of `index` in `base`.
pub fn radical_inverse(base: u64, mut index: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += (index % base) as f64 * f;
        index /= base;
        f *= inv;
    }
    r
}

pub const MAX_HALTON_DIM: usize = 200;

/// Halton points `skip+1 ..= skip+count` in `[0,1]^dim`; coordinate `j`
/// uses the `j`-th prime. Index 0 is never emitted, so every coordinate is
/// strictly inside `(0, 1)`.
pub fn halton(dim: usize, count: usize, skip: usize) -> Result<Vec<Vec<f64>>> {
    if dim == 0 || dim > MAX_HALTON_DIM {
        return Err(Error::InvalidArgument(format!(
            "Halton dimension {dim} outside 1..={MAX_HALTON_DIM}"
        )));
    }
    let bases = primes(dim);
    Ok((0..count)
        .map(|k| {
            let idx = (skip + k + 1) as u64;
            bases.iter().map(|&b| radical_inverse(b, idx)).collect()
        })
        .collect())
}

/// Result of a telescoping multilevel estimate of `E[P_L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmcEstimate {
    /// Estimate of the mean before clamping.
    pub raw: f64,
    /// Square root of the clamped estimate.
    pub value: f64,
    pub clamped: bool,
    /// Per level: mean and sample variance of `P_l - P_{l-1}` (or `P_0`).
    pub level_means: Vec<f64>,
    pub level_variances: Vec<f64>,
    pub std_error: f64,
}

/// `E[P_0] + sum_l E[P_l - P_{l-1}]`, where level `l` uses `counts[l]`
/// draws of the random input shared between `P_l` and `P_{l-1}`.
///
/// `level_fn(l, w)` evaluates `P_l(w)`. The estimator is for a squared
/// quantity: its square root is reported, negative estimates clamp to zero.
pub fn mlmc_estimate<R: Rng>(
    counts: &[usize],
    dist: &OmegaDistribution,
    rng: &mut R,
    mut level_fn: impl FnMut(usize, &[f64]) -> f64,
) -> Result<MlmcEstimate> {
    if counts.is_empty() || counts.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "multilevel sample counts must be nonempty and positive: {counts:?}"
        )));
    }
    let mut means = Vec::with_capacity(counts.len());
    let mut vars = Vec::with_capacity(counts.len());
    for (level, &n) in counts.iter().enumerate() {
        let mut acc = Welford::default();
        for _ in 0..n {
            let w = dist.sample_one(rng);
            let mut y = level_fn(level, &w);
            if level > 0 {
                y -= level_fn(level - 1, &w);
            }
            acc.push(y);
        }
        means.push(acc.mean());
        vars.push(acc.variance());
    }
    let raw: f64 = means.iter().sum();
    let std_error = counts
        .iter()
        .zip(&vars)
        .map(|(&n, &v)| v / n as f64)
        .sum::<f64>()
        .sqrt();
    let clamped = raw < 0.0;
    if clamped {
        log::warn!("multilevel estimate {raw} is negative; clamped to zero");
    }
    Ok(MlmcEstimate {
        raw,
        value: raw.max(0.0).sqrt(),
        clamped,
        level_means: means,
        level_variances: vars,
        std_error,
    })
}

/// Plain Monte-Carlo mean of `f` over `count` draws.
pub fn mc_estimate<R: Rng>(
    count: usize,
    dist: &OmegaDistribution,
    rng: &mut R,
    mut f: impl FnMut(&[f64]) -> f64,
) -> Result<MlmcEstimate> {
    mlmc_estimate(&[count], dist, rng, |_, w| f(w))
}

/// Streaming mean / variance (and fourth central moment).
#[derive(Debug, Clone, Copy, Default)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        let n1 = self.n as f64;
        self.n += 1;
        let n = self.n as f64;
        let delta = x - self.mean;
        let dn = delta / n;
        let dn2 = dn * dn;
        let term1 = delta * dn * n1;
        self.mean += dn;
        self.m4 += term1 * dn2 * (n * n - 3.0 * n + 3.0) + 6.0 * dn2 * self.m2 - 4.0 * dn * self.m3;
        self.m3 += term1 * dn * (n - 2.0) - 3.0 * dn * self.m2;
        self.m2 += term1;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance (zero for fewer than two samples).
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_error_mean(&self) -> f64 {
        (self.variance() / self.n.max(1) as f64).sqrt()
    }

    /// Large-sample standard error of the sample variance,
    /// `sqrt((mu4 - sigma^4) / n)`.
    pub fn std_error_variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let mu4 = self.m4 / n;
        let s2 = self.m2 / n;
        ((mu4 - s2 * s2).max(0.0) / n).sqrt()
    }
}

//! Dense feed-forward networks with identity shortcut blocks.
//!
//! Hidden layers are grouped in pairs `(2k, 2k+1)`. The first `shortcuts`
//! pairs carry a parameter-free skip: the block output is
//! `sigma(W z' + b) + z` where `z` is the block input and `z'` the inner
//! activation. The input of the first block is the raw network input,
//! zero-padded (or truncated) to the hidden width.
//!
//! Reverse mode is hand-written over batched activations. The batch tape can
//! also carry a forward tangent along one input coordinate, which is what the
//! semi-discrete loss needs for `d/dt` of the network; the backward pass then
//! differentiates both the value and the tangent with respect to parameters.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// First derivative expressed through the activation output `y`.
    #[inline]
    fn d1(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    /// Second derivative expressed through the activation output `y`.
    #[inline]
    fn d2(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => -2.0 * y * (1.0 - y * y),
            Activation::Relu => 0.0,
            Activation::Sigmoid => y * (1.0 - y) * (1.0 - 2.0 * y),
        }
    }

    pub fn is_smooth(self) -> bool {
        !matches!(self, Activation::Relu)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Unknown {
                kind: "activation",
                id: other.to_string(),
            }),
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub width: usize,
    pub shortcuts: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_true")]
    pub output_bias: bool,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden_layers: usize, width: usize, shortcuts: usize) -> Self {
        Self {
            input_dim,
            hidden_layers,
            width,
            shortcuts,
            activation: Activation::Tanh,
            output_bias: true,
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_layers == 0 || self.width == 0 {
            return Err(Error::InvalidArchitecture(format!(
                "input_dim, hidden_layers and width must be positive: {self:?}"
            )));
        }
        if 2 * self.shortcuts > self.hidden_layers {
            return Err(Error::InvalidArchitecture(format!(
                "{} shortcuts need at least {} hidden layers",
                self.shortcuts,
                2 * self.shortcuts
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let w = self.width;
        (self.input_dim * w + w)
            + (self.hidden_layers - 1) * (w * w + w)
            + w
            + usize::from(self.output_bias)
    }

    fn layer_in(&self, l: usize) -> usize {
        if l == 0 {
            self.input_dim
        } else {
            self.width
        }
    }

    /// Offsets of `(weights, bias)` for hidden layer `l`.
    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let w = self.width;
        let off = if l == 0 {
            0
        } else {
            self.input_dim * w + w + (l - 1) * (w * w + w)
        };
        (off, off + self.layer_in(l) * w)
    }

    fn output_offset(&self) -> usize {
        self.layer_offsets(self.hidden_layers).0
    }

    /// Whether hidden layer `l` closes a shortcut block.
    fn closes_block(&self, l: usize) -> bool {
        l % 2 == 1 && l / 2 < self.shortcuts
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "input_dim={} hidden_layers={} width={} shortcuts={} activation={} output_bias={}",
            self.input_dim,
            self.hidden_layers,
            self.width,
            self.shortcuts,
            self.activation,
            self.output_bias
        )
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut arch = Architecture::new(0, 0, 0, 0);
        let bad = |m: String| Error::Checkpoint(m);
        for tok in s.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got `{tok}`")))?;
            let num = || v.parse::<usize>().map_err(|e| bad(format!("{k}: {e}")));
            match k {
                "input_dim" => arch.input_dim = num()?,
                "hidden_layers" => arch.hidden_layers = num()?,
                "width" => arch.width = num()?,
                "shortcuts" => arch.shortcuts = num()?,
                "activation" => arch.activation = v.parse()?,
                "output_bias" => {
                    arch.output_bias = v.parse().map_err(|_| bad(format!("output_bias `{v}`")))?
                }
                _ => return Err(bad(format!("unknown key `{k}`"))),
            }
        }
        arch.validate()?;
        Ok(arch)
    }
}

pub fn param_count(arch: &Architecture) -> usize {
    arch.param_count()
}

/// Flattened network parameters.
///
/// Layout: for each hidden layer its row-major `width x fan_in` weights then
/// its bias; then the output weights; then the output bias if enabled.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    arch: Architecture,
    data: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch,
            data: vec![0.0; arch.param_count()],
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..arch.hidden_layers {
            let fan_in = arch.layer_in(l);
            let (w_off, _) = arch.layer_offsets(l);
            let bound = (6.0 / (fan_in + arch.width) as f64).sqrt();
            for v in &mut p.data[w_off..w_off + fan_in * arch.width] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        let off = arch.output_offset();
        let bound = (6.0 / (arch.width + 1) as f64).sqrt();
        for v in &mut p.data[off..off + arch.width] {
            *v = rng.gen_range(-bound..bound);
        }
        Ok(p)
    }

    pub fn from_flat(arch: Architecture, data: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if data.len() != arch.param_count() {
            return Err(Error::DimensionMismatch {
                expected: arch.param_count(),
                got: data.len(),
            });
        }
        Ok(Self { arch, data })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn weights(&self, l: usize) -> ArrayView2<'_, f64> {
        let (w, b) = self.arch.layer_offsets(l);
        ArrayView2::from_shape((self.arch.width, self.arch.layer_in(l)), &self.data[w..b]).unwrap()
    }

    fn bias(&self, l: usize) -> ArrayView1<'_, f64> {
        let (_, b) = self.arch.layer_offsets(l);
        ArrayView1::from(&self.data[b..b + self.arch.width])
    }

    fn output_weights(&self) -> ArrayView1<'_, f64> {
        let off = self.arch.output_offset();
        ArrayView1::from(&self.data[off..off + self.arch.width])
    }

    fn output_bias(&self) -> f64 {
        if self.arch.output_bias {
            self.data[self.arch.output_offset() + self.arch.width]
        } else {
            0.0
        }
    }

    /// Scalar network output.
    pub fn forward(&self, input: &[f64]) -> Result<f64> {
        self.check_input(input.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).unwrap();
        Ok(self.forward_batch(x, None).values()[0])
    }

    /// Output, gradient with respect to the flattened parameters, and gradient
    /// with respect to the input.
    pub fn backprop(&self, input: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        self.check_input(input.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).unwrap();
        let tape = self.forward_batch(x, None);
        let mut grad = vec![0.0; self.len()];
        let dx = self.backward_batch(&tape, &[1.0], None, &mut grad, true);
        Ok((tape.values()[0], grad, dx.unwrap().row(0).to_vec()))
    }

    /// Output and its derivative along input coordinate `dir`.
    pub fn forward_with_tangent(&self, input: &[f64], dir: usize) -> Result<(f64, f64)> {
        self.check_input(input.len())?;
        if dir >= input.len() {
            return Err(Error::InvalidArgument(format!("tangent direction {dir}")));
        }
        let x = ArrayView2::from_shape((1, input.len()), input).unwrap();
        let tape = self.forward_batch(x, Some(dir));
        Ok((tape.values()[0], tape.tangents().unwrap()[0]))
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.arch.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.arch.input_dim,
                got: len,
            });
        }
        Ok(())
    }

    /// Evaluate a batch (one input per row), recording what the backward pass
    /// needs. With `tangent = Some(k)` the derivative along input `k` is
    /// propagated alongside.
    pub fn forward_batch(&self, inputs: ArrayView2<'_, f64>, tangent: Option<usize>) -> BatchTape {
        let arch = &self.arch;
        assert_eq!(inputs.ncols(), arch.input_dim, "input width");
        let batch = inputs.nrows();
        let act = arch.activation;
        let mut ys: Vec<Array2<f64>> = Vec::with_capacity(arch.hidden_layers);
        let mut zs: Vec<Array2<f64>> = Vec::with_capacity(arch.hidden_layers);
        let mut ats: Vec<Array2<f64>> = Vec::new();
        let mut zts: Vec<Array2<f64>> = Vec::new();
        let input_tangent = tangent.map(|k| {
            let mut t = Array2::zeros((batch, arch.input_dim));
            t.column_mut(k).fill(1.0);
            t
        });

        for l in 0..arch.hidden_layers {
            let w = self.weights(l);
            let prev: ArrayView2<f64> = if l == 0 { inputs.view() } else { zs[l - 1].view() };
            let mut pre = Array2::zeros((batch, arch.width));
            pre.assign(&self.bias(l).broadcast((batch, arch.width)).unwrap());
            general_mat_mul(1.0, &prev, &w.t(), 1.0, &mut pre);
            let y = pre.mapv_into(|v| act.apply(v));

            let at = tangent.map(|_| {
                let prev_t = if l == 0 {
                    input_tangent.as_ref().unwrap().view()
                } else {
                    zts[l - 1].view()
                };
                prev_t.dot(&w.t())
            });

            let mut z = y.clone();
            let mut zt = at.as_ref().map(|at| {
                let mut yt = at.clone();
                yt.zip_mut_with(&y, |v, &yv| *v *= act.d1(yv));
                yt
            });
            if arch.closes_block(l) {
                let src = l - 1;
                if src == 0 {
                    add_padded(&mut z, inputs);
                    if let (Some(zt), Some(it)) = (zt.as_mut(), input_tangent.as_ref()) {
                        add_padded(zt, it.view());
                    }
                } else {
                    z += &zs[src - 1];
                    if let Some(zt) = zt.as_mut() {
                        *zt += &zts[src - 1];
                    }
                }
            }
            ys.push(y);
            zs.push(z);
            if let (Some(at), Some(zt)) = (at, zt) {
                ats.push(at);
                zts.push(zt);
            }
        }

        let last = &zs[arch.hidden_layers - 1];
        let wo = self.output_weights();
        let mut values = last.dot(&wo);
        values += self.output_bias();
        let tangents = tangent.map(|_| zts[arch.hidden_layers - 1].dot(&wo));

        BatchTape {
            inputs: inputs.to_owned(),
            input_tangent,
            ys,
            zs,
            ats,
            zts,
            values,
            tangents,
        }
    }

    /// Accumulate into `grad` the parameter gradient of
    /// `sum_b adj[b] * N_b + adj_t[b] * dN_b/dx_k`. Returns the input
    /// adjoint when `want_input` is set (value part only).
    pub fn backward_batch(
        &self,
        tape: &BatchTape,
        adj: &[f64],
        adj_t: Option<&[f64]>,
        grad: &mut [f64],
        want_input: bool,
    ) -> Option<Array2<f64>> {
        let arch = &self.arch;
        let act = arch.activation;
        let batch = tape.values.len();
        assert_eq!(adj.len(), batch);
        assert_eq!(grad.len(), self.len());
        let tangent = adj_t.is_some() && tape.tangents.is_some();
        let adj = ArrayView1::from(adj);
        let adj_t = adj_t.map(ArrayView1::from);

        let wo = self.output_weights();
        let last = arch.hidden_layers - 1;
        {
            let off = arch.output_offset();
            let mut gwo = ArrayViewMut1::from(&mut grad[off..off + arch.width]);
            gwo.scaled_add(1.0, &tape.zs[last].t().dot(&adj));
            if tangent {
                gwo.scaled_add(1.0, &tape.zts[last].t().dot(&adj_t.unwrap()));
            }
            if arch.output_bias {
                grad[off + arch.width] += adj.sum();
            }
        }

        let outer = |a: ArrayView1<f64>| {
            let mut m = Array2::zeros((batch, arch.width));
            for (mut row, &s) in m.axis_iter_mut(Axis(0)).zip(a.iter()) {
                row.scaled_add(s, &wo);
            }
            m
        };
        let mut dz = outer(adj);
        let mut dzt = if tangent { Some(outer(adj_t.unwrap())) } else { None };
        // Adjoint owed to a skip source, keyed by the layer that consumes it.
        let mut pending: Option<(Array2<f64>, Option<Array2<f64>>)> = None;
        let mut input_adj = None;

        for l in (0..arch.hidden_layers).rev() {
            if arch.closes_block(l) {
                pending = Some((dz.clone(), dzt.clone()));
            }
            let y = &tape.ys[l];
            // da = dz * s'(a) + dzt * s''(a) * a_t ; da_t = dzt * s'(a)
            let mut da = dz;
            da.zip_mut_with(y, |d, &yv| *d *= act.d1(yv));
            let mut dat = None;
            if let Some(dzt) = dzt {
                let mut extra = dzt.clone();
                ndarray::Zip::from(&mut extra)
                    .and(y)
                    .and(&tape.ats[l])
                    .for_each(|e, &yv, &at| *e *= act.d2(yv) * at);
                da += &extra;
                let mut t = dzt;
                t.zip_mut_with(y, |d, &yv| *d *= act.d1(yv));
                dat = Some(t);
            }

            let (w_off, b_off) = arch.layer_offsets(l);
            let fan_in = arch.layer_in(l);
            let prev = if l == 0 {
                tape.inputs.view()
            } else {
                tape.zs[l - 1].view()
            };
            {
                let mut gw =
                    ArrayViewMut2::from_shape((arch.width, fan_in), &mut grad[w_off..b_off])
                        .unwrap();
                general_mat_mul(1.0, &da.t(), &prev, 1.0, &mut gw);
                if let Some(dat) = &dat {
                    let prev_t = if l == 0 {
                        tape.input_tangent.as_ref().unwrap().view()
                    } else {
                        tape.zts[l - 1].view()
                    };
                    general_mat_mul(1.0, &dat.t(), &prev_t, 1.0, &mut gw);
                }
            }
            {
                let mut gb = ArrayViewMut1::from(&mut grad[b_off..b_off + arch.width]);
                gb += &da.sum_axis(Axis(0));
            }

            if l == 0 && !want_input {
                break;
            }
            let w = self.weights(l);
            let mut dprev = da.dot(&w);
            let mut dprev_t = dat.map(|d| d.dot(&w));
            if l > 0 && arch.closes_block(l + 1) {
                // layer l-1's output feeds the skip that closes at l+1.
                if let Some((s, st)) = pending.take() {
                    dprev += &s;
                    if let (Some(dt), Some(st)) = (dprev_t.as_mut(), st) {
                        *dt += &st;
                    }
                }
            }
            if l == 0 {
                if let Some((s, _)) = pending.take() {
                    let n = arch.input_dim.min(arch.width);
                    let mut head = dprev.slice_mut(ndarray::s![.., ..n]);
                    head += &s.slice(ndarray::s![.., ..n]);
                }
                input_adj = Some(dprev);
                break;
            }
            dz = dprev;
            dzt = dprev_t;
        }
        input_adj
    }
}

/// `z[:, k] += x[:, k]` for `k < min(width, input_dim)`.
fn add_padded(z: &mut Array2<f64>, x: ArrayView2<'_, f64>) {
    let n = z.ncols().min(x.ncols());
    let mut head = z.slice_mut(ndarray::s![.., ..n]);
    head += &x.slice(ndarray::s![.., ..n]);
}

/// Activations recorded by [`MlpParams::forward_batch`].
#[derive(Debug, Clone)]
pub struct BatchTape {
    inputs: Array2<f64>,
    input_tangent: Option<Array2<f64>>,
    ys: Vec<Array2<f64>>,
    zs: Vec<Array2<f64>>,
    /// Pre-activation tangents.
    ats: Vec<Array2<f64>>,
    zts: Vec<Array2<f64>>,
    values: Array1<f64>,
    tangents: Option<Array1<f64>>,
}

impl BatchTape {
    pub fn values(&self) -> &[f64] {
        self.values.as_slice().unwrap()
    }

    pub fn tangents(&self) -> Option<&[f64]> {
        self.tangents.as_ref().map(|t| t.as_slice().unwrap())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Write a checkpoint: an architecture line, a count line, then one value per
/// line in shortest round-trip form.
pub fn write_checkpoint<W: Write>(params: &MlpParams, mut out: W) -> Result<()> {
    writeln!(out, "# dgnet mlp checkpoint")?;
    writeln!(out, "arch {}", params.arch)?;
    writeln!(out, "count {}", params.len())?;
    for v in params.as_slice() {
        writeln!(out, "{v:e}")?;
    }
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<MlpParams> {
    let mut arch = None;
    let mut count = None;
    let mut data = Vec::new();
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("arch ") {
            arch = Some(rest.parse::<Architecture>()?);
        } else if let Some(rest) = line.strip_prefix("count ") {
            count = Some(
                rest.parse::<usize>()
                    .map_err(|e| Error::Checkpoint(format!("count: {e}")))?,
            );
        } else {
            data.push(
                line.parse::<f64>()
                    .map_err(|e| Error::Checkpoint(format!("value `{line}`: {e}")))?,
            );
        }
    }
    let arch = arch.ok_or_else(|| Error::Checkpoint("missing arch line".into()))?;
    if let Some(c) = count {
        if c != data.len() {
            return Err(Error::Checkpoint(format!(
                "count {c} but {} values",
                data.len()
            )));
        }
    }
    MlpParams::from_flat(arch, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{central_difference_gradient, reference_forward};
    use proptest::prelude::*;
    use rand::Rng;

    fn arch(input_dim: usize, layers: usize, width: usize, shortcuts: usize) -> Architecture {
        Architecture::new(input_dim, layers, width, shortcuts)
    }

    #[test]
    fn published_parameter_counts() {
        let cases = [
            (2, 4, 20, 1341),
            (3, 4, 40, 5121),
            (4, 4, 60, 11341),
            (1 + 1 + 2, 6, 40, 8441),
            (1 + 1 + 10, 6, 50, 13451),
            (1 + 1 + 50, 6, 100, 55901),
            (1 + 1 + 100, 6, 200, 221801),
            (1 + 1 + 200, 6, 400, 883601),
            (1 + 3 + 50, 6, 100, 56101),
            (1 + 3 + 100, 6, 200, 222201),
        ];
        for (inp, l, w, expected) in cases {
            assert_eq!(arch(inp, l, w, 2).param_count(), expected, "{inp} {l} {w}");
        }
        // Published counts that the formula does not reproduce.
        assert_eq!(arch(1 + 1 + 5, 6, 50, 3).param_count(), 13201);
        assert_eq!(arch(2, 6, 50, 2).param_count(), 12951);
        assert_ne!(arch(2, 6, 60, 2).param_count(), 12951);
    }

    #[test]
    fn rejects_too_many_shortcuts() {
        assert!(MlpParams::zeros(arch(2, 3, 5, 2)).is_err());
        assert!(MlpParams::zeros(arch(2, 4, 5, 2)).is_ok());
    }

    #[test]
    fn init_is_deterministic() {
        let a = arch(2, 4, 20, 2);
        let p1 = MlpParams::init(a, 1).unwrap();
        let p1b = MlpParams::init(a, 1).unwrap();
        let p2 = MlpParams::init(a, 2).unwrap();
        assert_eq!(p1.as_slice(), p1b.as_slice());
        assert_ne!(p1.as_slice(), p2.as_slice());
        let bound = (6.0f64 / 22.0).sqrt();
        assert!(p1.as_slice()[..40].iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn zero_network_outputs_bias() {
        let a = arch(3, 4, 8, 2);
        let mut p = MlpParams::zeros(a).unwrap();
        assert_eq!(p.forward(&[0.3, -1.0, 2.0]).unwrap(), 0.0);
        let n = p.len();
        p.as_mut_slice()[n - 1] = 0.75;
        assert_eq!(p.forward(&[0.3, -1.0, 2.0]).unwrap(), 0.75);
        let (_, g, _) = p.backprop(&[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(g[n - 1], 1.0);
        // With zero hidden weights only the output weights see the skip path.
        let nonzero: Vec<usize> = (0..n).filter(|&i| g[i] != 0.0).collect();
        let out_off = a.output_offset();
        assert!(nonzero.iter().all(|&i| i >= out_off), "{nonzero:?}");
    }

    #[test]
    fn single_unit_tanh() {
        let a = arch(1, 1, 1, 0);
        let p = MlpParams::from_flat(a, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(p.forward(&[0.0]).unwrap(), 0.0);
        assert!((p.forward(&[0.5]).unwrap() - 0.5f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let p = MlpParams::zeros(arch(2, 2, 3, 1)).unwrap();
        assert!(matches!(
            p.forward(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn batch_matches_reference_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (a, seed) in [
            (arch(2, 4, 20, 2), 1),
            (arch(5, 6, 7, 3), 2),
            (arch(12, 4, 6, 1), 3),
            (arch(3, 3, 4, 0).with_activation(Activation::Sigmoid), 4),
        ] {
            let p = MlpParams::init(a, seed).unwrap();
            let rows: Vec<Vec<f64>> = (0..100)
                .map(|_| (0..a.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            let x = ArrayView2::from_shape((100, a.input_dim), &flat).unwrap();
            let tape = p.forward_batch(x, None);
            for (row, &v) in rows.iter().zip(tape.values()) {
                let r = reference_forward(&p, row);
                assert!((v - r).abs() <= 1e-14 * r.abs().max(1.0), "{v} {r}");
            }
        }
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-12);
        num / den
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..50 {
            let a = arch(1 + case % 4, 2 + case % 5, 3 + case % 6, (case % 3).min((2 + case % 5) / 2));
            let p = MlpParams::init(a, case as u64).unwrap();
            let x: Vec<f64> = (0..a.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (_, g, gx) = p.backprop(&x).unwrap();
            let fd = central_difference_gradient(
                |theta| {
                    MlpParams::from_flat(a, theta.to_vec())
                        .unwrap()
                        .forward(&x)
                        .unwrap()
                },
                p.as_slice(),
                1e-5,
            );
            assert!(rel_err(&g, &fd) <= 1e-6, "case {case}: {}", rel_err(&g, &fd));
            let fdx = central_difference_gradient(|xx| p.forward(xx).unwrap(), &x, 1e-5);
            assert!(rel_err(&gx, &fdx) <= 1e-6, "case {case} input");
        }
    }

    #[test]
    fn tangent_matches_input_gradient() {
        let a = arch(3, 4, 9, 2);
        let p = MlpParams::init(a, 5).unwrap();
        let x = [0.2, -0.4, 0.9];
        let (_, _, gx) = p.backprop(&x).unwrap();
        for k in 0..3 {
            let (_, t) = p.forward_with_tangent(&x, k).unwrap();
            assert!((t - gx[k]).abs() < 1e-13);
        }
    }

    #[test]
    fn tangent_parameter_gradient_matches_finite_differences() {
        for (a, seed) in [
            (arch(2, 4, 6, 2), 1u64),
            (arch(3, 3, 5, 1).with_activation(Activation::Sigmoid), 2),
        ] {
            let p = MlpParams::init(a, seed).unwrap();
            let x = [0.35, -0.6, 0.1];
            let x = &x[..a.input_dim];
            // objective: 0.7 N + 1.3 dN/dx0
            let xv = ArrayView2::from_shape((1, a.input_dim), x).unwrap();
            let tape = p.forward_batch(xv, Some(0));
            let mut g = vec![0.0; p.len()];
            p.backward_batch(&tape, &[0.7], Some(&[1.3]), &mut g, false);
            let fd = central_difference_gradient(
                |theta| {
                    let q = MlpParams::from_flat(a, theta.to_vec()).unwrap();
                    let (v, t) = q.forward_with_tangent(x, 0).unwrap();
                    0.7 * v + 1.3 * t
                },
                p.as_slice(),
                1e-5,
            );
            assert!(rel_err(&g, &fd) <= 1e-6, "{}", rel_err(&g, &fd));
        }
    }

    #[test]
    fn directional_derivative_identity() {
        let a = arch(2, 4, 10, 2);
        let p = MlpParams::init(a, 8).unwrap();
        let x = [0.5, 0.25];
        let (_, g, _) = p.backprop(&x).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v: Vec<f64> = (0..p.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dot: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
        let eval = |eps: f64| {
            let th: Vec<f64> = p.as_slice().iter().zip(&v).map(|(t, d)| t + eps * d).collect();
            MlpParams::from_flat(a, th).unwrap().forward(&x).unwrap()
        };
        let err = |eps: f64| ((eval(eps) - eval(-eps)) / (2.0 * eps) - dot).abs();
        assert!(err(1e-4) < 1e-6);
        // Second-order: shrinking eps by 10 shrinks the error ~100x.
        assert!(err(1e-2) > 20.0 * err(1e-3));
    }

    #[test]
    fn checkpoint_round_trip() {
        let a = arch(4, 4, 7, 2).with_activation(Activation::Sigmoid);
        let p = MlpParams::init(a, 77).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        let q = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(p, q);
        assert!(read_checkpoint(&b"count 3\n1\n2\n3\n"[..]).is_err());
    }

    proptest! {
        #[test]
        fn flatten_round_trip(seed in 0u64..1000, w in 1usize..6, l in 1usize..5) {
            let a = arch(3, l, w, l / 2);
            let p = MlpParams::init(a, seed).unwrap();
            let q = MlpParams::from_flat(a, p.clone().into_flat()).unwrap();
            prop_assert_eq!(p.len(), a.param_count());
            prop_assert_eq!(p, q);
        }
    }
}

//! Quantizer, learned factorized prior and rate estimate.
//!
//! Each latent channel `i` has its own monotone CDF
//! `c_i = sigmoid(f_K(... f_1(x)))` with `f_j(x) = g_j(H_j x + b_j)` and
//! `g_j(x) = x + a_j * tanh(x)` for all but the last layer. `H_j` is passed
//! through softplus (so every `H_j` is nonnegative and `c_i` is nondecreasing)
//! and `a_j` through tanh (so `g_j` is nondecreasing). The probability of an
//! integer `v` is the CDF mass of the unit bin around it,
//! `c_i(v + 1/2) - c_i(v - 1/2)`, i.e. the density convolved with a unit
//! uniform and sampled at `v`.

mod tables;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::LN_2;

#[allow(unused_imports)] // the inherent methods shadow it when std is linked
use num_traits::Float;
use rand::Rng as _;

use crate::autodiff::{Tape, Tensor, Var};
use crate::{Error, Result};

pub use tables::{build_cdf_tables, ChannelTable, FREQ_BITS, FREQ_TOTAL, MAX_SUPPORT};

/// Probabilities are floored here before taking logarithms.
pub const LIKELIHOOD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantizerMode {
    /// Nearest integer, half away from zero. Used whenever bits are produced.
    Round,
    /// `z + u` with `u ~ U(-1/2, 1/2)`; training relaxation.
    AdditiveNoise,
    /// Rounds forward, identity backward; training relaxation.
    StraightThrough,
}

/// Applies `mode` to `z`. `seed` drives the noise of [`QuantizerMode::AdditiveNoise`].
pub fn quantize(z: &[f64], mode: QuantizerMode, seed: u64) -> Result<Vec<f64>> {
    if let Some(i) = z.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("latent entry {i}")));
    }
    Ok(match mode {
        QuantizerMode::Round | QuantizerMode::StraightThrough => z.iter().map(|v| v.round()).collect(),
        QuantizerMode::AdditiveNoise => {
            let noise = uniform_noise(z.len(), seed);
            z.iter().zip(noise).map(|(v, u)| v + u).collect()
        }
    })
}

/// `len` draws from `U(-1/2, 1/2)`.
pub fn uniform_noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = crate::rng_from_seed(seed);
    (0..len).map(|_| rng.gen::<f64>() - 0.5).collect()
}

/// Applies `mode` on a tape; for noise, `seed` selects the draw.
pub fn quantize_on_tape(tape: &mut Tape, z: Var, mode: QuantizerMode, seed: u64) -> Result<Var> {
    match mode {
        QuantizerMode::Round => {
            let rounded = tape.value(z).map(Float::round);
            Ok(tape.constant(rounded))
        }
        QuantizerMode::StraightThrough => Ok(tape.round_straight_through(z)),
        QuantizerMode::AdditiveNoise => {
            let shape = tape.value(z).shape().to_vec();
            let noise = Tensor::new(&shape, uniform_noise(tape.value(z).len(), seed))?;
            let u = tape.constant(noise);
            tape.add(z, u)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityConfig {
    /// Widths between the scalar input and the scalar output of each channel's CDF network.
    pub interior_widths: Vec<usize>,
    /// Rough spread of the initial density.
    pub init_scale: f64,
    /// Probability mass allowed outside a coding table's support.
    pub tail_mass: f64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self { interior_widths: vec![3, 3, 3], init_scale: 10.0, tail_mass: 1e-9 }
    }
}

impl DensityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.interior_widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArgument("density widths must be positive".into()));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidArgument("density init scale must be positive".into()));
        }
        if !(self.tail_mass > 0.0 && self.tail_mass < 0.5) {
            return Err(Error::InvalidArgument(format!("tail mass {} outside (0, 0.5)", self.tail_mass)));
        }
        Ok(())
    }

    /// `[1, interior..., 1]`
    pub fn chain(&self) -> Vec<usize> {
        let mut c = vec![1];
        c.extend(&self.interior_widths);
        c.push(1);
        c
    }
}

/// Per-channel parameters of the factorized prior (all channels share one shape).
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedDensity {
    pub channels: usize,
    pub tail_mass: f64,
    /// Raw (pre-softplus) matrices, `[channels, out, in]` per layer.
    pub matrices: Vec<Tensor>,
    /// `[channels * out]` per layer.
    pub biases: Vec<Tensor>,
    /// Raw (pre-tanh) gate factors, `[channels * out]` for every layer but the last.
    pub factors: Vec<Tensor>,
}

/// Density parameters recorded on a tape.
#[derive(Debug, Clone)]
pub struct BoundDensity {
    pub matrices: Vec<Var>,
    pub biases: Vec<Var>,
    pub factors: Vec<Var>,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `sigmoid(u) - sigmoid(l)` computed without cancellation in the tails.
pub(crate) fn bin_mass(l: f64, u: f64) -> f64 {
    let s = if l + u > 0.0 { -1.0 } else { 1.0 };
    (sigmoid(s * u) - sigmoid(s * l)).abs()
}

impl FactorizedDensity {
    /// Initial density: a wide, roughly logistic bump around zero with random
    /// biases so that units within a layer start out distinct.
    pub fn init(channels: usize, config: &DensityConfig, seed: u64) -> Result<Self> {
        let mut d = Self::init_symmetric(channels, config)?;
        let mut rng = crate::rng_from_seed(seed);
        for b in &mut d.biases {
            b.data_mut().iter_mut().for_each(|v| *v = rng.gen::<f64>() - 0.5);
        }
        Ok(d)
    }

    /// Like [`FactorizedDensity::init`] but with zero biases, giving CDFs with
    /// `c(-x) = 1 - c(x)`.
    pub fn init_symmetric(channels: usize, config: &DensityConfig) -> Result<Self> {
        config.validate()?;
        if channels == 0 {
            return Err(Error::InvalidArgument("density needs at least one channel".into()));
        }
        let chain = config.chain();
        let layers = chain.len() - 1;
        let scale = config.init_scale.powf(1.0 / layers as f64);
        let mut matrices = Vec::new();
        let mut biases = Vec::new();
        let mut factors = Vec::new();
        for j in 0..layers {
            let (din, dout) = (chain[j], chain[j + 1]);
            let init = (1.0 / scale / dout as f64).exp_m1().ln();
            matrices.push(Tensor::filled(&[channels, dout, din], init));
            biases.push(Tensor::zeros(&[channels * dout]));
            if j + 1 < layers {
                factors.push(Tensor::zeros(&[channels * dout]));
            }
        }
        Ok(Self { channels, tail_mass: config.tail_mass, matrices, biases, factors })
    }

    pub fn layers(&self) -> usize {
        self.matrices.len()
    }

    pub(crate) fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for j in 0..self.layers() {
            out.push((format!("density.{j}.matrix"), &self.matrices[j]));
            out.push((format!("density.{j}.bias"), &self.biases[j]));
            if let Some(f) = self.factors.get(j) {
                out.push((format!("density.{j}.factor"), f));
            }
        }
        out
    }

    pub(crate) fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        let mut factors = self.factors.iter_mut();
        for (j, (m, b)) in self.matrices.iter_mut().zip(self.biases.iter_mut()).enumerate() {
            out.push((format!("density.{j}.matrix"), m));
            out.push((format!("density.{j}.bias"), b));
            if let Some(f) = factors.next() {
                out.push((format!("density.{j}.factor"), f));
            }
        }
        out
    }

    pub(crate) fn bind_vars(&self, next: &mut impl FnMut() -> Result<Var>) -> Result<BoundDensity> {
        let mut bound = BoundDensity { matrices: Vec::new(), biases: Vec::new(), factors: Vec::new() };
        for j in 0..self.layers() {
            bound.matrices.push(next()?);
            bound.biases.push(next()?);
            if j < self.factors.len() {
                bound.factors.push(next()?);
            }
        }
        Ok(bound)
    }

    /// Parameters with the positivity and gating reparameterizations applied.
    pub fn evaluator(&self) -> DensityEvaluator {
        DensityEvaluator {
            channels: self.channels,
            matrices: self.matrices.iter().map(|m| (m.shape()[1], m.shape()[2], m.data().iter().map(|&v| softplus(v)).collect())).collect(),
            biases: self.biases.iter().map(|b| b.data().to_vec()).collect(),
            gates: self.factors.iter().map(|f| f.data().iter().map(|v| v.tanh()).collect()).collect(),
        }
    }

    /// `c_channel(x)`.
    pub fn cdf(&self, channel: usize, x: f64) -> f64 {
        self.evaluator().cdf(channel, x)
    }
}

/// Fast scalar evaluation of a [`FactorizedDensity`].
#[derive(Debug, Clone)]
pub struct DensityEvaluator {
    channels: usize,
    /// `(out, in, softplus(H))` per layer
    matrices: Vec<(usize, usize, Vec<f64>)>,
    biases: Vec<Vec<f64>>,
    gates: Vec<Vec<f64>>,
}

impl DensityEvaluator {
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Logit of `c_channel(x)`.
    pub fn logit(&self, channel: usize, x: f64) -> f64 {
        let mut v = [0.0f64; 16];
        let mut u = [0.0f64; 16];
        v[0] = x;
        let mut width = 1;
        for (j, (dout, din, h)) in self.matrices.iter().enumerate() {
            debug_assert!(*dout <= 16 && *din == width);
            for o in 0..*dout {
                let row = &h[(channel * dout + o) * din..(channel * dout + o + 1) * din];
                let mut acc = self.biases[j][channel * dout + o];
                for i in 0..*din {
                    acc += row[i] * v[i];
                }
                if let Some(g) = self.gates.get(j) {
                    acc += g[channel * dout + o] * acc.tanh();
                }
                u[o] = acc;
            }
            v[..*dout].copy_from_slice(&u[..*dout]);
            width = *dout;
        }
        v[0]
    }

    pub fn cdf(&self, channel: usize, x: f64) -> f64 {
        sigmoid(self.logit(channel, x)).clamp(0.0, 1.0)
    }

    /// Mass of the unit bin centered at `v`.
    pub fn likelihood(&self, channel: usize, v: f64) -> f64 {
        bin_mass(self.logit(channel, v - 0.5), self.logit(channel, v + 0.5))
    }
}

/// `c_channel(x)` for a density.
pub fn density_cdf(density: &FactorizedDensity, channel: usize, x: f64) -> f64 {
    density.cdf(channel, x)
}

/// Per-element bin probabilities of `z_hat`; element `i` uses channel `i % channels`.
pub fn likelihood(z_hat: &[f64], density: &FactorizedDensity) -> Vec<f64> {
    let ev = density.evaluator();
    z_hat.iter().enumerate().map(|(i, &v)| ev.likelihood(i % ev.channels, v)).collect()
}

/// Estimated bits `sum_i -log2 p_i(z_hat_i)`, probabilities floored at [`LIKELIHOOD_FLOOR`].
pub fn rate_bits(z_hat: &[f64], density: &FactorizedDensity) -> f64 {
    likelihood(z_hat, density).into_iter().map(|p| -p.max(LIKELIHOOD_FLOOR).ln() / LN_2).sum()
}

fn logits_on_tape(tape: &mut Tape, prepared: &PreparedDensity, x: Var) -> Result<Var> {
    let mut h = x;
    for j in 0..prepared.matrices.len() {
        h = tape.channel_linear(h, prepared.matrices[j], prepared.biases[j])?;
        if let Some(&gate) = prepared.gates.get(j) {
            let t = tape.tanh(h);
            let gated = tape.mul_row(t, gate)?;
            h = tape.add(h, gated)?;
        }
    }
    Ok(h)
}

struct PreparedDensity {
    matrices: Vec<Var>,
    biases: Vec<Var>,
    gates: Vec<Var>,
}

fn prepare(tape: &mut Tape, bound: &BoundDensity) -> PreparedDensity {
    PreparedDensity {
        matrices: bound.matrices.iter().map(|&m| tape.softplus(m)).collect(),
        biases: bound.biases.clone(),
        gates: bound.factors.iter().map(|&f| tape.tanh(f)).collect(),
    }
}

/// Bin probabilities of `x: [batch, channels]` on a tape.
pub fn likelihood_on_tape(tape: &mut Tape, bound: &BoundDensity, x: Var) -> Result<Var> {
    let prepared = prepare(tape, bound);
    let lower = tape.add_scalar(x, -0.5);
    let upper = tape.add_scalar(x, 0.5);
    let lo = logits_on_tape(tape, &prepared, lower)?;
    let hi = logits_on_tape(tape, &prepared, upper)?;
    tape.bin_probability(lo, hi)
}

/// Estimated bits per batch row of `x: [batch, channels]`, giving `[batch]`.
pub fn rate_on_tape(tape: &mut Tape, bound: &BoundDensity, x: Var) -> Result<Var> {
    let p = likelihood_on_tape(tape, bound, x)?;
    let bits = tape.neg_log2(p, LIKELIHOOD_FLOOR);
    tape.row_sum(bits)
}

#[cfg(test)]
mod tests;

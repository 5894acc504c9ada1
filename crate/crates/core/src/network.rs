//! Analysis transform (per-point MLP + feature-wise max) and synthesis
//! transform (fully connected decoder), plus the parameter container.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // the inherent methods shadow it when std is linked
use num_traits::Float;
use rand::Rng as _;

use crate::autodiff::{NormMode, Tape, Tensor, Var};
use crate::entropy::{BoundDensity, DensityConfig, FactorizedDensity};
use crate::{Error, PointCloud, Result};

/// Point-count tiers and their latent sizes.
pub const TIERS: [(usize, usize); 5] = [(2048, 512), (1024, 256), (512, 128), (256, 64), (128, 32)];

/// Encoder hidden widths; the last encoder layer has the latent width.
pub const ENCODER_HIDDEN: [usize; 4] = [64, 128, 128, 256];
pub const DECODER_HIDDEN: [usize; 2] = [256, 256];

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LayerOrder {
    /// linear, ReLU, batch norm
    #[default]
    LinearReluNorm,
    /// linear, batch norm, ReLU
    LinearNormRelu,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureConfig {
    pub input_points: usize,
    pub latent_dim: usize,
    /// Widths of the per-point layers; the last one equals `latent_dim`.
    pub encoder_widths: Vec<usize>,
    /// Widths of the fully connected layers; the last one equals `3 * output_points`.
    pub decoder_widths: Vec<usize>,
    pub output_points: usize,
    /// Whether the layer producing the latent channels also has ReLU + norm.
    pub activation_on_last_encoder_layer: bool,
    pub layer_order: LayerOrder,
    pub density: DensityConfig,
}

impl ArchitectureConfig {
    /// Default architecture for `input_points` points and a `latent_dim` code.
    pub fn new(input_points: usize, latent_dim: usize) -> Self {
        let mut encoder_widths = ENCODER_HIDDEN.to_vec();
        encoder_widths.push(latent_dim);
        let mut decoder_widths = DECODER_HIDDEN.to_vec();
        decoder_widths.push(3 * input_points);
        Self {
            input_points,
            latent_dim,
            encoder_widths,
            decoder_widths,
            output_points: input_points,
            activation_on_last_encoder_layer: true,
            layer_order: LayerOrder::default(),
            density: DensityConfig::default(),
        }
    }

    /// Preset for one of the [`TIERS`].
    pub fn for_tier(points: usize) -> Result<Self> {
        TIERS
            .iter()
            .find(|(n, _)| *n == points)
            .map(|&(n, k)| Self::new(n, k))
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "{points} is not a tier; expected one of {:?}",
                    TIERS.map(|t| t.0)
                ))
            })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.input_points == 0 || self.latent_dim == 0 || self.output_points == 0 {
            return bad("point counts and latent size must be positive".into());
        }
        if self.encoder_widths.iter().chain(&self.decoder_widths).any(|&w| w == 0) {
            return bad("layer widths must be positive".into());
        }
        if self.encoder_widths.last() != Some(&self.latent_dim) {
            return bad(format!(
                "last encoder width {:?} must equal the latent size {}",
                self.encoder_widths.last(),
                self.latent_dim
            ));
        }
        if self.decoder_widths.last() != Some(&(3 * self.output_points)) {
            return bad(format!(
                "last decoder width {:?} must equal 3 x {} output points",
                self.decoder_widths.last(),
                self.output_points
            ));
        }
        self.density.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    /// `[in, out]`
    pub weight: Tensor,
    pub bias: Tensor,
    /// Present on layers followed by ReLU + batch norm.
    pub norm: Option<NormParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `[in, out]`
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Settings a model was trained with; informational only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingMetadata {
    pub lambda: f64,
    pub entropy_optimization: bool,
}

impl Default for TrainingMetadata {
    fn default() -> Self {
        Self { lambda: 0.0, entropy_optimization: true }
    }
}

/// All weights of encoder, decoder and factorized density.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub config: ArchitectureConfig,
    pub encoder: Vec<EncoderLayer>,
    pub decoder: Vec<DenseLayer>,
    pub density: FactorizedDensity,
    pub metadata: TrainingMetadata,
}

/// A named tensor of a model.
#[derive(Debug)]
pub struct NamedTensor<'a> {
    pub name: String,
    pub tensor: &'a Tensor,
    pub trainable: bool,
}

fn he_uniform(rng: &mut crate::Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_parts(vec![fan_in, fan_out], data)
}

impl ModelParameters {
    /// Fresh parameters: He-uniform weights, zero biases, unit batch-norm scale.
    pub fn init(config: &ArchitectureConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = crate::rng_from_seed(seed);
        let mut encoder = Vec::new();
        let mut fan_in = 3;
        for (i, &w) in config.encoder_widths.iter().enumerate() {
            let last = i + 1 == config.encoder_widths.len();
            let norm = (!last || config.activation_on_last_encoder_layer).then(|| NormParams {
                gamma: Tensor::filled(&[w], 1.0),
                beta: Tensor::zeros(&[w]),
                running_mean: Tensor::zeros(&[w]),
                running_var: Tensor::filled(&[w], 1.0),
            });
            encoder.push(EncoderLayer { weight: he_uniform(&mut rng, fan_in, w), bias: Tensor::zeros(&[w]), norm });
            fan_in = w;
        }
        let mut decoder = Vec::new();
        let mut fan_in = config.latent_dim;
        for &w in &config.decoder_widths {
            decoder.push(DenseLayer { weight: he_uniform(&mut rng, fan_in, w), bias: Tensor::zeros(&[w]) });
            fan_in = w;
        }
        let density = FactorizedDensity::init(config.latent_dim, &config.density, rng.gen())?;
        Ok(Self { config: config.clone(), encoder, decoder, density, metadata: TrainingMetadata::default() })
    }

    /// Every tensor with its stable name, in serialization order.
    pub fn tensors<'a>(&'a self) -> Vec<NamedTensor<'a>> {
        let mut out = Vec::new();
        let mut add = |name: String, tensor: &'a Tensor, trainable: bool| {
            out.push(NamedTensor { name, tensor, trainable });
        };
        for (i, l) in self.encoder.iter().enumerate() {
            add(format!("encoder.{i}.weight"), &l.weight, true);
            add(format!("encoder.{i}.bias"), &l.bias, true);
            if let Some(n) = &l.norm {
                add(format!("encoder.{i}.gamma"), &n.gamma, true);
                add(format!("encoder.{i}.beta"), &n.beta, true);
                add(format!("encoder.{i}.running_mean"), &n.running_mean, false);
                add(format!("encoder.{i}.running_var"), &n.running_var, false);
            }
        }
        for (i, l) in self.decoder.iter().enumerate() {
            add(format!("decoder.{i}.weight"), &l.weight, true);
            add(format!("decoder.{i}.bias"), &l.bias, true);
        }
        for (name, t) in self.density.named() {
            add(name, t, true);
        }
        out
    }

    /// Mutable counterpart of [`ModelParameters::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor, bool)> {
        let mut out = Vec::new();
        for (i, l) in self.encoder.iter_mut().enumerate() {
            out.push((format!("encoder.{i}.weight"), &mut l.weight, true));
            out.push((format!("encoder.{i}.bias"), &mut l.bias, true));
            if let Some(n) = &mut l.norm {
                out.push((format!("encoder.{i}.gamma"), &mut n.gamma, true));
                out.push((format!("encoder.{i}.beta"), &mut n.beta, true));
                out.push((format!("encoder.{i}.running_mean"), &mut n.running_mean, false));
                out.push((format!("encoder.{i}.running_var"), &mut n.running_var, false));
            }
        }
        for (i, l) in self.decoder.iter_mut().enumerate() {
            out.push((format!("decoder.{i}.weight"), &mut l.weight, true));
            out.push((format!("decoder.{i}.bias"), &mut l.bias, true));
        }
        for (name, t) in self.density.named_mut() {
            out.push((name, t, true));
        }
        out
    }

    /// Trainable tensors only, in [`ModelParameters::tensors`] order.
    pub fn trainable(&self) -> Vec<&Tensor> {
        self.tensors().into_iter().filter(|t| t.trainable).map(|t| t.tensor).collect()
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        self.tensors_mut().into_iter().filter(|t| t.2).map(|t| t.1).collect()
    }

    /// Records every trainable tensor on `tape` as a parameter leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let vars: Vec<Var> = self.trainable().into_iter().map(|t| tape.param(t.clone())).collect();
        self.bind_vars(&vars).expect("one var per trainable tensor")
    }

    /// Interprets `vars` (one per trainable tensor, in order) as this model's parameters.
    pub fn bind_vars(&self, vars: &[Var]) -> Result<BoundParams> {
        let mut it = vars.iter().copied();
        let mut next = || {
            it.next().ok_or_else(|| Error::InvalidArgument("too few parameter variables".into()))
        };
        let mut encoder = Vec::new();
        for l in &self.encoder {
            let weight = next()?;
            let bias = next()?;
            let norm = match l.norm {
                Some(_) => Some((next()?, next()?)),
                None => None,
            };
            encoder.push(BoundEncoderLayer { weight, bias, norm, bn_output: None });
        }
        let mut decoder = Vec::new();
        for _ in &self.decoder {
            decoder.push((next()?, next()?));
        }
        let density = self.density.bind_vars(&mut next)?;
        if it.next().is_some() {
            return Err(Error::InvalidArgument("too many parameter variables".into()));
        }
        Ok(BoundParams { encoder, decoder, density })
    }

    /// Blends batch statistics recorded on `tape` into the running statistics.
    pub fn update_running_stats(&mut self, tape: &Tape, bound: &BoundParams) {
        for (layer, bl) in self.encoder.iter_mut().zip(&bound.encoder) {
            let (Some(norm), Some(bn)) = (layer.norm.as_mut(), bl.bn_output) else { continue };
            let Some((_, stats)) = tape.batch_stats().iter().find(|(v, _)| *v == bn) else { continue };
            for (r, &b) in norm.running_mean.data_mut().iter_mut().zip(&stats.mean) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
            }
            for (r, &b) in norm.running_var.data_mut().iter_mut().zip(&stats.var) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.tensor.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct BoundEncoderLayer {
    pub weight: Var,
    pub bias: Var,
    pub norm: Option<(Var, Var)>,
    bn_output: Option<Var>,
}

/// Model parameters recorded on a tape.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub encoder: Vec<BoundEncoderLayer>,
    pub decoder: Vec<(Var, Var)>,
    pub density: BoundDensity,
}

/// Encoder forward pass for `batch` clouds stacked as `[batch * n, 3]`,
/// giving `[batch, k]`.
pub fn encode_on_tape(
    tape: &mut Tape,
    params: &ModelParameters,
    bound: &mut BoundParams,
    points: Var,
    batch: usize,
    mode: NormMode,
) -> Result<Var> {
    let mut h = points;
    for (layer, bl) in params.encoder.iter().zip(bound.encoder.iter_mut()) {
        h = tape.linear(h, bl.weight, Some(bl.bias))?;
        if let (Some(norm), Some((gamma, beta))) = (&layer.norm, bl.norm) {
            let running = (norm.running_mean.data(), norm.running_var.data());
            match params.config.layer_order {
                LayerOrder::LinearReluNorm => {
                    h = tape.relu(h);
                    h = tape.batch_norm(h, gamma, beta, mode, running, BN_EPS)?;
                    bl.bn_output = Some(h);
                }
                LayerOrder::LinearNormRelu => {
                    h = tape.batch_norm(h, gamma, beta, mode, running, BN_EPS)?;
                    bl.bn_output = Some(h);
                    h = tape.relu(h);
                }
            }
        }
    }
    tape.segment_max(h, batch)
}

/// Decoder forward pass `[batch, k] -> [batch, 3 * m]`; no activation on the output layer.
pub fn decode_on_tape(tape: &mut Tape, bound: &BoundParams, latent: Var) -> Result<Var> {
    let mut h = latent;
    let last = bound.decoder.len() - 1;
    for (i, &(w, b)) in bound.decoder.iter().enumerate() {
        h = tape.linear(h, w, Some(b))?;
        if i < last {
            h = tape.relu(h);
        }
    }
    Ok(h)
}

/// Stacks clouds of exactly `n` points into a `[len * n, 3]` tensor.
pub fn stack_clouds(clouds: &[&PointCloud], n: usize) -> Result<Tensor> {
    let mut flat = Vec::with_capacity(clouds.len() * n * 3);
    for pc in clouds {
        if pc.count() != n {
            return Err(Error::PointCount { expected: n, actual: pc.count() });
        }
        flat.extend(pc.to_flat());
    }
    Tensor::new(&[clouds.len() * n, 3], flat)
}

/// Latent code of a cloud with exactly `config.input_points` points.
pub fn encode(pc: &PointCloud, params: &ModelParameters, mode: NormMode) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let x = tape.constant(stack_clouds(&[pc], params.config.input_points)?);
    let mut bound = params.bind(&mut tape);
    let z = encode_on_tape(&mut tape, params, &mut bound, x, 1, mode)?;
    Ok(tape.value(z).data().to_vec())
}

/// Reconstruction (`output_points` points) from a latent of length `latent_dim`.
pub fn decode(latent: &[f64], params: &ModelParameters) -> Result<PointCloud> {
    let k = params.config.latent_dim;
    if latent.len() != k {
        return Err(Error::InvalidArgument(format!("latent has {} entries, expected {k}", latent.len())));
    }
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::new(&[1, k], latent.to_vec())?);
    let bound = params.bind(&mut tape);
    let out = decode_on_tape(&mut tape, &bound, z)?;
    PointCloud::from_flat(tape.value(out).data())
}

#[cfg(test)]
mod tests;

//! Rate-distortion objective, Adam and the training loop.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // the inherent methods shadow it when std is linked
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::autodiff::{NormMode, Tape, Tensor, Var};
use crate::entropy::{quantize_on_tape, rate_on_tape, QuantizerMode};
use crate::network::{decode_on_tape, encode_on_tape, stack_clouds, ArchitectureConfig, BoundParams, ModelParameters, TrainingMetadata};
use crate::{Error, PointCloud, Result};

pub use crate::chamfer::{chamfer_distance, chamfer_distance_accelerated};

pub const DEFAULT_LEARNING_RATE: f64 = 0.0005;
pub const DEFAULT_BATCH_SIZE: usize = 8;
pub const DEFAULT_EPOCHS_WITH_ENTROPY: usize = 1200;
pub const DEFAULT_EPOCHS_WITHOUT_ENTROPY: usize = 500;
pub const DEFAULT_LAMBDAS: [f64; 4] = [1e2, 1e3, 1e4, 1e5];

/// How the Chamfer term enters the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistortionScale {
    /// Chamfer sum divided by the number of input points.
    #[default]
    PerPoint,
    /// Plain Chamfer sum.
    Sum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// When false the network is trained on distortion alone; the density is
    /// still fitted to the (detached) latents so the model remains codable.
    pub entropy_optimization: bool,
    /// Epochs between checkpoints; 0 disables them.
    pub checkpoint_interval: usize,
    pub quantizer: QuantizerMode,
    pub distortion: DistortionScale,
}

impl TrainConfig {
    pub fn new(lambda: f64, entropy_optimization: bool) -> Self {
        Self {
            lambda,
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: default_epochs(entropy_optimization),
            seed: 0,
            entropy_optimization,
            checkpoint_interval: 0,
            quantizer: QuantizerMode::AdditiveNoise,
            distortion: DistortionScale::PerPoint,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::InvalidArgument(m));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size < 2 {
            return bad(format!("batch size must be at least 2, got {}", self.batch_size));
        }
        if self.quantizer == QuantizerMode::Round {
            return bad("rounding has no gradient; train with noise or straight-through".into());
        }
        Ok(())
    }
}

pub fn default_epochs(entropy_optimization: bool) -> usize {
    if entropy_optimization {
        DEFAULT_EPOCHS_WITH_ENTROPY
    } else {
        DEFAULT_EPOCHS_WITHOUT_ENTROPY
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean estimated bits per cloud.
    pub rate_bits: f64,
    /// Mean distortion per cloud, scaled as configured.
    pub chamfer: f64,
    pub loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

/// Batch means of the loss and its two terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossComponents {
    pub loss: f64,
    pub distortion: f64,
    pub rate_bits: f64,
}

/// Loss graph recorded on a tape.
#[derive(Debug)]
pub struct LossGraph {
    /// What gets differentiated; differs from `loss` only when the density is
    /// fitted on detached latents.
    pub objective: Var,
    pub loss: Var,
    pub distortion: Var,
    pub rate: Var,
    pub bound: BoundParams,
    pub param_vars: Vec<Var>,
}

/// Records `lambda * mean(D) + mean(R)` for `batch` on `tape`.
pub fn rd_loss_on_tape(
    tape: &mut Tape,
    params: &ModelParameters,
    batch: &[&PointCloud],
    config: &TrainConfig,
    noise_seed: u64,
) -> Result<LossGraph> {
    let n = params.config.input_points;
    let b = batch.len();
    if b == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let points = stack_clouds(batch, n)?;
    let x = tape.constant(points.clone());
    let target = tape.constant(points.reshape(&[b, 3 * n])?);
    let param_vars: Vec<Var> = params.trainable().into_iter().map(|t| tape.param(t.clone())).collect();
    let mut bound = params.bind_vars(&param_vars)?;
    let z = encode_on_tape(tape, params, &mut bound, x, b, NormMode::Train)?;
    let zq = quantize_on_tape(tape, z, config.quantizer, noise_seed)?;
    let recon = decode_on_tape(tape, &bound, zq)?;
    let cd = tape.chamfer(recon, target)?;
    let cd = match config.distortion {
        DistortionScale::PerPoint => tape.scale(cd, 1.0 / n as f64),
        DistortionScale::Sum => cd,
    };
    let distortion = tape.mean(cd);
    let weighted = tape.scale(distortion, config.lambda);
    let (loss, rate, objective) = if config.entropy_optimization {
        let bits = rate_on_tape(tape, &bound.density, zq)?;
        let rate = tape.mean(bits);
        let loss = tape.add(weighted, rate)?;
        (loss, rate, loss)
    } else {
        let detached = tape.constant(tape.value(zq).clone());
        let bits = rate_on_tape(tape, &bound.density, detached)?;
        let rate = tape.mean(bits);
        let objective = tape.add(weighted, rate)?;
        (weighted, rate, objective)
    };
    Ok(LossGraph { objective, loss, distortion, rate, bound, param_vars })
}

fn components(tape: &Tape, g: &LossGraph) -> LossComponents {
    LossComponents {
        loss: tape.value(g.loss).data()[0],
        distortion: tape.value(g.distortion).data()[0],
        rate_bits: tape.value(g.rate).data()[0],
    }
}

/// Loss and its components for one batch (training-mode normalization).
pub fn rd_loss(batch: &[&PointCloud], params: &ModelParameters, config: &TrainConfig, noise_seed: u64) -> Result<LossComponents> {
    let mut tape = Tape::new();
    let g = rd_loss_on_tape(&mut tape, params, batch, config, noise_seed)?;
    Ok(components(&tape, &g))
}

/// Loss components plus the gradient of the training objective for every
/// trainable tensor, in [`ModelParameters::trainable`] order.
pub fn rd_loss_gradients(
    batch: &[&PointCloud],
    params: &ModelParameters,
    config: &TrainConfig,
    noise_seed: u64,
) -> Result<(LossComponents, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let g = rd_loss_on_tape(&mut tape, params, batch, config, noise_seed)?;
    let grads = tape.backward(g.objective)?;
    let out = g.param_vars.iter().map(|&v| grads.get_or_zeros(v, tape.value(v).len())).collect();
    Ok((components(&tape, &g), out))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> Self {
        Self { m: sizes.iter().map(|&s| vec![0.0; s]).collect(), v: sizes.iter().map(|&s| vec![0.0; s]).collect(), step: 0 }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Vec<f64>], state: &mut AdamState, config: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            detail: format!("{} tensors, {} gradients, {} moment buffers", params.len(), grads.len(), state.m.len()),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || state.m[i].len() != g.len() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                detail: format!("tensor {i}: {} values, gradient {}, moments {}", p.len(), g.len(), state.m[i].len()),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            *w -= config.learning_rate * mhat / (vhat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}

/// Hooks for the caller: a clock and persistence of checkpoints.
pub trait TrainObserver {
    /// Seconds since an arbitrary origin.
    fn now(&mut self) -> f64 {
        0.0
    }

    fn epoch_finished(&mut self, _record: &EpochRecord, _params: &ModelParameters) -> Result<()> {
        Ok(())
    }

    fn checkpoint(&mut self, _epoch: usize, _params: &ModelParameters) -> Result<()> {
        Ok(())
    }
}

/// Observer that does nothing and reports zero elapsed time.
#[derive(Debug, Default, Clone, Copy)]
pub struct Silent;

impl TrainObserver for Silent {}

/// Normalizes `pc` into the unit sphere and downsamples it to `points`, the
/// same preprocessing the codec applies before encoding.
pub fn prepare_cloud(pc: &PointCloud, points: usize) -> Result<PointCloud> {
    let (normalized, _) = crate::geometry::normalize_unit_sphere(pc);
    Ok(crate::sampling::farthest_point_sample(&normalized, crate::sampling::SampleSpec::new(points))?.1)
}

/// Trains a freshly initialized model (seeded by `config.seed`) on `dataset`.
pub fn train(
    dataset: &[PointCloud],
    config: &TrainConfig,
    arch: &ArchitectureConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(ModelParameters, TrainLog)> {
    let params = ModelParameters::init(arch, config.seed)?;
    train_from(params, dataset, config, observer)
}

/// Continues training `params` on `dataset`.
pub fn train_from(
    mut params: ModelParameters,
    dataset: &[PointCloud],
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(ModelParameters, TrainLog)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let n = params.config.input_points;
    if let Some(pc) = dataset.iter().find(|pc| pc.count() != n) {
        return Err(Error::PointCount { expected: n, actual: pc.count() });
    }
    params.metadata = TrainingMetadata { lambda: config.lambda, entropy_optimization: config.entropy_optimization };
    let adam = AdamConfig::new(config.learning_rate);
    let sizes: Vec<usize> = params.trainable().iter().map(|t| t.len()).collect();
    let mut state = AdamState::new(&sizes);
    let mut rng = crate::rng_from_seed(config.seed ^ 0x7472_6169_6e00_0000);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = TrainLog::default();
    let start = observer.now();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut dist, mut rate) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&PointCloud> = chunk.iter().map(|&i| &dataset[i]).collect();
            let mut tape = Tape::new();
            let g = rd_loss_on_tape(&mut tape, &params, &batch, config, rng.gen())?;
            let c = components(&tape, &g);
            if !(c.loss.is_finite() && tape.value(g.objective).data()[0].is_finite()) {
                return Err(Error::NonFiniteLoss { epoch });
            }
            let grads = tape.backward(g.objective)?;
            let grads: Vec<Vec<f64>> = g.param_vars.iter().map(|&v| grads.get_or_zeros(v, tape.value(v).len())).collect();
            if grads.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch });
            }
            adam_step(&mut params.trainable_mut(), &grads, &mut state, &adam)?;
            params.update_running_stats(&tape, &g.bound);
            let w = batch.len() as f64;
            loss += w * c.loss;
            dist += w * c.distortion;
            rate += w * c.rate_bits;
        }
        if !params.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let total = dataset.len() as f64;
        let record = EpochRecord {
            epoch,
            rate_bits: rate / total,
            chamfer: dist / total,
            loss: loss / total,
            seconds: observer.now() - start,
        };
        log.records.push(record);
        observer.epoch_finished(&record, &params)?;
        if config.checkpoint_interval > 0 && epoch % config.checkpoint_interval == 0 {
            observer.checkpoint(epoch, &params)?;
        }
    }
    Ok((params, log))
}

/// Trailing moving average with window `w` (shorter at the start).
pub fn smoothed(values: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for i in 0..values.len() {
        acc += values[i];
        if i >= w {
            acc -= values[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

//! Seeded random instances of every tape primitive, and of the full
//! rate-distortion loss on a small architecture.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use super::{finite_difference_check, FdConfig, FdReport};
use crate::autodiff::{NormMode, Tape, Tensor, Var};
use crate::entropy::{rate_on_tape, DensityConfig};
use crate::network::{ArchitectureConfig, ModelParameters};
use crate::training::{rd_loss, rd_loss_gradients, TrainConfig};
use crate::{PointCloud, Result};

type Build = fn(&mut Tape, &[Var]) -> Result<Var>;

/// One primitive under test: its inputs and how to apply it.
pub struct PrimitiveCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    build: Build,
}

fn uniform(rng: &mut crate::Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Values bounded away from zero, for ops with a kink at the origin.
fn off_zero(rng: &mut crate::Rng, shape: &[usize]) -> Tensor {
    uniform(rng, shape, 0.1, 2.0).map(|v| v)
        .zip_map(&uniform(rng, shape, -1.0, 1.0), |m, s| if s < 0.0 { -m } else { m })
}

/// Every primitive with freshly drawn inputs.
pub fn primitive_cases(seed: u64) -> Vec<PrimitiveCase> {
    let mut r = crate::rng_from_seed(seed);
    let rng = &mut r;
    let case = |name, inputs, build: Build| PrimitiveCase { name, inputs, build };
    let lower = uniform(rng, &[2, 3], -4.0, 4.0);
    let width = uniform(rng, &[2, 3], 0.2, 3.0);
    let upper = lower.zip_map(&width, |l, w| l + w);
    vec![
        case("linear", vec![uniform(rng, &[4, 3], -1.0, 1.0), uniform(rng, &[3, 5], -1.0, 1.0), uniform(rng, &[5], -1.0, 1.0)], |t, v| {
            t.linear(v[0], v[1], Some(v[2]))
        }),
        case("relu", vec![off_zero(rng, &[3, 4])], |t, v| Ok(t.relu(v[0]))),
        case("batch_norm_train", vec![uniform(rng, &[6, 4], -2.0, 2.0), uniform(rng, &[4], 0.5, 1.5), uniform(rng, &[4], -1.0, 1.0)], |t, v| {
            t.batch_norm(v[0], v[1], v[2], NormMode::Train, (&[0.0; 4], &[1.0; 4]), 1e-5)
        }),
        case("batch_norm_infer", vec![uniform(rng, &[5, 3], -2.0, 2.0), uniform(rng, &[3], 0.5, 1.5), uniform(rng, &[3], -1.0, 1.0)], |t, v| {
            t.batch_norm(v[0], v[1], v[2], NormMode::Infer, (&[0.1, -0.2, 0.3], &[0.5, 1.5, 2.0]), 1e-5)
        }),
        case("segment_max", vec![uniform(rng, &[8, 3], -1.0, 1.0)], |t, v| t.segment_max(v[0], 2)),
        case("tanh", vec![uniform(rng, &[2, 4], -3.0, 3.0)], |t, v| Ok(t.tanh(v[0]))),
        case("sigmoid", vec![uniform(rng, &[2, 4], -4.0, 4.0)], |t, v| Ok(t.sigmoid(v[0]))),
        case("softplus", vec![uniform(rng, &[2, 4], -4.0, 4.0)], |t, v| Ok(t.softplus(v[0]))),
        case("add", vec![uniform(rng, &[3, 2], -1.0, 1.0), uniform(rng, &[3, 2], -1.0, 1.0)], |t, v| t.add(v[0], v[1])),
        case("mul", vec![uniform(rng, &[3, 2], -1.0, 1.0), uniform(rng, &[3, 2], -1.0, 1.0)], |t, v| t.mul(v[0], v[1])),
        case("scale", vec![uniform(rng, &[5], -1.0, 1.0)], |t, v| Ok(t.scale(v[0], -2.5))),
        case("add_scalar", vec![uniform(rng, &[5], -1.0, 1.0)], |t, v| Ok(t.add_scalar(v[0], 0.75))),
        case("mul_row", vec![uniform(rng, &[3, 4], -1.0, 1.0), uniform(rng, &[4], -1.0, 1.0)], |t, v| t.mul_row(v[0], v[1])),
        case(
            "channel_linear",
            vec![uniform(rng, &[3, 6], -1.0, 1.0), uniform(rng, &[2, 4, 3], -1.0, 1.0), uniform(rng, &[8], -1.0, 1.0)],
            |t, v| t.channel_linear(v[0], v[1], v[2]),
        ),
        case("reshape", vec![uniform(rng, &[2, 6], -1.0, 1.0)], |t, v| t.reshape(v[0], &[3, 4])),
        case("sum", vec![uniform(rng, &[2, 3], -1.0, 1.0)], |t, v| Ok(t.sum(v[0]))),
        case("mean", vec![uniform(rng, &[2, 3], -1.0, 1.0)], |t, v| Ok(t.mean(v[0]))),
        case("row_sum", vec![uniform(rng, &[3, 4], -1.0, 1.0)], |t, v| t.row_sum(v[0])),
        case("bin_probability", vec![lower, upper], |t, v| t.bin_probability(v[0], v[1])),
        case("neg_log2", vec![uniform(rng, &[6], 0.05, 0.95)], |t, v| Ok(t.neg_log2(v[0], 1e-12))),
        case("chamfer", vec![uniform(rng, &[2, 12], -1.0, 1.0), uniform(rng, &[2, 15], -1.0, 1.0)], |t, v| t.chamfer(v[0], v[1])),
        case(
            "rate",
            vec![
                uniform(rng, &[3, 2], -3.0, 3.0),
                uniform(rng, &[2, 3, 1], -1.0, 1.0),
                uniform(rng, &[2, 3, 3], -1.0, 1.0),
                uniform(rng, &[2, 1, 3], -1.0, 1.0),
                uniform(rng, &[6], -0.5, 0.5),
                uniform(rng, &[6], -0.5, 0.5),
                uniform(rng, &[2], -0.5, 0.5),
                uniform(rng, &[6], -1.0, 1.0),
                uniform(rng, &[6], -1.0, 1.0),
            ],
            |t, v| {
                let bound = crate::entropy::BoundDensity { matrices: vec![v[1], v[2], v[3]], biases: vec![v[4], v[5], v[6]], factors: vec![v[7], v[8]] };
                rate_on_tape(t, &bound, v[0])
            },
        ),
    ]
}

/// Runs one case: scalarizes the output with random weights and compares
/// the tape gradient of every input against central differences.
pub fn check_case(case: &PrimitiveCase, weight_seed: u64, config: &FdConfig) -> Result<FdReport> {
    let shapes: Vec<Vec<usize>> = case.inputs.iter().map(|t| t.shape().to_vec()).collect();
    let sizes: Vec<usize> = case.inputs.iter().map(Tensor::len).collect();
    let flat: Vec<f64> = case.inputs.iter().flat_map(|t| t.data().iter().copied()).collect();
    let eval = |x: &[f64], want_grad: bool| -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let mut vars = Vec::new();
        let mut off = 0;
        for (shape, &n) in shapes.iter().zip(&sizes) {
            vars.push(tape.param(Tensor::new(shape, x[off..off + n].to_vec())?));
            off += n;
        }
        let y = (case.build)(&mut tape, &vars)?;
        let yshape = tape.value(y).shape().to_vec();
        let mut wr = crate::rng_from_seed(weight_seed);
        let w = Tensor::new(&yshape, (0..tape.value(y).len()).map(|_| wr.gen_range(-1.0..1.0)).collect())?;
        let w = tape.constant(w);
        let prod = tape.mul(y, w)?;
        let f = tape.sum(prod);
        let value = tape.value(f).data()[0];
        if !want_grad {
            return Ok((value, Vec::new()));
        }
        let g = tape.backward(f)?;
        Ok((value, vars.iter().zip(&sizes).flat_map(|(&v, &n)| g.get_or_zeros(v, n)).collect()))
    };
    let (_, analytic) = eval(&flat, true)?;
    finite_difference_check(case.name, &mut |x| eval(x, false).map(|r| r.0), &flat, &analytic, config)
}

/// `instances` seeded draws of every primitive; one merged report per primitive.
pub fn run_primitive_suite(instances: usize, seed: u64, config: &FdConfig) -> Result<Vec<FdReport>> {
    let mut merged: Vec<FdReport> = Vec::new();
    for i in 0..instances {
        let s = seed.wrapping_add(i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        for (j, case) in primitive_cases(s).iter().enumerate() {
            let r = check_case(case, s ^ 0x5555, config)?;
            match merged.get_mut(j) {
                Some(m) => merge(m, &r),
                None => merged.push(r),
            }
        }
    }
    Ok(merged)
}

fn merge(into: &mut FdReport, r: &FdReport) {
    into.checked += r.checked;
    into.skipped_kinks += r.skipped_kinks;
    if r.max_rel_error > into.max_rel_error {
        into.max_rel_error = r.max_rel_error;
        into.worst_index = r.worst_index;
    }
}

/// Small architecture used for the full-loss check.
pub fn toy_architecture() -> ArchitectureConfig {
    let mut c = ArchitectureConfig::new(8, 4);
    c.encoder_widths = vec![6, 5, 4];
    c.decoder_widths = vec![10, 24];
    c.density = DensityConfig { interior_widths: vec![3, 3], ..DensityConfig::default() };
    c
}

/// Gradient of the full rate-distortion loss with respect to every trainable
/// parameter of a freshly initialized toy model.
pub fn check_rd_loss(seed: u64, entropy_optimization: bool, config: &FdConfig) -> Result<FdReport> {
    let arch = toy_architecture();
    let params = ModelParameters::init(&arch, seed)?;
    let mut rng = crate::rng_from_seed(seed ^ 0xabcd);
    let clouds: Vec<PointCloud> = (0..2)
        .map(|_| PointCloud::new((0..arch.input_points).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect()))
        .collect::<Result<_>>()?;
    let batch: Vec<&PointCloud> = clouds.iter().collect();
    let mut tc = TrainConfig::new(2.0, entropy_optimization);
    tc.seed = seed;
    let noise_seed = rng.gen();
    let (_, grads) = rd_loss_gradients(&batch, &params, &tc, noise_seed)?;
    let analytic: Vec<f64> = grads.concat();
    let flat: Vec<f64> = params.trainable().iter().flat_map(|t| t.data().iter().copied()).collect();
    let density_len: usize = params.density.matrices.iter().chain(&params.density.biases).chain(&params.density.factors).map(Tensor::len).sum();
    let split = flat.len() - density_len;
    let write = |m: &mut ModelParameters, x: &[f64]| {
        let mut off = 0;
        for t in m.trainable_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&x[off..off + n]);
            off += n;
        }
    };
    let mut work = params.clone();
    let mut density_only = params.clone();
    let mut f = |x: &[f64]| -> Result<f64> {
        write(&mut work, x);
        let c = rd_loss(&batch, &work, &tc, noise_seed)?;
        if entropy_optimization {
            return Ok(c.loss);
        }
        // without rate optimization the density is fitted to latents treated
        // as constants, so its rate term only sees the density parameters
        let mut mixed = flat.clone();
        mixed[split..].copy_from_slice(&x[split..]);
        write(&mut density_only, &mixed);
        Ok(c.loss + rd_loss(&batch, &density_only, &tc, noise_seed)?.rate_bits)
    };
    let name = if entropy_optimization { "rd_loss" } else { "rd_loss_without_rate" };
    finite_difference_check(name, &mut f, &flat, &analytic, config)
}

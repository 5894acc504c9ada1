//! Per-cloud rate and distortion measurement in the normalized, expanded frame.
//!
//! Distortion is measured between `E * normalize(x)` and `E * q`, where `q` is
//! the decoder output in the normalized frame and `E` the expansion factor.
//! For clouds that are already unit-sphere normalized this is the same as
//! comparing `E * x` with the decompressed output.

use alloc::vec::Vec;

use crate::bitstream::{measure_bpp, Codec, CompressedObject};
use crate::entropy::rate_bits;
use crate::geometry::{apply_expansion, normalize_unit_sphere, DEFAULT_EXPANSION};
use crate::metrics::{d1_psnr, D1Config};
use crate::{PointCloud, Result};

/// Point count used as the bits-per-point denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BppDenominator {
    /// Points of the input cloud before downsampling.
    #[default]
    Original,
    /// Points of the reconstruction.
    Reconstructed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub expansion: f64,
    pub d1: D1Config,
    pub include_header: bool,
    pub denominator: BppDenominator,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            expansion: DEFAULT_EXPANSION,
            d1: D1Config::with_peak(DEFAULT_EXPANSION),
            include_header: false,
            denominator: BppDenominator::Original,
        }
    }
}

impl EvalOptions {
    /// Defaults with expansion factor and PSNR peak both set to `expansion`.
    pub fn with_expansion(expansion: f64) -> Self {
        Self { expansion, d1: D1Config::with_peak(expansion), ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudEvaluation {
    pub input_points: usize,
    pub payload_bits: usize,
    /// Model estimate `sum -log2 p(z_hat)` for the coded latent.
    pub estimated_bits: f64,
    pub bpp: f64,
    pub psnr_db: f64,
}

/// Maps a decompressed cloud back to the normalized frame and re-applies the expansion.
pub fn to_evaluation_frame(obj: &CompressedObject, recon: &PointCloud, expansion: f64) -> Result<PointCloud> {
    let t = obj.header.transform()?;
    let e = t.expansion_factor;
    recon.map_points(|p| {
        let q = t.normalize_point([p[0] / e, p[1] / e, p[2] / e]);
        [expansion * q[0], expansion * q[1], expansion * q[2]]
    })
}

/// Compresses and decompresses `pc`, returning rate and D1 PSNR.
pub fn evaluate_cloud(codec: &Codec, pc: &PointCloud, options: &EvalOptions) -> Result<CloudEvaluation> {
    let (obj, latent) = codec.compress_with_latent(pc, options.expansion)?;
    let recon = codec.decompress(&obj)?;
    let latent: Vec<f64> = latent.into_iter().map(f64::from).collect();
    let estimated_bits = rate_bits(&latent, &codec.model().density);
    let reference = apply_expansion(&normalize_unit_sphere(pc).0, options.expansion)?;
    let test = to_evaluation_frame(&obj, &recon, options.expansion)?;
    let denominator = match options.denominator {
        BppDenominator::Original => pc.count(),
        BppDenominator::Reconstructed => recon.count(),
    };
    Ok(CloudEvaluation {
        input_points: pc.count(),
        payload_bits: obj.payload_bits(),
        estimated_bits,
        bpp: measure_bpp(&obj, denominator, options.include_header)?,
        psnr_db: d1_psnr(&reference, &test, &options.d1)?,
    })
}

/// Means over a set of evaluated clouds (PSNR averaged in dB).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub clouds: usize,
    pub bpp: f64,
    pub psnr_db: f64,
    pub payload_bits: f64,
    pub estimated_bits: f64,
}

pub fn summarize(results: &[CloudEvaluation]) -> Option<EvalSummary> {
    if results.is_empty() {
        return None;
    }
    let n = results.len() as f64;
    let mean = |f: &dyn Fn(&CloudEvaluation) -> f64| results.iter().map(f).sum::<f64>() / n;
    Some(EvalSummary {
        clouds: results.len(),
        bpp: mean(&|r| r.bpp),
        psnr_db: mean(&|r| r.psnr_db),
        payload_bits: mean(&|r| r.payload_bits as f64),
        estimated_bits: mean(&|r| r.estimated_bits),
    })
}

/// Evaluates every cloud with one prepared codec.
pub fn evaluate_set(codec: &Codec, clouds: &[PointCloud], options: &EvalOptions) -> Result<Vec<CloudEvaluation>> {
    clouds.iter().map(|pc| evaluate_cloud(codec, pc, options)).collect()
}

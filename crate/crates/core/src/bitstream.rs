//! Compressed-object format and the compress/decompress pipeline.
//!
//! ```text
//! offset size
//!  0     4   magic "PCCB"
//!  4     2   version (u16)
//!  6     8   model digest (u64)
//! 14     4   reconstructed point count m (u32)
//! 18     2   latent size k (u16)
//! 20    12   centroid, 3 x f32
//! 32     4   scale (f32)
//! 36     4   expansion factor (f32)
//! 40     4   payload length in bytes (u32)
//! 44     -   range-coded payload
//! ```
//!
//! Everything is little-endian. The model is side information shared by
//! encoder and decoder and is never counted in the rate.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::NormMode;
use crate::bytes::{Reader, Writer};
use crate::entropy::{build_cdf_tables, quantize, ChannelTable, QuantizerMode};
use crate::geometry::{normalize_unit_sphere, NormalizationTransform};
use crate::model_format::model_digest;
use crate::network::{decode, encode, ModelParameters};
use crate::range_coder::{range_decode, range_encode, Symbol};
use crate::sampling::{farthest_point_sample, SampleSpec};
use crate::{Error, PointCloud, Result};

pub const BITSTREAM_MAGIC: [u8; 4] = *b"PCCB";
pub const BITSTREAM_VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 44;

#[derive(Debug, Clone, PartialEq)]
pub struct BitstreamHeader {
    pub version: u16,
    pub model_digest: u64,
    pub points: u32,
    pub latent_dim: u16,
    pub centroid: [f32; 3],
    pub scale: f32,
    pub expansion: f32,
    pub payload_len: u32,
}

impl BitstreamHeader {
    /// Inverse transform carried by the header.
    pub fn transform(&self) -> Result<NormalizationTransform> {
        NormalizationTransform::new(self.centroid.map(f64::from), f64::from(self.scale), f64::from(self.expansion))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedObject {
    pub header: BitstreamHeader,
    pub payload: Vec<u8>,
}

impl CompressedObject {
    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut w = Writer::new();
        w.bytes(&BITSTREAM_MAGIC);
        w.u16(h.version);
        w.u64(h.model_digest);
        w.u32(h.points);
        w.u16(h.latent_dim);
        for c in h.centroid {
            w.f32(c);
        }
        w.f32(h.scale);
        w.f32(h.expansion);
        w.u32(self.payload.len() as u32);
        w.bytes(&self.payload);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4, "magic")? != BITSTREAM_MAGIC {
            return Err(Error::Format { offset: 0, reason: "not a compressed point cloud (bad magic)".into() });
        }
        let version = r.u16("version")?;
        if version != BITSTREAM_VERSION {
            return Err(Error::Version { expected: BITSTREAM_VERSION, found: version });
        }
        let model_digest = r.u64("model digest")?;
        let points = r.u32("point count")?;
        let latent_dim = r.u16("latent size")?;
        let centroid = [r.f32("centroid")?, r.f32("centroid")?, r.f32("centroid")?];
        let scale = r.f32("scale")?;
        let expansion = r.f32("expansion")?;
        let payload_len = r.u32("payload length")?;
        let payload = r.take(payload_len as usize, "payload")?.to_vec();
        if r.remaining() != 0 {
            return Err(Error::Format { offset: r.position(), reason: format!("{} trailing bytes after payload", r.remaining()) });
        }
        let header = BitstreamHeader { version, model_digest, points, latent_dim, centroid, scale, expansion, payload_len };
        header.transform()?;
        Ok(Self { header, payload })
    }

    pub fn payload_bits(&self) -> usize {
        8 * self.payload.len()
    }
}

/// Bits per point: payload (optionally plus header) over `point_count`.
pub fn measure_bpp(obj: &CompressedObject, point_count: usize, include_header: bool) -> Result<f64> {
    if point_count == 0 {
        return Err(Error::InvalidArgument("bpp needs a positive point count".into()));
    }
    let header_bits = if include_header { 8 * HEADER_BYTES } else { 0 };
    Ok((obj.payload_bits() + header_bits) as f64 / point_count as f64)
}

/// A model prepared for coding: digest and coding tables computed once.
#[derive(Debug, Clone)]
pub struct Codec<'a> {
    model: &'a ModelParameters,
    tables: Vec<ChannelTable>,
    digest: u64,
}

impl<'a> Codec<'a> {
    pub fn new(model: &'a ModelParameters) -> Result<Self> {
        let tables = build_cdf_tables(&model.density, model.density.tail_mass)?;
        Ok(Self { model, tables, digest: model_digest(model) })
    }

    pub fn model(&self) -> &'a ModelParameters {
        self.model
    }

    pub fn digest(&self) -> u64 {
        self.digest
    }

    pub fn tables(&self) -> &[ChannelTable] {
        &self.tables
    }

    /// Normalize, downsample to the model's tier, encode, round and entropy-code.
    pub fn compress(&self, pc: &PointCloud, expansion: f64) -> Result<CompressedObject> {
        Ok(self.compress_with_latent(pc, expansion)?.0)
    }

    /// Like [`Codec::compress`], also returning the rounded latent.
    pub fn compress_with_latent(&self, pc: &PointCloud, expansion: f64) -> Result<(CompressedObject, Vec<i32>)> {
        let cfg = &self.model.config;
        let n = cfg.input_points;
        if pc.count() < n {
            return Err(Error::PointCount { expected: n, actual: pc.count() });
        }
        let (normalized, transform) = normalize_unit_sphere(pc);
        let transform = transform.with_expansion(expansion)?;
        let (_, sampled) = farthest_point_sample(&normalized, SampleSpec::new(n))?;
        let z = encode(&sampled, self.model, NormMode::Infer)?;
        let zq = quantize(&z, QuantizerMode::Round, 0)?;
        let mut symbols = Vec::with_capacity(zq.len());
        for (i, &v) in zq.iter().enumerate() {
            if v.abs() > i32::MAX as f64 {
                return Err(Error::NonFinite(format!("latent entry {i} = {v} exceeds the codable range")));
            }
            symbols.push(Symbol { channel: i, value: v as i32 });
        }
        let payload = range_encode(&symbols, &self.tables)?;
        let channels: Vec<usize> = (0..symbols.len()).collect();
        let check = range_decode(&payload, &self.tables, &channels)?;
        if check != symbols {
            return Err(Error::Format { offset: 0, reason: "entropy coder round trip failed".into() });
        }
        let header = BitstreamHeader {
            version: BITSTREAM_VERSION,
            model_digest: self.digest,
            points: cfg.output_points as u32,
            latent_dim: cfg.latent_dim as u16,
            centroid: transform.centroid.map(|c| c as f32),
            scale: transform.scale as f32,
            expansion: transform.expansion_factor as f32,
            payload_len: payload.len() as u32,
        };
        Ok((CompressedObject { header, payload }, symbols.iter().map(|s| s.value).collect()))
    }

    /// Latent symbols carried by `obj`, after header checks.
    pub fn decode_latent(&self, obj: &CompressedObject) -> Result<Vec<i32>> {
        let h = &obj.header;
        if h.model_digest != self.digest {
            return Err(Error::DigestMismatch { expected: self.digest, actual: h.model_digest });
        }
        let cfg = &self.model.config;
        if h.latent_dim as usize != cfg.latent_dim || h.points as usize != cfg.output_points {
            return Err(Error::Format {
                offset: 14,
                reason: format!(
                    "header declares {} points / latent {}, model has {} / {}",
                    h.points, h.latent_dim, cfg.output_points, cfg.latent_dim
                ),
            });
        }
        let channels: Vec<usize> = (0..cfg.latent_dim).collect();
        Ok(range_decode(&obj.payload, &self.tables, &channels)?.into_iter().map(|s| s.value).collect())
    }

    /// Entropy-decode, run the decoder and undo the normalization.
    pub fn decompress(&self, obj: &CompressedObject) -> Result<PointCloud> {
        let latent: Vec<f64> = self.decode_latent(obj)?.into_iter().map(f64::from).collect();
        let recon = decode(&latent, self.model)?;
        obj.header.transform()?.denormalize(&recon)
    }
}

/// One-shot [`Codec::compress`]; `tier`, when given, must equal the model's input size.
pub fn compress(pc: &PointCloud, model: &ModelParameters, tier: Option<usize>, expansion: f64) -> Result<CompressedObject> {
    if let Some(t) = tier {
        if t != model.config.input_points {
            return Err(Error::InvalidArgument(format!(
                "model is for {} points, tier {t} requested",
                model.config.input_points
            )));
        }
    }
    Codec::new(model)?.compress(pc, expansion)
}

/// One-shot [`Codec::decompress`].
pub fn decompress(obj: &CompressedObject, model: &ModelParameters) -> Result<PointCloud> {
    Codec::new(model)?.decompress(obj)
}

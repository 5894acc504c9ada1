//! Binary model file.
//!
//! ```text
//! magic "PCAE" | version u16 | config block | tensor count u32
//! per tensor: name_len u16, name, rank u8, dims u32 x rank, values f64 x len
//! checksum u64   (FNV-1a over everything before it)
//! ```
//!
//! All integers and floats are little-endian. Tensors appear in
//! [`ModelParameters::tensors`] order and must match the shapes implied by
//! the configuration block.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use crate::autodiff::Tensor;
use crate::bytes::{fnv1a64, Reader, Writer};
use crate::entropy::DensityConfig;
use crate::network::{ArchitectureConfig, LayerOrder, ModelParameters, TrainingMetadata};
use crate::{Error, Result};

pub const MODEL_MAGIC: [u8; 4] = *b"PCAE";
pub const MODEL_VERSION: u16 = 1;

const MAX_LIST: usize = 64;

fn write_widths(w: &mut Writer, widths: &[usize]) {
    w.u16(widths.len() as u16);
    for &x in widths {
        w.u32(x as u32);
    }
}

fn read_widths(r: &mut Reader, what: &str) -> Result<Vec<usize>> {
    let at = r.position();
    let n = r.u16(what)? as usize;
    if n > MAX_LIST {
        return Err(Error::Format { offset: at, reason: format!("{what}: {n} entries is implausible") });
    }
    (0..n).map(|_| r.u32(what).map(|x| x as usize)).collect()
}

/// Serializes a model to the file layout described in the module docs.
pub fn serialize_model(params: &ModelParameters) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(&MODEL_MAGIC);
    w.u16(MODEL_VERSION);
    let c = &params.config;
    w.u32(c.input_points as u32);
    w.u32(c.latent_dim as u32);
    w.u32(c.output_points as u32);
    w.u8(c.activation_on_last_encoder_layer as u8);
    w.u8(match c.layer_order {
        LayerOrder::LinearReluNorm => 0,
        LayerOrder::LinearNormRelu => 1,
    });
    write_widths(&mut w, &c.encoder_widths);
    write_widths(&mut w, &c.decoder_widths);
    write_widths(&mut w, &c.density.interior_widths);
    w.f64(c.density.init_scale);
    w.f64(c.density.tail_mass);
    w.f64(params.metadata.lambda);
    w.u8(params.metadata.entropy_optimization as u8);

    let tensors = params.tensors();
    w.u32(tensors.len() as u32);
    for t in &tensors {
        w.u16(t.name.len() as u16);
        w.bytes(t.name.as_bytes());
        let shape = t.tensor.shape();
        w.u8(shape.len() as u8);
        for &d in shape {
            w.u32(d as u32);
        }
        for &v in t.tensor.data() {
            w.f64(v);
        }
    }
    let sum = fnv1a64(&w.buf);
    w.u64(sum);
    w.buf
}

/// Digest identifying a model; stored in every compressed object.
pub fn model_digest(params: &ModelParameters) -> u64 {
    fnv1a64(&serialize_model(params))
}

fn read_config(r: &mut Reader) -> Result<(ArchitectureConfig, TrainingMetadata)> {
    let input_points = r.u32("input points")? as usize;
    let latent_dim = r.u32("latent size")? as usize;
    let output_points = r.u32("output points")? as usize;
    let activation_on_last_encoder_layer = r.u8("last-layer flag")? != 0;
    let at = r.position();
    let layer_order = match r.u8("layer order")? {
        0 => LayerOrder::LinearReluNorm,
        1 => LayerOrder::LinearNormRelu,
        x => return Err(Error::Format { offset: at, reason: format!("unknown layer order {x}") }),
    };
    let encoder_widths = read_widths(r, "encoder widths")?;
    let decoder_widths = read_widths(r, "decoder widths")?;
    let interior_widths = read_widths(r, "density widths")?;
    let init_scale = r.f64("density init scale")?;
    let tail_mass = r.f64("density tail mass")?;
    let lambda = r.f64("lambda")?;
    let entropy_optimization = r.u8("entropy flag")? != 0;
    let config = ArchitectureConfig {
        input_points,
        latent_dim,
        encoder_widths,
        decoder_widths,
        output_points,
        activation_on_last_encoder_layer,
        layer_order,
        density: DensityConfig { interior_widths, init_scale, tail_mass },
    };
    config.validate()?;
    Ok((config, TrainingMetadata { lambda, entropy_optimization }))
}

/// Parses a model file, verifying magic, version, checksum and every tensor shape.
pub fn deserialize_model(bytes: &[u8]) -> Result<ModelParameters> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic")? != MODEL_MAGIC {
        return Err(Error::Format { offset: 0, reason: "not a model file (bad magic)".into() });
    }
    let version = r.u16("version")?;
    if version != MODEL_VERSION {
        return Err(Error::Version { expected: MODEL_VERSION, found: version });
    }
    if bytes.len() < 14 {
        return Err(Error::Truncated("model file has no checksum".into()));
    }
    let body = &bytes[..bytes.len() - 8];
    let mut stored = [0u8; 8];
    stored.copy_from_slice(&bytes[bytes.len() - 8..]);
    let stored = u64::from_le_bytes(stored);
    let computed = fnv1a64(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let mut r = Reader::new(body);
    r.take(6, "header")?;
    let (config, metadata) = read_config(&mut r)?;
    let mut params = ModelParameters::init(&config, 0)?;
    params.metadata = metadata;
    let count = r.u32("tensor count")? as usize;
    let mut slots = params.tensors_mut();
    if count != slots.len() {
        return Err(Error::Format {
            offset: r.position() - 4,
            reason: format!("file has {count} tensors, configuration implies {}", slots.len()),
        });
    }
    for (expected_name, slot, _) in slots.iter_mut() {
        let name_len = r.u16("tensor name length")? as usize;
        let name = r.string(name_len, "tensor name")?;
        if &name != expected_name {
            return Err(Error::Tensor { name, reason: format!("expected tensor '{expected_name}' at this position") });
        }
        let rank = r.u8("tensor rank")? as usize;
        let dims: Vec<usize> = (0..rank).map(|_| r.u32("tensor dims").map(|d| d as usize)).collect::<Result<_>>()?;
        if dims.as_slice() != slot.shape() {
            return Err(Error::Tensor {
                name,
                reason: format!("declared shape {:?}, expected {:?}", dims, slot.shape()),
            });
        }
        let mut data = Vec::with_capacity(slot.len());
        for _ in 0..slot.len() {
            data.push(r.f64(&name)?);
        }
        **slot = Tensor::new(&dims, data).map_err(|e| Error::Tensor { name: name.clone(), reason: e.to_string() })?;
    }
    if r.remaining() != 0 {
        return Err(Error::Format { offset: r.position(), reason: format!("{} unexpected trailing bytes", r.remaining()) });
    }
    drop(slots);
    if !params.is_finite() {
        return Err(Error::NonFinite("model file contains non-finite weights".into()));
    }
    Ok(params)
}

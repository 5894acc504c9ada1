//! Model files on disk.

use std::fs;
use std::path::Path;

use pcae_core::model_format::{deserialize_model, serialize_model};
use pcae_core::{fnv1a64, ModelParameters};

use crate::error::{Error, Result};
use crate::io::write_atomic;

/// Writes `params` and returns the model digest.
pub fn save_model(params: &ModelParameters, path: &Path) -> Result<u64> {
    let bytes = serialize_model(params);
    write_atomic(path, &bytes)?;
    Ok(fnv1a64(&bytes))
}

/// Reads a model file, returning the parameters and their digest.
pub fn load_model(path: &Path) -> Result<(ModelParameters, u64)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let params = deserialize_model(&bytes)?;
    Ok((params, fnv1a64(&bytes)))
}

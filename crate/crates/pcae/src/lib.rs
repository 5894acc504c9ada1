//! File formats, datasets, evaluation sweeps and the command line for the
//! `pcae-core` point cloud codec.

pub mod error;
pub mod io;

pub use error::{Error, Location, Result};
pub mod dataset;
pub mod manifest;
pub mod model_io;
pub mod sweep;
pub mod cli;

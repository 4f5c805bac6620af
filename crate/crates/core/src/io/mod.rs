//! File formats: ASCII mask and instance grids, PPM/PGM images, and model
//! checkpoints.

pub mod checkpoint;
mod grid;
mod image;

pub use grid::{format_instances, format_mask, parse_instances, parse_mask};
pub use image::{read_ppm, to_byte, write_pgm, write_ppm};

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::generator::{GraphSpec, Model};
use crate::layers::{InstanceMap, SegmentationMask};

pub fn read_spec(path: &Path) -> Result<GraphSpec> {
    GraphSpec::parse(&fs::read_to_string(path)?)
}

pub fn read_mask(path: &Path) -> Result<SegmentationMask> {
    parse_mask(&fs::read_to_string(path)?)
}

pub fn read_instances(path: &Path) -> Result<InstanceMap> {
    parse_instances(&fs::read_to_string(path)?)
}

pub fn save_checkpoint(path: &Path, model: &Model) -> Result<()> {
    Ok(fs::write(path, checkpoint::to_bytes(model)?)?)
}

/// Unreadable files are reported as checkpoint errors, like corrupt ones.
pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    checkpoint::from_bytes(&bytes)
}

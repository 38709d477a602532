//! File formats and dataset layouts: PFM disparity, 8-bit PNG images and
//! masks, JSON manifests, and stereo dataset readers.

mod dataset;
mod pfm;
mod png;

pub use dataset::{load_dataset, DatasetDescriptor, DatasetLayout, SampleError, StereoSample};
pub use pfm::{read_pfm, read_pfm_bytes, write_pfm, write_pfm_bytes};
pub use png::{quantize, read_mask_png, read_png, write_mask_png, write_png};

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Pretty-printed JSON with a trailing newline; the same value always yields
/// the same bytes.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::format(path, format!("serialization failed: {e}")))?;
    text.push('\n');
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

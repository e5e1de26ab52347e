//! On-disk artifacts: config bundles, run manifests, response and summary exports.

use std::path::Path;

use serde::de::DeserializeOwned;

use crate::error::{Error, Result};

pub mod manifest;
pub mod responses;
pub mod summary;

/// Version stamped into every file this crate writes.
pub const SCHEMA_VERSION: u32 = 1;

pub fn read_yaml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_yaml::from_str(&raw).map_err(|e| Error::yaml(path, e))
}

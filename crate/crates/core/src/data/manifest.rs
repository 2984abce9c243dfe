//! Dataset manifests: a TOML file listing (clean, contaminated) cloud pairs
//! with the contamination parameters that produced them.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clean: PathBuf,
    pub contaminated: PathBuf,
    pub noise_level: f64,
    pub outlier_fraction: f64,
    pub outlier_min_distance: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default, rename = "entry")]
    pub entries: Vec<ManifestEntry>,
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e
            .span()
            .map(|s| text[..s.start].lines().count().max(1))
            .unwrap_or(0),
        msg: e.message().to_string(),
    })
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let text = toml::to_string_pretty(manifest)
        .map_err(|e| Error::InvalidArgument(format!("manifest serialization: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

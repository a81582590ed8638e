//! File formats: npy matrices, pair manifests, run configuration and reports.

pub mod canonical;
pub mod config;
pub mod manifest;
pub mod npy;
pub mod report;

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub use config::{default_top_c, load_config, RunConfig};
pub use manifest::{load_manifest, PairEntry, PairManifest};
pub use npy::{read_matrix, read_matrix_file, write_matrix, Dtype, MatrixFile};
pub use report::{EditRecord, EditReport, ExtractRecord, ExtractReport, LayerRecord, Report};

/// Writes `bytes` to a temporary sibling of `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp_name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    tmp_name.push(".partial");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

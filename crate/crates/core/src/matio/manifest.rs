use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Deserialize;

use super::npy::read_matrix;
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    id: String,
    faithful: PathBuf,
    hallucinated: PathBuf,
    layer: u32,
}

/// One contrastive pair: token features of a faithful and a hallucinated
/// response for the same input, at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEntry {
    pub id: String,
    pub faithful_path: PathBuf,
    pub hallucinated_path: PathBuf,
    pub layer: u32,
    pub faithful: DMatrix<f64>,
    pub hallucinated: DMatrix<f64>,
}

impl PairEntry {
    pub fn dim(&self) -> usize {
        self.faithful.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairManifest {
    pub entries: Vec<PairEntry>,
}

impl PairManifest {
    /// Distinct layers in ascending order.
    pub fn layers(&self) -> Vec<u32> {
        let mut layers: Vec<u32> = self.entries.iter().map(|e| e.layer).collect();
        layers.sort_unstable();
        layers.dedup();
        layers
    }

    pub fn entries_for(&self, layer: u32) -> impl Iterator<Item = &PairEntry> {
        self.entries.iter().filter(move |e| e.layer == layer)
    }

    /// Checks the manifest invariants: unique ids, per-pair and per-layer
    /// column agreement.
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::EmptyManifest);
        }
        let mut seen = HashSet::new();
        let mut layer_dim: BTreeMap<u32, usize> = BTreeMap::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::DuplicateId(e.id.clone()));
            }
            if e.faithful.ncols() != e.hallucinated.ncols() {
                return Err(Error::PairDimensionMismatch {
                    id: e.id.clone(),
                    faithful: e.faithful.ncols(),
                    hallucinated: e.hallucinated.ncols(),
                });
            }
            let expected = *layer_dim.entry(e.layer).or_insert(e.dim());
            if expected != e.dim() {
                return Err(Error::LayerDimensionMismatch {
                    layer: e.layer,
                    id: e.id.clone(),
                    expected,
                    found: e.dim(),
                });
            }
        }
        Ok(())
    }
}

/// Loads and eagerly validates a pair manifest. Relative paths resolve
/// against the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<PairManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: Vec<RawEntry> = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new(""));

    // Duplicate ids are reported before any array file is touched.
    let mut seen = HashSet::new();
    for r in &raw {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::DuplicateId(r.id.clone()));
        }
    }

    let entries = raw
        .into_iter()
        .map(|r| {
            let faithful_path = base.join(&r.faithful);
            let hallucinated_path = base.join(&r.hallucinated);
            Ok(PairEntry {
                faithful: read_matrix(&faithful_path)?,
                hallucinated: read_matrix(&hallucinated_path)?,
                id: r.id,
                faithful_path,
                hallucinated_path,
                layer: r.layer,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = PairManifest { entries };
    manifest.validate()?;
    Ok(manifest)
}

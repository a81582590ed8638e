use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::npy::Dtype;
use crate::error::{Error, Result};

pub const DEFAULT_RANK_REL_TOL: f64 = 1e-10;
pub const DEFAULT_TOP_K: usize = 8;

/// Run configuration, read from a JSON object. Unknown keys are rejected.
///
/// `top_C` may be omitted, in which case each layer uses
/// [`default_top_c`] for its own `D` and `N`. `layers` may be omitted to
/// process every layer present in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub layers: Option<Vec<u32>>,
    #[serde(rename = "top_C", default)]
    pub top_c: Option<usize>,
    #[serde(rename = "top_K", default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_rank_rel_tol")]
    pub rank_rel_tol: f64,
    #[serde(default)]
    pub dtype: Dtype,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

fn default_rank_rel_tol() -> f64 {
    DEFAULT_RANK_REL_TOL
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            layers: None,
            top_c: None,
            top_k: DEFAULT_TOP_K,
            rank_rel_tol: DEFAULT_RANK_REL_TOL,
            dtype: Dtype::Float64,
            seed: 0,
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_c == Some(0) {
            return Err(Error::InvalidConfig("top_C must be at least 1".into()));
        }
        if self.top_k == 0 {
            return Err(Error::InvalidConfig("top_K must be at least 1".into()));
        }
        if !(self.rank_rel_tol > 0.0 && self.rank_rel_tol < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "rank_rel_tol must lie in (0, 1), got {}",
                self.rank_rel_tol
            )));
        }
        Ok(())
    }

    /// Faithful-subspace size for a layer with `dim` features and `n` pairs.
    pub fn top_c_for(&self, dim: usize, n: usize) -> usize {
        self.top_c.unwrap_or_else(|| default_top_c(dim, n))
    }
}

/// Desk-scale default: `min(D / 4, N)`, at least 1.
pub fn default_top_c(dim: usize, n: usize) -> usize {
    (dim / 4).min(n).max(1)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: RunConfig = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let c: RunConfig = serde_json::from_str(r#"{"top_C": 4}"#).unwrap();
        assert_eq!(c.top_c, Some(4));
        assert_eq!(c.top_k, DEFAULT_TOP_K);
        assert_eq!(c.rank_rel_tol, 1e-10);
        assert_eq!(c.dtype, Dtype::Float64);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"top_c": 4}"#).is_err());
    }

    #[test]
    fn invalid_values() {
        let bad = |json: &str| serde_json::from_str::<RunConfig>(json).unwrap().validate().is_err();
        assert!(bad(r#"{"top_C": 0}"#));
        assert!(bad(r#"{"top_K": 0}"#));
        assert!(bad(r#"{"rank_rel_tol": 0.0}"#));
        assert!(bad(r#"{"rank_rel_tol": 1.0}"#));
        assert!(!bad(r#"{"dtype": "float32", "layers": [1, 2], "seed": 7}"#));
    }

    #[test]
    fn top_c_default_scaling() {
        assert_eq!(default_top_c(32, 16), 8);
        assert_eq!(default_top_c(32, 3), 3);
        assert_eq!(default_top_c(3, 10), 1);
        assert_eq!(RunConfig::default().top_c_for(64, 100), 16);
    }
}

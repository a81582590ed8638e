//! Report records written to `<output_dir>/report.json`.

use serde::Serialize;

use super::canonical;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreStats {
    #[serde(serialize_with = "canonical::f64")]
    pub min: f64,
    #[serde(serialize_with = "canonical::f64")]
    pub max: f64,
    #[serde(serialize_with = "canonical::f64")]
    pub mean: f64,
}

impl ScoreStats {
    /// Summary over the finite entries; `None` if there are none.
    pub fn from_scores(scores: &[f64]) -> Option<Self> {
        let finite: Vec<f64> = scores.iter().copied().filter(|s| s.is_finite()).collect();
        if finite.is_empty() {
            return None;
        }
        let min = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let max = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = finite.iter().sum::<f64>() / finite.len() as f64;
        Some(ScoreStats { min, max, mean })
    }
}

/// Residuals of a projector: `‖P² − P‖_F`, `‖P − Pᵀ‖_F`, and how far it is
/// from annihilating the directions it should remove, relative to their size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectorResiduals {
    #[serde(serialize_with = "canonical::f64")]
    pub idempotence: f64,
    #[serde(serialize_with = "canonical::f64")]
    pub symmetry: f64,
    #[serde(serialize_with = "canonical::f64")]
    pub annihilation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractRecord {
    pub layer: u32,
    #[serde(rename = "D")]
    pub dim: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "top_C")]
    pub top_c: usize,
    pub effective_rank_faithful: usize,
    pub retained_rank: usize,
    #[serde(serialize_with = "canonical::f64")]
    pub hall_frobenius: f64,
    pub projector_residuals: ProjectorResiduals,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EditRecord {
    pub layer: u32,
    #[serde(rename = "D")]
    pub dim: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub rows: usize,
    #[serde(rename = "top_C")]
    pub top_c: usize,
    #[serde(rename = "top_K")]
    pub top_k: usize,
    pub effective_rank_faithful: usize,
    pub effective_rank_hall: usize,
    /// Set when the hallucination component was below the rank tolerance
    /// relative to the hallucinated features and was treated as exactly zero.
    pub hall_negligible: bool,
    pub selected_indices: Vec<usize>,
    /// How many fewer rows were selected than `top_K` asked for.
    pub shortfall: usize,
    pub score_stats: Option<ScoreStats>,
    pub projector_residuals: ProjectorResiduals,
    #[serde(serialize_with = "canonical::f64")]
    pub frobenius_delta_of_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum LayerRecord<T> {
    Ok(T),
    Failed { layer: u32, error: String },
}

impl<T> LayerRecord<T> {
    pub fn is_ok(&self) -> bool {
        matches!(self, LayerRecord::Ok(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report<T> {
    pub command: &'static str,
    pub layers: Vec<LayerRecord<T>>,
}

pub type ExtractReport = Report<ExtractRecord>;
pub type EditReport = Report<EditRecord>;

impl<T: Serialize> Report<T> {
    pub fn to_canonical_json(&self) -> String {
        canonical::to_string(self).expect("report values are finite")
    }

    pub fn failed_layers(&self) -> usize {
        self.layers.iter().filter(|r| !r.is_ok()).count()
    }
}

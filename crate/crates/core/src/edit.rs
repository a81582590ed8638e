//! Stage two: score weight rows against the hallucination component, pick
//! the top-K most aligned rows and project them onto the null space of the
//! hallucination directions.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::extract::{self, ExtractionResult, PooledPair};
use crate::linalg::{self, Projector, SubspaceBasis};
use crate::matio::report::{ProjectorResiduals, ScoreStats};
use crate::matio::{
    self, canonical, npy, Dtype, EditRecord, EditReport, LayerRecord, PairManifest, Report,
    RunConfig,
};

/// `L×D` weights of one layer; row `i` is the weight vector of neuron `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub layer: u32,
    pub weights: DMatrix<f64>,
    /// Storage type of the file the weights came from; edited copies keep it.
    pub dtype: Dtype,
}

impl WeightMatrix {
    pub fn new(layer: u32, weights: DMatrix<f64>) -> Self {
        WeightMatrix {
            layer,
            weights,
            dtype: Dtype::Float64,
        }
    }

    pub fn rows(&self) -> usize {
        self.weights.nrows()
    }
}

/// Mean cosine of each weight row with the hallucination rows. Zero-norm
/// weight rows carry `f64::NEG_INFINITY` and are never selected.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
}

impl ScoreVector {
    pub fn is_valid(&self, i: usize) -> bool {
        self.scores[i].is_finite()
    }

    pub fn valid_count(&self) -> usize {
        self.scores.iter().filter(|s| s.is_finite()).count()
    }
}

pub fn score_weights(w: &WeightMatrix, x_hall: &DMatrix<f64>) -> Result<ScoreVector> {
    if w.weights.ncols() != x_hall.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "weights have {} columns, hallucination component has {}",
            w.weights.ncols(),
            x_hall.ncols()
        )));
    }
    if x_hall.nrows() == 0 {
        return Err(Error::DimensionMismatch(
            "hallucination component has no rows".into(),
        ));
    }
    let live: Vec<usize> = (0..x_hall.nrows())
        .filter(|&j| x_hall.row(j).iter().any(|&x| x != 0.0))
        .collect();

    let scores = w
        .weights
        .row_iter()
        .map(|row| {
            if row.iter().all(|&x| x == 0.0) {
                return Ok(f64::NEG_INFINITY);
            }
            if live.is_empty() {
                return Ok(0.0);
            }
            let mut total = 0.0;
            for &j in &live {
                total += linalg::cosine(&row, &x_hall.row(j))?;
            }
            Ok(total / live.len() as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreVector { scores })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    /// Ascending, distinct row indices.
    pub indices: Vec<usize>,
    pub requested: usize,
}

impl Selection {
    pub fn none() -> Self {
        Selection {
            indices: Vec::new(),
            requested: 0,
        }
    }

    pub fn shortfall(&self) -> usize {
        self.requested.saturating_sub(self.indices.len())
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }
}

/// Indices of the `k` highest valid scores; ties go to the lower index.
pub fn select_top_k(s: &ScoreVector, k: usize) -> Selection {
    let mut order: Vec<usize> = (0..s.scores.len()).filter(|&i| s.is_valid(i)).collect();
    let by_rank = |&a: &usize, &b: &usize| -> Ordering {
        s.scores[b].total_cmp(&s.scores[a]).then(a.cmp(&b))
    };
    if k < order.len() {
        order.select_nth_unstable_by(k, by_rank);
        order.truncate(k);
    }
    order.sort_unstable();
    Selection {
        indices: order,
        requested: k,
    }
}

/// Projector onto the orthogonal complement of the hallucination row space.
#[derive(Debug, Clone, PartialEq)]
pub struct NullProjector {
    pub projector: Projector,
    pub hall_basis: SubspaceBasis,
}

impl NullProjector {
    pub fn hall_rank(&self) -> usize {
        self.hall_basis.rank()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.projector.matrix
    }
}

/// `Q = I − B Bᵀ` with `B` the tolerance-ranked row-space basis of `x_hall`.
/// Coincides with `I − X̃ᵀ(X̃X̃ᵀ)⁻¹X̃` whenever `X̃X̃ᵀ` is invertible.
pub fn null_projector(x_hall: &DMatrix<f64>, rank_rel_tol: f64) -> Result<NullProjector> {
    let hall_basis = linalg::row_space_basis(x_hall, rank_rel_tol, None)?;
    let projector = linalg::complement(&linalg::projector_from_basis(&hall_basis));
    Ok(NullProjector {
        projector,
        hall_basis,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditResult {
    pub weights: DMatrix<f64>,
    pub selection: Selection,
    pub null_projector: NullProjector,
    /// `‖w − Qw‖` for each selected row, in selection order.
    pub deltas: Vec<f64>,
}

/// Replaces each selected row `w` with `Qw`; other rows are copied untouched.
pub fn apply_edit(w: &WeightMatrix, sel: &Selection, q: &NullProjector) -> Result<EditResult> {
    let (rows, cols) = w.weights.shape();
    if q.projector.dim() != cols {
        return Err(Error::DimensionMismatch(format!(
            "projector is {0}x{0}, weights have {cols} columns",
            q.projector.dim()
        )));
    }
    if let Some(&bad) = sel.indices.iter().find(|&&i| i >= rows) {
        return Err(Error::IndexOutOfRange { index: bad, rows });
    }
    let mut edited = w.weights.clone();
    let mut deltas = Vec::with_capacity(sel.indices.len());
    for &i in &sel.indices {
        let original = w.weights.row(i).transpose();
        let projected = q.matrix() * &original;
        deltas.push((&original - &projected).norm());
        edited.set_row(i, &projected.transpose());
    }
    Ok(EditResult {
        weights: edited,
        selection: sel.clone(),
        null_projector: q.clone(),
        deltas,
    })
}

/// Everything produced for one successfully edited layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerEdit {
    pub extraction: ExtractionResult,
    pub scores: ScoreVector,
    pub edit: EditResult,
    pub source_dtype: Dtype,
    pub hall_negligible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub report: EditReport,
    pub layers: BTreeMap<u32, LayerEdit>,
}

impl PipelineOutput {
    /// Writes `layer<id>.edited`, `layer<id>.selection.json` and `report.json`.
    pub fn persist(&self, out_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        for (layer, edit) in &self.layers {
            let weights = npy::encode(&edit.edit.weights, edit.source_dtype)?;
            matio::write_atomic(&out_dir.join(format!("layer{layer}.edited")), &weights)?;
            let selection = canonical::to_string(&edit.edit.selection.indices)
                .expect("indices serialize");
            matio::write_atomic(
                &out_dir.join(format!("layer{layer}.selection.json")),
                selection.as_bytes(),
            )?;
        }
        matio::write_atomic(
            &out_dir.join("report.json"),
            self.report.to_canonical_json().as_bytes(),
        )
    }
}

/// Layers to process: the configured list, or every manifest layer.
pub fn target_layers(manifest: &PairManifest, config: &RunConfig) -> Vec<u32> {
    let mut layers = config.layers.clone().unwrap_or_else(|| manifest.layers());
    layers.sort_unstable();
    layers.dedup();
    layers
}

/// Pools and stacks the manifest pairs of one layer.
pub fn layer_features(manifest: &PairManifest, layer: u32) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let pooled = manifest
        .entries_for(layer)
        .map(PooledPair::from_entry)
        .collect::<Result<Vec<_>>>()?;
    if pooled.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "layer {layer} has no manifest entries"
        )));
    }
    extract::stack_pairs(&pooled)
}

/// Runs extract → score → select → null projector → edit on every target
/// layer. A failing layer is recorded in the report and the rest proceed.
pub fn run_pipeline(
    manifest: &PairManifest,
    weights: &BTreeMap<u32, WeightMatrix>,
    config: &RunConfig,
) -> PipelineOutput {
    run_pipeline_with(manifest, config, |layer| {
        weights
            .get(&layer)
            .cloned()
            .ok_or_else(|| Error::InvalidConfig(format!("no weight matrix for layer {layer}")))
    })
}

/// Like [`run_pipeline`], fetching each layer's weights on demand.
pub fn run_pipeline_with<F>(manifest: &PairManifest, config: &RunConfig, mut weights: F) -> PipelineOutput
where
    F: FnMut(u32) -> Result<WeightMatrix>,
{
    let mut records = Vec::new();
    let mut layers = BTreeMap::new();
    for layer in target_layers(manifest, config) {
        match edit_layer(manifest, config, layer, &mut weights) {
            Ok((record, edit)) => {
                records.push(LayerRecord::Ok(record));
                layers.insert(layer, edit);
            }
            Err(e) => records.push(LayerRecord::Failed {
                layer,
                error: e.to_string(),
            }),
        }
    }
    PipelineOutput {
        report: Report {
            command: "edit",
            layers: records,
        },
        layers,
    }
}

fn edit_layer<F>(
    manifest: &PairManifest,
    config: &RunConfig,
    layer: u32,
    weights: &mut F,
) -> Result<(EditRecord, LayerEdit)>
where
    F: FnMut(u32) -> Result<WeightMatrix>,
{
    let (x_plus, x_minus) = layer_features(manifest, layer)?;
    let w = weights(layer)?;
    let (n, dim) = x_plus.shape();
    if w.weights.ncols() != dim {
        return Err(Error::DimensionMismatch(format!(
            "layer {layer} weights have {} columns, features have {dim}",
            w.weights.ncols()
        )));
    }
    let top_c = config.top_c_for(dim, n);
    let mut extraction =
        extract::extract_hallucination(&x_plus, &x_minus, top_c, config.rank_rel_tol)?;
    extraction.projector.check()?;

    // Rounding residue of an in-subspace X⁻ is not a hallucination direction.
    let hall_negligible = extraction.hall_component.norm() <= config.rank_rel_tol * x_minus.norm();
    if hall_negligible {
        extraction.hall_component.fill(0.0);
    }
    let hall = &extraction.hall_component;

    let scores = score_weights(&w, hall)?;
    let selection = select_top_k(&scores, config.top_k);
    let q = null_projector(hall, config.rank_rel_tol)?;
    q.projector.check()?;
    let edit = apply_edit(&w, &selection, &q)?;

    let annihilation = if hall.norm() == 0.0 {
        0.0
    } else {
        (hall * q.matrix()).norm() / hall.norm()
    };
    let record = EditRecord {
        layer,
        dim,
        n,
        rows: w.rows(),
        top_c,
        top_k: config.top_k,
        effective_rank_faithful: extraction.faithful_basis.numerical_rank,
        effective_rank_hall: q.hall_rank(),
        hall_negligible,
        selected_indices: selection.indices.clone(),
        shortfall: selection.shortfall(),
        score_stats: ScoreStats::from_scores(&scores.scores),
        projector_residuals: ProjectorResiduals {
            idempotence: q.projector.idempotence_residual(),
            symmetry: q.projector.symmetry_residual(),
            annihilation,
        },
        frobenius_delta_of_w: (&edit.weights - &w.weights).norm(),
    };
    Ok((
        record,
        LayerEdit {
            extraction,
            scores,
            edit,
            source_dtype: w.dtype,
            hall_negligible,
        },
    ))
}

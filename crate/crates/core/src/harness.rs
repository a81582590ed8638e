//! Toy linear-response scenario for checking what an edit does to a model:
//! responses along hallucination directions should vanish on edited rows,
//! responses along everything orthogonal to them should not move at all.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::edit::{self, EditResult, ScoreVector, WeightMatrix};
use crate::error::{Error, Result};
use crate::extract::{self, ExtractionResult};
use crate::matio::canonical;
use crate::synth::{self, SyntheticInstance, SyntheticSpec};

/// Weights of a single linear layer, `response(v) = W v`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub weights: DMatrix<f64>,
    /// Rows built from hallucination directions, ascending.
    pub planted_rows: Vec<usize>,
}

impl ToyModel {
    pub fn response(&self, v: &nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
        &self.weights * v
    }

    pub fn rows(&self) -> usize {
        self.weights.nrows()
    }
}

/// Builds an instance and an `L×D` model whose `planted_alignment` rows are
/// non-negative unit combinations of the instance's hallucination rows; the
/// rest are random. Planted rows sit at seeded random positions.
pub fn build_scenario(
    spec: &SyntheticSpec,
    rows: usize,
    planted_alignment: usize,
) -> Result<(ToyModel, SyntheticInstance)> {
    if planted_alignment > rows {
        return Err(Error::InvalidConfig(format!(
            "cannot plant {planted_alignment} aligned rows in a model with {rows} rows"
        )));
    }
    let inst = synth::generate(spec)?;
    let d = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);

    let mut positions: Vec<usize> = (0..rows).collect();
    positions.shuffle(&mut rng);
    let mut planted_rows = positions[..planted_alignment].to_vec();
    planted_rows.sort_unstable();

    let hall = inst.x_hall();
    let scale = 1.0 / (d as f64).sqrt();
    let mut weights = DMatrix::zeros(rows, d);
    for i in 0..rows {
        let row = if planted_rows.binary_search(&i).is_ok() {
            let coeffs: Vec<f64> = (0..spec.n)
                .map(|_| rng.sample::<f64, _>(StandardNormal).abs())
                .collect();
            let mut w = DMatrix::<f64>::zeros(1, d);
            for (j, c) in coeffs.iter().enumerate() {
                w += hall.row(j) * *c;
            }
            let norm = w.norm();
            if norm > 0.0 {
                w /= norm;
            }
            w
        } else {
            DMatrix::from_fn(1, d, |_, _| rng.sample::<f64, _>(StandardNormal) * scale)
        };
        weights.set_row(i, &row.row(0));
    }
    Ok((
        ToyModel {
            weights,
            planted_rows,
        },
        inst,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarnessReport {
    #[serde(rename = "L")]
    pub rows: usize,
    #[serde(rename = "K")]
    pub top_k: usize,
    pub selected: usize,
    /// Mean over hallucination probes `v` of `‖W′v‖ / ‖Wv‖` on edited rows.
    #[serde(serialize_with = "canonical::f64")]
    pub suppression_ratio: f64,
    /// Max over an orthonormal basis `v` of the faithful complement of `‖(W′ − W)v‖`.
    #[serde(serialize_with = "canonical::f64")]
    pub preservation_residual: f64,
    #[serde(serialize_with = "canonical::f64")]
    pub selected_fraction: f64,
    /// Largest `|w′ᵢ·x̃ⱼ| / (‖x̃ⱼ‖ ‖wᵢ‖)` over edited rows and probes.
    #[serde(serialize_with = "canonical::f64")]
    pub edited_alignment: f64,
    pub planted_rows: Vec<usize>,
    pub planted_recovered: usize,
}

impl HarnessReport {
    pub fn to_canonical_json(&self) -> String {
        canonical::to_string(self).expect("harness values are finite")
    }
}

/// Probes the edit with the rows of `hall` and with a basis of the
/// complement of their span.
pub fn evaluate_edit(
    model: &ToyModel,
    result: &EditResult,
    hall: &DMatrix<f64>,
) -> Result<HarnessReport> {
    let (rows, d) = model.weights.shape();
    if result.weights.shape() != (rows, d) || hall.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "model is {rows}x{d}, edit is {:?}, probes have {} columns",
            result.weights.shape(),
            hall.ncols()
        )));
    }
    let sel = &result.selection.indices;
    let original = &model.weights;
    let edited = &result.weights;

    let mut ratios = Vec::new();
    let mut edited_alignment = 0.0f64;
    for probe in hall.row_iter() {
        let probe_norm = probe.norm();
        if probe_norm == 0.0 || sel.is_empty() {
            continue;
        }
        let v = probe.transpose();
        let before = original * &v;
        let after = edited * &v;
        let num: f64 = sel.iter().map(|&i| after[i].powi(2)).sum::<f64>().sqrt();
        let den: f64 = sel.iter().map(|&i| before[i].powi(2)).sum::<f64>().sqrt();
        if den > 0.0 {
            ratios.push(num / den);
        }
        for &i in sel {
            let w_norm = original.row(i).norm();
            if w_norm > 0.0 {
                edited_alignment = edited_alignment.max(after[i].abs() / (probe_norm * w_norm));
            }
        }
    }
    let suppression_ratio = if ratios.is_empty() {
        1.0
    } else {
        ratios.iter().sum::<f64>() / ratios.len() as f64
    };

    let complement = result.null_projector.projector.range_basis()?;
    let delta = edited - original;
    let preservation_residual = complement
        .basis
        .column_iter()
        .map(|v| (&delta * v).norm())
        .fold(0.0, f64::max);

    let planted_recovered = model
        .planted_rows
        .iter()
        .filter(|&&i| result.selection.contains(i))
        .count();

    Ok(HarnessReport {
        rows,
        top_k: result.selection.requested,
        selected: sel.len(),
        suppression_ratio,
        preservation_residual,
        selected_fraction: if rows == 0 { 0.0 } else { sel.len() as f64 / rows as f64 },
        edited_alignment,
        planted_rows: model.planted_rows.clone(),
        planted_recovered,
    })
}

/// A scenario pushed through the full extract-and-edit pipeline.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub model: ToyModel,
    pub instance: SyntheticInstance,
    pub extraction: ExtractionResult,
    pub scores: ScoreVector,
    pub edit: EditResult,
    pub report: HarnessReport,
}

/// Builds a scenario, extracts with `top_C = C` from the noisy features,
/// edits the top `k` rows and evaluates the result.
pub fn run_scenario(
    spec: &SyntheticSpec,
    rows: usize,
    planted_alignment: usize,
    k: usize,
    rank_rel_tol: f64,
) -> Result<ScenarioRun> {
    if k == 0 {
        return Err(Error::InvalidConfig("K must be at least 1".into()));
    }
    let (model, instance) = build_scenario(spec, rows, planted_alignment)?;
    let extraction = extract::extract_hallucination(
        &instance.x_plus,
        &instance.x_minus,
        spec.subspace_dim,
        rank_rel_tol,
    )?;
    let w = WeightMatrix::new(0, model.weights.clone());
    let scores = edit::score_weights(&w, &extraction.hall_component)?;
    let selection = edit::select_top_k(&scores, k);
    let q = edit::null_projector(&extraction.hall_component, rank_rel_tol)?;
    q.projector.check()?;
    let edit = edit::apply_edit(&w, &selection, &q)?;
    let report = evaluate_edit(&model, &edit, &extraction.hall_component)?;
    Ok(ScenarioRun {
        model,
        instance,
        extraction,
        scores,
        edit,
        report,
    })
}

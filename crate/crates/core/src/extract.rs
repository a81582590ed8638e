//! Stage one: pool token features, fit the faithful subspace and split the
//! hallucinated features into a grounded part and an orthogonal
//! hallucination component.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, Projector, SubspaceBasis};
use crate::matio::PairEntry;

/// Mean-pooled features of one contrastive pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledPair {
    pub id: String,
    pub layer: u32,
    pub x_plus: DVector<f64>,
    pub x_minus: DVector<f64>,
}

impl PooledPair {
    pub fn from_entry(entry: &PairEntry) -> Result<Self> {
        Ok(PooledPair {
            id: entry.id.clone(),
            layer: entry.layer,
            x_plus: mean_pool(&entry.faithful)?,
            x_minus: mean_pool(&entry.hallucinated)?,
        })
    }
}

/// Arithmetic mean over the rows of a `T×D` token matrix.
pub fn mean_pool(tokens: &DMatrix<f64>) -> Result<DVector<f64>> {
    let t = tokens.nrows();
    if t == 0 {
        return Err(Error::EmptySequence);
    }
    let mut sum = DVector::zeros(tokens.ncols());
    for row in tokens.row_iter() {
        sum += row.transpose();
    }
    Ok(sum / t as f64)
}

/// Stacks pooled pairs into `N×D` matrices, row `i` holding pair `i`.
pub fn stack_pairs(pairs: &[PooledPair]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let first = pairs.first().ok_or(Error::NoPairs)?;
    let dim = first.x_plus.len();
    for p in pairs {
        if p.layer != first.layer {
            return Err(Error::MixedPairs(format!(
                "pair {:?} is at layer {}, pair {:?} at layer {}",
                p.id, p.layer, first.id, first.layer
            )));
        }
        if p.x_plus.len() != dim || p.x_minus.len() != dim {
            return Err(Error::MixedPairs(format!(
                "pair {:?} has dimension {}/{}, expected {dim}",
                p.id,
                p.x_plus.len(),
                p.x_minus.len()
            )));
        }
    }
    let n = pairs.len();
    let x_plus = DMatrix::from_fn(n, dim, |i, j| pairs[i].x_plus[j]);
    let x_minus = DMatrix::from_fn(n, dim, |i, j| pairs[i].x_minus[j]);
    Ok((x_plus, x_minus))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionResult {
    pub x_plus: DMatrix<f64>,
    pub x_minus: DMatrix<f64>,
    /// Top-C right singular directions of `x_plus`.
    pub faithful_basis: SubspaceBasis,
    /// Projector onto the faithful subspace.
    pub projector: Projector,
    /// `X⁻ P`.
    pub grounded_component: DMatrix<f64>,
    /// `X⁻ (I − P)`.
    pub hall_component: DMatrix<f64>,
}

impl ExtractionResult {
    /// `‖X̃ B‖_F / ‖X̃‖_F`, zero when `X̃ = 0`.
    pub fn orthogonality_residual(&self) -> f64 {
        let hall_norm = self.hall_component.norm();
        if hall_norm == 0.0 {
            return 0.0;
        }
        (&self.hall_component * &self.faithful_basis.basis).norm() / hall_norm
    }
}

pub fn extract_hallucination(
    x_plus: &DMatrix<f64>,
    x_minus: &DMatrix<f64>,
    top_c: usize,
    rank_rel_tol: f64,
) -> Result<ExtractionResult> {
    if x_plus.ncols() != x_minus.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "faithful features have {} columns, hallucinated have {}",
            x_plus.ncols(),
            x_minus.ncols()
        )));
    }
    crate::matio::npy::check_finite(x_minus)
        .map_err(|e| Error::Numerical(format!("hallucinated features: {e}")))?;
    let faithful_basis = linalg::row_space_basis(x_plus, rank_rel_tol, Some(top_c))?;
    Ok(split_by_basis(x_plus, x_minus, faithful_basis))
}

/// Decomposes `x_minus` against a given faithful basis.
pub fn split_by_basis(
    x_plus: &DMatrix<f64>,
    x_minus: &DMatrix<f64>,
    faithful_basis: SubspaceBasis,
) -> ExtractionResult {
    let projector = linalg::projector_from_basis(&faithful_basis);
    let grounded_component = x_minus * &projector.matrix;
    // X⁻(I − P) as X⁻ − (X⁻B)Bᵀ, with a second pass so that rows that are
    // mostly rounding residue still come out orthogonal to B.
    let b = &faithful_basis.basis;
    let mut hall_component = x_minus - (x_minus * b) * b.transpose();
    if faithful_basis.rank() == x_minus.ncols() {
        hall_component.fill(0.0);
    } else {
        let leak = (&hall_component * b) * b.transpose();
        hall_component -= leak;
    }
    ExtractionResult {
        x_plus: x_plus.clone(),
        x_minus: x_minus.clone(),
        faithful_basis,
        projector,
        grounded_component,
        hall_component,
    }
}

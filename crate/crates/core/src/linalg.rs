//! Dense linear algebra: SVD, tolerance-ranked orthonormal bases, orthogonal
//! projectors and cosine similarity.
//!
//! Bases are always expressed in feature space: a basis for an `N×D` matrix
//! is a `D×r` matrix whose columns are right singular vectors, and projectors
//! are `D×D`. Right singular vectors are sign-normalised so that the entry of
//! largest magnitude is positive (lowest index wins ties), which makes bases
//! reproducible across runs.

use nalgebra::{DMatrix, DVector, Dim, Matrix, RawStorage};

use crate::error::{Error, Result};

/// Bound on `‖P² − P‖_F` for every projector the crate produces.
pub const IDEMPOTENCE_TOL: f64 = 1e-8;
/// Bound on `‖P − Pᵀ‖_F`.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Bound on `|trace(P) − rank|`.
pub const TRACE_TOL: f64 = 1e-6;

const SVD_MAX_ITERATIONS: usize = 10_000;

/// Thin SVD `M = U diag(S) Vᵀ` with `k = min(N, D)` components.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    /// `N×k`, orthonormal columns.
    pub u: DMatrix<f64>,
    /// Non-increasing, non-negative.
    pub singular_values: DVector<f64>,
    /// `D×k`, orthonormal columns.
    pub v: DMatrix<f64>,
}

impl SvdResult {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.singular_values) * self.v.transpose()
    }
}

pub fn svd(m: &DMatrix<f64>) -> Result<SvdResult> {
    crate::matio::npy::check_finite(m)
        .map_err(|e| Error::Numerical(format!("svd input: {e}")))?;
    let (n, d) = m.shape();
    let k = n.min(d);
    if k == 0 {
        return Ok(SvdResult {
            u: DMatrix::zeros(n, 0),
            singular_values: DVector::zeros(0),
            v: DMatrix::zeros(d, 0),
        });
    }

    let decomposition = m
        .clone()
        .try_svd(true, true, f64::EPSILON, SVD_MAX_ITERATIONS)
        .ok_or_else(|| Error::Numerical(format!("svd of a {n}x{d} matrix did not converge")))?;
    let mut u = decomposition.u.expect("requested U");
    let mut v = decomposition.v_t.expect("requested Vᵀ").transpose();
    let singular_values = decomposition.singular_values;

    for j in 0..k {
        if leading_entry_sign(v.column(j).iter().copied()) < 0.0 {
            v.column_mut(j).neg_mut();
            u.column_mut(j).neg_mut();
        }
    }
    Ok(SvdResult {
        u,
        singular_values,
        v,
    })
}

/// Sign of the largest-magnitude entry; the first index wins ties.
fn leading_entry_sign(values: impl Iterator<Item = f64>) -> f64 {
    let mut best = 0.0f64;
    for x in values {
        if x.abs() > best.abs() {
            best = x;
        }
    }
    if best < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Orthonormal basis (columns) of a subspace of feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    /// `D×r`.
    pub basis: DMatrix<f64>,
    /// The `r` singular values belonging to the retained directions.
    pub singular_values: Vec<f64>,
    /// Rank under the tolerance, before any `max_rank` cap.
    pub numerical_rank: usize,
}

impl SubspaceBasis {
    pub fn empty(dim: usize) -> Self {
        SubspaceBasis {
            basis: DMatrix::zeros(dim, 0),
            singular_values: Vec::new(),
            numerical_rank: 0,
        }
    }

    /// Wraps a matrix whose columns are already orthonormal.
    pub fn from_orthonormal(basis: DMatrix<f64>) -> Self {
        let r = basis.ncols();
        SubspaceBasis {
            basis,
            singular_values: vec![1.0; r],
            numerical_rank: r,
        }
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    /// `‖BᵀB − I‖_F`.
    pub fn orthonormality_residual(&self) -> f64 {
        let r = self.rank();
        (self.basis.transpose() * &self.basis - DMatrix::identity(r, r)).norm()
    }
}

/// Basis of the row space of `m`: right singular vectors whose singular value
/// exceeds `rank_rel_tol · σ_max`, truncated to `max_rank` when given.
pub fn row_space_basis(
    m: &DMatrix<f64>,
    rank_rel_tol: f64,
    max_rank: Option<usize>,
) -> Result<SubspaceBasis> {
    let dim = m.ncols();
    let svd = svd(m)?;
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if sigma_max == 0.0 {
        return Ok(SubspaceBasis::empty(dim));
    }
    let threshold = rank_rel_tol * sigma_max;
    let numerical_rank = svd
        .singular_values
        .iter()
        .take_while(|&&s| s > threshold)
        .count();
    let r = max_rank.map_or(numerical_rank, |cap| cap.min(numerical_rank));
    Ok(SubspaceBasis {
        basis: svd.v.columns(0, r).into_owned(),
        singular_values: svd.singular_values.iter().take(r).copied().collect(),
        numerical_rank,
    })
}

/// Symmetric idempotent `D×D` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub matrix: DMatrix<f64>,
    pub rank: usize,
}

impl Projector {
    pub fn identity(dim: usize) -> Self {
        Projector {
            matrix: DMatrix::identity(dim, dim),
            rank: dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn idempotence_residual(&self) -> f64 {
        (&self.matrix * &self.matrix - &self.matrix).norm()
    }

    pub fn symmetry_residual(&self) -> f64 {
        (&self.matrix - self.matrix.transpose()).norm()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    /// Fails if any projector invariant is violated.
    pub fn check(&self) -> Result<()> {
        let idem = self.idempotence_residual();
        let sym = self.symmetry_residual();
        let trace_gap = (self.trace() - self.rank as f64).abs();
        if idem > IDEMPOTENCE_TOL || sym > SYMMETRY_TOL || trace_gap > TRACE_TOL {
            return Err(Error::Numerical(format!(
                "projector invariants violated: ‖P²−P‖={idem:e}, ‖P−Pᵀ‖={sym:e}, |tr−r|={trace_gap:e}"
            )));
        }
        Ok(())
    }

    /// Orthonormal basis of the range.
    pub fn range_basis(&self) -> Result<SubspaceBasis> {
        // Singular values of a projector are 0 or 1, so the cut is absolute.
        let svd = svd(&self.matrix)?;
        let r = svd.singular_values.iter().take_while(|&&s| s > 0.5).count();
        Ok(SubspaceBasis {
            basis: svd.v.columns(0, r).into_owned(),
            singular_values: vec![1.0; r],
            numerical_rank: r,
        })
    }
}

/// `P = B Bᵀ`, symmetrised so that `P == Pᵀ` exactly.
pub fn projector_from_basis(b: &SubspaceBasis) -> Projector {
    let p = &b.basis * b.basis.transpose();
    let matrix = (&p + p.transpose()) * 0.5;
    Projector {
        matrix,
        rank: b.rank(),
    }
}

/// `I − P`.
pub fn complement(p: &Projector) -> Projector {
    let d = p.dim();
    Projector {
        matrix: DMatrix::identity(d, d) - &p.matrix,
        rank: d - p.rank,
    }
}

/// `aᵀb / (‖a‖‖b‖)`, clamped to `[−1, 1]`. Accepts any vector-shaped views
/// (rows or columns) with the same number of entries.
pub fn cosine<R1, C1, S1, R2, C2, S2>(
    a: &Matrix<f64, R1, C1, S1>,
    b: &Matrix<f64, R2, C2, S2>,
) -> Result<f64>
where
    R1: Dim,
    C1: Dim,
    S1: RawStorage<f64, R1, C1>,
    R2: Dim,
    C2: Dim,
    S2: RawStorage<f64, R2, C2>,
{
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "cosine of vectors with {} and {} entries",
            a.len(),
            b.len()
        )));
    }
    let (mut dot, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        dot += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::UndefinedSimilarity);
    }
    Ok((dot / (aa * bb).sqrt()).clamp(-1.0, 1.0))
}

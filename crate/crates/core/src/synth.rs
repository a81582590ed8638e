//! Planted synthetic instances and a Monte Carlo check of the projection
//! estimator against the naive difference estimator.
//!
//! An instance plants a `C`-dimensional faithful subspace in `R^D` and builds
//!
//! ```text
//! X⁺ = X_real + ε⁺
//! X⁻ = X_real + X_hall∥ + X_hall⊥ + ε⁻
//! ```
//!
//! with `X_real`, `X_hall∥` inside the subspace and `X_hall⊥` orthogonal to
//! it. With the planted projector `P`, the projection residual
//! `X̃ = X⁻(I − P)` has expected error `σ₋²(D − C)N` against `X_hall⊥`,
//! whereas `X⁻ − X⁺` has `‖X_hall∥‖² + σ₋²DN + σ₊²DN`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract;
use crate::linalg::{self, SubspaceBasis};
use crate::matio::canonical;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(rename = "D")]
    pub dim: usize,
    #[serde(rename = "C")]
    pub subspace_dim: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(serialize_with = "canonical::f64")]
    pub sigma_minus: f64,
    #[serde(serialize_with = "canonical::f64")]
    pub sigma_plus: f64,
    #[serde(serialize_with = "canonical::f64")]
    pub hall_parallel_norm: f64,
    #[serde(serialize_with = "canonical::f64")]
    pub hall_perp_norm: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.subspace_dim == 0 || self.subspace_dim >= self.dim {
            return bad(format!(
                "need 1 <= C < D, got C = {}, D = {}",
                self.subspace_dim, self.dim
            ));
        }
        if self.n == 0 {
            return bad("N must be at least 1".into());
        }
        for (name, v) in [
            ("sigma_minus", self.sigma_minus),
            ("sigma_plus", self.sigma_plus),
            ("hall_parallel_norm", self.hall_parallel_norm),
            ("hall_perp_norm", self.hall_perp_norm),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// `σ₋²(D − C)N`.
    pub fn expected_proj_error(&self) -> f64 {
        self.sigma_minus.powi(2) * (self.dim - self.subspace_dim) as f64 * self.n as f64
    }

    /// `‖X_hall∥‖² + σ₋²DN + σ₊²DN`.
    pub fn expected_diff_error(&self) -> f64 {
        let dn = (self.dim * self.n) as f64;
        self.hall_parallel_norm.powi(2)
            + self.sigma_minus.powi(2) * dn
            + self.sigma_plus.powi(2) * dn
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticInstance {
    pub spec: SyntheticSpec,
    /// Planted `D×C` orthonormal basis.
    pub basis_true: DMatrix<f64>,
    pub x_real: DMatrix<f64>,
    pub x_hall_par: DMatrix<f64>,
    pub x_hall_perp: DMatrix<f64>,
    pub eps_plus: DMatrix<f64>,
    pub eps_minus: DMatrix<f64>,
    pub x_plus: DMatrix<f64>,
    pub x_minus: DMatrix<f64>,
}

impl SyntheticInstance {
    pub fn x_hall(&self) -> DMatrix<f64> {
        &self.x_hall_par + &self.x_hall_perp
    }

    pub fn planted_basis(&self) -> SubspaceBasis {
        SubspaceBasis::from_orthonormal(self.basis_true.clone())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn scale_to_norm(m: DMatrix<f64>, target: f64) -> DMatrix<f64> {
    let norm = m.norm();
    if target == 0.0 || norm == 0.0 {
        DMatrix::zeros(m.nrows(), m.ncols())
    } else {
        m * (target / norm)
    }
}

/// Draws an instance; the same spec (including seed) gives identical bits.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticInstance> {
    spec.validate()?;
    let (d, c, n) = (spec.dim, spec.subspace_dim, spec.n);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Every draw happens regardless of zero targets, so the stream layout
    // does not depend on the spec's magnitudes.
    let basis_true = gaussian(&mut rng, d, c).qr().q();
    let x_real = gaussian(&mut rng, n, c) * basis_true.transpose();
    let par_draft = gaussian(&mut rng, n, c) * basis_true.transpose();
    let perp_raw = gaussian(&mut rng, n, d);
    let perp_draft = &perp_raw - &perp_raw * &basis_true * basis_true.transpose();
    let eps_plus = gaussian(&mut rng, n, d) * spec.sigma_plus;
    let eps_minus = gaussian(&mut rng, n, d) * spec.sigma_minus;

    let x_hall_par = scale_to_norm(par_draft, spec.hall_parallel_norm);
    let x_hall_perp = scale_to_norm(perp_draft, spec.hall_perp_norm);
    let x_plus = &x_real + &eps_plus;
    let x_minus = &x_real + &x_hall_par + &x_hall_perp + &eps_minus;

    Ok(SyntheticInstance {
        spec: *spec,
        basis_true,
        x_real,
        x_hall_par,
        x_hall_perp,
        eps_plus,
        eps_minus,
        x_plus,
        x_minus,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BasisMode {
    /// Use the generator's planted basis (the idealised setting).
    #[default]
    Planted,
    /// Estimate the top-C basis from the noisy `X⁺`.
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorErrors {
    /// `‖X̃ − X_hall⊥‖_F²`.
    pub mse_proj: f64,
    /// `‖(X⁻ − X⁺) − X_hall⊥‖_F²`.
    pub mse_diff: f64,
}

pub fn evaluate_estimators(
    inst: &SyntheticInstance,
    use_planted_basis: bool,
    top_c: usize,
    rank_rel_tol: f64,
) -> Result<EstimatorErrors> {
    let extraction = if use_planted_basis {
        extract::split_by_basis(&inst.x_plus, &inst.x_minus, inst.planted_basis())
    } else {
        extract::extract_hallucination(&inst.x_plus, &inst.x_minus, top_c, rank_rel_tol)?
    };
    let mse_proj = (&extraction.hall_component - &inst.x_hall_perp).norm_squared();
    let diff = &inst.x_minus - &inst.x_plus;
    let mse_diff = (diff - &inst.x_hall_perp).norm_squared();
    Ok(EstimatorErrors { mse_proj, mse_diff })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorComparison {
    pub spec: SyntheticSpec,
    pub basis: BasisMode,
    pub trials: usize,
    #[serde(serialize_with = "canonical::f64")]
    pub expected_proj: f64,
    #[serde(serialize_with = "canonical::f64")]
    pub expected_diff: f64,
    #[serde(serialize_with = "canonical::f64")]
    pub mean_proj: f64,
    #[serde(serialize_with = "canonical::f64")]
    pub std_proj: f64,
    #[serde(serialize_with = "canonical::f64")]
    pub mean_diff: f64,
    #[serde(serialize_with = "canonical::f64")]
    pub std_diff: f64,
    pub wins: usize,
    pub ties: usize,
    /// `wins / (trials − ties)`; `None` when every trial tied.
    #[serde(serialize_with = "canonical::opt_f64")]
    pub win_rate: Option<f64>,
    /// `mean(d) / (std(d)/√T)` for the paired gap `d = mse_diff − mse_proj`.
    #[serde(serialize_with = "canonical::opt_f64")]
    pub paired_margin_z: Option<f64>,
    #[serde(serialize_with = "canonical::vec_f64")]
    pub mse_proj: Vec<f64>,
    #[serde(serialize_with = "canonical::vec_f64")]
    pub mse_diff: Vec<f64>,
}

/// Absolute slack for comparing per-trial errors and zero-valued expectations.
const TIE_SCALE: f64 = 1e-12;

impl ErrorComparison {
    /// Mean projection error within `rel_tol` of `σ₋²(D − C)N`.
    pub fn proj_matches_closed_form(&self, rel_tol: f64) -> bool {
        within(self.mean_proj, self.expected_proj, rel_tol)
    }

    /// Mean difference error within `rel_tol` of its closed form.
    pub fn diff_matches_closed_form(&self, rel_tol: f64) -> bool {
        within(self.mean_diff, self.expected_diff, rel_tol)
    }

    pub fn all_tied(&self) -> bool {
        self.ties == self.trials
    }

    pub fn to_canonical_json(&self) -> String {
        canonical::to_string(self).expect("comparison values are finite")
    }
}

fn within(observed: f64, expected: f64, rel_tol: f64) -> bool {
    let gap = (observed - expected).abs();
    gap <= rel_tol * expected.abs() || gap <= TIE_SCALE
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs `trials` instances seeded `seed, seed + 1, …` and compares both
/// estimators against their closed-form expectations.
pub fn verify_proposition(
    spec: &SyntheticSpec,
    trials: usize,
    basis: BasisMode,
    rank_rel_tol: f64,
) -> Result<ErrorComparison> {
    spec.validate()?;
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    let mut mse_proj = Vec::with_capacity(trials);
    let mut mse_diff = Vec::with_capacity(trials);
    let (mut wins, mut ties) = (0, 0);
    for t in 0..trials {
        let inst = generate(&spec.with_seed(spec.seed.wrapping_add(t as u64)))?;
        let e = evaluate_estimators(
            &inst,
            basis == BasisMode::Planted,
            spec.subspace_dim,
            rank_rel_tol,
        )?;
        let scale = 1.0 + inst.x_minus.norm_squared();
        if (e.mse_proj - e.mse_diff).abs() <= TIE_SCALE * scale {
            ties += 1;
        } else if e.mse_proj < e.mse_diff {
            wins += 1;
        }
        mse_proj.push(e.mse_proj);
        mse_diff.push(e.mse_diff);
    }

    let (mean_proj, std_proj) = mean_std(&mse_proj);
    let (mean_diff, std_diff) = mean_std(&mse_diff);
    let gaps: Vec<f64> = mse_diff.iter().zip(&mse_proj).map(|(d, p)| d - p).collect();
    let (gap_mean, gap_std) = mean_std(&gaps);
    let paired_margin_z =
        (gap_std > 0.0).then(|| gap_mean / (gap_std / (trials as f64).sqrt()));
    let decisive = trials - ties;
    let win_rate = (decisive > 0).then(|| wins as f64 / decisive as f64);

    Ok(ErrorComparison {
        spec: *spec,
        basis,
        trials,
        expected_proj: spec.expected_proj_error(),
        expected_diff: spec.expected_diff_error(),
        mean_proj,
        std_proj,
        mean_diff,
        std_diff,
        wins,
        ties,
        win_rate,
        paired_margin_z,
        mse_proj,
        mse_diff,
    })
}

/// Largest principal-angle sine between the planted subspace and the one
/// estimated from `X⁺`, as a Frobenius bound. Useful for characterising the
/// estimated-basis mode.
pub fn basis_estimation_gap(inst: &SyntheticInstance, rank_rel_tol: f64) -> Result<f64> {
    let est = linalg::row_space_basis(&inst.x_plus, rank_rel_tol, Some(inst.spec.subspace_dim))?;
    let d = inst.spec.dim;
    Ok(((DMatrix::identity(d, d) - &inst.basis_true * inst.basis_true.transpose()) * est.basis).norm())
}

//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line; run with
//! `cargo test -p mpd-core --test acceptance -- --nocapture` to see them.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use mpd_core::edit::{null_projector, run_pipeline, select_top_k, ScoreVector, WeightMatrix};
use mpd_core::extract::extract_hallucination;
use mpd_core::harness::run_scenario;
use mpd_core::linalg::{complement, projector_from_basis, row_space_basis, Projector};
use mpd_core::matio::npy::{decode, encode};
use mpd_core::matio::{Dtype, PairEntry, PairManifest, RunConfig};
use mpd_core::synth::{verify_proposition, BasisMode};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{desk_spec, files_in, gaussian, Fixture};

const TOL: f64 = 1e-10;

fn verdict(id: u32, name: &str, ok: bool, detail: String) {
    println!("AC{id} {name}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "AC{id} {name} failed: {detail}");
}

#[test]
fn ac1_proposition_monte_carlo() {
    let spec = desk_spec(0);
    let start = Instant::now();
    let cmp = verify_proposition(&spec, 1000, BasisMode::Planted, TOL).unwrap();
    let secs = start.elapsed().as_secs_f64();

    let win_rate = cmp.win_rate.unwrap_or(0.0);
    let proj_gap = (cmp.mean_proj - 0.96).abs() / 0.96;
    let diff_gap = (cmp.mean_diff - 3.56).abs() / 3.56;
    assert!((cmp.expected_proj - 0.96).abs() < 1e-12);
    assert!((cmp.expected_diff - 3.56).abs() < 1e-12);
    verdict(
        1,
        "proposition Monte Carlo",
        win_rate >= 0.99 && proj_gap <= 0.05 && diff_gap <= 0.05 && secs < 30.0,
        format!(
            "win_rate {win_rate:.4}, mse_proj {:.4} vs 0.96, mse_diff {:.4} vs 3.56, {secs:.2}s",
            cmp.mean_proj, cmp.mean_diff
        ),
    );
}

#[test]
fn ac2_projector_algebra() {
    let mut worst_idem = 0.0f64;
    let mut worst_sym = 0.0f64;
    let mut worst_pyth = 0.0f64;
    let mut count = 0;
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(2..=48);
        let n = rng.random_range(1..=24);
        let c = rng.random_range(1..d);
        let xp = gaussian(&mut rng, n, d);
        let xm = gaussian(&mut rng, n, d);

        let basis = row_space_basis(&xp, TOL, Some(c)).unwrap();
        let p = projector_from_basis(&basis);
        let ext = extract_hallucination(&xp, &xm, c, TOL).unwrap();
        let q = null_projector(&ext.hall_component, TOL).unwrap();
        let projectors: [&Projector; 4] = [&p, &complement(&p), &ext.projector, &q.projector];

        let x = DVector::from_iterator(d, gaussian(&mut rng, d, 1).iter().copied());
        for pr in projectors {
            count += 1;
            worst_idem = worst_idem.max(pr.idempotence_residual());
            worst_sym = worst_sym.max(pr.symmetry_residual());
            let inside = &pr.matrix * &x;
            let outside = &x - &inside;
            let total = x.norm_squared();
            worst_pyth = worst_pyth
                .max((total - inside.norm_squared() - outside.norm_squared()).abs() / total);
        }
    }
    verdict(
        2,
        "projector algebra",
        worst_idem <= 1e-8 && worst_sym <= 1e-10 && worst_pyth <= 1e-8,
        format!(
            "{count} projectors, max idempotence {worst_idem:.2e}, symmetry {worst_sym:.2e}, Pythagoras {worst_pyth:.2e}"
        ),
    );
}

struct RandomPipeline {
    hall: DMatrix<f64>,
    weights: DMatrix<f64>,
    edited: DMatrix<f64>,
    selected: Vec<usize>,
}

/// An in-memory manifest of single-token pairs run through the full pipeline.
fn random_pipeline(seed: u64) -> RandomPipeline {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(4..=64);
    let n = rng.random_range(1..=32);
    let l = rng.random_range(1..=128);
    let c = rng.random_range(1..d);
    let k = rng.random_range(1..=l);
    let xp = gaussian(&mut rng, n, d);
    let xm = gaussian(&mut rng, n, d);
    let weights = gaussian(&mut rng, l, d);
    let entries = (0..n)
        .map(|i| PairEntry {
            id: format!("p{i}"),
            faithful_path: PathBuf::new(),
            hallucinated_path: PathBuf::new(),
            layer: 0,
            faithful: xp.rows(i, 1).into_owned(),
            hallucinated: xm.rows(i, 1).into_owned(),
        })
        .collect();
    let manifest = PairManifest { entries };
    let config = RunConfig {
        top_c: Some(c),
        top_k: k,
        ..RunConfig::default()
    };
    let w = [(0, WeightMatrix::new(0, weights.clone()))].into_iter().collect();
    let mut out = run_pipeline(&manifest, &w, &config);
    let layer = out.layers.remove(&0).expect("pipeline layer succeeds");
    RandomPipeline {
        hall: layer.extraction.hall_component,
        weights,
        edited: layer.edit.weights,
        selected: layer.edit.selection.indices,
    }
}

#[test]
fn ac3_null_space_annihilation() {
    let mut worst = 0.0f64;
    let mut rows = 0;
    for seed in 0..200u64 {
        let p = random_pipeline(seed);
        let hall_norm = p.hall.norm();
        for &i in &p.selected {
            rows += 1;
            let w = p.weights.row(i).transpose();
            let qw = p.edited.row(i).transpose();
            let hit = (&p.hall * &qw).amax();
            let bound = hall_norm * w.norm();
            if bound > 0.0 {
                worst = worst.max(hit / bound);
            } else {
                assert_eq!(hit, 0.0);
            }
        }
    }
    verdict(
        3,
        "null-space annihilation",
        worst <= 1e-8,
        format!("200 pipelines, {rows} edited rows, max ‖X̃Qw‖∞/(‖X̃‖‖w‖) {worst:.2e}"),
    );
}

/// Basis of the orthogonal complement of the row space of `m`, from the
/// eigenvectors of `mᵀm` with negligible eigenvalues.
fn complement_basis(m: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let d = m.ncols();
    let eig = SymmetricEigen::new(m.transpose() * m);
    let top = eig.eigenvalues.amax();
    (0..d)
        .filter(|&i| eig.eigenvalues[i] <= 1e-12 * top)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect()
}

#[test]
fn ac4_faithful_preservation() {
    let mut worst = 0.0f64;
    let mut probes = 0;
    let mut untouched_ok = true;
    for seed in 0..200u64 {
        let p = random_pipeline(seed);
        let delta = &p.edited - &p.weights;
        let scale = p.weights.norm();
        for v in complement_basis(&p.hall) {
            probes += 1;
            worst = worst.max((&delta * v).norm() / scale);
        }
        for i in 0..p.weights.nrows() {
            if p.selected.binary_search(&i).is_err() {
                untouched_ok &= p
                    .weights
                    .row(i)
                    .iter()
                    .zip(p.edited.row(i).iter())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
            }
        }
    }
    verdict(
        4,
        "faithful preservation",
        worst <= 1e-8 && untouched_ok,
        format!(
            "{probes} complement probes, max ‖ΔW v‖/‖W‖ {worst:.2e}, unselected rows bit-identical: {untouched_ok}"
        ),
    );
}

#[test]
fn ac5_explicit_formula_equivalence() {
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(6..=48);
        let c = rng.random_range(1..=d / 2);
        let n = rng.random_range(1..d - c);
        let xp = gaussian(&mut rng, n, d);
        let xm = gaussian(&mut rng, n, d);
        let hall = extract_hallucination(&xp, &xm, c, TOL).unwrap().hall_component;
        let q = null_projector(&hall, TOL).unwrap();
        assert_eq!(q.hall_rank(), n);
        let gram_inv = (&hall * hall.transpose()).try_inverse().unwrap();
        let explicit = DMatrix::identity(d, d) - hall.transpose() * gram_inv * &hall;
        worst = worst.max((q.matrix() - explicit).norm());
    }
    verdict(
        5,
        "explicit-formula equivalence",
        worst <= 1e-8,
        format!("100 full-row-rank instances, max ‖Q_svd − Q_explicit‖_F {worst:.2e}"),
    );
}

#[test]
fn ac6_top_k_oracle() {
    let mut mismatches = 0;
    let mut with_ties = 0;
    for seed in 0..10_000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = rng.random_range(0..=40);
        let levels = rng.random_range(1..=6);
        let scores: Vec<f64> = (0..len)
            .map(|_| {
                if rng.random_bool(0.05) {
                    f64::NEG_INFINITY
                } else {
                    rng.random_range(0..levels) as f64 / levels as f64 - 0.5
                }
            })
            .collect();
        let k = rng.random_range(0..=len + 3);

        let mut oracle: Vec<usize> = (0..len).filter(|&i| scores[i].is_finite()).collect();
        // Stable sort keeps equal scores in index order.
        oracle.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
        oracle.truncate(k);
        oracle.sort_unstable();

        let finite: Vec<f64> = scores.iter().copied().filter(|s| s.is_finite()).collect();
        let mut distinct = finite.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() < finite.len() {
            with_ties += 1;
        }
        if select_top_k(&ScoreVector { scores }, k).indices != oracle {
            mismatches += 1;
        }
    }
    let flat = select_top_k(&ScoreVector { scores: vec![0.25; 10] }, 3);
    let rule_ok = flat.indices == [0, 1, 2];
    verdict(
        6,
        "top-K oracle",
        mismatches == 0 && rule_ok,
        format!("10000 vectors ({with_ties} with ties), {mismatches} mismatches, lower-index tie rule: {rule_ok}"),
    );
}

#[test]
fn ac7_planted_recovery() {
    let mut total = 0;
    let mut min = usize::MAX;
    for seed in 0..100u64 {
        let run = run_scenario(&desk_spec(seed), 64, 8, 8, TOL).unwrap();
        assert_eq!(run.report.planted_rows.len(), 8);
        total += run.report.planted_recovered;
        min = min.min(run.report.planted_recovered);
    }
    let mean = total as f64 / 100.0;
    verdict(
        7,
        "planted recovery",
        mean >= 7.0,
        format!("L=64, 8 planted, K=8, 100 seeds: mean {mean:.2} recovered, min {min}"),
    );
}

fn mpd(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_mpd"))
        .args(args)
        .output()
        .expect("binary runs")
        .status
        .code()
        .unwrap_or(-1)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn ac8_io_and_determinism() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut round_trip_ok = true;
    for _ in 0..100 {
        let r = rng.random_range(0..=12);
        let c = rng.random_range(0..=12);
        let m = gaussian(&mut rng, r, c) * 10f64.powi(rng.random_range(-6..=6));
        let back = decode(&encode(&m, Dtype::Float64).unwrap()).unwrap();
        round_trip_ok &= back.dtype == Dtype::Float64
            && back.matrix.shape() == m.shape()
            && back.matrix.iter().zip(m.iter()).all(|(a, b)| a.to_bits() == b.to_bits());

        let narrow = m.map(|x| x as f32 as f64);
        let back = decode(&encode(&narrow, Dtype::Float32).unwrap()).unwrap();
        round_trip_ok &= back.dtype == Dtype::Float32
            && back.matrix.shape() == m.shape()
            && back.matrix.iter().zip(narrow.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
    }

    let fx = Fixture::new();
    fx.write_layers(&[(0, desk_spec(21)), (4, desk_spec(22))], 64);
    fx.write_config(r#"{"top_C": 8, "top_K": 8}"#);
    let spec = fx.path().join("spec.json");
    fs::write(&spec, serde_json::to_string(&desk_spec(0)).unwrap()).unwrap();
    let run_all = |name: &str| {
        let root = fx.path().join(name);
        let (ext, ed, vp, h) = (root.join("extract"), root.join("edit"), root.join("vp"), root.join("h"));
        let (cfg, man, wts) = (fx.config_path(), fx.manifest_path(), fx.weights_dir());
        let codes = [
            mpd(&["extract", "--config", s(&cfg), "--manifest", s(&man), "--out", s(&ext)]),
            mpd(&["edit", "--config", s(&cfg), "--manifest", s(&man), "--weights", s(&wts), "--out", s(&ed)]),
            mpd(&["verify-prop", "--spec", s(&spec), "--trials", "100", "--out", s(&vp)]),
            mpd(&["harness", "--spec", s(&spec), "--L", "64", "--K", "8", "--out", s(&h)]),
        ];
        assert_eq!(codes, [0; 4], "CLI run {name}");
        [ext, ed, vp, h].map(|d| files_in(&d))
    };
    let first = run_all("first");
    let second = run_all("second");
    let files: usize = first.iter().map(Vec::len).sum();
    let identical = first == second;
    verdict(
        8,
        "I/O and determinism",
        round_trip_ok && identical,
        format!("100 matrices x 2 dtypes bit-exact: {round_trip_ok}; {files} CLI outputs byte-identical across runs: {identical}"),
    );
}

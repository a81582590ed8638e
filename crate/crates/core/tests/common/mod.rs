#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use mpd_core::matio::{write_matrix, Dtype};
use mpd_core::synth::{generate, SyntheticSpec};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn desk_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        dim: 32,
        subspace_dim: 8,
        n: 16,
        sigma_minus: 0.05,
        sigma_plus: 0.05,
        hall_parallel_norm: 1.0,
        hall_perp_norm: 4.0,
        seed,
    }
}

/// `(layer, x_plus, x_minus, weights)`.
pub type ExplicitLayer<'a> = (u32, &'a DMatrix<f64>, &'a DMatrix<f64>, &'a DMatrix<f64>);

/// Writes a manifest with one pair per synthetic row for each layer, plus
/// `weights/layer<id>.npy` with `rows` random weight rows.
pub struct Fixture {
    pub dir: tempfile::TempDir,
}

impl Fixture {
    pub fn new() -> Self {
        Fixture {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.path().join("pairs.json")
    }

    pub fn weights_dir(&self) -> PathBuf {
        self.path().join("weights")
    }

    pub fn config_path(&self) -> PathBuf {
        self.path().join("config.json")
    }

    /// Token matrices are two rows `x ± δ`, so pooling returns `x` up to rounding.
    pub fn write_layers(&self, layers: &[(u32, SyntheticSpec)], rows: usize) {
        let feats = self.path().join("features");
        fs::create_dir_all(&feats).unwrap();
        fs::create_dir_all(self.weights_dir()).unwrap();
        let mut entries = Vec::new();
        for (layer, spec) in layers {
            let inst = generate(spec).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xABCD);
            for i in 0..spec.n {
                let jitter = gaussian(&mut rng, 1, spec.dim) * 0.01;
                let tokens = |x: DMatrix<f64>| {
                    let mut t = DMatrix::zeros(2, spec.dim);
                    t.set_row(0, &(&x + &jitter).row(0));
                    t.set_row(1, &(&x - &jitter).row(0));
                    t
                };
                let plus = tokens(inst.x_plus.rows(i, 1).into_owned());
                let minus = tokens(inst.x_minus.rows(i, 1).into_owned());
                let fp = format!("features/l{layer}_p{i}_plus.npy");
                let hp = format!("features/l{layer}_p{i}_minus.npy");
                write_matrix(&plus, self.path().join(&fp), Dtype::Float64).unwrap();
                write_matrix(&minus, self.path().join(&hp), Dtype::Float64).unwrap();
                entries.push(serde_json::json!({
                    "id": format!("l{layer}-p{i}"),
                    "faithful": fp,
                    "hallucinated": hp,
                    "layer": layer,
                }));
            }
            let w = gaussian(&mut rng, rows, spec.dim);
            write_matrix(&w, self.weights_dir().join(format!("layer{layer}.npy")), Dtype::Float64)
                .unwrap();
        }
        fs::write(
            self.manifest_path(),
            serde_json::to_string_pretty(&entries).unwrap(),
        )
        .unwrap();
    }

    /// One single-token pair per row of `x_plus`/`x_minus`, per layer.
    pub fn write_explicit(&self, layers: &[ExplicitLayer]) {
        let feats = self.path().join("features");
        fs::create_dir_all(&feats).unwrap();
        fs::create_dir_all(self.weights_dir()).unwrap();
        let mut entries = Vec::new();
        for (layer, xp, xm, w) in layers {
            for i in 0..xp.nrows() {
                let fp = format!("features/l{layer}_p{i}_plus.npy");
                let hp = format!("features/l{layer}_p{i}_minus.npy");
                write_matrix(&xp.rows(i, 1).into_owned(), self.path().join(&fp), Dtype::Float64)
                    .unwrap();
                write_matrix(&xm.rows(i, 1).into_owned(), self.path().join(&hp), Dtype::Float64)
                    .unwrap();
                entries.push(serde_json::json!({
                    "id": format!("l{layer}-p{i}"),
                    "faithful": fp,
                    "hallucinated": hp,
                    "layer": layer,
                }));
            }
            write_matrix(w, self.weights_dir().join(format!("layer{layer}.npy")), Dtype::Float64)
                .unwrap();
        }
        fs::write(
            self.manifest_path(),
            serde_json::to_string_pretty(&entries).unwrap(),
        )
        .unwrap();
    }

    pub fn write_config(&self, json: &str) {
        fs::write(self.config_path(), json).unwrap();
    }
}

pub fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

//! The `mpd` command line.
//!
//! Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 some layers
//! failed, 4 a verification threshold was not met.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::Value;

use crate::edit::{self, WeightMatrix};
use crate::error::{Error, Result};
use crate::extract;
use crate::harness;
use crate::matio::report::ProjectorResiduals;
use crate::matio::{
    self, npy, ExtractRecord, LayerRecord, PairManifest, Report, RunConfig,
};
use crate::synth::{self, BasisMode, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success = 0,
    Validation = 1,
    Numerical = 2,
    PartialFailure = 3,
    CheckFailed = 4,
}

impl From<Status> for ExitCode {
    fn from(s: Status) -> Self {
        ExitCode::from(s as u8)
    }
}

impl Status {
    fn of(e: &Error) -> Self {
        if e.is_numerical() {
            Status::Numerical
        } else {
            Status::Validation
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mpd", version, about = "Hallucination-subspace extraction and null-space weight editing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract per-layer hallucination components and faithful bases.
    Extract {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full extract-and-edit pipeline and write edited weights.
    Edit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Directory holding `layer<id>.npy` weight matrices.
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo comparison of the projection and difference estimators.
    VerifyProp {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0.99)]
        win_threshold: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = BasisArg::Planted)]
        basis: BasisArg,
        /// Relative tolerance for the closed-form error checks.
        #[arg(long, default_value_t = 0.05)]
        closed_form_tol: f64,
    },
    /// Toy-model scenario: plant aligned rows, edit, and probe the result.
    Harness {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long = "L")]
        rows: usize,
        #[arg(long = "K")]
        k: usize,
        /// Number of planted aligned rows (defaults to K).
        #[arg(long)]
        planted: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretty-print `<out>/report.json`.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BasisArg {
    Planted,
    Estimated,
}

impl From<BasisArg> for BasisMode {
    fn from(b: BasisArg) -> Self {
        match b {
            BasisArg::Planted => BasisMode::Planted,
            BasisArg::Estimated => BasisMode::Estimated,
        }
    }
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let status = if e.use_stderr() {
                Status::Validation
            } else {
                Status::Success
            };
            let _ = e.print();
            return status.into();
        }
    };
    run(cli.command).into()
}

pub fn run(command: Command) -> Status {
    let outcome = match command {
        Command::Extract {
            config,
            manifest,
            out,
        } => cmd_extract(&config, &manifest, out.as_deref()),
        Command::Edit {
            config,
            manifest,
            weights,
            out,
        } => cmd_edit(&config, &manifest, &weights, out.as_deref()),
        Command::VerifyProp {
            spec,
            trials,
            win_threshold,
            out,
            basis,
            closed_form_tol,
        } => cmd_verify_prop(&spec, trials, win_threshold, closed_form_tol, basis.into(), &out),
        Command::Harness {
            spec,
            rows,
            k,
            planted,
            out,
        } => cmd_harness(&spec, rows, k, planted.unwrap_or(k.min(rows)), &out),
        Command::Report { out } => cmd_report(&out),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        Status::of(&e)
    })
}

fn output_dir(flag: Option<&Path>, config: &RunConfig) -> Result<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| Error::InvalidConfig("no output directory: pass --out or set output_dir".into()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_inputs(config: &Path, manifest: &Path) -> Result<(RunConfig, PairManifest)> {
    let config = matio::load_config(config)?;
    let manifest = matio::load_manifest(manifest)?;
    for layer in edit::target_layers(&manifest, &config) {
        if manifest.entries_for(layer).next().is_none() {
            return Err(Error::InvalidConfig(format!(
                "configured layer {layer} has no manifest entries"
            )));
        }
    }
    Ok((config, manifest))
}

pub fn cmd_extract(config: &Path, manifest: &Path, out: Option<&Path>) -> Result<Status> {
    let (config, manifest) = load_inputs(config, manifest)?;
    let out = output_dir(out, &config)?;

    let mut records = Vec::new();
    let mut artifacts = Vec::new();
    for layer in edit::target_layers(&manifest, &config) {
        let result = (|| {
            let (x_plus, x_minus) = edit::layer_features(&manifest, layer)?;
            let (n, dim) = x_plus.shape();
            let top_c = config.top_c_for(dim, n);
            let r = extract::extract_hallucination(&x_plus, &x_minus, top_c, config.rank_rel_tol)?;
            r.projector.check()?;
            let record = ExtractRecord {
                layer,
                dim,
                n,
                top_c,
                effective_rank_faithful: r.faithful_basis.numerical_rank,
                retained_rank: r.faithful_basis.rank(),
                hall_frobenius: r.hall_component.norm(),
                projector_residuals: ProjectorResiduals {
                    idempotence: r.projector.idempotence_residual(),
                    symmetry: r.projector.symmetry_residual(),
                    annihilation: r.orthogonality_residual(),
                },
            };
            Ok::<_, Error>((record, r))
        })()
        .map_err(|e| e.in_layer(layer))?;
        let hall = npy::encode(&result.1.hall_component, config.dtype)?;
        let basis = npy::encode(&result.1.faithful_basis.basis, config.dtype)?;
        artifacts.push((format!("layer{layer}.hall"), hall));
        artifacts.push((format!("layer{layer}.basis"), basis));
        records.push(LayerRecord::Ok(result.0));
    }

    // Every layer succeeded; only now touch the output directory.
    ensure_dir(&out)?;
    for (name, bytes) in &artifacts {
        matio::write_atomic(&out.join(name), bytes)?;
    }
    let report = Report {
        command: "extract",
        layers: records,
    };
    matio::write_atomic(&out.join("report.json"), report.to_canonical_json().as_bytes())?;
    eprintln!(
        "extracted {} layer(s) into {}",
        report.layers.len(),
        out.display()
    );
    Ok(Status::Success)
}

pub fn cmd_edit(config: &Path, manifest: &Path, weights: &Path, out: Option<&Path>) -> Result<Status> {
    let (config, manifest) = load_inputs(config, manifest)?;
    let out = output_dir(out, &config)?;
    if !weights.is_dir() {
        return Err(Error::InvalidConfig(format!(
            "weights directory {} does not exist",
            weights.display()
        )));
    }

    let output = edit::run_pipeline_with(&manifest, &config, |layer| {
        let file = npy::read_matrix_file(weights.join(format!("layer{layer}.npy")))?;
        Ok(WeightMatrix {
            layer,
            weights: file.matrix,
            dtype: file.dtype,
        })
    });
    output.persist(&out)?;

    let failed = output.report.failed_layers();
    for record in &output.report.layers {
        if let LayerRecord::Failed { layer, error } = record {
            eprintln!("layer {layer} failed: {error}");
        }
    }
    eprintln!(
        "edited {} of {} layer(s) into {}",
        output.layers.len(),
        output.report.layers.len(),
        out.display()
    );
    Ok(if failed == 0 {
        Status::Success
    } else {
        Status::PartialFailure
    })
}

fn load_spec(path: &Path) -> Result<SyntheticSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: SyntheticSpec = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    spec.validate()?;
    Ok(spec)
}

pub fn cmd_verify_prop(
    spec: &Path,
    trials: usize,
    win_threshold: f64,
    closed_form_tol: f64,
    basis: BasisMode,
    out: &Path,
) -> Result<Status> {
    let spec = load_spec(spec)?;
    if trials == 0 {
        return Err(Error::InvalidConfig("--trials must be at least 1".into()));
    }
    if !win_threshold.is_finite() || win_threshold < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "--win-threshold must be a non-negative number, got {win_threshold}"
        )));
    }
    if !(closed_form_tol.is_finite() && closed_form_tol >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "--closed-form-tol must be non-negative, got {closed_form_tol}"
        )));
    }

    let cmp = synth::verify_proposition(&spec, trials, basis, matio::config::DEFAULT_RANK_REL_TOL)?;
    ensure_dir(out)?;
    matio::write_atomic(&out.join("verify_prop.json"), cmp.to_canonical_json().as_bytes())?;

    let wins_ok = cmp.all_tied() || cmp.win_rate.is_some_and(|r| r >= win_threshold);
    let proj_ok = basis == BasisMode::Estimated || cmp.proj_matches_closed_form(closed_form_tol);
    let diff_ok = cmp.diff_matches_closed_form(closed_form_tol);
    match cmp.win_rate {
        Some(r) => eprintln!("win rate {r:.4} ({} wins, {} ties, {} trials)", cmp.wins, cmp.ties, cmp.trials),
        None => eprintln!("all {} trials tied", cmp.trials),
    }
    eprintln!(
        "projection error {:.6} (closed form {:.6}), difference error {:.6} (closed form {:.6})",
        cmp.mean_proj, cmp.expected_proj, cmp.mean_diff, cmp.expected_diff
    );
    Ok(if wins_ok && proj_ok && diff_ok {
        Status::Success
    } else {
        Status::CheckFailed
    })
}

pub fn cmd_harness(spec: &Path, rows: usize, k: usize, planted: usize, out: &Path) -> Result<Status> {
    let spec = load_spec(spec)?;
    let run = harness::run_scenario(&spec, rows, planted, k, matio::config::DEFAULT_RANK_REL_TOL)?;
    ensure_dir(out)?;
    matio::write_atomic(&out.join("harness.json"), run.report.to_canonical_json().as_bytes())?;
    let r = &run.report;
    eprintln!(
        "suppression {:.3e}, preservation {:.3e}, recovered {}/{} planted rows",
        r.suppression_ratio,
        r.preservation_residual,
        r.planted_recovered,
        r.planted_rows.len()
    );
    Ok(Status::Success)
}

pub fn cmd_report(out: &Path) -> Result<Status> {
    let path = out.join("report.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let report: Value = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    print!("{}", render_report(&report));
    Ok(Status::Success)
}

/// Human-readable rendering of a report document.
pub fn render_report(report: &Value) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    let command = report["command"].as_str().unwrap_or("?");
    let _ = writeln!(s, "{command} report");
    let empty = Vec::new();
    let layers = report["layers"].as_array().unwrap_or(&empty);
    for rec in layers {
        let layer = &rec["layer"];
        if rec["status"] == "failed" {
            let _ = writeln!(s, "  layer {layer}: FAILED: {}", rec["error"].as_str().unwrap_or(""));
            continue;
        }
        let num = |v: &Value| v.as_f64().map_or("-".to_string(), |x| format!("{x:.3e}"));
        let res = &rec["projector_residuals"];
        let _ = writeln!(
            s,
            "  layer {layer}: D={} N={} top_C={} faithful rank={}",
            rec["D"], rec["N"], rec["top_C"], rec["effective_rank_faithful"]
        );
        if command == "edit" {
            let _ = writeln!(
                s,
                "    hall rank={} selected {} of L={} (top_K={}, shortfall {})",
                rec["effective_rank_hall"],
                rec["selected_indices"].as_array().map_or(0, Vec::len),
                rec["L"],
                rec["top_K"],
                rec["shortfall"]
            );
            let stats = &rec["score_stats"];
            if stats.is_object() {
                let _ = writeln!(
                    s,
                    "    scores min {} max {} mean {}",
                    num(&stats["min"]),
                    num(&stats["max"]),
                    num(&stats["mean"])
                );
            }
            let _ = writeln!(s, "    ‖ΔW‖_F = {}", num(&rec["frobenius_delta_of_w"]));
        } else {
            let _ = writeln!(s, "    ‖X̃‖_F = {}", num(&rec["hall_frobenius"]));
        }
        let _ = writeln!(
            s,
            "    projector residuals: idempotence {} symmetry {} annihilation {}",
            num(&res["idempotence"]),
            num(&res["symmetry"]),
            num(&res["annihilation"])
        );
    }
    s
}

/// Reads every `layer<id>.npy` under `dir` for the given layers.
pub fn load_weights(dir: &Path, layers: &[u32]) -> Result<BTreeMap<u32, WeightMatrix>> {
    layers
        .iter()
        .map(|&layer| {
            let f = npy::read_matrix_file(dir.join(format!("layer{layer}.npy")))?;
            Ok((
                layer,
                WeightMatrix {
                    layer,
                    weights: f.matrix,
                    dtype: f.dtype,
                },
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn unknown_flag_rejected() {
        assert!(Cli::try_parse_from(["mpd", "report", "--out", "x", "--bogus"]).is_err());
        let ok = Cli::try_parse_from(["mpd", "harness", "--spec", "s.json", "--L", "64", "--K", "8", "--out", "o"]);
        assert!(matches!(ok.unwrap().command, Command::Harness { rows: 64, k: 8, .. }));
    }

    #[test]
    fn renders_failed_layers() {
        let v: Value = serde_json::from_str(
            r#"{"command":"edit","layers":[{"status":"failed","layer":4,"error":"missing"}]}"#,
        )
        .unwrap();
        assert!(render_report(&v).contains("layer 4: FAILED: missing"));
    }
}

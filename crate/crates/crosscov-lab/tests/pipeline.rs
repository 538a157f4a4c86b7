//! Cross-module integration tests: empirical moments of the sampling
//! pipeline, family comparisons against the rate evaluators, and CLI
//! behavior (strict configs, overrides, determinism, exit codes).

use std::path::{Path, PathBuf};
use std::process::Command;

use crosscov_lab::bounds;
use crosscov_lab::estimators::{self, DataModel};
use crosscov_lab::joint::{self, CouplingSpec};
use crosscov_lab::matops::NormMethod;
use crosscov_lab::samplers::{self, FamilyKind, PairMode};
use crosscov_lab::spectra::{build_covariance, Rotation, SpectrumFamily, SpectrumSpec};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_crosscov-lab")
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn spiked(d: usize, k: usize, s: f64, seed: u64) -> crosscov_lab::spectra::CovarianceModel {
    let spec = SpectrumSpec::new(SpectrumFamily::Spiked { d, k, s }, 1.0).unwrap();
    build_covariance(&spec, Rotation::Random { seed }, "spiked").unwrap()
}

#[test]
fn joint_sampler_reproduces_all_covariance_blocks() {
    let x = spiked(5, 1, 6.0, 1);
    let y = spiked(4, 1, 3.0, 2);
    let model = joint::assemble(&x, &y, &CouplingSpec::aligned(0.6).unwrap()).unwrap();
    let n = 40_000;
    let batch = samplers::sample_joint_gaussian(&model, n, 99);

    let check_block = |a: &nalgebra::DMatrix<f64>,
                       b: &nalgebra::DMatrix<f64>,
                       target: &nalgebra::DMatrix<f64>,
                       name: &str| {
        let emp = a.transpose() * b / n as f64;
        for i in 0..target.nrows() {
            for j in 0..target.ncols() {
                let mut var = 0.0;
                for r in 0..n {
                    var += (a[(r, i)] * b[(r, j)] - emp[(i, j)]).powi(2);
                }
                let se = (var / (n as f64 - 1.0)).sqrt() / (n as f64).sqrt();
                let diff = (emp[(i, j)] - target[(i, j)]).abs();
                assert!(
                    diff <= 5.0 * se,
                    "{name}[{i},{j}]: diff {diff:.5} > 5 SE ({se:.5})"
                );
            }
        }
    };
    check_block(&batch.x, &batch.x, x.matrix.as_matrix(), "Sigma_X");
    check_block(&batch.y, &batch.y, y.matrix.as_matrix(), "Sigma_Y");
    check_block(&batch.x, &batch.y, &model.sigma_xy, "Sigma_XY");
}

#[test]
fn bounded_families_stay_within_gaussian_upper_shape() {
    // On matched configurations the bounded families' mean/rate ratio must
    // not exceed the Gaussian family's ratio by more than a factor 2.
    let n = 128;
    let reps = 150;
    for (d, label_seed) in [(8usize, 3u64), (32, 4)] {
        let m = spiked(d, 2, 5.0, label_seed);
        let mut ratios = std::collections::HashMap::new();
        for family in [FamilyKind::Gaussian, FamilyKind::Rademacher, FamilyKind::Uniform] {
            let model = DataModel::IsotropicPair {
                sigma_x: m.clone(),
                sigma_y: m.clone(),
                family,
                mode: PairMode::Independent,
            };
            let stats =
                estimators::mc_deviation(&model, n, reps, 11, &[1.0], NormMethod::power(), false)
                    .unwrap();
            let k = family.bound_constant();
            let rate =
                bounds::expectation_rate(k, k, m.op_norm, m.op_norm, m.eff_rank, m.eff_rank, n)
                    .unwrap();
            ratios.insert(family.name(), stats.mean / rate);
        }
        let gaussian = ratios["gaussian"];
        for family in ["rademacher", "uniform"] {
            assert!(
                ratios[family] <= 2.0 * gaussian,
                "d={d}: {family} ratio {} vs gaussian {gaussian}",
                ratios[family]
            );
        }
    }
}

#[test]
fn strict_config_rejects_unknown_key_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    std::fs::write(
        &path,
        r#"{"version":1,"spectra":[{"family":"flat","d":4}],"typo_key":true}"#,
    )
    .unwrap();
    let output = Command::new(bin())
        .args(["spectrum", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2), "config errors exit 2");
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("typo_key"), "stderr must name the key: {stderr}");
}

#[test]
fn verify_upper_smoke_scalar() {
    let dir = tempfile::tempdir().unwrap();
    let output = Command::new(bin())
        .args(["verify-upper", "--config"])
        .arg(configs_dir().join("smoke_scalar.cfg"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let csv = std::fs::read_to_string(dir.path().join("smoke_scalar.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5, "header plus one row per u");
    for line in &lines[1..] {
        let ratio: f64 = line.split(',').next_back().unwrap().parse().unwrap();
        assert!(ratio.is_finite() && ratio > 0.0);
    }
    assert!(dir.path().join("smoke_scalar_summary.json").exists());
}

#[test]
fn seed_override_shifts_replicates_within_error_bars() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: &str, out: &Path| -> serde_json::Value {
        let output = Command::new(bin())
            .args(["verify-upper", "--config"])
            .arg(configs_dir().join("smoke_scalar.cfg"))
            .arg("--out")
            .arg(out)
            .args(["--seed", seed, "--format", "json"])
            .output()
            .unwrap();
        assert!(output.status.success());
        serde_json::from_slice(&output.stdout).unwrap()
    };
    let a = run("7", &dir.path().join("a"));
    let b = run("8", &dir.path().join("b"));
    let mean_a = a["mean"].as_f64().unwrap();
    let mean_b = b["mean"].as_f64().unwrap();
    let se = a["std_error"].as_f64().unwrap() + b["std_error"].as_f64().unwrap();
    assert_ne!(mean_a, mean_b, "different seeds draw different replicates");
    assert!((mean_a - mean_b).abs() <= 3.0 * se, "means stay within 3 combined SE");
    // and the same seed reproduces the run byte-for-byte
    let c = run("7", &dir.path().join("c"));
    assert_eq!(a["mean"], c["mean"]);
    let csv_a = std::fs::read(dir.path().join("a/smoke_scalar.csv")).unwrap();
    let csv_c = std::fs::read(dir.path().join("c/smoke_scalar.csv")).unwrap();
    assert_eq!(csv_a, csv_c);
}

#[test]
fn reps_override_and_env_threads() {
    let dir = tempfile::tempdir().unwrap();
    let output = Command::new(bin())
        .args(["verify-upper", "--config"])
        .arg(configs_dir().join("smoke_scalar.cfg"))
        .arg("--out")
        .arg(dir.path())
        .args(["--reps", "2000", "--format", "json"])
        .env("CROSSCOV_LAB_THREADS", "2")
        .output()
        .unwrap();
    assert!(output.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(summary["config"]["reps"], 2000, "override lands in the resolved config");
}

#[test]
fn sweep_with_failing_cell_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad_sweep.cfg");
    // reps below the minimum: every grid point fails, sweep must exit 1
    std::fs::write(
        &path,
        r#"{
  "version": 1,
  "label": "bad",
  "cells": [
    {
      "label": "tiny",
      "model": {
        "spectrum_x": {"family": "flat", "d": 2},
        "spectrum_y": {"family": "flat", "d": 2},
        "family": "gaussian",
        "mode": "independent"
      },
      "n": [16]
    }
  ],
  "reps": 10,
  "seed": 1,
  "u_grid": [1.0],
  "norm_method": "power"
}"#,
    )
    .unwrap();
    let output = Command::new(bin())
        .args(["sweep", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1), "failed cells exit 1");
    let csv = std::fs::read_to_string(dir.path().join("bad.csv")).unwrap();
    let last = csv.lines().last().unwrap();
    assert!(last.contains("replicates"), "error column carries the failure: {last}");
}

#[test]
fn sweep_three_point_grid_shape() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("three.cfg");
    std::fs::write(
        &path,
        r#"{
  "version": 1,
  "label": "three",
  "cells": [
    {
      "label": "flat4",
      "model": {
        "spectrum_x": {"family": "flat", "d": 4},
        "spectrum_y": {"family": "flat", "d": 4},
        "family": "gaussian",
        "mode": "independent"
      },
      "n": [64, 256, 1024]
    }
  ],
  "reps": 60,
  "seed": 5,
  "u_grid": [1.0],
  "norm_method": "power"
}"#,
    )
    .unwrap();
    let output = Command::new(bin())
        .args(["sweep", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(output.status.success());
    let csv = std::fs::read_to_string(dir.path().join("three.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4, "header plus 3 data rows");
    let means: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(12).unwrap().parse().unwrap())
        .collect();
    assert!(means[0] > means[1] && means[1] > means[2], "means decrease in N: {means:?}");
}

#[test]
fn isserlis_and_finite_sets_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("iss.cfg");
    std::fs::write(
        &path,
        r#"{"version":1,"label":"iss","triples":3,"d_max":4,"reps":20000,"seed":3}"#,
    )
    .unwrap();
    let output = Command::new(bin())
        .args(["isserlis", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let csv = std::fs::read_to_string(dir.path().join("iss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    let path = dir.path().join("fs.cfg");
    std::fs::write(
        &path,
        r#"{"version":1,"label":"fs","set_size":20,"families":["gaussian"],
           "n":[32],"u_grid":[1.0],"reps":100,"seed":4,"max_ratio_spread":10.0}"#,
    )
    .unwrap();
    let output = Command::new(bin())
        .args(["finite-sets", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let csv = std::fs::read_to_string(dir.path().join("fs.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn spectrum_command_reports_effective_ranks() {
    let dir = tempfile::tempdir().unwrap();
    let output = Command::new(bin())
        .args(["spectrum", "--config"])
        .arg(configs_dir().join("spectra_demo.cfg"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    let poly_row = stdout.lines().find(|l| l.starts_with("poly100")).unwrap();
    let eff_rank: f64 = poly_row.split(',').next_back().unwrap().parse().unwrap();
    let oracle: f64 = (1..=100).map(|j| (j as f64).powi(-2)).sum();
    assert!((eff_rank - oracle).abs() <= 1e-10);
    let spiked_row = stdout.lines().find(|l| l.starts_with("spiked4")).unwrap();
    let eff_rank: f64 = spiked_row.split(',').next_back().unwrap().parse().unwrap();
    assert!((eff_rank - 1.3).abs() <= 1e-12);
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn oscilla(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_oscilla"));
    cmd.args(args).env_remove("OSCILLA_JOBS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("oscilla runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    let out = dir.join("out");
    fs::write(&path, format!("output = {:?}\n{body}", out.display().to_string())).unwrap();
    path.display().to_string()
}

const TINY_MESH: &str = "[mesh]\nR_trunc = 8.0\nresolution = 16\n";

fn assert_manifest_matches(out: &Path) {
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("run_report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    let manifest = report["manifest"].as_array().unwrap();
    assert!(!manifest.is_empty());
    for entry in manifest {
        let bytes = fs::read(out.join(entry["path"].as_str().unwrap())).unwrap();
        let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(entry["sha256"].as_str().unwrap(), digest, "{entry}");
        assert_eq!(entry["bytes"].as_u64().unwrap(), bytes.len() as u64);
    }
}

#[test]
fn steady_writes_forces_fields_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY_MESH);
    let o = oscilla(&["steady", "--config", &config, "--lambda", "20,10"], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = dir.path().join("out");
    let csv = fs::read_to_string(out.join("steady.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "lambda,drag,lift,chi0_x,chi0_y,residual,iters");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1.0000000000000000e1,"));
    assert!(lines[2].starts_with("2.0000000000000000e1,"));
    assert!(out.join("fields/steady_10.dat").is_file());
    assert!(fs::read_to_string(out.join("fields/mesh.dat")).unwrap().starts_with("oscilla-mesh v1 d=2"));
    let effective = fs::read_to_string(out.join("config.effective.toml")).unwrap();
    assert!(effective.contains("lambdas = [20.0, 10.0]") && effective.contains("grading"));
    assert_manifest_matches(&out);
}

#[test]
fn unknown_config_key_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[mesh]\nresolutoin = 12\n");
    let o = oscilla(&["steady", "--config", &config], &[]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("resolutoin"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
}

#[test]
fn invalid_model_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[model]\nA = [1.0, 2.0, 3.0, 1.0]\n");
    let o = oscilla(&["steady", "--config", &config], &[]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn unbracketed_crossing_exits_with_solver_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY_MESH);
    let o = oscilla(&["hopf", "--config", &config, "--lambda-range", "10,12"], &[]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("no crossing"));
}

#[test]
fn jobs_environment_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let out = out.to_str().unwrap();
    let bad = oscilla(&["surrogate", "--case", "quadratic", "--out", out, "--jobs", "2"], &[("OSCILLA_JOBS", "zero")]);
    assert_eq!(code(&bad), 2);
    assert!(stderr(&bad).contains("OSCILLA_JOBS"));
    let ok = oscilla(&["surrogate", "--case", "quadratic", "--out", out, "--jobs", "0"], &[("OSCILLA_JOBS", "1")]);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
}

#[test]
fn surrogate_outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = oscilla(&["surrogate", "--case", "normal-form-subcritical", "--out", out.to_str().unwrap()], &[]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        csvs.push(fs::read(out.join("branch.csv")).unwrap());
        assert_manifest_matches(&out);
        let fit: serde_json::Value = serde_json::from_slice(&fs::read(out.join("branch_report.json")).unwrap()).unwrap();
        assert_eq!(fit["fit"]["criticality"], "subcritical");
        let reference: serde_json::Value =
            serde_json::from_slice(&fs::read(out.join("surrogate_reference.json")).unwrap()).unwrap();
        assert!(reference["max_deviation"].as_f64().unwrap() < 1e-8);
    }
    assert_eq!(csvs[0], csvs[1]);
    let text = String::from_utf8(csvs[0].clone()).unwrap();
    assert_eq!(text.lines().next().unwrap(), "epsilon,mu,zeta,amplitude_L2,residual,iters");
}

#[test]
fn unknown_surrogate_case_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = oscilla(&["surrogate", "--case", "lorenz", "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("lorenz"));
}

#[test]
fn emit_plots_handles_empty_and_populated_directories() {
    let dir = tempfile::tempdir().unwrap();
    let o = oscilla(&["emit-plots", dir.path().to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("warning"));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);

    let out = dir.path().join("s");
    let o = oscilla(&["surrogate", "--case", "normal-form-supercritical", "--out", out.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0);
    let o = oscilla(&["emit-plots", out.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0);
    assert!(out.join("plot_bifurcation.py").is_file());
    assert!(!out.join("plot_resonance.py").exists());
}

#[test]
fn modes_and_scan_write_matrices_and_amplitudes() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY_MESH);
    let o = oscilla(&["modes", "--config", &config, "--zeta", "1.7", "--lambda", "3", "--kmax", "2"], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = dir.path().join("out");
    let modes = fs::read_to_string(out.join("modes.csv")).unwrap();
    assert_eq!(modes.lines().count(), 5);
    for k in [1, 2] {
        for name in [format!("Kmat_{k}.json"), format!("Mmat_{k}.json")] {
            let doc: serde_json::Value = serde_json::from_slice(&fs::read(out.join(&name)).unwrap()).unwrap();
            assert_eq!(doc["schema_version"], 1);
            assert_eq!(doc["entries"].as_array().unwrap().len(), 2, "{name}");
        }
    }
    let o = oscilla(
        &["scan", "--config", &config, "--zeta", "2", "--lambda", "3", "--kmax", "2", "--varpi-grid", "0.01,0.02,0.04"],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let scan = fs::read_to_string(out.join("resonance.csv")).unwrap();
    assert_eq!(scan.lines().next().unwrap(), "varpi,k,amplitude");
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("resonance_report.json")).unwrap()).unwrap();
    assert!((report["slope"].as_f64().unwrap() + 1.0).abs() < 0.02);
}

#[test]
fn hopf_pipeline_chains_stages_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        &format!("{TINY_MESH}[model]\nmotion = \"fixed\"\n[branch]\nkmax = 4\npoints = 5\n"),
    );
    let o = oscilla(&["hopf-pipeline", "--config", &config, "--lambda-range", "40,60"], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = dir.path().join("out");
    for f in ["steady.csv", "hopf_candidate.json", "branch.csv", "branch_report.json", "run_report.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("run_report.json")).unwrap()).unwrap();
    let lambda_o = report["hopf_candidate"]["lambda_o"].as_f64().unwrap();
    assert!((40.0..60.0).contains(&lambda_o));
    assert_eq!(report["branch_fit"]["criticality"], "supercritical");
    assert!(!report["margins"].as_array().unwrap().is_empty());
    assert!(report["wall_times"].as_array().unwrap().len() >= 3);
    assert!(out.join(format!("spectrum_{lambda_o}.csv")).is_file());
    assert_manifest_matches(&out);
}

#[test]
fn simulate_writes_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY_MESH);
    let o = oscilla(&["simulate", "--config", &config, "--lambda", "50", "--tfinal", "0.2", "--dt", "0.01"], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let traj = fs::read_to_string(dir.path().join("out/trajectory.csv")).unwrap();
    let lines: Vec<&str> = traj.lines().collect();
    assert_eq!(lines[0], "t,eta_x,eta_y,sigma_x,sigma_y,force_x,force_y,energy");
    assert_eq!(lines.len(), 22);
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SCALAR_ENV: &str = r#"
[env]
dim = 1
q_symmetric = true
[env.matrix]
family = "scalar_two_point"
high = 2.0
low = 0.5
p_high = 0.3333333333333333
[env.vector]
family = "fixed"
value = [1.0]
"#;

const SMALL_MC: &str = r#"
[mc]
stationary = 100000
kernel_mc = 2000
residual_mc = 2000
lyapunov_steps = 2000
lyapunov_replicas = 20
w_draws = 2000
positivity_draws = 5000
birkhoff_n = 1024
birkhoff_replicas = 4000
"#;

fn write_config(dir: &Path, head: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, format!("{head}\n{body}")).unwrap();
    path
}

fn kestenlab(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kestenlab"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn lyapunov_only_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "seed = 5\npipeline = [\"lyapunov\"]", &format!("{SCALAR_ENV}{SMALL_MC}"));
    let out = tmp.path().join("out");
    let o = kestenlab(&cfg, &out, &["run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = json(&out.join("report.json"));
    let stages = report["stages"].as_array().unwrap();
    assert_eq!(stages.len(), 1);
    assert_eq!(stages[0]["stage"], "lyapunov");
    let beta = json(&out.join("lyapunov.json"))["payload"]["estimate"]["beta"].as_f64().unwrap();
    assert!((beta + 0.231).abs() < 0.02, "{beta}");
    assert!(!out.join("spectral_solution.json").exists());
    assert!(!out.join(".lock").exists());
}

#[test]
fn empty_pipeline_gives_empty_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "seed = 1\npipeline = []", SCALAR_ENV);
    let out = tmp.path().join("out");
    let o = kestenlab(&cfg, &out, &["run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = json(&out.join("report.json"));
    assert_eq!(report["stages"].as_array().unwrap().len(), 0);
    assert_eq!(report["passed"], true);
}

#[test]
fn malformed_config_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "pipeline = [\"kappa\"]", &format!("{SCALAR_ENV}\n[grid]\nresolution = -2\n"));
    let out = tmp.path().join("out");
    let o = kestenlab(&cfg, &out, &["run"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("grid.resolution"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn zero_samples_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "", SCALAR_ENV);
    let out = tmp.path().join("out");
    let o = kestenlab(&cfg, &out, &["simulate", "--n", "0"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("mc.stationary"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn limit_needs_the_kappa_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "seed = 2", &format!("{SCALAR_ENV}{SMALL_MC}"));
    let out = tmp.path().join("out");
    let o = kestenlab(&cfg, &out, &["limit"]);
    assert_eq!(o.status.code(), Some(1));
    let report = json(&out.join("report.json"));
    let err = report["stages"][0]["error"].as_str().unwrap();
    assert!(err.contains("spectral_solution.json"), "{err}");
}

#[test]
fn limit_refuses_a_foreign_kappa_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "seed = 3", &format!("{SCALAR_ENV}{SMALL_MC}"));
    let o = kestenlab(&cfg, &out, &["kappa"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let other = SCALAR_ENV.replace("high = 2.0", "high = 2.5");
    let cfg = write_config(tmp.path(), "seed = 3", &format!("{other}{SMALL_MC}"));
    let o = kestenlab(&cfg, &out, &["limit"]);
    assert_eq!(o.status.code(), Some(1));
    let err = json(&out.join("report.json"))["stages"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["stage"] == "limit")
        .unwrap()["error"]
        .as_str()
        .unwrap()
        .to_string();
    assert!(err.contains("env hash"), "{err}");
}

#[test]
fn locked_directory_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "pipeline = []", SCALAR_ENV);
    let out = tmp.path().join("out");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join(".lock"), "").unwrap();
    let o = kestenlab(&cfg, &out, &["run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("locked"), "{}", stderr(&o));
}

#[test]
fn failed_check_sets_the_exit_status() {
    let tmp = tempfile::tempdir().unwrap();
    let body = format!("{SCALAR_ENV}{SMALL_MC}\n[checks]\neigen_residual = 0.0\n");
    let cfg = write_config(tmp.path(), "seed = 4\npipeline = [\"kappa\"]", &body);
    let out = tmp.path().join("out");
    let o = kestenlab(&cfg, &out, &["run"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(json(&out.join("report.json"))["passed"], false);
}

#[test]
fn stages_chain_through_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "seed = 6", &format!("{SCALAR_ENV}{SMALL_MC}"));
    let out = tmp.path().join("out");
    let o = kestenlab(&cfg, &out, &["kappa"]);
    let stdout = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(stdout.contains("kappa = "), "{stdout}");
    let kappa = json(&out.join("spectral_solution.json"))["payload"]["solution"]["kappa"].as_f64().unwrap();
    assert!((kappa - 1.0).abs() < 0.03);
    for stage in ["sigma", "limit", "nondeg"] {
        let o = Command::new(env!("CARGO_BIN_EXE_kestenlab"))
            .env("KESTENLAB_THREADS", "2")
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .arg(stage)
            .output()
            .unwrap();
        assert!(o.status.code().is_some_and(|c| c <= 1), "{stage}: {}", stderr(&o));
        if stage == "nondeg" {
            let stdout = String::from_utf8_lossy(&o.stdout).into_owned();
            assert!(stdout.contains("Re C([1.0000])") && stdout.contains("nondegenerate"), "{stdout}");
        }
    }
    for f in ["sigma.json", "stable_law.json", "nondeg.json", "sigma.csv", "ecf.csv", "eigen.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let o = kestenlab(&cfg, &out, &["report"]);
    assert!(o.status.code().is_some_and(|c| c <= 1));
    let report = json(&out.join("report.json"));
    let names: Vec<&str> = report["stages"].as_array().unwrap().iter().map(|r| r["stage"].as_str().unwrap()).collect();
    assert_eq!(names, ["kappa", "sigma", "limit", "nondeg"]);
}

#[test]
fn same_seed_same_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "seed = 9\npipeline = [\"lyapunov\", \"kappa\", \"sigma\"]", &format!("{SCALAR_ENV}{SMALL_MC}"));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    kestenlab(&cfg, &a, &["run"]);
    kestenlab(&cfg, &b, &["--threads", "2", "run"]);
    for f in ["lyapunov.json", "spectral_solution.json", "sigma.json", "sigma.csv", "eigen.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn missing_seed_is_generated_and_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "pipeline = []", SCALAR_ENV);
    let out = tmp.path().join("out");
    assert!(kestenlab(&cfg, &out, &["run"]).status.success());
    let report = json(&out.join("report.json"));
    assert_eq!(report["seed"], report["config"]["seed"]);
    assert!(report["seed"].as_u64().is_some());
}

use std::fs;
use std::path::Path;
use std::process::Command;

use annulus_rti::cli::{exit_code, RunConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_annulus-rti"))
}

fn small_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let text = format!(
        r#"
seed = 4
[grid]
n = 32
kmax = 14
[dispersion]
k_max = 14
[sim]
dt = 0.02
t_linear = 1.0
t_nonlinear = 0.6
snapshot_every = 10
[verify]
trials = 20
{extra}
"#
    );
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn stable_profiles_report_no_growth_rate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "[profile]\nkind = \"constant\"\n");
    let out = dir.path().join("out");
    let status = bin().args(["dispersion", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["stable"], true);
    assert!(summary["LambdaTilde"].is_null());
    let csv = fs::read_to_string(out.join("dispersion.csv")).unwrap();
    assert!(csv.starts_with("k,lambda0,lambda_c,lambda_upper,phi_residual,iterations,stable\n"));
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")));
    // nothing unstable to build
    let status = bin().args(["modes", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn malformed_configs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[physics]\nr1 = 2.0\nr2 = 1.5\n").unwrap();
    let out = bin().args(["dispersion", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("R2 > R1"), "{msg}");

    for text in ["[physics]\nalpha = 0.02\n", "[grid]\nscheme = \"spline\"\n", "[sim]\ndt = -1.0\n", "[nonsense]\n"] {
        let err = RunConfig::from_toml(text).unwrap_err();
        assert_eq!(exit_code(&err), 2, "{text}: {err}");
    }
    let out = bin().args(["dispersion", "--config", "/nonexistent/run.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn the_pipeline_is_deterministic_and_reports_rates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = bin().args(["pipeline", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
        assert_eq!(status.code(), Some(0));
        out
    };
    let a = run("a");
    let b = run("b");
    for f in ["dispersion.csv", "linear/diagnostics.csv", "nonlinear/diagnostics.csv", "report.json", "summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    let err = report["linear"]["measured_rate_rel_error"].as_f64().unwrap();
    assert!(err < 0.05, "{err}");
    assert!(report["nonlinear"]["measured_rate_rel_error"].as_f64().is_some());
    assert!(report["t_K"]["value"].as_f64().unwrap() > 0.0);
    let k = report["k_star"].as_i64().unwrap();
    assert!(a.join(format!("mode_k{k}.csv")).exists());
    assert!(a.join("linear/snap_000010.annf1").exists());
    let diag = fs::read_to_string(a.join("linear/diagnostics.csv")).unwrap();
    assert!(diag.starts_with("t,vr_l2,vth_l2,rho_l2,F1,rho_q2,rho_q4,min_density\n"));
}

#[test]
fn verify_honours_the_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "lemmas = [\"F1_equiv\", \"grad_interp_L2\"]\nboth_alphas = true\n");
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let status =
            bin().args(["verify", "--seed", seed, "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
        assert_eq!(status.code(), Some(0));
        fs::read_to_string(out.join("verify.csv")).unwrap()
    };
    let a = run("a", "1");
    let b = run("b", "1");
    let c = run("c", "2");
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.lines().count(), 5);
    assert!(a.lines().skip(1).all(|l| l.split(',').nth(2) == Some("0")));
}

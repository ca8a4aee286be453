//! End-to-end runs of the `terra` binary.

use std::path::Path;
use std::process::{Command, Output};

fn terra(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_terra")).current_dir(dir).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines().find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
}

#[test]
fn misspelled_config_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), "{\n  \"gravty\": 9.8\n}\n").unwrap();
    let o = terra(dir.path(), &["swe", "--config", "c.json"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("kind=unknown_key"), "{err}");
    assert!(err.contains("gravty") && err.contains("line 2"), "{err}");
    assert!(o.stdout.is_empty());
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = terra(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    let o = terra(dir.path(), &["poisson", "--solver", "hybrid"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kind=setting"));
}

#[test]
fn empty_config_echoes_defaults() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), "{}").unwrap();
    // mesh-info is cheap; the echo is the same code path for every subcommand
    let a = terra(dir.path(), &["mesh-info", "--config", "c.json"]);
    let b = terra(dir.path(), &["mesh-info"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(stdout(&a), stdout(&b));
    let text = stdout(&a);
    assert_eq!(value(&text, "config.mesh"), Some("torus:tri:8"));
    assert_eq!(value(&text, "config.seed"), Some("7"));
    assert!(text.starts_with("# terra "));
}

#[test]
fn flags_take_precedence_over_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"seed": 11, "gravity": 3.5, "mesh": "torus:quad:3"}"#).unwrap();
    let o = terra(dir.path(), &["mesh-info", "--config", "c.json", "--seed", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(value(&text, "config.seed"), Some("5"));
    assert_eq!(value(&text, "config.gravity"), Some("3.5"));
    assert_eq!(value(&text, "config.mesh"), Some("torus:quad:3"));
}

#[test]
fn poisson_writes_rates_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let o = terra(dir.path(), &["poisson", "--levels", "4,8,16", "--out", "run"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    let hash = value(&text, "config_sha256").unwrap();
    let csv = std::fs::read_to_string(dir.path().join("run/rates.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "n,h,dofs_v1,dofs_v2,error_p,div_residual");
    assert_eq!(lines.len(), 1 + 3 + 1);
    assert_eq!(lines[4], format!("# provenance: config_sha256={hash} terra={}", env!("CARGO_PKG_VERSION")));
    assert_eq!(value(&text, "verdict"), Some("PASS"));
}

#[test]
fn out_with_extension_names_the_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let o = terra(dir.path(), &["eigs", "--levels", "4", "--count", "3", "--out", "res/e.csv"]);
    assert!(o.status.code() == Some(0) || o.status.code() == Some(1));
    assert!(dir.path().join("res/e.csv").exists());
}

#[test]
fn swe_zero_steps_reports_initial_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let o = terra(dir.path(), &["swe", "--mesh", "torus:tri:4", "--steps", "0", "--out", "s"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    for k in ["mass", "energy", "enstrophy", "dmass_dt", "denergy_dt_rel"] {
        assert!(value(&text, k).is_some(), "missing {k}");
    }
    assert!(value(&text, "steps").is_none());
    let csv = std::fs::read_to_string(dir.path().join("s/swe.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn hydrostatic_balance_residual_is_tiny() {
    let dir = tempfile::tempdir().unwrap();
    let o = terra(dir.path(), &["hydrostatic", "--out", "h"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let res: f64 = value(&stdout(&o), "residual").unwrap().parse().unwrap();
    assert!(res < 1e-10);
    let pi = std::fs::read_to_string(dir.path().join("h/pi.txt")).unwrap();
    assert!(pi.starts_with("# layer z pi theta"));
    assert_eq!(pi.lines().filter(|l| !l.starts_with('#')).count(), 10);
}

#[test]
fn hydrostatic_rejects_flat_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let o = terra(dir.path(), &["hydrostatic", "--mesh", "torus:quad:2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn written_mesh_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let a = terra(dir.path(), &["mesh-info", "--mesh", "torus:quad:3", "--write-mesh", "m.txt"]);
    assert_eq!(a.status.code(), Some(0));
    let b = terra(dir.path(), &["mesh-info", "--mesh", "m.txt"]);
    assert_eq!(b.status.code(), Some(0), "{}", String::from_utf8_lossy(&b.stderr));
    let report = |o: &Output| stdout(o).lines().filter(|l| !l.starts_with("config") && !l.starts_with('#')).map(String::from).collect::<Vec<_>>();
    assert_eq!(report(&a), report(&b));
}

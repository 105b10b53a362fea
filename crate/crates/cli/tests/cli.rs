use std::path::Path;
use std::process::{Command, Output};

fn specpart(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specpart"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn lists_presets() {
    let o = specpart(&["--list-presets"]);
    assert!(o.status.success());
    let names = stdout(&o);
    for name in ["figure-1", "figure-1-product", "figure-2", "figure-3", "square-smoke"] {
        assert!(names.lines().any(|l| l == name), "{names}");
    }
}

#[test]
fn validates_presets() {
    let o = specpart(&["--preset", "figure-1", "--validate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "figure-1: ok");
}

#[test]
fn printed_config_validates_from_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = specpart(&["--preset", "figure-3", "--seed", "5", "--print-config"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("seed = 5"), "{text}");
    let path = dir.path().join("run.toml");
    std::fs::write(&path, text).unwrap();
    let o = specpart(&[path.to_str().unwrap(), "--validate"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn syntax_errors_exit_with_usage_status() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "name = \"x\"\nseed = 1\n[domain]\nkind = \"square\"\nn = = 4\n").unwrap();
    let o = specpart(&[path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 5"), "{}", stderr(&o));
}

#[test]
fn invalid_values_are_reported_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = specpart(&["--preset", "square-smoke", "--print-config"]);
    let text = stdout(&o).replace("q = 1.0", "q = 0.25");
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, text).unwrap();
    let o = specpart(&[path.to_str().unwrap(), "--validate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("q = 0.25"), "{}", stdout(&o));
    let o = specpart(&[path.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn missing_inputs_exit_with_usage_status() {
    assert_eq!(specpart(&[]).status.code(), Some(2));
    assert_eq!(specpart(&["/nonexistent/run.toml"]).status.code(), Some(2));
    assert_eq!(specpart(&["--preset", "nope"]).status.code(), Some(2));
}

#[test]
fn smoke_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("smoke");
    let o = specpart(&["--preset", "square-smoke", "--seed", "11", "--output", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in [
        "config.toml",
        "manifest.toml",
        "mesh.vtk",
        "fields.vtk",
        "trace.csv",
        "domain_eigenvalues.csv",
        "subdomain_eigenvalues.csv",
        "spectral_gap.csv",
        "residuals.csv",
        "partition.pgm",
        "labels.txt",
        "final.ckpt",
    ] {
        assert!(Path::new(&out).join(name).exists(), "{name}");
    }
    let config = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(config.contains("seed = 11"));
}

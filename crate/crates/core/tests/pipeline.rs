use std::path::Path;

use specpart::config::{preset, InitSpec, RunConfig};
use specpart::energy::save_checkpoint;
use specpart::mesh::build_square_mesh;
use specpart::run::{check, execute};

const TABLES: [&str; 6] = [
    "domain_eigenvalues.csv",
    "trace.csv",
    "subdomain_eigenvalues.csv",
    "spectral_gap.csv",
    "residuals.csv",
    "labels.txt",
];

fn smoke(out: &Path) -> RunConfig {
    let mut cfg = preset("square-smoke").unwrap();
    cfg.output = out.to_path_buf();
    cfg
}

#[test]
fn seeded_runs_write_identical_tables() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = execute(&smoke(a.path())).unwrap();
    execute(&smoke(b.path())).unwrap();
    for name in TABLES.iter().chain(&["final.ckpt", "fields.vtk", "partition.pgm"]) {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs between identical runs");
    }
    for name in ["mesh.vtk", "config.toml", "manifest.toml"] {
        assert!(a.path().join(name).exists(), "{name}");
    }
    let stages = first.trace.stages.len();
    for s in 0..stages {
        assert!(a.path().join(format!("checkpoints/stage-{s:02}.ckpt")).exists());
    }
}

#[test]
fn manifest_echo_reproduces_the_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke(dir.path());
    execute(&cfg).unwrap();
    let manifest: toml::Table = std::fs::read_to_string(dir.path().join("manifest.toml"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(manifest["status"].as_str(), Some("completed"));
    assert_eq!(manifest["version"].as_str(), Some(env!("CARGO_PKG_VERSION")));
    assert!(manifest["wall_time_seconds"].as_float().unwrap() > 0.0);
    let echoed = RunConfig::from_toml(manifest["config"].as_str().unwrap()).unwrap();
    assert_eq!(echoed, cfg);
    let artifacts: Vec<&str> = manifest["artifacts"].as_array().unwrap().iter().filter_map(|v| v.as_str()).collect();
    for name in TABLES {
        assert!(artifacts.contains(&name), "{name} missing from {artifacts:?}");
    }
}

#[test]
fn invalid_configurations_do_not_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = smoke(&dir.path().join("out"));
    cfg.solver.q = 0.4;
    cfg.seed = None;
    let err = check(&cfg).unwrap_err().to_string();
    assert!(err.contains("q = 0.4") && err.contains("seed"), "{err}");
    assert!(execute(&cfg).is_err());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn failed_runs_leave_partial_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    // a checkpoint from a different mesh cannot seed the run
    let other = specpart::fem::Discretization::new(build_square_mesh(5).unwrap()).unwrap();
    let n = other.dofs.n_free();
    let state = specpart::energy::GroupState::new(
        vec![vec![specpart::fem::Field::new(vec![1.0; n])], vec![specpart::fem::Field::new(vec![1.0; n])]],
        1.0,
        1.0,
    )
    .unwrap();
    let ckpt = dir.path().join("foreign.ckpt");
    save_checkpoint(&ckpt, &state, &other.mesh.hash()).unwrap();
    let mut cfg = smoke(&dir.path().join("out"));
    cfg.init_spec = InitSpec::Checkpoint(ckpt);
    cfg.sync_init();
    assert!(execute(&cfg).is_err());
    let out = dir.path().join("out");
    assert!(out.join("mesh.vtk").exists());
    assert!(out.join("domain_eigenvalues.csv").exists());
    let manifest = std::fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("status = \"failed"), "{manifest}");
}

#[test]
fn outcome_matches_written_tables() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = execute(&smoke(dir.path())).unwrap();
    let mut reader = csv::Reader::from_path(dir.path().join("spectral_gap.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), outcome.report.subdomains.len());
    for (row, (lk, lk1, gap)) in rows.iter().zip(outcome.report.spectral_gap()) {
        assert_eq!(row[1].parse::<f64>().unwrap(), lk);
        assert_eq!(row[2].parse::<f64>().unwrap(), lk1);
        assert_eq!(row[3].parse::<bool>().unwrap(), gap);
    }
    let domain = std::fs::read_to_string(dir.path().join("domain_eigenvalues.csv")).unwrap();
    assert_eq!(domain.lines().count(), 1 + outcome.domain_eigenvalues.pairs.len());
}

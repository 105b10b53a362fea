//! End-to-end pipeline: discretize, optimize, analyze and write artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crate::analysis::{analyze, PartitionReport};
use crate::config::RunConfig;
use crate::eigensolve::{smallest_eigenpairs, EigenOptions, EigenReport};
use crate::energy::{energy_parts, save_checkpoint, GroupState};
use crate::error::{Error, Result};
use crate::fem::Discretization;
use crate::io;
use crate::optimizer::{continuation_run, RunTrace};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug)]
pub struct RunOutcome {
    pub discretization: Discretization,
    pub domain_eigenvalues: EigenReport,
    pub state: GroupState,
    pub trace: RunTrace,
    pub report: PartitionReport,
    pub artifacts: Vec<PathBuf>,
    pub elapsed: Duration,
}

struct Artifacts {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Artifacts {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        if !self.written.contains(&p) {
            self.written.push(p.clone());
        }
        p
    }
}

/// Rejects an invalid configuration with every diagnostic at once.
pub fn check(config: &RunConfig) -> Result<()> {
    let diagnostics = config.validate();
    if diagnostics.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(diagnostics.join("; ")))
    }
}

/// Runs `config` and writes its artifacts under `config.output`.
///
/// Stage checkpoints and the trace are written as stages finish, so a failed
/// run leaves them behind together with a manifest marked `failed`.
pub fn execute(config: &RunConfig) -> Result<RunOutcome> {
    check(config)?;
    let start = Instant::now();
    std::fs::create_dir_all(checkpoint_dir(&config.output))?;
    let mut out = Artifacts {
        dir: config.output.clone(),
        written: Vec::new(),
    };
    std::fs::write(out.path("config.toml"), config.to_toml())?;

    let disc = config.domain.discretize()?;
    let hash = disc.mesh.hash();
    log::info!(
        "{}: {} vertices, {} triangles, mesh {}",
        config.name,
        disc.mesh.n_vertices(),
        disc.mesh.n_triangles(),
        &hash[..12]
    );
    io::write_vtk(&out.path("mesh.vtk"), &disc.mesh, &config.name, &[])?;

    let n_domain = config.partition.iter().sum::<usize>() + 1;
    let opts = EigenOptions {
        tol: config.solver.eigen_tol,
        ..EigenOptions::default()
    };
    let domain = smallest_eigenpairs(&disc.stiffness_free, &disc.mass_free, n_domain, None, &opts)?;
    io::write_domain_eigenvalues_csv(&out.path("domain_eigenvalues.csv"), &domain)?;

    let mut partial = RunTrace::default();
    let trace_path = out.path("trace.csv");
    let ckpt_dir = checkpoint_dir(&config.output);
    let result = continuation_run(&config.functional, &config.solver, &disc, |rec, state| {
        log::info!(
            "stage {} beta {:.3e} energy {:.10e} penalty {:.3e} share {:.3e} residual {:.3e} iterations {}",
            rec.stage,
            rec.beta,
            rec.energy,
            rec.penalty,
            rec.penalty_share(),
            rec.grad_norm,
            rec.iterations
        );
        partial.stages.push(rec.clone());
        io::write_trace_csv(&trace_path, &partial)?;
        save_checkpoint(&ckpt_dir.join(format!("stage-{:02}.ckpt", rec.stage)), state, &hash)
    });
    let (state, trace) = match result {
        Ok(r) => r,
        Err(e) => {
            write_manifest(&mut out, config, &hash, start.elapsed(), &format!("failed: {e}"), None)?;
            return Err(e);
        }
    };
    io::write_trace_csv(&trace_path, &trace)?;
    save_checkpoint(&out.path("final.ckpt"), &state, &hash)?;

    let report = analyze(&state, &config.functional, &disc, config.analysis.threshold, config.analysis.cluster_tol)?;
    write_fields(&mut out, &disc, &state, &report, &config.name)?;
    io::write_subdomain_csv(&out.path("subdomain_eigenvalues.csv"), &report)?;
    io::write_gap_csv(&out.path("spectral_gap.csv"), &report)?;
    io::write_residuals_csv(&out.path("residuals.csv"), &report)?;
    io::write_partition_pgm(&out.path("partition.pgm"), &disc.mesh, &report.labels, state.m(), config.analysis.raster)?;
    std::fs::write(out.path("labels.txt"), io::labels_to_string(&report.labels))?;

    let parts = energy_parts(&state, &config.functional, &disc.operators())?;
    log::info!(
        "final energy {:.10e} (functional {:.10e}, penalty {:.3e}); median interface residual {:.3}",
        parts.total,
        parts.functional,
        parts.penalty,
        report.median_residual()
    );
    let elapsed = start.elapsed();
    write_manifest(&mut out, config, &hash, elapsed, "completed", Some(parts.total))?;
    Ok(RunOutcome {
        discretization: disc,
        domain_eigenvalues: domain,
        state,
        trace,
        report,
        artifacts: out.written,
        elapsed,
    })
}

fn write_fields(
    out: &mut Artifacts,
    disc: &Discretization,
    state: &GroupState,
    report: &PartitionReport,
    title: &str,
) -> Result<()> {
    let mut named: Vec<(String, Vec<f64>)> = Vec::new();
    for (i, group) in state.groups.iter().enumerate() {
        for (j, u) in group.iter().enumerate() {
            named.push((format!("u_{i}_{j}"), disc.dofs.scatter(&u.values)));
        }
    }
    for (i, d) in state.densities().iter().enumerate() {
        named.push((format!("density_{i}"), disc.dofs.scatter(d)));
    }
    named.push(("label".into(), io::label_values(&report.labels)));
    let refs: Vec<(&str, &[f64])> = named.iter().map(|(n, v)| (n.as_str(), v.as_slice())).collect();
    io::write_vtk(&out.path("fields.vtk"), &disc.mesh, title, &refs)
}

fn write_manifest(
    out: &mut Artifacts,
    config: &RunConfig,
    hash: &str,
    elapsed: Duration,
    status: &str,
    energy: Option<f64>,
) -> Result<()> {
    let path = out.path("manifest.toml");
    let mut s = String::new();
    let _ = writeln!(s, "program = \"specpart\"");
    let _ = writeln!(s, "version = {VERSION:?}");
    let _ = writeln!(s, "status = {status:?}");
    let _ = writeln!(s, "mesh_hash = {hash:?}");
    let _ = writeln!(s, "wall_time_seconds = {:.3}", elapsed.as_secs_f64());
    if let Some(e) = energy {
        let _ = writeln!(s, "final_energy = {e:?}");
    }
    let names: Vec<String> = out
        .written
        .iter()
        .filter_map(|p| p.file_name().map(|n| format!("{:?}", n.to_string_lossy())))
        .collect();
    let _ = writeln!(s, "artifacts = [{}]", names.join(", "));
    let _ = writeln!(s, "config = '''\n{}'''", config.to_toml());
    std::fs::write(path, s)?;
    Ok(())
}

/// Directory that holds the stage checkpoints of a run.
pub fn checkpoint_dir(output: &Path) -> PathBuf {
    output.join("checkpoints")
}

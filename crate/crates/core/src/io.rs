//! Artifact writers: legacy ASCII VTK, CSV tables and ASCII PGM rasters.

use std::fmt::Write as _;
use std::path::Path;

use crate::analysis::{Labels, PartitionReport};
use crate::eigensolve::EigenReport;
use crate::error::Result;
use crate::mesh::{DomainTag, Mesh};
use crate::optimizer::RunTrace;

/// Legacy VTK 3.0 unstructured grid with per-vertex scalar fields.
pub fn vtk_string(mesh: &Mesh, title: &str, point_data: &[(&str, &[f64])]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "{}", title.lines().next().unwrap_or(""));
    let _ = writeln!(s, "ASCII\nDATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {} double", mesh.n_vertices());
    for p in &mesh.vertices {
        let _ = writeln!(s, "{} {} 0", p[0], p[1]);
    }
    let nt = mesh.n_triangles();
    let _ = writeln!(s, "CELLS {nt} {}", 4 * nt);
    for t in &mesh.triangles {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(s, "CELL_TYPES {nt}");
    for _ in 0..nt {
        s.push_str("5\n");
    }
    if !point_data.is_empty() {
        let _ = writeln!(s, "POINT_DATA {}", mesh.n_vertices());
        for (name, values) in point_data {
            let _ = writeln!(s, "SCALARS {} double 1\nLOOKUP_TABLE default", name.replace(' ', "_"));
            for v in values.iter() {
                let _ = writeln!(s, "{v}");
            }
        }
    }
    s
}

pub fn write_vtk(path: &Path, mesh: &Mesh, title: &str, point_data: &[(&str, &[f64])]) -> Result<()> {
    std::fs::write(path, vtk_string(mesh, title, point_data))?;
    Ok(())
}

/// Labels as reals, `-1` for unassigned vertices.
pub fn label_values(labels: &[Option<usize>]) -> Vec<f64> {
    labels.iter().map(|l| l.map_or(-1.0, |g| g as f64)).collect()
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_csv(path: &Path, trace: &RunTrace) -> Result<()> {
    write_csv(
        path,
        &["stage", "beta", "energy", "penalty", "grad_norm", "iterations"],
        trace.stages.iter().map(|r| {
            vec![
                r.stage.to_string(),
                r.beta.to_string(),
                r.energy.to_string(),
                r.penalty.to_string(),
                r.grad_norm.to_string(),
                r.iterations.to_string(),
            ]
        }),
    )
}

pub fn write_domain_eigenvalues_csv(path: &Path, report: &EigenReport) -> Result<()> {
    write_csv(
        path,
        &["index", "eigenvalue", "residual"],
        report
            .pairs
            .iter()
            .zip(&report.residuals)
            .enumerate()
            .map(|(i, (p, r))| vec![(i + 1).to_string(), p.value.to_string(), r.to_string()]),
    )
}

pub fn write_subdomain_csv(path: &Path, report: &PartitionReport) -> Result<()> {
    let mut rows = Vec::new();
    for (g, s) in report.subdomains.iter().enumerate() {
        for (j, v) in s.values.iter().enumerate() {
            let gram = report.gram_diagonal[g].get(j).map_or(String::new(), |x| x.to_string());
            let coef = report.coefficients_used[g].get(j).map_or(String::new(), |x| x.to_string());
            rows.push(vec![g.to_string(), (j + 1).to_string(), v.to_string(), gram, coef]);
        }
    }
    write_csv(path, &["group", "index", "eigenvalue", "gram_diagonal", "coefficient"], rows)
}

pub fn write_gap_csv(path: &Path, report: &PartitionReport) -> Result<()> {
    write_csv(
        path,
        &["group", "lambda_k", "lambda_k_plus_1", "gap", "mismatch", "multiplicities"],
        report.spectral_gap().into_iter().enumerate().map(|(g, (a, b, gap))| {
            let mult: Vec<String> = report.multiplicities[g].iter().map(|m| m.to_string()).collect();
            vec![
                g.to_string(),
                a.to_string(),
                b.to_string(),
                gap.to_string(),
                report.energy_eigenvalue_mismatch[g].to_string(),
                mult.join(" "),
            ]
        }),
    )
}

pub fn write_residuals_csv(path: &Path, report: &PartitionReport) -> Result<()> {
    write_csv(
        path,
        &["sample", "group_p", "group_q", "x", "y", "s_p", "s_q", "residual", "flagged"],
        report.residuals.iter().map(|r| {
            vec![
                r.sample.to_string(),
                r.groups.0.to_string(),
                r.groups.1.to_string(),
                r.midpoint[0].to_string(),
                r.midpoint[1].to_string(),
                r.s_p.to_string(),
                r.s_q.to_string(),
                r.residual.to_string(),
                r.flagged.to_string(),
            ]
        }),
    )
}

fn bounding_box(mesh: &Mesh) -> ([f64; 2], [f64; 2]) {
    mesh.vertices.iter().fold(
        ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]),
        |(lo, hi), p| ([lo[0].min(p[0]), lo[1].min(p[1])], [hi[0].max(p[0]), hi[1].max(p[1])]),
    )
}

fn inside(domain: &DomainTag, p: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> bool {
    match domain {
        DomainTag::Disk => p[0] * p[0] + p[1] * p[1] <= 1.0,
        _ => p[0] >= lo[0] && p[0] <= hi[0] && p[1] >= lo[1] && p[1] <= hi[1],
    }
}

/// Gray level per pixel: 255 outside the domain, 0 for unassigned points and
/// evenly spaced levels for the groups. Each pixel takes the label of the
/// nearest vertex.
pub fn partition_raster(mesh: &Mesh, labels: &Labels, m: usize, width: usize) -> (usize, usize, Vec<u8>) {
    let (lo, hi) = bounding_box(mesh);
    let (w, hgt) = (hi[0] - lo[0], hi[1] - lo[1]);
    let height = ((width as f64 * hgt / w).round() as usize).max(1);
    let cells = (mesh.n_vertices() as f64).sqrt().ceil() as usize;
    let cell_of = |p: [f64; 2]| {
        let cx = (((p[0] - lo[0]) / w * cells as f64) as usize).min(cells - 1);
        let cy = (((p[1] - lo[1]) / hgt * cells as f64) as usize).min(cells - 1);
        (cx, cy)
    };
    let mut buckets = vec![Vec::new(); cells * cells];
    for (v, &p) in mesh.vertices.iter().enumerate() {
        let (cx, cy) = cell_of(p);
        buckets[cy * cells + cx].push(v);
    }
    let level = |l: Option<usize>| match l {
        None => 0u8,
        Some(g) => (64 + (g * 160) / m.saturating_sub(1).max(1)) as u8,
    };
    let mut pixels = Vec::with_capacity(width * height);
    for row in 0..height {
        for col in 0..width {
            let p = [
                lo[0] + (col as f64 + 0.5) / width as f64 * w,
                hi[1] - (row as f64 + 0.5) / height as f64 * hgt,
            ];
            if !inside(&mesh.domain, p, lo, hi) {
                pixels.push(255);
                continue;
            }
            let (cx, cy) = cell_of(p);
            let mut best = (f64::INFINITY, usize::MAX);
            let mut radius = 1;
            while best.1 == usize::MAX || radius <= 2 {
                for y in cy.saturating_sub(radius)..=(cy + radius).min(cells - 1) {
                    for x in cx.saturating_sub(radius)..=(cx + radius).min(cells - 1) {
                        for &v in &buckets[y * cells + x] {
                            let q = mesh.vertices[v];
                            let d = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
                            if d < best.0 || (d == best.0 && v < best.1) {
                                best = (d, v);
                            }
                        }
                    }
                }
                radius += 1;
            }
            pixels.push(level(labels[best.1]));
        }
    }
    (width, height, pixels)
}

pub fn pgm_string(width: usize, height: usize, pixels: &[u8]) -> String {
    let mut s = format!("P2\n{width} {height}\n255\n");
    for row in pixels.chunks(width) {
        let line: Vec<String> = row.iter().map(|p| p.to_string()).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn write_partition_pgm(path: &Path, mesh: &Mesh, labels: &Labels, m: usize, width: usize) -> Result<()> {
    let (w, h, px) = partition_raster(mesh, labels, m, width);
    std::fs::write(path, pgm_string(w, h, &px))?;
    Ok(())
}

/// One line per vertex: the group index or `-`.
pub fn labels_to_string(labels: &[Option<usize>]) -> String {
    labels
        .iter()
        .map(|l| l.map_or("-".to_string(), |g| g.to_string()))
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

pub fn labels_from_str(text: &str) -> Result<Labels> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| match l.trim() {
            "-" => Ok(None),
            s => s
                .parse()
                .map(Some)
                .map_err(|e| crate::error::Error::invalid(format!("bad label {s:?}: {e}"))),
        })
        .collect()
}

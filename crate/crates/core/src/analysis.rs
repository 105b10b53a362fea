//! Post-processing of converged states: supports, interfaces, subdomain
//! spectra, spectral gaps and the free-boundary extremality residual.

use crate::eigensolve::{cluster_indices, smallest_eigenpairs, EigenOptions};
use crate::energy::{gram_diagonals, gram_matrices, GroupState};
use crate::error::{Error, Result};
use crate::fem::{element_gradient, Discretization, DofMap, Field};
use crate::functional::{extremality_coefficients, FunctionalSpec};
use crate::mesh::Mesh;

pub const SUPPORT_THRESHOLD: f64 = 1e-3;
/// Gap verdict: `λ_{k+1} − λ_k > GAP_TOL · λ_k`.
pub const GAP_TOL: f64 = 1e-6;
/// Samples whose larger one-sided value is below this fraction of the median
/// are flagged as degenerate.
pub const DEGENERATE_FRACTION: f64 = 1e-6;
/// One-sided averages use triangles within this many mesh sizes of a sample.
pub const SIDE_RADIUS: f64 = 3.0;
const SIDE_RINGS: usize = 4;

/// Group index per mesh vertex, `None` where no group dominates.
pub type Labels = Vec<Option<usize>>;

/// Nodal vectors of every group on all mesh vertices (zero on the boundary).
pub fn full_fields(state: &GroupState, dofs: &DofMap) -> Vec<Vec<Vec<f64>>> {
    state
        .groups
        .iter()
        .map(|g| g.iter().map(|u| dofs.scatter(u)).collect())
        .collect()
}

/// Assigns each vertex to the group with the largest density
/// `S_i = Σ_j u_{i,j}^2`, provided it exceeds `threshold^2` times that
/// group's maximum density.
pub fn extract_supports(state: &GroupState, dofs: &DofMap, threshold: f64) -> Labels {
    let dens: Vec<Vec<f64>> = state.densities().iter().map(|d| dofs.scatter(d)).collect();
    let cut: Vec<f64> = dens
        .iter()
        .map(|d| threshold * threshold * d.iter().fold(0.0, |a: f64, &b| a.max(b)))
        .collect();
    (0..dofs.n_full())
        .map(|v| {
            let (best, val) = (0..dens.len())
                .map(|i| (i, dens[i][v]))
                .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
            (val > 0.0 && val > cut[best]).then_some(best)
        })
        .collect()
}

/// Boolean mask per group.
pub fn masks(labels: &[Option<usize>], m: usize) -> Vec<Vec<bool>> {
    (0..m)
        .map(|i| labels.iter().map(|l| *l == Some(i)).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceSample {
    pub edge: [usize; 2],
    pub midpoint: [f64; 2],
    /// Adjacent groups, smaller index first.
    pub groups: (usize, usize),
    /// Triangles sharing the edge.
    pub triangles: Vec<usize>,
}

/// Edges separating two groups: either the endpoints carry different labels,
/// or the vertices of the adjacent triangles carry exactly two labels.
pub fn interface_edges(labels: &[Option<usize>], mesh: &Mesh) -> Vec<InterfaceSample> {
    let mut out = Vec::new();
    for e in mesh.edges() {
        let [a, b] = e.vertices;
        let mut tris = vec![e.left];
        tris.extend(e.right);
        let pair = match (labels[a], labels[b]) {
            (Some(p), Some(q)) if p != q => Some((p.min(q), p.max(q))),
            _ => {
                let mut seen: Vec<usize> = tris
                    .iter()
                    .flat_map(|&t| mesh.triangles[t])
                    .filter_map(|v| labels[v])
                    .collect();
                seen.sort_unstable();
                seen.dedup();
                (seen.len() == 2).then(|| (seen[0], seen[1]))
            }
        };
        if let Some(groups) = pair {
            let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
            out.push(InterfaceSample {
                edge: [a, b],
                midpoint: [(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0],
                groups,
                triangles: tris,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubdomainSpectrum {
    /// First `k_i + 1` eigenvalues of the group's support.
    pub values: Vec<f64>,
    /// Eigenvectors on all mesh vertices (zero outside the support).
    pub vectors: Vec<Vec<f64>>,
    pub k: usize,
}

impl SubdomainSpectrum {
    pub fn lambda_k(&self) -> f64 {
        self.values[self.k - 1]
    }

    pub fn lambda_k1(&self) -> f64 {
        self.values[self.k]
    }

    pub fn gap(&self) -> bool {
        self.lambda_k1() - self.lambda_k() > GAP_TOL * self.lambda_k()
    }
}

/// Dirichlet eigenvalues of every group's support, `k_i + 1` per group.
pub fn subdomain_eigenvalues(labels: &[Option<usize>], disc: &Discretization, ks: &[usize]) -> Result<Vec<SubdomainSpectrum>> {
    ks.iter()
        .enumerate()
        .map(|(i, &k)| {
            let mask: Vec<bool> = (0..disc.n_vertices())
                .map(|v| labels[v] == Some(i) && !disc.mesh.boundary[v])
                .collect();
            let dofs = DofMap::from_mask(&mask);
            if dofs.n_free() < k + 1 {
                return Err(Error::MaskTooSmall {
                    group: i,
                    available: dofs.n_free(),
                    needed: k + 1,
                });
            }
            let kk = disc.stiffness.restrict(dofs.free());
            let bb = disc.mass.restrict(dofs.free());
            let r = smallest_eigenpairs(&kk, &bb, k + 1, None, &EigenOptions::default())
                .map_err(|e| Error::GroupSolve { group: i, source: Box::new(e) })?;
            Ok(SubdomainSpectrum {
                values: r.values(),
                vectors: r.pairs.iter().map(|p| dofs.scatter(&p.vector)).collect(),
                k,
            })
        })
        .collect()
}

/// Per group, the largest `|λ_j(ω_i) − M_i[j][j]| / λ_j(ω_i)` over `j ≤ k_i`.
pub fn eigenvalue_mismatch(spectra: &[SubdomainSpectrum], gram_diagonal: &[Vec<f64>]) -> Vec<f64> {
    spectra
        .iter()
        .zip(gram_diagonal)
        .map(|(s, d)| {
            d.iter()
                .zip(&s.values)
                .map(|(m, l)| (l - m).abs() / l)
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Cluster sizes of each group's first `k_i` eigenvalues.
pub fn multiplicity_report(values: &[Vec<f64>], tol: f64) -> Vec<Vec<usize>> {
    values
        .iter()
        .map(|v| cluster_indices(v, tol).iter().map(Vec::len).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSample {
    /// Index into the interface sample list.
    pub sample: usize,
    pub groups: (usize, usize),
    pub midpoint: [f64; 2],
    /// One-sided values `Σ_j a_{p,j} |∇u_{p,j}|^2` and likewise for `q`.
    pub s_p: f64,
    pub s_q: f64,
    /// `|s_p − s_q| / max(s_p, s_q)`.
    pub residual: f64,
    /// Larger one-sided value below `DEGENERATE_FRACTION` of the median.
    pub flagged: bool,
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Triangles on the `p` side of an interface sample: every vertex carries
/// label `p` and has no neighbour of another group, and the centroid lies
/// within `radius` of `near`. The search grows outward from `seeds` by up to
/// `rings` vertex rings.
fn one_sided_triangles(
    mesh: &Mesh,
    vertex_tris: &[Vec<usize>],
    clean: &[Option<usize>],
    seeds: &[usize],
    p: usize,
    near: [f64; 2],
    radius: f64,
    rings: usize,
) -> Vec<usize> {
    let mut cand: Vec<usize> = seeds.to_vec();
    for _ in 0..rings {
        let grown: Vec<usize> = cand
            .iter()
            .flat_map(|&t| mesh.triangles[t])
            .flat_map(|v| vertex_tris[v].iter().copied())
            .collect();
        cand.extend(grown);
        cand.sort_unstable();
        cand.dedup();
    }
    cand.retain(|&t| mesh.triangles[t].iter().all(|&v| clean[v] == Some(p)));
    let inside: Vec<usize> = cand
        .iter()
        .copied()
        .filter(|&t| dist2(mesh.centroid(t), near) <= radius * radius)
        .collect();
    if !inside.is_empty() {
        return inside;
    }
    cand.into_iter()
        .min_by(|&a, &b| {
            dist2(mesh.centroid(a), near)
                .total_cmp(&dist2(mesh.centroid(b), near))
                .then(a.cmp(&b))
        })
        .into_iter()
        .collect()
}

/// Labels kept only where the whole closed neighbourhood agrees (unlabeled
/// neighbours allowed), which strips the transition layer of width one.
fn clean_labels(mesh: &Mesh, labels: &[Option<usize>]) -> Labels {
    mesh.vertex_neighbors()
        .iter()
        .enumerate()
        .map(|(v, nb)| {
            let l = labels[v]?;
            nb.iter().all(|&w| labels[w].is_none() || labels[w] == Some(l)).then_some(l)
        })
        .collect()
}

/// Area-weighted mean of `Σ_j a_j |∇u_j|^2` over `tris`.
fn mean_weighted_gradient(mesh: &Mesh, fields: &[Vec<f64>], coeffs: &[f64], tris: &[usize]) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for &t in tris {
        let a = mesh.signed_area(t).abs();
        num += a * weighted_gradient(mesh, fields, coeffs, t)?;
        den += a;
    }
    Ok(num / den)
}

/// `Σ_j a_j |∇u_j|^2` on triangle `t`.
fn weighted_gradient(mesh: &Mesh, fields: &[Vec<f64>], coeffs: &[f64], t: usize) -> Result<f64> {
    fields.iter().zip(coeffs).try_fold(0.0, |acc, (u, a)| {
        let g = element_gradient(mesh, u, t)?;
        Ok(acc + a * (g[0] * g[0] + g[1] * g[1]))
    })
}

/// Vertices whose closed neighbourhood carries three or more group labels.
fn singular_vertices(mesh: &Mesh, labels: &[Option<usize>]) -> Vec<bool> {
    mesh.vertex_neighbors()
        .iter()
        .enumerate()
        .map(|(v, nb)| {
            let mut seen: Vec<usize> = nb.iter().chain(std::iter::once(&v)).filter_map(|&w| labels[w]).collect();
            seen.sort_unstable();
            seen.dedup();
            seen.len() >= 3
        })
        .collect()
}

/// Free-boundary residual at every interface sample.
///
/// `fields[i][j]` are full-length nodal vectors and `coefficients[i][j]` the
/// matching `a_{i,j}`. Samples touching a vertex adjacent to three or more
/// groups are dropped; samples without an element on one side are skipped
/// with a warning.
pub fn extremality_residual(
    fields: &[Vec<Vec<f64>>],
    labels: &[Option<usize>],
    samples: &[InterfaceSample],
    coefficients: &[Vec<f64>],
    mesh: &Mesh,
) -> Result<Vec<ResidualSample>> {
    let vertex_tris = mesh.vertex_triangles();
    let singular = singular_vertices(mesh, labels);
    let clean = clean_labels(mesh, labels);
    let radius = SIDE_RADIUS * mesh.max_edge_length();
    let mut out = Vec::new();
    for (idx, s) in samples.iter().enumerate() {
        if s.edge.iter().any(|&v| singular[v]) {
            continue;
        }
        let (p, q) = s.groups;
        let side = |g: usize| {
            one_sided_triangles(mesh, &vertex_tris, &clean, &s.triangles, g, s.midpoint, radius, SIDE_RINGS)
        };
        let (tp, tq) = (side(p), side(q));
        if tp.is_empty() || tq.is_empty() {
            log::warn!("interface sample at {:?} has no element on one side; skipped", s.midpoint);
            continue;
        }
        let s_p = mean_weighted_gradient(mesh, &fields[p], &coefficients[p], &tp)?;
        let s_q = mean_weighted_gradient(mesh, &fields[q], &coefficients[q], &tq)?;
        let max = s_p.max(s_q);
        out.push(ResidualSample {
            sample: idx,
            groups: (p, q),
            midpoint: s.midpoint,
            s_p,
            s_q,
            residual: if max > 0.0 { (s_p - s_q).abs() / max } else { 0.0 },
            flagged: false,
        });
    }
    let med = median(&out.iter().map(|r| r.s_p.max(r.s_q)).collect::<Vec<_>>());
    for r in &mut out {
        r.flagged = r.s_p.max(r.s_q) < DEGENERATE_FRACTION * med;
    }
    Ok(out)
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionReport {
    pub labels: Labels,
    pub interface_samples: Vec<InterfaceSample>,
    pub subdomains: Vec<SubdomainSpectrum>,
    pub gram_diagonal: Vec<Vec<f64>>,
    pub energy_eigenvalue_mismatch: Vec<f64>,
    pub multiplicities: Vec<Vec<usize>>,
    pub coefficients_used: Vec<Vec<f64>>,
    pub residuals: Vec<ResidualSample>,
}

impl PartitionReport {
    pub fn support_masks(&self) -> Vec<Vec<bool>> {
        masks(&self.labels, self.subdomains.len())
    }

    /// `(λ_{k_i}, λ_{k_i+1}, gap)` per group.
    pub fn spectral_gap(&self) -> Vec<(f64, f64, bool)> {
        self.subdomains
            .iter()
            .map(|s| (s.lambda_k(), s.lambda_k1(), s.gap()))
            .collect()
    }

    /// Median residual over non-flagged samples.
    pub fn median_residual(&self) -> f64 {
        median(&self.residuals.iter().filter(|r| !r.flagged).map(|r| r.residual).collect::<Vec<_>>())
    }
}

/// Full analysis of a converged, diagonally normalized state.
pub fn analyze(
    state: &GroupState,
    spec: &FunctionalSpec,
    disc: &Discretization,
    threshold: f64,
    cluster_tol: f64,
) -> Result<PartitionReport> {
    let ops = disc.operators();
    let gram_diagonal = gram_diagonals(&gram_matrices(state, &ops)?);
    let coefficients_used = extremality_coefficients(spec, &gram_diagonal)?;
    let labels = extract_supports(state, &disc.dofs, threshold);
    let interface_samples = interface_edges(&labels, &disc.mesh);
    let subdomains = subdomain_eigenvalues(&labels, disc, &state.group_sizes())?;
    let firsts: Vec<Vec<f64>> = subdomains.iter().map(|s| s.values[..s.k].to_vec()).collect();
    let fields = full_fields(state, &disc.dofs);
    let residuals = extremality_residual(&fields, &labels, &interface_samples, &coefficients_used, &disc.mesh)?;
    Ok(PartitionReport {
        energy_eigenvalue_mismatch: eigenvalue_mismatch(&subdomains, &gram_diagonal),
        multiplicities: multiplicity_report(&firsts, cluster_tol),
        labels,
        interface_samples,
        subdomains,
        gram_diagonal,
        coefficients_used,
        residuals,
    })
}

/// Measure (lumped mass) of the vertices where two labelings disagree,
/// summed over groups: `Σ_i |Ω_i Δ Ω'_i|`. Boundary vertices are ignored.
pub fn symmetric_difference(a: &[Option<usize>], b: &[Option<usize>], disc: &Discretization) -> f64 {
    (0..disc.n_vertices())
        .filter(|&v| !disc.mesh.boundary[v] && a[v] != b[v])
        .map(|v| {
            let count = [a[v], b[v]].iter().filter(|l| l.is_some()).count();
            count as f64 * disc.lumped[v]
        })
        .sum()
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    if m == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(m - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, m - 1);
            out.push(q);
        }
    }
    out
}

/// Smallest symmetric difference over relabelings of `b`'s groups.
pub fn partition_distance(a: &[Option<usize>], b: &[Option<usize>], m: usize, disc: &Discretization) -> f64 {
    permutations(m)
        .iter()
        .map(|perm| {
            let relabeled: Labels = b.iter().map(|l| l.map(|g| perm[g])).collect();
            symmetric_difference(a, &relabeled, disc)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Labels of the two half-disks cut by the line through the origin with
/// normal `(cos θ, sin θ)`: group 0 on the positive side.
pub fn half_disk_labels(mesh: &Mesh, theta: f64) -> Labels {
    let n = [theta.cos(), theta.sin()];
    mesh.vertices
        .iter()
        .zip(&mesh.boundary)
        .map(|(p, &b)| {
            let s = p[0] * n[0] + p[1] * n[1];
            if b || s.abs() <= 1e-9 {
                None
            } else if s > 0.0 {
                Some(0)
            } else {
                Some(1)
            }
        })
        .collect()
}

/// Best-fit half-disk pair: returns `(θ, symmetric difference)`.
pub fn best_half_disk_fit(labels: &[Option<usize>], disc: &Discretization) -> (f64, f64) {
    let coarse = 720;
    let eval = |theta: f64| partition_distance(labels, &half_disk_labels(&disc.mesh, theta), 2, disc);
    let (mut best_t, mut best) = (0.0, f64::INFINITY);
    for i in 0..coarse {
        let t = std::f64::consts::PI * i as f64 / coarse as f64;
        let d = eval(t);
        if d < best {
            best = d;
            best_t = t;
        }
    }
    (best_t, best)
}

/// Orthonormal group state built from the subdomain eigenfunctions of a
/// labeling, in interior coordinates.
pub fn state_from_partition(labels: &[Option<usize>], disc: &Discretization, ks: &[usize], beta: f64, q: f64) -> Result<GroupState> {
    let spectra = subdomain_eigenvalues(labels, disc, ks)?;
    let groups = spectra
        .iter()
        .map(|s| s.vectors[..s.k].iter().map(|v| Field::new(disc.dofs.gather(v))).collect())
        .collect();
    GroupState::new(groups, beta, q)
}

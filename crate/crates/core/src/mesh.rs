//! Conforming triangulations of the unit square, rectangles and the unit disk.

use std::collections::HashMap;
use std::f64::consts::PI;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Distance from the analytic boundary under which a vertex is flagged as boundary.
pub const BOUNDARY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DomainTag {
    Square,
    Rectangle { width: f64, height: f64 },
    Disk,
}

impl DomainTag {
    pub fn area(&self) -> f64 {
        match *self {
            DomainTag::Square => 1.0,
            DomainTag::Rectangle { width, height } => width * height,
            DomainTag::Disk => PI,
        }
    }

    fn on_boundary(&self, p: [f64; 2]) -> bool {
        match *self {
            DomainTag::Square => on_box_boundary(p, 1.0, 1.0),
            DomainTag::Rectangle { width, height } => on_box_boundary(p, width, height),
            DomainTag::Disk => ((p[0] * p[0] + p[1] * p[1]).sqrt() - 1.0).abs() <= BOUNDARY_TOL,
        }
    }
}

fn on_box_boundary(p: [f64; 2], w: f64, h: f64) -> bool {
    p[0].abs() <= BOUNDARY_TOL
        || p[1].abs() <= BOUNDARY_TOL
        || (p[0] - w).abs() <= BOUNDARY_TOL
        || (p[1] - h).abs() <= BOUNDARY_TOL
}

/// A planar triangulation with per-vertex boundary markers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 2]>,
    /// Counter-clockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    pub boundary: Vec<bool>,
    pub domain: DomainTag,
}

/// An undirected mesh edge with its one or two incident triangles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub vertices: [usize; 2],
    pub left: usize,
    pub right: Option<usize>,
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.right.is_none()
    }
}

impl Mesh {
    fn from_parts(vertices: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>, domain: DomainTag) -> Self {
        let boundary = vertices.iter().map(|&p| domain.on_boundary(p)).collect();
        Mesh {
            vertices,
            triangles,
            boundary,
            domain,
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_boundary(&self) -> usize {
        self.boundary.iter().filter(|&&b| b).count()
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.signed_area(t)).sum()
    }

    pub fn centroid(&self, t: usize) -> [f64; 2] {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        [(pa[0] + pb[0] + pc[0]) / 3.0, (pa[1] + pb[1] + pc[1]) / 3.0]
    }

    /// Longest edge length.
    pub fn max_edge_length(&self) -> f64 {
        self.edges()
            .iter()
            .map(|e| dist(self.vertices[e.vertices[0]], self.vertices[e.vertices[1]]))
            .fold(0.0, f64::max)
    }

    /// All edges, ordered by their sorted vertex pair.
    pub fn edges(&self) -> Vec<Edge> {
        let mut map: HashMap<(usize, usize), (usize, Option<usize>)> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                map.entry(key)
                    .and_modify(|e| e.1 = Some(t))
                    .or_insert((t, None));
            }
        }
        let mut edges: Vec<Edge> = map
            .into_iter()
            .map(|((a, b), (l, r))| Edge {
                vertices: [a, b],
                left: l,
                right: r,
            })
            .collect();
        edges.sort_by_key(|e| e.vertices);
        edges
    }

    /// Triangles incident to each vertex.
    pub fn vertex_triangles(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_vertices()];
        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                out[v].push(t);
            }
        }
        out
    }

    /// Vertex adjacency lists (sorted, without self).
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_vertices()];
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                out[a].push(b);
                out[b].push(a);
            }
        }
        for n in &mut out {
            n.sort_unstable();
            n.dedup();
        }
        out
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let nv = self.n_vertices();
        if self.boundary.len() != nv {
            return Err(Error::DimensionMismatch {
                expected: nv,
                found: self.boundary.len(),
            });
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= nv) {
                return Err(Error::invalid(format!("triangle {t} has an out-of-range vertex")));
            }
            let area = self.signed_area(t);
            if area <= 0.0 {
                return Err(Error::DegenerateTriangle { index: t, area });
            }
        }
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        if let Some((e, c)) = count.iter().find(|(_, &c)| c > 2) {
            return Err(Error::invalid(format!("edge {e:?} shared by {c} triangles")));
        }
        for (v, &p) in self.vertices.iter().enumerate() {
            if self.boundary[v] != self.domain.on_boundary(p) {
                return Err(Error::invalid(format!("boundary flag of vertex {v} is wrong")));
            }
        }
        Ok(())
    }

    /// Content hash (hex SHA-256 of geometry and connectivity).
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?}", self.domain).as_bytes());
        for p in &self.vertices {
            h.update(p[0].to_bits().to_le_bytes());
            h.update(p[1].to_bits().to_le_bytes());
        }
        for t in &self.triangles {
            for &v in t {
                h.update((v as u64).to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Structured mesh of `[0,1]^2` with `n` cells per side, each split along its
/// lower-left to upper-right diagonal.
pub fn build_square_mesh(n: usize) -> Result<Mesh> {
    if n < 2 {
        return Err(Error::invalid(format!("square mesh needs n >= 2, got {n}")));
    }
    let mut m = grid(1.0, 1.0, n, n);
    m.domain = DomainTag::Square;
    Ok(m)
}

/// Structured mesh of `[0,width] x [0,height]`.
pub fn build_rectangle_mesh(width: f64, height: f64, nx: usize, ny: usize) -> Result<Mesh> {
    if nx < 2 || ny < 2 {
        return Err(Error::invalid(format!("rectangle mesh needs nx, ny >= 2, got {nx}x{ny}")));
    }
    if !(width > 0.0 && height > 0.0) {
        return Err(Error::invalid("rectangle sides must be positive"));
    }
    Ok(grid(width, height, nx, ny))
}

fn grid(width: f64, height: f64, nx: usize, ny: usize) -> Mesh {
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([width * i as f64 / nx as f64, height * j as f64 / ny as f64]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    Mesh::from_parts(vertices, triangles, DomainTag::Rectangle { width, height })
}

/// Polar-structured triangulation of the unit disk.
///
/// Ring `r` (radius `r/rings`) carries `6r` equally spaced vertices; the six
/// 60-degree sectors are identical copies, so the mesh has exact six-fold
/// rotational symmetry.
pub fn build_disk_mesh(rings: usize) -> Result<Mesh> {
    if rings < 2 {
        return Err(Error::invalid(format!("disk mesh needs rings >= 2, got {rings}")));
    }
    let offset = |r: usize| if r == 0 { 0 } else { 1 + 3 * r * (r - 1) };
    let index = |r: usize, j: usize| if r == 0 { 0 } else { offset(r) + j % (6 * r) };

    let mut vertices = vec![[0.0, 0.0]];
    for r in 1..=rings {
        let radius = r as f64 / rings as f64;
        for j in 0..6 * r {
            let theta = 2.0 * PI * j as f64 / (6 * r) as f64;
            if r == rings {
                vertices.push([theta.cos(), theta.sin()]);
            } else {
                vertices.push([radius * theta.cos(), radius * theta.sin()]);
            }
        }
    }

    let mut triangles = Vec::with_capacity(6 * rings * rings);
    for r in 1..=rings {
        for s in 0..6 {
            let inner = |i: usize| index(r - 1, s * (r - 1) + i);
            let outer = |i: usize| index(r, s * r + i);
            for i in 0..r {
                triangles.push([inner(i), outer(i), outer(i + 1)]);
            }
            for i in 0..r.saturating_sub(1) {
                triangles.push([inner(i), outer(i + 1), inner(i + 1)]);
            }
        }
    }
    Ok(Mesh::from_parts(vertices, triangles, DomainTag::Disk))
}

/// Splits every triangle into four through its edge midpoints. Midpoints of
/// boundary edges of a disk mesh are projected back onto the unit circle.
pub fn refine_uniform(mesh: &Mesh) -> Mesh {
    let mut vertices = mesh.vertices.clone();
    let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
    let edges = mesh.edges();
    for e in &edges {
        let [a, b] = e.vertices;
        let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
        let mut p = [(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0];
        if e.is_boundary() && mesh.domain == DomainTag::Disk {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            p = [p[0] / r, p[1] / r];
        }
        midpoint.insert((a, b), vertices.len());
        vertices.push(p);
    }
    let mid = |a: usize, b: usize| midpoint[&(a.min(b), a.max(b))];
    let mut triangles = Vec::with_capacity(4 * mesh.n_triangles());
    for &[a, b, c] in &mesh.triangles {
        let (ab, bc, ca) = (mid(a, b), mid(b, c), mid(c, a));
        triangles.push([a, ab, ca]);
        triangles.push([ab, b, bc]);
        triangles.push([ca, bc, c]);
        triangles.push([ab, bc, ca]);
    }
    Mesh::from_parts(vertices, triangles, mesh.domain)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_counts() {
        let m = build_square_mesh(2).unwrap();
        assert_eq!((m.n_vertices(), m.n_triangles(), m.n_boundary()), (9, 8, 8));
        let m = build_square_mesh(4).unwrap();
        assert_eq!((m.n_vertices(), m.n_triangles()), (25, 32));
        m.validate().unwrap();
        assert!(build_square_mesh(1).is_err());
    }

    #[test]
    fn square_area_exact() {
        for n in [2, 5, 16] {
            let m = build_square_mesh(n).unwrap();
            assert!((m.total_area() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn disk_construction() {
        let m = build_disk_mesh(2).unwrap();
        m.validate().unwrap();
        assert_eq!(m.vertices[0], [0.0, 0.0]);
        assert!(!m.boundary[0]);
        for (v, p) in m.vertices.iter().enumerate() {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!(r <= 1.0 + 1e-15);
            assert_eq!(m.boundary[v], (r - 1.0).abs() < 1e-12);
        }
        assert_eq!(m.n_boundary(), 12);
        assert!(build_disk_mesh(1).is_err());
    }

    #[test]
    fn disk_area_close_to_pi() {
        let m = build_disk_mesh(16).unwrap();
        m.validate().unwrap();
        assert_eq!(m.n_triangles(), 6 * 16 * 16);
        assert!((m.total_area() - PI).abs() < 0.01 * PI);
    }

    #[test]
    fn refine_square() {
        let m = build_square_mesh(2).unwrap();
        let r = refine_uniform(&m);
        r.validate().unwrap();
        assert_eq!(r.n_triangles(), 32);
        assert_eq!(r.n_vertices(), 25);
        assert!((r.max_edge_length() - m.max_edge_length() / 2.0).abs() < 1e-14);
        assert!((r.total_area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn refine_disk_projects_boundary() {
        let m = build_disk_mesh(4).unwrap();
        let r = refine_uniform(&m);
        r.validate().unwrap();
        assert_eq!(r.n_triangles(), 4 * m.n_triangles());
        for (v, p) in r.vertices.iter().enumerate().skip(m.n_vertices()) {
            if r.boundary[v] {
                assert!(((p[0] * p[0] + p[1] * p[1]).sqrt() - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(r.n_boundary(), 2 * m.n_boundary());
    }

    #[test]
    fn rectangle_mesh() {
        let m = build_rectangle_mesh(2.0, 0.5, 8, 2).unwrap();
        m.validate().unwrap();
        assert!((m.total_area() - 1.0).abs() < 1e-12);
        assert!(build_rectangle_mesh(1.0, 1.0, 1, 4).is_err());
    }

    #[test]
    fn hash_is_stable_and_discriminating() {
        let a = build_square_mesh(3).unwrap();
        assert_eq!(a.hash(), build_square_mesh(3).unwrap().hash());
        assert_ne!(a.hash(), build_square_mesh(4).unwrap().hash());
    }
}

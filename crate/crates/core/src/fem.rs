//! P1 finite elements: stiffness and mass assembly, Dirichlet elimination and
//! elementwise gradients.

use std::borrow::Cow;
use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::par;
use crate::sparse::SparseSymmetricMatrix;

/// Nodal coefficients of a P1 function, either per vertex or per interior
/// degree of freedom.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(values: Vec<f64>) -> Self {
        Field { values }
    }

    pub fn zeros(n: usize) -> Self {
        Field { values: vec![0.0; n] }
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(mesh: &Mesh, f: impl Fn([f64; 2]) -> f64) -> Self {
        Field {
            values: mesh.vertices.iter().map(|&p| f(p)).collect(),
        }
    }
}

impl Deref for Field {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl DerefMut for Field {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Gradients of the three barycentric basis functions and the triangle area.
fn basis_gradients(mesh: &Mesh, t: usize) -> Result<([[f64; 2]; 3], f64)> {
    let area = mesh.signed_area(t);
    if !(area > 0.0) {
        return Err(Error::DegenerateTriangle { index: t, area });
    }
    let [a, b, c] = mesh.triangles[t];
    let p = [mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]];
    let mut g = [[0.0; 2]; 3];
    for k in 0..3 {
        let (q, r) = (p[(k + 1) % 3], p[(k + 2) % 3]);
        g[k] = [(q[1] - r[1]) / (2.0 * area), (r[0] - q[0]) / (2.0 * area)];
    }
    Ok((g, area))
}

fn pattern(mesh: &Mesh) -> Vec<Vec<usize>> {
    mesh.vertex_neighbors()
        .into_iter()
        .enumerate()
        .map(|(v, mut n)| {
            n.push(v);
            n.sort_unstable();
            n
        })
        .collect()
}

/// Element matrices are built in parallel and merged in triangle order, so the
/// result is bitwise independent of the thread count.
fn assemble<F>(mesh: &Mesh, element: F) -> Result<SparseSymmetricMatrix>
where
    F: Fn(usize) -> Result<[[f64; 3]; 3]> + Sync + Send,
{
    let local: Vec<Result<[[f64; 3]; 3]>> = par::map_range(mesh.n_triangles(), element);
    let mut a = SparseSymmetricMatrix::with_pattern(&pattern(mesh));
    for (t, el) in local.into_iter().enumerate() {
        let el = el?;
        let tri = mesh.triangles[t];
        for i in 0..3 {
            for j in 0..3 {
                a.add_to(tri[i], tri[j], el[i][j]);
            }
        }
    }
    Ok(a)
}

/// Exact P1 stiffness matrix `K_ij = ∫ ∇φ_i · ∇φ_j`.
pub fn assemble_stiffness(mesh: &Mesh) -> Result<SparseSymmetricMatrix> {
    assemble(mesh, |t| {
        let (g, area) = basis_gradients(mesh, t)?;
        let mut el = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                el[i][j] = area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
            }
        }
        Ok(el)
    })
}

/// Consistent P1 mass matrix `B_ij = ∫ φ_i φ_j`.
pub fn assemble_mass(mesh: &Mesh) -> Result<SparseSymmetricMatrix> {
    assemble(mesh, |t| {
        let area = mesh.signed_area(t);
        if !(area > 0.0) {
            return Err(Error::DegenerateTriangle { index: t, area });
        }
        let mut el = [[area / 12.0; 3]; 3];
        for (i, row) in el.iter_mut().enumerate() {
            row[i] = area / 6.0;
        }
        Ok(el)
    })
}

/// Map between full vertex numbering and a reduced set of free unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    n_full: usize,
    free: Vec<usize>,
    slot: Vec<Option<usize>>,
}

impl DofMap {
    /// Free unknowns are the vertices where `mask` is true.
    pub fn from_mask(mask: &[bool]) -> Self {
        let free: Vec<usize> = (0..mask.len()).filter(|&v| mask[v]).collect();
        let mut slot = vec![None; mask.len()];
        for (k, &v) in free.iter().enumerate() {
            slot[v] = Some(k);
        }
        DofMap {
            n_full: mask.len(),
            free,
            slot,
        }
    }

    /// Interior (non-boundary) vertices of the mesh.
    pub fn interior(mesh: &Mesh) -> Self {
        let mask: Vec<bool> = mesh.boundary.iter().map(|b| !b).collect();
        Self::from_mask(&mask)
    }

    pub fn n_full(&self) -> usize {
        self.n_full
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    pub fn free(&self) -> &[usize] {
        &self.free
    }

    pub fn slot(&self, vertex: usize) -> Option<usize> {
        self.slot[vertex]
    }

    pub fn gather(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&v| full[v]).collect()
    }

    /// Embeds reduced values, zero elsewhere.
    pub fn scatter(&self, reduced: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_full];
        for (k, &v) in self.free.iter().enumerate() {
            full[v] = reduced[k];
        }
        full
    }
}

/// Symmetric elimination of the boundary rows and columns.
///
/// A matrix that already has the reduced dimension is returned unchanged, so
/// the operation is idempotent.
pub fn apply_dirichlet(
    a: &SparseSymmetricMatrix,
    mesh: &Mesh,
) -> Result<(SparseSymmetricMatrix, DofMap)> {
    let dofs = DofMap::interior(mesh);
    if a.dim() == dofs.n_free() {
        return Ok((a.clone(), dofs));
    }
    if a.dim() != mesh.n_vertices() {
        return Err(Error::DimensionMismatch {
            expected: mesh.n_vertices(),
            found: a.dim(),
        });
    }
    Ok((a.restrict(dofs.free()), dofs))
}

/// Constant gradient of the P1 interpolant of `field` on triangle `t`.
pub fn element_gradient(mesh: &Mesh, field: &[f64], t: usize) -> Result<[f64; 2]> {
    if t >= mesh.n_triangles() {
        return Err(Error::invalid(format!(
            "triangle index {t} out of range ({} triangles)",
            mesh.n_triangles()
        )));
    }
    if field.len() != mesh.n_vertices() {
        return Err(Error::DimensionMismatch {
            expected: mesh.n_vertices(),
            found: field.len(),
        });
    }
    let (g, _) = basis_gradients(mesh, t)?;
    let tri = mesh.triangles[t];
    let mut out = [0.0; 2];
    for k in 0..3 {
        out[0] += field[tri[k]] * g[k][0];
        out[1] += field[tri[k]] * g[k][1];
    }
    Ok(out)
}

/// `(a^T K b, a^T B b)`.
pub fn inner_products(
    a: &[f64],
    b: &[f64],
    stiffness: &SparseSymmetricMatrix,
    mass: &SparseSymmetricMatrix,
) -> Result<(f64, f64)> {
    for (n, m) in [(a.len(), stiffness.dim()), (b.len(), stiffness.dim()), (a.len(), mass.dim())] {
        if n != m {
            return Err(Error::DimensionMismatch { expected: m, found: n });
        }
    }
    Ok((stiffness.bilinear(a, b), mass.bilinear(a, b)))
}

/// Mesh plus assembled operators, in full and boundary-reduced form.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: Mesh,
    pub stiffness: SparseSymmetricMatrix,
    pub mass: SparseSymmetricMatrix,
    /// Row sums of the consistent mass matrix (vertex quadrature weights).
    pub lumped: Vec<f64>,
    pub dofs: DofMap,
    pub stiffness_free: SparseSymmetricMatrix,
    pub mass_free: SparseSymmetricMatrix,
    /// `lumped` restricted to interior vertices.
    pub lumped_free: Vec<f64>,
}

impl Discretization {
    pub fn new(mesh: Mesh) -> Result<Self> {
        let stiffness = assemble_stiffness(&mesh)?;
        let mass = assemble_mass(&mesh)?;
        let lumped = mass.row_sums();
        let (stiffness_free, dofs) = apply_dirichlet(&stiffness, &mesh)?;
        let (mass_free, _) = apply_dirichlet(&mass, &mesh)?;
        let lumped_free = dofs.gather(&lumped);
        Ok(Discretization {
            mesh,
            stiffness,
            mass,
            lumped,
            dofs,
            stiffness_free,
            mass_free,
            lumped_free,
        })
    }

    /// Interior-coordinate operators used by the energy and optimizer.
    pub fn operators(&self) -> Operators<'_> {
        Operators {
            stiffness: &self.stiffness_free,
            mass: &self.mass_free,
            weights: Cow::Borrowed(&self.lumped_free),
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.mesh.n_vertices()
    }

    /// Zeroes the boundary entries of a full-length vector.
    pub fn clamp_boundary(&self, v: &mut [f64]) {
        for (x, &b) in v.iter_mut().zip(&self.mesh.boundary) {
            if b {
                *x = 0.0;
            }
        }
    }
}

/// Stiffness, mass and vertex quadrature weights sharing one coordinate system.
#[derive(Debug, Clone)]
pub struct Operators<'a> {
    pub stiffness: &'a SparseSymmetricMatrix,
    pub mass: &'a SparseSymmetricMatrix,
    pub weights: Cow<'a, [f64]>,
}

impl<'a> Operators<'a> {
    /// Uses the row sums of `mass` as quadrature weights.
    pub fn new(stiffness: &'a SparseSymmetricMatrix, mass: &'a SparseSymmetricMatrix) -> Result<Self> {
        if stiffness.dim() != mass.dim() {
            return Err(Error::DimensionMismatch {
                expected: stiffness.dim(),
                found: mass.dim(),
            });
        }
        Ok(Operators {
            stiffness,
            mass,
            weights: Cow::Owned(mass.row_sums()),
        })
    }

    pub fn dim(&self) -> usize {
        self.stiffness.dim()
    }
}

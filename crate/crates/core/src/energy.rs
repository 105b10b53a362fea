//! Penalized energy of grouped fields.
//!
//! For groups `u_i = (u_{i,1}, ..., u_{i,k_i})` of B-orthonormal nodal vectors
//!
//! ```text
//! E_β(u) = F(φ_1(M_1), ..., φ_m(M_m)) + (β/q) Σ_{i<j} Σ_v w_v S_i(v)^q S_j(v)^q
//! ```
//!
//! with `M_i[a][b] = u_a^T K u_b (+ projection term)`, `S_i = Σ_a u_{i,a}^2` and
//! `w` the vertex quadrature weights. All vectors live in the coordinates of
//! the operators, normally the interior vertices.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fem::{Field, Operators};
use crate::functional::{extremality_coefficients, phi_matrix_eval, phi_matrix_grad, FunctionalSpec};
use crate::linalg::{sym, sym_eigen};
use crate::par;

/// Gram eigenvalues below this are treated as a collapsed group.
pub const DEGENERATE_GRAM: f64 = 1e-12;

const CHECKPOINT_MAGIC: &str = "specpart-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupState {
    pub groups: Vec<Vec<Field>>,
    pub beta: f64,
    pub q: f64,
    /// Reference fields per group; when present the Gram matrices also
    /// measure the B-distance to their span.
    pub reference: Option<Vec<Vec<Field>>>,
}

impl GroupState {
    pub fn new(groups: Vec<Vec<Field>>, beta: f64, q: f64) -> Result<Self> {
        let s = GroupState {
            groups,
            beta,
            q,
            reference: None,
        };
        s.check()?;
        Ok(s)
    }

    pub fn with_reference(mut self, reference: Vec<Vec<Field>>) -> Result<Self> {
        if reference.len() != self.groups.len() {
            return Err(Error::DimensionMismatch {
                expected: self.groups.len(),
                found: reference.len(),
            });
        }
        self.reference = Some(reference);
        self.check()?;
        Ok(self)
    }

    pub fn m(&self) -> usize {
        self.groups.len()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    /// Length of every nodal vector.
    pub fn dim(&self) -> usize {
        self.groups[0][0].len()
    }

    fn check(&self) -> Result<()> {
        if !(self.q > 0.5 && self.q.is_finite()) {
            return Err(Error::InvalidState(format!("exponent q = {} must exceed 1/2", self.q)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidState(format!("beta = {} must be nonnegative", self.beta)));
        }
        if self.groups.is_empty() || self.groups.iter().any(Vec::is_empty) {
            return Err(Error::InvalidState("every group needs at least one field".into()));
        }
        let n = self.groups[0][0].len();
        let all = self.groups.iter().flatten().chain(self.reference.iter().flatten().flatten());
        for f in all {
            if f.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: f.len() });
            }
        }
        Ok(())
    }

    fn check_ops(&self, ops: &Operators) -> Result<()> {
        if self.dim() != ops.dim() {
            return Err(Error::DimensionMismatch {
                expected: ops.dim(),
                found: self.dim(),
            });
        }
        Ok(())
    }

    fn check_spec(&self, spec: &FunctionalSpec) -> Result<()> {
        if spec.group_sizes() != self.group_sizes() {
            return Err(Error::InvalidState(format!(
                "functional expects group sizes {:?}, state has {:?}",
                spec.group_sizes(),
                self.group_sizes()
            )));
        }
        Ok(())
    }

    /// Replaces group `i` by `X C`, where `X` has the group's fields as columns.
    pub fn combine_group(&mut self, i: usize, c: &DMatrix<f64>) {
        self.groups[i] = combine(&self.groups[i], c);
    }

    /// Pointwise densities `S_i(v) = Σ_a u_{i,a}(v)^2`.
    pub fn densities(&self) -> Vec<Vec<f64>> {
        self.groups
            .iter()
            .map(|g| par::map_range(self.dim(), |v| g.iter().map(|u| u[v] * u[v]).sum()))
            .collect()
    }
}

/// Columns of `X C` for fields `X`.
pub fn combine(fields: &[Field], c: &DMatrix<f64>) -> Vec<Field> {
    assert_eq!(fields.len(), c.nrows());
    let n = fields[0].len();
    (0..c.ncols())
        .map(|col| {
            let mut y = vec![0.0; n];
            par::fill(&mut y, |v| fields.iter().enumerate().map(|(b, u)| u[v] * c[(b, col)]).sum());
            Field::new(y)
        })
        .collect()
}

/// `[⟨x_a, x_b⟩_A]` for a symmetric matrix `A`.
fn gram_with(fields: &[Field], apply: &[Vec<f64>]) -> DMatrix<f64> {
    let k = fields.len();
    let mut g = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in 0..=a {
            let x = par::dot(&fields[a], &apply[b]);
            g[(a, b)] = x;
            g[(b, a)] = x;
        }
    }
    sym(&g)
}

/// B-Gram matrix of one group.
pub fn mass_gram(fields: &[Field], ops: &Operators) -> DMatrix<f64> {
    let bx: Vec<Vec<f64>> = fields.iter().map(|u| ops.mass.matvec(u)).collect();
    gram_with(fields, &bx)
}

/// `P⊥ u = u − Σ_j ⟨u, r_j⟩_B r_j` for every field of a group.
fn project_out(fields: &[Field], reference: &[Field], ops: &Operators) -> Vec<Vec<f64>> {
    let br: Vec<Vec<f64>> = reference.iter().map(|r| ops.mass.matvec(r)).collect();
    fields
        .iter()
        .map(|u| {
            let mut p = u.values.clone();
            for (r, brj) in reference.iter().zip(&br) {
                let c = par::dot(u, brj);
                p.iter_mut().zip(r.iter()).for_each(|(x, y)| *x -= c * y);
            }
            p
        })
        .collect()
}

/// Per group: `K X` plus, in projection mode, `B P⊥ X`.
fn gram_images(state: &GroupState, i: usize, ops: &Operators) -> Vec<Vec<f64>> {
    let fields = &state.groups[i];
    let mut images: Vec<Vec<f64>> = par::map_slice(fields, |u| ops.stiffness.matvec(u));
    if let Some(reference) = &state.reference {
        let perp = project_out(fields, &reference[i], ops);
        for (img, p) in images.iter_mut().zip(&perp) {
            let bp = ops.mass.matvec(p);
            img.iter_mut().zip(&bp).for_each(|(x, y)| *x += y);
        }
    }
    images
}

/// Gram matrices `M_i` entering the functional.
pub fn gram_matrices(state: &GroupState, ops: &Operators) -> Result<Vec<DMatrix<f64>>> {
    state.check_ops(ops)?;
    Ok((0..state.m())
        .map(|i| gram_with(&state.groups[i], &gram_images(state, i, ops)))
        .collect())
}

/// `Σ_i ‖P⊥ u_i‖_B^2` over all fields; zero outside projection mode.
pub fn projection_eval(state: &GroupState, ops: &Operators) -> Result<f64> {
    state.check_ops(ops)?;
    let Some(reference) = &state.reference else {
        return Ok(0.0);
    };
    Ok(state
        .groups
        .iter()
        .zip(reference)
        .flat_map(|(g, r)| project_out(g, r, ops))
        .map(|p| ops.mass.bilinear(&p, &p))
        .sum())
}

/// `Σ_{j≠i} S_j(v)^q` for every group `i` and vertex `v`.
fn others_power(dens: &[Vec<f64>], q: f64) -> Vec<Vec<f64>> {
    let n = dens[0].len();
    let pow: Vec<Vec<f64>> = dens.iter().map(|s| s.iter().map(|x| x.powf(q)).collect()).collect();
    (0..dens.len())
        .map(|i| {
            par::map_range(n, |v| {
                pow.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, p)| p[v]).sum()
            })
        })
        .collect()
}

/// Competition term `(β/q) Σ_{i<j} Σ_v w_v S_i^q S_j^q`.
pub fn penalty_eval(state: &GroupState, ops: &Operators) -> Result<f64> {
    state.check_ops(ops)?;
    if state.beta == 0.0 || state.m() < 2 {
        return Ok(0.0);
    }
    let dens = state.densities();
    let q = state.q;
    let w = &ops.weights;
    let total = par::sum_range(state.dim(), |v| {
        let mut s = 0.0;
        for i in 0..dens.len() {
            for j in i + 1..dens.len() {
                s += (dens[i][v] * dens[j][v]).powf(q);
            }
        }
        w[v] * s
    });
    Ok(state.beta / state.q * total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyParts {
    /// `φ_i(M_i)`.
    pub scores: Vec<f64>,
    /// `F(scores)`.
    pub functional: f64,
    pub penalty: f64,
    pub total: f64,
}

fn checked_grams(state: &GroupState, ops: &Operators) -> Result<Vec<DMatrix<f64>>> {
    let grams = gram_matrices(state, ops)?;
    for (i, g) in grams.iter().enumerate() {
        let smallest = sym_eigen(g).values[0];
        if !(smallest > DEGENERATE_GRAM) {
            return Err(Error::DegenerateState { group: i, smallest });
        }
    }
    Ok(grams)
}

pub fn energy_parts(state: &GroupState, spec: &FunctionalSpec, ops: &Operators) -> Result<EnergyParts> {
    state.check_spec(spec)?;
    let grams = checked_grams(state, ops)?;
    let scores = spec
        .groups
        .iter()
        .zip(&grams)
        .map(|(g, m)| phi_matrix_eval(&g.inner, m))
        .collect::<Result<Vec<_>>>()?;
    let (functional, _) = spec.outer.eval_and_grad(&scores)?;
    let penalty = penalty_eval(state, ops)?;
    Ok(EnergyParts {
        scores,
        functional,
        penalty,
        total: functional + penalty,
    })
}

/// `E_β(state)`.
pub fn energy_eval(state: &GroupState, spec: &FunctionalSpec, ops: &Operators) -> Result<f64> {
    Ok(energy_parts(state, spec, ops)?.total)
}

/// `∂F/∂M_i = ∂_i F · ∇φ_i(M_i)` for every group.
pub fn matrix_gradients(state: &GroupState, spec: &FunctionalSpec, ops: &Operators) -> Result<Vec<DMatrix<f64>>> {
    state.check_spec(spec)?;
    let grams = checked_grams(state, ops)?;
    let scores = spec
        .groups
        .iter()
        .zip(&grams)
        .map(|(g, m)| phi_matrix_eval(&g.inner, m))
        .collect::<Result<Vec<_>>>()?;
    let (_, outer) = spec.outer.eval_and_grad(&scores)?;
    spec.groups
        .iter()
        .zip(&grams)
        .zip(outer)
        .map(|((g, m), df)| Ok(phi_matrix_grad(&g.inner, m)? * df))
        .collect()
}

/// Euclidean gradient of [`energy_eval`] with respect to every nodal vector.
pub fn energy_grad(state: &GroupState, spec: &FunctionalSpec, ops: &Operators) -> Result<Vec<Vec<Vec<f64>>>> {
    let mgrads = matrix_gradients(state, spec, ops)?;
    let n = state.dim();
    let penalty_on = state.beta > 0.0 && state.m() > 1;
    let dens = state.densities();
    let others = if penalty_on { others_power(&dens, state.q) } else { Vec::new() };

    let mut out = Vec::with_capacity(state.m());
    for (i, g) in mgrads.iter().enumerate() {
        let images = gram_images(state, i, ops);
        let k = images.len();
        let mut grads = Vec::with_capacity(k);
        for a in 0..k {
            let mut v = vec![0.0; n];
            par::fill(&mut v, |x| 2.0 * (0..k).map(|b| g[(a, b)] * images[b][x]).sum::<f64>());
            if penalty_on {
                let u = &state.groups[i][a];
                let (s, o, w) = (&dens[i], &others[i], &ops.weights);
                let (beta, q) = (state.beta, state.q);
                v.iter_mut().enumerate().for_each(|(x, val)| {
                    if s[x] > 0.0 {
                        *val += 2.0 * beta * w[x] * u[x] * s[x].powf(q - 1.0) * o[x];
                    }
                });
            }
            grads.push(v);
        }
        out.push(grads);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierReport {
    /// `a_{i,j}` from the Gram diagonal.
    pub coefficients: Vec<Vec<f64>>,
    /// `μ_i[l][n] = ⟨u_{i,n}, ½ ∇_{u_{i,l}} E_β⟩`.
    pub multipliers: Vec<DMatrix<f64>>,
    /// Penalty part of `μ_i` alone.
    pub cross_terms: Vec<DMatrix<f64>>,
    /// `‖½∇_{u_{i,l}} E_β − Σ_n μ_i[l][n] B u_{i,n}‖ / ‖½∇_{u_{i,l}} E_β‖`.
    pub residuals: Vec<Vec<f64>>,
}

/// Gram diagonals of every group.
pub fn gram_diagonals(grams: &[DMatrix<f64>]) -> Vec<Vec<f64>> {
    grams.iter().map(|g| g.diagonal().iter().copied().collect()).collect()
}

/// Lagrange multipliers of the constrained Euler-Lagrange system obtained by
/// testing each equation against the group's own fields.
pub fn multipliers(state: &GroupState, spec: &FunctionalSpec, ops: &Operators) -> Result<MultiplierReport> {
    let grams = checked_grams(state, ops)?;
    let coefficients = extremality_coefficients(spec, &gram_diagonals(&grams))?;
    let grad = energy_grad(state, spec, ops)?;
    let dens = state.densities();
    let others = others_power(&dens, state.q);

    let mut multipliers = Vec::new();
    let mut cross_terms = Vec::new();
    let mut residuals = Vec::new();
    for (i, g) in grad.iter().enumerate() {
        let fields = &state.groups[i];
        let k = fields.len();
        let bu: Vec<Vec<f64>> = fields.iter().map(|u| ops.mass.matvec(u)).collect();
        let mu = DMatrix::from_fn(k, k, |l, nn| 0.5 * par::dot(&fields[nn], &g[l]));
        let cross = DMatrix::from_fn(k, k, |l, nn| {
            if state.beta == 0.0 || state.m() < 2 {
                return 0.0;
            }
            let (s, o, w) = (&dens[i], &others[i], &ops.weights);
            let (ul, un) = (&fields[l], &fields[nn]);
            state.beta
                * par::sum_range(state.dim(), |x| {
                    if s[x] > 0.0 {
                        w[x] * ul[x] * un[x] * s[x].powf(state.q - 1.0) * o[x]
                    } else {
                        0.0
                    }
                })
        });
        let res = (0..k)
            .map(|l| {
                let r: Vec<f64> = (0..state.dim())
                    .map(|x| 0.5 * g[l][x] - (0..k).map(|nn| mu[(l, nn)] * bu[nn][x]).sum::<f64>())
                    .collect();
                par::norm(&r) / (0.5 * par::norm(&g[l])).max(f64::MIN_POSITIVE)
            })
            .collect();
        multipliers.push(mu);
        cross_terms.push(cross);
        residuals.push(res);
    }
    Ok(MultiplierReport {
        coefficients,
        multipliers,
        cross_terms,
        residuals,
    })
}

fn hex(x: f64) -> String {
    format!("{:016x}", x.to_bits())
}

fn unhex(s: &str) -> Result<f64> {
    u64::from_str_radix(s.trim(), 16)
        .map(f64::from_bits)
        .map_err(|e| Error::Checkpoint(format!("bad value {s:?}: {e}")))
}

fn write_groups(out: &mut String, tag: &str, groups: &[Vec<Field>]) {
    for g in groups {
        let _ = writeln!(out, "{tag} {} {}", g.len(), g[0].len());
        for f in g {
            for x in f.iter() {
                out.push_str(&hex(*x));
                out.push('\n');
            }
        }
    }
}

/// Serializes a state with the hash of the mesh it lives on. Values are
/// stored as raw IEEE-754 bits so a round trip is exact.
pub fn checkpoint_to_string(state: &GroupState, mesh_hash: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}");
    let _ = writeln!(out, "mesh {mesh_hash}");
    let _ = writeln!(out, "beta {}", hex(state.beta));
    let _ = writeln!(out, "q {}", hex(state.q));
    let _ = writeln!(out, "groups {}", state.m());
    write_groups(&mut out, "group", &state.groups);
    match &state.reference {
        Some(r) => {
            out.push_str("reference yes\n");
            write_groups(&mut out, "group", r);
        }
        None => out.push_str("reference no\n"),
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))
    }

    fn keyed(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let (no, line) = self.next()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(Error::Checkpoint(format!("line {no}: expected {key:?}")));
        }
        Ok(parts.collect())
    }

    fn count(&mut self, key: &str) -> Result<Vec<usize>> {
        self.keyed(key)?
            .iter()
            .map(|s| s.parse().map_err(|e| Error::Checkpoint(format!("{key}: {e}"))))
            .collect()
    }

    fn groups(&mut self, m: usize) -> Result<Vec<Vec<Field>>> {
        (0..m)
            .map(|_| {
                let dims = self.count("group")?;
                let [k, n] = dims[..] else {
                    return Err(Error::Checkpoint("group header needs two counts".into()));
                };
                (0..k)
                    .map(|_| (0..n).map(|_| unhex(self.next()?.1)).collect::<Result<Vec<_>>>().map(Field::new))
                    .collect()
            })
            .collect()
    }
}

/// Parses [`checkpoint_to_string`] output, returning the state and mesh hash.
pub fn checkpoint_from_str(text: &str) -> Result<(GroupState, String)> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    let header = lines.keyed(CHECKPOINT_MAGIC)?;
    if header != [CHECKPOINT_VERSION.to_string().as_str()] {
        return Err(Error::Checkpoint(format!("unsupported version {header:?}")));
    }
    let hash = lines.keyed("mesh")?.first().copied().unwrap_or_default().to_string();
    let beta = unhex(lines.keyed("beta")?.first().copied().unwrap_or_default())?;
    let q = unhex(lines.keyed("q")?.first().copied().unwrap_or_default())?;
    let m = *lines.count("groups")?.first().ok_or_else(|| Error::Checkpoint("missing group count".into()))?;
    let groups = lines.groups(m)?;
    let state = GroupState::new(groups, beta, q).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let state = match lines.keyed("reference")?.first().copied() {
        Some("yes") => state.with_reference(lines.groups(m)?)?,
        Some("no") => state,
        other => return Err(Error::Checkpoint(format!("bad reference flag {other:?}"))),
    };
    Ok((state, hash))
}

pub fn save_checkpoint(path: &Path, state: &GroupState, mesh_hash: &str) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(state, mesh_hash))?;
    Ok(())
}

/// Loads a checkpoint, rejecting it when `expected_hash` is given and differs.
pub fn load_checkpoint(path: &Path, expected_hash: Option<&str>) -> Result<GroupState> {
    let (state, hash) = checkpoint_from_str(&std::fs::read_to_string(path)?)?;
    if let Some(expected) = expected_hash {
        if hash != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint belongs to mesh {hash}, current mesh is {expected}"
            )));
        }
    }
    Ok(state)
}

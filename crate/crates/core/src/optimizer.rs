//! Minimization of the penalized energy on the product of B-Stiefel
//! manifolds, with β-continuation.

use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cholesky::EnvelopeCholesky;
use crate::eigensolve::{smallest_eigenpairs_shifted, EigenOptions};
use crate::energy::{
    energy_grad, energy_parts, gram_diagonals, gram_matrices, load_checkpoint, mass_gram, multipliers, GroupState,
    DEGENERATE_GRAM,
};
use crate::error::{Error, Result};
use crate::fem::{Discretization, Field, Operators};
use crate::functional::{extremality_coefficients, FunctionalSpec};
use crate::linalg::sym_eigen;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    ProjectedGradient,
    FixedPoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaSchedule {
    pub initial: f64,
    pub factor: f64,
    pub max_stages: usize,
}

impl Default for BetaSchedule {
    fn default() -> Self {
        BetaSchedule {
            initial: 1000.0,
            factor: 4.0,
            max_stages: 8,
        }
    }
}

impl BetaSchedule {
    pub fn beta(&self, stage: usize) -> f64 {
        self.initial * self.factor.powi(stage as i32)
    }
}

/// Armijo backtracking parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub initial: f64,
    pub backtrack: f64,
    pub armijo: f64,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig {
            initial: 1.0,
            backtrack: 0.5,
            armijo: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Projected-gradient stopping threshold (dimensionless, see [`gradient_stage`]).
    pub gradient: f64,
    /// Relative energy decrease below which a gradient stage stops.
    pub energy: f64,
    /// Relative change of the Gram diagonals that ends a fixed-point stage.
    pub fixed_point: f64,
    /// Continuation stops once `penalty <= penalty_share * |energy|`.
    pub penalty_share: f64,
    pub max_iter: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            gradient: 1e-6,
            energy: 1e-14,
            fixed_point: 1e-9,
            penalty_share: 1e-4,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Random { seed: u64 },
    Checkpoint(PathBuf),
    /// One bump center per group; the seed perturbs the secondary bumps.
    Bumps { centers: Vec<[f64; 2]>, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub scheme: Scheme,
    pub schedule: BetaSchedule,
    pub step: StepConfig,
    pub tol: Tolerances,
    pub init: Init,
    pub q: f64,
    pub eigen_tol: f64,
    /// Checkpoint whose groups become the projection reference.
    pub projection: Option<PathBuf>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            scheme: Scheme::FixedPoint,
            schedule: BetaSchedule::default(),
            step: StepConfig::default(),
            tol: Tolerances::default(),
            init: Init::Random { seed: 0 },
            q: 1.0,
            eigen_tol: crate::eigensolve::DEFAULT_TOL,
            projection: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.schedule.factor > 1.0) {
            return bad(format!("beta factor {} must exceed 1", self.schedule.factor));
        }
        if !(self.schedule.initial >= 0.0) || self.schedule.max_stages == 0 {
            return bad("beta schedule needs a nonnegative start and at least one stage".into());
        }
        let t = &self.tol;
        if [t.gradient, t.energy, t.fixed_point, t.penalty_share, self.eigen_tol]
            .iter()
            .any(|x| !(*x > 0.0))
            || t.max_iter == 0
        {
            return bad("tolerances and iteration limits must be positive".into());
        }
        if !(self.step.initial > 0.0 && self.step.backtrack > 0.0 && self.step.backtrack < 1.0) {
            return bad("step size must be positive and backtracking factor in (0, 1)".into());
        }
        if !(self.step.armijo > 0.0 && self.step.armijo < 1.0) {
            return bad("Armijo constant must lie in (0, 1)".into());
        }
        if !(self.q > 0.5) {
            return bad(format!("q = {} must exceed 1/2", self.q));
        }
        if self.scheme == Scheme::FixedPoint && self.q != 1.0 {
            return bad("the fixed-point scheme requires q = 1".into());
        }
        if self.scheme == Scheme::FixedPoint && self.projection.is_some() {
            return bad("the projection term requires the projected-gradient scheme".into());
        }
        Ok(())
    }

    fn eigen_options(&self, start: Option<Vec<Vec<f64>>>) -> EigenOptions {
        EigenOptions {
            tol: self.eigen_tol,
            start,
            ..EigenOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub stage: usize,
    pub beta: f64,
    pub energy: f64,
    pub penalty: f64,
    /// Largest relative Euler-Lagrange residual over all fields.
    pub grad_norm: f64,
    pub iterations: usize,
}

impl StageRecord {
    pub fn penalty_share(&self) -> f64 {
        self.penalty / self.energy.abs()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTrace {
    pub stages: Vec<StageRecord>,
}

/// Polar orthonormalization `X (X^T B X)^{-1/2}` of every group.
pub fn retract(state: &GroupState, ops: &Operators) -> Result<GroupState> {
    let mut out = state.clone();
    for i in 0..state.m() {
        let g = mass_gram(&state.groups[i], ops);
        let e = sym_eigen(&g);
        let max = e.values.last().copied().unwrap_or(0.0);
        if !(e.values[0] > DEGENERATE_GRAM * max.max(1.0)) {
            return Err(Error::DegenerateState {
                group: i,
                smallest: e.values[0],
            });
        }
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            e.values.len(),
            e.values.iter().map(|l| 1.0 / l.sqrt()),
        ));
        out.combine_group(i, &(&e.vectors * d * e.vectors.transpose()));
    }
    Ok(out)
}

/// Rotates each group onto the eigenbasis of its Gram matrix, so every Gram
/// matrix becomes diagonal and nondecreasing.
pub fn normalize_diagonal(state: &GroupState, ops: &Operators) -> Result<GroupState> {
    let grams = gram_matrices(state, ops)?;
    let mut out = state.clone();
    for (i, g) in grams.iter().enumerate() {
        out.combine_group(i, &sym_eigen(g).vectors);
    }
    Ok(out)
}

/// Largest relative Euler-Lagrange residual of the state.
pub fn stationarity(state: &GroupState, spec: &FunctionalSpec, ops: &Operators) -> Result<f64> {
    let r = multipliers(state, spec, ops)?;
    Ok(r.residuals.iter().flatten().fold(0.0, |a: f64, &b| a.max(b)))
}

fn record(state: &GroupState, spec: &FunctionalSpec, ops: &Operators, stage: usize, iterations: usize) -> Result<StageRecord> {
    let parts = energy_parts(state, spec, ops)?;
    Ok(StageRecord {
        stage,
        beta: state.beta,
        energy: parts.total,
        penalty: parts.penalty,
        grad_norm: stationarity(state, spec, ops)?,
        iterations,
    })
}

/// Per group `K + (β/ā_i) diag(w S_i^{q-1} Σ_{j≠i} S_j^q)`, factored.
fn preconditioners(state: &GroupState, spec: &FunctionalSpec, ops: &Operators) -> Result<Vec<EnvelopeCholesky>> {
    let grams = gram_matrices(state, ops)?;
    let coeffs = extremality_coefficients(spec, &gram_diagonals(&grams))?;
    let dens = state.densities();
    let q = state.q;
    (0..state.m())
        .map(|i| {
            let mean = coeffs[i].iter().sum::<f64>() / coeffs[i].len() as f64;
            let shift: Vec<f64> = par::map_range(state.dim(), |v| {
                if state.beta == 0.0 || dens[i][v] == 0.0 {
                    return 0.0;
                }
                let others: f64 = (0..state.m()).filter(|&j| j != i).map(|j| dens[j][v].powf(q)).sum();
                // q < 1 makes S^{q-1} unbounded near the group's zero set
                state.beta / mean * ops.weights[v] * dens[i][v].powf((q - 1.0).max(0.0)) * others
            });
            EnvelopeCholesky::factor(&ops.stiffness.add_diagonal(&shift)?)
        })
        .collect()
}

/// `Z - X sym(X^T B Z)` per group.
fn tangent_project(state: &GroupState, z: &mut [Vec<Vec<f64>>], ops: &Operators) {
    for (i, zi) in z.iter_mut().enumerate() {
        let x = &state.groups[i];
        let k = x.len();
        let bz: Vec<Vec<f64>> = zi.iter().map(|v| ops.mass.matvec(v)).collect();
        let c = DMatrix::from_fn(k, k, |a, b| par::dot(&x[a], &bz[b]));
        let s = (&c + c.transpose()) * 0.5;
        for (b, zb) in zi.iter_mut().enumerate() {
            for a in 0..k {
                let coef = s[(a, b)];
                zb.iter_mut().zip(x[a].iter()).for_each(|(p, q)| *p -= coef * q);
            }
        }
    }
}

fn inner_all(a: &[Vec<Vec<f64>>], b: &[Vec<Vec<f64>>]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| par::dot(x, y)).sum()
}

fn step_state(state: &GroupState, d: &[Vec<Vec<f64>>], tau: f64) -> GroupState {
    let mut out = state.clone();
    for (g, dg) in out.groups.iter_mut().zip(d) {
        for (u, du) in g.iter_mut().zip(dg) {
            u.iter_mut().zip(du).for_each(|(x, y)| *x -= tau * y);
        }
    }
    out
}

/// Preconditioned projected gradient descent at fixed β.
///
/// The search direction is the tangent projection of `A^{-1} r`, where `r` is
/// the Euclidean gradient minus its constraint component and `A` the
/// per-group preconditioner. Iteration stops when
/// `sqrt(r^T A^{-1} r / |E|) <= tol.gradient`, when the accepted decrease is
/// below `tol.energy * |E|`, or after `tol.max_iter` steps.
pub fn gradient_stage(
    state: &GroupState,
    spec: &FunctionalSpec,
    config: &SolverConfig,
    ops: &Operators,
) -> Result<(GroupState, StageRecord)> {
    let mut x = retract(state, ops)?;
    let mut energy = energy_parts(&x, spec, ops)?.total;
    let mut iterations = 0;
    while iterations < config.tol.max_iter {
        let g = energy_grad(&x, spec, ops)?;
        let mut r = g.clone();
        for (i, ri) in r.iter_mut().enumerate() {
            let xs = &x.groups[i];
            let k = xs.len();
            let c = DMatrix::from_fn(k, k, |a, b| par::dot(&xs[a], &g[i][b]));
            let s = (&c + c.transpose()) * 0.5;
            let bx: Vec<Vec<f64>> = xs.iter().map(|u| ops.mass.matvec(u)).collect();
            for (b, rb) in ri.iter_mut().enumerate() {
                for a in 0..k {
                    let coef = s[(a, b)];
                    rb.iter_mut().zip(&bx[a]).for_each(|(p, q)| *p -= coef * q);
                }
            }
        }
        let pre = preconditioners(&x, spec, ops)?;
        let mut d: Vec<Vec<Vec<f64>>> = r
            .iter()
            .zip(&pre)
            .map(|(ri, p)| ri.iter().map(|v| p.solve(v)).collect())
            .collect();
        let dual = inner_all(&r, &d).max(0.0);
        let measure = (dual / energy.abs().max(f64::MIN_POSITIVE)).sqrt();
        if measure <= config.tol.gradient {
            break;
        }
        tangent_project(&x, &mut d, ops);
        let mut slope = inner_all(&g, &d);
        if !(slope > 0.0) {
            d = r;
            tangent_project(&x, &mut d, ops);
            slope = inner_all(&g, &d);
        }
        iterations += 1;

        let mut tau = config.step.initial;
        let accepted = loop {
            if tau < 1e-14 {
                return Err(Error::Stagnation { step: tau, iterations });
            }
            if let Ok(trial) = retract(&step_state(&x, &d, tau), ops) {
                if let Ok(parts) = energy_parts(&trial, spec, ops) {
                    if parts.total <= energy - config.step.armijo * tau * slope {
                        break (trial, parts.total);
                    }
                }
            }
            tau *= config.step.backtrack;
        };
        let decrease = energy - accepted.1;
        x = accepted.0;
        energy = accepted.1;
        if decrease <= config.tol.energy * energy.abs() {
            break;
        }
    }
    let rec = record(&x, spec, ops, 0, iterations)?;
    Ok((x, rec))
}

/// Cyclic potential-freezing eigenproblem iteration at fixed β (q = 1).
///
/// Group `i` is replaced by the lowest eigenvectors of
/// `K + (β/a_{i,j}) diag(w Σ_{l≠i} S_l)` with the other groups frozen. When the
/// coefficients of a group differ, field `j` comes from the operator with
/// `a_{i,j}` and the group is re-orthonormalized afterwards.
pub fn fixed_point_stage(
    state: &GroupState,
    spec: &FunctionalSpec,
    config: &SolverConfig,
    ops: &Operators,
) -> Result<(GroupState, StageRecord)> {
    if state.q != 1.0 {
        return Err(Error::InvalidState("the fixed-point scheme requires q = 1".into()));
    }
    let mut x = retract(state, ops)?;
    let mut diag = gram_diagonals(&gram_matrices(&x, ops)?);
    let mut sweeps = 0;
    while sweeps < config.tol.max_iter {
        sweeps += 1;
        for i in 0..x.m() {
            x = fixed_point_update(&x, i, spec, config, ops)?;
        }
        let next = gram_diagonals(&gram_matrices(&x, ops)?);
        let change = diag
            .iter()
            .flatten()
            .zip(next.iter().flatten())
            .map(|(a, b)| (a - b).abs() / b.abs())
            .fold(0.0, f64::max);
        diag = next;
        if change <= config.tol.fixed_point {
            break;
        }
    }
    let x = normalize_diagonal(&x, ops)?;
    let rec = record(&x, spec, ops, 0, sweeps)?;
    Ok((x, rec))
}

fn fixed_point_update(
    x: &GroupState,
    i: usize,
    spec: &FunctionalSpec,
    config: &SolverConfig,
    ops: &Operators,
) -> Result<GroupState> {
    let wrap = |e| Error::GroupSolve {
        group: i,
        source: Box::new(e),
    };
    let normalized = normalize_diagonal(x, ops)?;
    let coeffs = extremality_coefficients(spec, &gram_diagonals(&gram_matrices(&normalized, ops)?))?;
    let dens = x.densities();
    let potential: Vec<f64> = par::map_range(x.dim(), |v| {
        ops.weights[v] * (0..x.m()).filter(|&j| j != i).map(|j| dens[j][v]).sum::<f64>()
    });
    let k = x.groups[i].len();
    let start: Vec<Vec<f64>> = normalized.groups[i].iter().map(|f| f.values.clone()).collect();
    let opts = config.eigen_options(Some(start));

    let mut fields: Vec<Option<Field>> = vec![None; k];
    let mut distinct: Vec<f64> = coeffs[i].clone();
    distinct.dedup();
    for a in distinct {
        let shift: Vec<f64> = potential.iter().map(|p| x.beta / a * p).collect();
        let report =
            smallest_eigenpairs_shifted(ops.stiffness, ops.mass, k, Some(&shift), &opts).map_err(wrap)?;
        for (j, slot) in fields.iter_mut().enumerate() {
            if coeffs[i][j] == a && slot.is_none() {
                *slot = Some(Field::new(report.pairs[j].vector.clone()));
            }
        }
    }
    let mut out = x.clone();
    out.groups[i] = fields.into_iter().map(|f| f.expect("every coefficient solved")).collect();
    retract(&out, ops).map_err(wrap)
}

/// Runs one stage of the configured scheme.
pub fn run_stage(
    state: &GroupState,
    spec: &FunctionalSpec,
    config: &SolverConfig,
    ops: &Operators,
) -> Result<(GroupState, StageRecord)> {
    match config.scheme {
        Scheme::ProjectedGradient => gradient_stage(state, spec, config, ops),
        Scheme::FixedPoint => fixed_point_stage(state, spec, config, ops),
    }
}

/// Farthest-point sampling of `count` interior vertices, seeded by `first`.
fn spread_centers(points: &[[f64; 2]], count: usize, first: usize) -> Vec<[f64; 2]> {
    let mut centers = vec![points[first]];
    let mut dist: Vec<f64> = points.iter().map(|p| dist2(p, &points[first])).collect();
    while centers.len() < count {
        let (far, _) = dist
            .iter()
            .enumerate()
            .fold((0, -1.0), |(bi, bd), (i, &d)| if d > bd { (i, d) } else { (bi, bd) });
        centers.push(points[far]);
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(dist2(p, &points[far]));
        }
    }
    centers
}

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Nonnegative Gaussian bumps confined to the Voronoi cells of `centers`,
/// `k_i` per group, in interior coordinates.
fn bump_state(disc: &Discretization, sizes: &[usize], centers: &[[f64; 2]], rng: &mut ChaCha8Rng) -> Vec<Vec<Field>> {
    let points: Vec<[f64; 2]> = disc.dofs.free().iter().map(|&v| disc.mesh.vertices[v]).collect();
    let owner: Vec<usize> = points
        .iter()
        .map(|p| {
            (0..centers.len())
                .min_by(|&a, &b| dist2(p, &centers[a]).total_cmp(&dist2(p, &centers[b])))
                .unwrap()
        })
        .collect();
    let area = disc.mesh.total_area();
    let width2 = area / (centers.len() as f64 * std::f64::consts::PI);
    sizes
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let cell: Vec<usize> = (0..points.len()).filter(|&v| owner[v] == i).collect();
            (0..k)
                .map(|a| {
                    let c = if a == 0 || cell.is_empty() {
                        centers[i]
                    } else {
                        points[cell[rng.gen_range(0..cell.len())]]
                    };
                    let amp = rng.gen_range(0.5..1.5);
                    let values = (0..points.len())
                        .map(|v| {
                            if owner[v] == i {
                                amp * (-dist2(&points[v], &c) / width2).exp()
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    Field::new(values)
                })
                .collect()
        })
        .collect()
}

/// Initial state at `beta`, retracted onto the constraint set.
pub fn initial_state(disc: &Discretization, sizes: &[usize], config: &SolverConfig, beta: f64) -> Result<GroupState> {
    let state = unprojected_initial_state(disc, sizes, config, beta)?;
    match &config.projection {
        None => Ok(state),
        Some(path) => {
            let reference = load_checkpoint(path, Some(&disc.mesh.hash()))?;
            if reference.m() != sizes.len() {
                return Err(Error::Checkpoint(format!(
                    "projection reference has {} groups, expected {}",
                    reference.m(),
                    sizes.len()
                )));
            }
            state.with_reference(reference.groups)
        }
    }
}

fn unprojected_initial_state(disc: &Discretization, sizes: &[usize], config: &SolverConfig, beta: f64) -> Result<GroupState> {
    let ops = disc.operators();
    match &config.init {
        Init::Checkpoint(path) => {
            let mut s = load_checkpoint(path, Some(&disc.mesh.hash()))?;
            if s.group_sizes() != sizes {
                return Err(Error::Checkpoint(format!(
                    "checkpoint has group sizes {:?}, expected {sizes:?}",
                    s.group_sizes()
                )));
            }
            s.beta = beta;
            s.q = config.q;
            s.reference = None;
            retract(&s, &ops)
        }
        Init::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let points: Vec<[f64; 2]> = disc.dofs.free().iter().map(|&v| disc.mesh.vertices[v]).collect();
            let centers = spread_centers(&points, sizes.len(), rng.gen_range(0..points.len()));
            let groups = bump_state(disc, sizes, &centers, &mut rng);
            retract(&GroupState::new(groups, beta, config.q)?, &ops)
        }
        Init::Bumps { centers, seed } => {
            if centers.len() != sizes.len() {
                return Err(Error::Config(format!("{} bump centers for {} groups", centers.len(), sizes.len())));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let groups = bump_state(disc, sizes, centers, &mut rng);
            retract(&GroupState::new(groups, beta, config.q)?, &ops)
        }
    }
}

/// β-continuation from the configured initial state.
///
/// `observe` sees every finished stage (for logging and checkpoints). The
/// final state is passed through [`normalize_diagonal`].
pub fn continuation_run(
    spec: &FunctionalSpec,
    config: &SolverConfig,
    disc: &Discretization,
    mut observe: impl FnMut(&StageRecord, &GroupState) -> Result<()>,
) -> Result<(GroupState, RunTrace)> {
    spec.validate()?;
    config.validate()?;
    let ops = disc.operators();
    let mut state = initial_state(disc, &spec.group_sizes(), config, config.schedule.initial)?;
    let mut trace = RunTrace::default();
    for stage in 0..config.schedule.max_stages {
        state.beta = config.schedule.beta(stage);
        let (next, mut rec) = run_stage(&state, spec, config, &ops).map_err(|e| Error::StageFailed {
            stage,
            source: Box::new(e),
        })?;
        rec.stage = stage;
        state = next;
        observe(&rec, &state)?;
        let done = rec.penalty <= config.tol.penalty_share * rec.energy.abs();
        trace.stages.push(rec);
        if done {
            break;
        }
    }
    Ok((normalize_diagonal(&state, &ops)?, trace))
}

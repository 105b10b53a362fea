//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. The figure-1 continuation is run once and shared.

mod common;

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{disk, random_state, rel, spec, square, sum_spec};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specpart::analysis::{
    best_half_disk_fit, half_disk_labels, median, multiplicity_report, partition_distance, state_from_partition,
};
use specpart::config::preset;
use specpart::eigensolve::{smallest_eigenpairs, EigenOptions};
use specpart::energy::{energy_eval, energy_grad, mass_gram, GroupState};
use specpart::fem::Operators;
use specpart::functional::{phi_matrix_eval, phi_matrix_grad, FunctionalSpec, Inner, Outer};
use specpart::optimizer::retract;
use specpart::run::{execute, RunOutcome};

const J01: f64 = 2.404825557695773;
const J11: f64 = 3.831705970207512;
const J21: f64 = 5.135622301840683;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn run_preset(name: &str) -> (RunOutcome, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset(name).unwrap();
    cfg.output = dir.path().to_path_buf();
    (execute(&cfg).unwrap(), dir)
}

fn square_oracle() -> Verdict {
    let start = Instant::now();
    let disc = square(64);
    let r = smallest_eigenpairs(&disc.stiffness_free, &disc.mass_free, 5, None, &EigenOptions::default()).unwrap();
    let elapsed = start.elapsed();
    let exact = [2.0, 5.0, 5.0, 8.0, 10.0].map(|c| c * PI * PI);
    let worst = r.values().iter().zip(exact).map(|(v, e)| rel(*v, e)).fold(0.0, f64::max);
    verdict(
        worst <= 0.01 && elapsed < Duration::from_secs(30),
        format!("max relative error {:.3}%, {:.1} s", 100.0 * worst, elapsed.as_secs_f64()),
    )
}

fn disk_oracle() -> Verdict {
    let disc = disk(32);
    let r = smallest_eigenpairs(&disc.stiffness_free, &disc.mass_free, 4, None, &EigenOptions::default()).unwrap();
    let v = r.values();
    let err = rel(v[0], J01 * J01);
    let mult = &multiplicity_report(&[v.clone()], 1e-3)[0];
    verdict(
        err <= 0.01 && mult.get(1) == Some(&2),
        format!("lambda1 {:.6} ({:.3}%), multiplicities {mult:?}", v[0], 100.0 * err),
    )
}

fn figure_1(run: &RunOutcome, elapsed: Duration) -> Verdict {
    let disc = &run.discretization;
    let area = disc.mesh.total_area();
    let (theta, d) = best_half_disk_fit(&run.report.labels, disc);
    let exact = 2.0 * (J11 * J11 + J21 * J21);
    let energy = run.trace.stages.last().unwrap().energy;
    let e = rel(energy, exact);
    verdict(
        d / area <= 0.05 && e <= 0.03 && elapsed < Duration::from_secs(600),
        format!(
            "half-disk fit at {theta:.3} rad off by {:.2}% of area, energy {energy:.3} vs {exact:.3} ({:+.2}%), {:.0} s",
            100.0 * d / area,
            100.0 * (energy - exact) / exact,
            elapsed.as_secs_f64()
        ),
    )
}

fn product_equivalence(sum: &RunOutcome, product: &RunOutcome) -> Verdict {
    let disc = &sum.discretization;
    let d = partition_distance(&sum.report.labels, &product.report.labels, 2, disc) / disc.mesh.total_area();
    verdict(d <= 0.05, format!("partitions differ by {:.2}% of area", 100.0 * d))
}

fn extremality(run: &RunOutcome) -> Verdict {
    let r = &run.report.residuals;
    let med = run.report.median_residual();
    let one_sided: Vec<f64> = r.iter().flat_map(|s| [s.s_p, s.s_q]).collect();
    let scale = median(&one_sided);
    let degenerate = r.iter().filter(|s| !s.flagged && s.s_p.max(s.s_q) < 1e-6 * scale).count();
    verdict(
        !r.is_empty() && med <= 0.10 && degenerate == 0,
        format!("{} samples, median residual {:.2}%, {degenerate} degenerate", r.len(), 100.0 * med),
    )
}

fn vanishing_interaction(run: &RunOutcome) -> Verdict {
    let shares: Vec<f64> = run.trace.stages.iter().map(|s| s.penalty_share()).collect();
    let monotone = shares.windows(2).all(|w| w[1] <= 1.05 * w[0]);
    let last = *shares.last().unwrap();
    verdict(
        monotone && last <= 1e-3,
        format!(
            "shares {}",
            shares.iter().map(|s| format!("{s:.2e}")).collect::<Vec<_>>().join(" ")
        ),
    )
}

fn upper_bound(run: &RunOutcome) -> Verdict {
    let disc = &run.discretization;
    let (theta, _) = best_half_disk_fit(&run.report.labels, disc);
    let labels = half_disk_labels(&disc.mesh, theta);
    let (beta, q) = (run.state.beta, run.state.q);
    let reference = state_from_partition(&labels, disc, &[2, 2], beta, q).unwrap();
    let c_ref = energy_eval(&reference, &sum_spec(&[2, 2]), &disc.operators()).unwrap();
    let energy = run.trace.stages.last().unwrap().energy;
    verdict(energy <= 1.01 * c_ref, format!("energy {energy:.3} vs half-disk reference {c_ref:.3}"))
}

fn spectral_gap(run: &RunOutcome) -> Verdict {
    let gaps = run.report.spectral_gap();
    verdict(
        gaps.iter().all(|g| g.2),
        gaps.iter()
            .enumerate()
            .map(|(i, (a, b, g))| format!("group {i}: {a:.3} < {b:.3} {g}"))
            .collect::<Vec<_>>()
            .join(", "),
    )
}

// ---- gradients ----

fn shifted(state: &GroupState, dir: &[Vec<Vec<f64>>], t: f64) -> GroupState {
    let mut s = state.clone();
    for (g, d) in s.groups.iter_mut().zip(dir) {
        for (u, du) in g.iter_mut().zip(d) {
            for (x, dx) in u.values.iter_mut().zip(du) {
                *x += t * dx;
            }
        }
    }
    s
}

fn energy_fd_error(state: &GroupState, f: &FunctionalSpec, ops: &Operators, rng: &mut ChaCha8Rng) -> f64 {
    let g = energy_grad(state, f, ops).unwrap();
    let dir: Vec<Vec<Vec<f64>>> = state
        .groups
        .iter()
        .map(|g| g.iter().map(|u| (0..u.len()).map(|_| rng.gen_range(-0.5..0.5)).collect()).collect())
        .collect();
    let analytic: f64 = g
        .iter()
        .flatten()
        .zip(dir.iter().flatten())
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
        .sum();
    let h = 1e-5;
    let plus = energy_eval(&shifted(state, &dir, h), f, ops).unwrap();
    let minus = energy_eval(&shifted(state, &dir, -h), f, ops).unwrap();
    rel(analytic, (plus - minus) / (2.0 * h))
}

fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    (&a + a.transpose()) * 0.5
}

fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)).qr().q()
}

fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let q = random_orthogonal(n, rng);
    let d = DMatrix::from_diagonal(&(0..n).map(|_| rng.gen_range(1.0..50.0)).collect::<Vec<_>>().into());
    let m = &q * d * q.transpose();
    (&m + m.transpose()) * 0.5
}

const INNERS: [Inner; 5] = [Inner::Sum, Inner::Product, Inner::PNorm(2.0), Inner::PNorm(20.0), Inner::PowerSum(2.0)];

fn functionals() -> Vec<FunctionalSpec> {
    vec![
        sum_spec(&[2, 2]),
        spec(&[(2, Inner::Product), (2, Inner::Product)], Outer::Product),
        spec(&[(2, Inner::Product), (2, Inner::PowerSum(2.0))], Outer::Sum),
        spec(&[(2, Inner::PNorm(20.0)), (1, Inner::PNorm(20.0))], Outer::PNorm(20.0)),
        spec(&[(1, Inner::Sum), (2, Inner::PNorm(4.0))], Outer::PowerSum(2.0)),
    ]
}

fn gradients() -> Verdict {
    let disc = square(10);
    let ops = disc.operators();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let specs = functionals();
    let mut energy_err: f64 = 0.0;
    for s in 0..20 {
        let f = &specs[s % specs.len()];
        let q = if s % 2 == 0 { 1.0 } else { 1.5 };
        let state = random_state(&disc, &f.group_sizes(), rng.gen_range(1.0..100.0), q, 100 + s as u64);
        for _ in 0..20 {
            energy_err = energy_err.max(energy_fd_error(&state, f, &ops, &mut rng));
        }
    }

    let mut phi_err: f64 = 0.0;
    for draw in 0..100 {
        let inner = INNERS[draw % INNERS.len()];
        let n = 1 + draw % 4;
        let m = random_spd(n, &mut rng);
        let hdir = random_symmetric(n, &mut rng);
        let g = phi_matrix_grad(&inner, &m).unwrap();
        let analytic = g.component_mul(&hdir).sum();
        let h = 1e-5;
        let fd = (phi_matrix_eval(&inner, &(&m + &hdir * h)).unwrap()
            - phi_matrix_eval(&inner, &(&m - &hdir * h)).unwrap())
            / (2.0 * h);
        let scale = phi_matrix_eval(&inner, &m).unwrap().abs() / m.norm();
        phi_err = phi_err.max((analytic - fd).abs() / analytic.abs().max(scale));
    }

    // at diagonal matrices, including repeated entries, moving off the
    // diagonal does not change φ to first order
    let mut off_diag: f64 = 0.0;
    for draw in 0..50 {
        let inner = INNERS[draw % INNERS.len()];
        let n = 2 + draw % 3;
        let mut d: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..50.0)).collect();
        if draw % 2 == 1 {
            d[1] = d[0];
        }
        let m = DMatrix::from_diagonal(&d.into());
        let g = phi_matrix_grad(&inner, &m).unwrap();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off_diag = off_diag.max(g[(i, j)].abs());
                    let mut e = DMatrix::zeros(n, n);
                    e[(i, j)] = 1.0;
                    e[(j, i)] = 1.0;
                    let h = 1e-4;
                    let fd = (phi_matrix_eval(&inner, &(&m + &e * h)).unwrap()
                        - phi_matrix_eval(&inner, &(&m - &e * h)).unwrap())
                        / (2.0 * h);
                    off_diag = off_diag.max(fd.abs() / phi_matrix_eval(&inner, &m).unwrap().abs());
                }
            }
        }
    }
    verdict(
        energy_err <= 1e-5 && phi_err <= 1e-6 && off_diag <= 1e-10,
        format!("energy FD {energy_err:.1e}, phi FD {phi_err:.1e}, off-diagonal {off_diag:.1e}"),
    )
}

// ---- invariances ----

fn invariances() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut phi: f64 = 0.0;
    for draw in 0..100 {
        let inner = INNERS[draw % INNERS.len()];
        let n = 1 + draw % 4;
        let m = random_spd(n, &mut rng);
        let q = random_orthogonal(n, &mut rng);
        let a = phi_matrix_eval(&inner, &m).unwrap();
        let b = phi_matrix_eval(&inner, &(q.transpose() * &m * &q)).unwrap();
        phi = phi.max(rel(b, a));
    }

    let disc = disk(8);
    let ops = disc.operators();
    let specs = functionals();
    let mut energy: f64 = 0.0;
    let mut idempotence: f64 = 0.0;
    let mut gram: f64 = 0.0;
    for draw in 0..100 {
        let f = &specs[draw % specs.len()];
        let state = random_state(&disc, &f.group_sizes(), rng.gen_range(1.0..1e4), 1.0, 500 + draw as u64);
        let mut turned = state.clone();
        for (i, k) in f.group_sizes().into_iter().enumerate() {
            turned.combine_group(i, &random_orthogonal(k, &mut rng));
        }
        let a = energy_eval(&state, f, &ops).unwrap();
        let b = energy_eval(&turned, f, &ops).unwrap();
        energy = energy.max(rel(b, a));

        let again = retract(&state, &ops).unwrap();
        for (x, y) in state.groups.iter().flatten().zip(again.groups.iter().flatten()) {
            let scale = x.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let d = x.values.iter().zip(&y.values).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            idempotence = idempotence.max(d / scale);
        }
        for group in &state.groups {
            let k = group.len();
            gram = gram.max((mass_gram(group, &ops) - DMatrix::identity(k, k)).abs().max());
        }
    }

    let tables = [
        "trace.csv",
        "domain_eigenvalues.csv",
        "subdomain_eigenvalues.csv",
        "spectral_gap.csv",
        "residuals.csv",
    ];
    let (_, a) = run_preset("square-smoke");
    let (_, b) = run_preset("square-smoke");
    let identical = tables
        .iter()
        .all(|t| std::fs::read(a.path().join(t)).unwrap() == std::fs::read(b.path().join(t)).unwrap());

    verdict(
        phi <= 1e-8 && energy <= 1e-8 && idempotence <= 1e-12 && gram <= 1e-12 && identical,
        format!(
            "phi {phi:.1e}, energy {energy:.1e}, retract {idempotence:.1e}, gram {gram:.1e}, identical CSVs {identical}"
        ),
    )
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, v: Verdict| {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {n:>2} {name}: {}", v.detail);
        if !v.pass {
            failed += 1;
        }
    };
    report(1, "square eigenvalues", square_oracle());
    report(2, "disk eigenvalues", disk_oracle());

    let start = Instant::now();
    let (fig1, _dir1) = run_preset("figure-1");
    let elapsed = start.elapsed();
    report(3, "figure-1 half-disks", figure_1(&fig1, elapsed));
    let (product, _dir2) = run_preset("figure-1-product");
    report(4, "product functional", product_equivalence(&fig1, &product));
    report(5, "extremality condition", extremality(&fig1));
    report(6, "vanishing interaction", vanishing_interaction(&fig1));
    report(7, "upper bound", upper_bound(&fig1));
    report(8, "gradients", gradients());
    report(9, "invariances", invariances());
    report(10, "spectral gap", spectral_gap(&fig1));

    if failed == 0 {
        println!("all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

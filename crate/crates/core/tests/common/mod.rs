#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specpart::energy::GroupState;
use specpart::fem::{Discretization, Field};
use specpart::functional::{FunctionalSpec, GroupSpec, Inner, Outer};
use specpart::mesh::{build_disk_mesh, build_square_mesh};
use specpart::optimizer::retract;

pub fn square(n: usize) -> Discretization {
    Discretization::new(build_square_mesh(n).unwrap()).unwrap()
}

pub fn disk(rings: usize) -> Discretization {
    Discretization::new(build_disk_mesh(rings).unwrap()).unwrap()
}

/// Smooth random fields: random low-order polynomials times a positive
/// profile that vanishes on the boundary.
pub fn random_state(disc: &Discretization, sizes: &[usize], beta: f64, q: f64, seed: u64) -> GroupState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let free = disc.dofs.free();
    let groups = sizes
        .iter()
        .map(|&k| {
            (0..k)
                .map(|_| {
                    let c: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
                    let values = free
                        .iter()
                        .map(|&v| {
                            let [x, y] = disc.mesh.vertices[v];
                            let poly = c[0] + c[1] * x + c[2] * y + c[3] * x * y + c[4] * x * x + c[5] * y * y;
                            poly + 0.05 * rng.gen_range(-1.0..1.0)
                        })
                        .collect();
                    Field::new(values)
                })
                .collect()
        })
        .collect();
    let state = GroupState::new(groups, beta, q).unwrap();
    retract(&state, &disc.operators()).unwrap()
}

pub fn spec(inners: &[(usize, Inner)], outer: Outer) -> FunctionalSpec {
    FunctionalSpec {
        outer,
        groups: inners.iter().map(|&(k, inner)| GroupSpec { k, inner }).collect(),
    }
}

pub fn sum_spec(ks: &[usize]) -> FunctionalSpec {
    spec(&ks.iter().map(|&k| (k, Inner::Sum)).collect::<Vec<_>>(), Outer::Sum)
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

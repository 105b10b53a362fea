mod common;

use common::{disk, random_state, sum_spec};
use nalgebra::DMatrix;
use proptest::prelude::*;
use specpart::energy::{checkpoint_from_str, checkpoint_to_string, energy_eval, mass_gram, GroupState};
use specpart::fem::{assemble_mass, assemble_stiffness, Field};
use specpart::functional::{extremality_coefficients, phi_matrix_eval, FunctionalSpec, GroupSpec, Inner, Outer};
use specpart::mesh::build_rectangle_mesh;
use specpart::optimizer::retract;

fn inner() -> impl Strategy<Value = Inner> {
    prop_oneof![
        Just(Inner::Sum),
        Just(Inner::Product),
        (0.5f64..20.0).prop_map(Inner::PNorm),
        (0.5f64..4.0).prop_map(Inner::PowerSum),
    ]
}

fn outer() -> impl Strategy<Value = Outer> {
    prop_oneof![
        Just(Outer::Sum),
        Just(Outer::Product),
        (0.5f64..4.0).prop_map(Outer::PowerSum),
        (1.0f64..20.0).prop_map(Outer::PNorm),
    ]
}

/// Symmetric positive definite matrix with eigenvalues in [1, 50] and a
/// random orthogonal matrix of the same size.
fn spd_and_rotation(n: usize) -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>)> {
    (
        prop::collection::vec(1.0f64..50.0, n),
        prop::collection::vec(-1.0f64..1.0, n * n),
        prop::collection::vec(-1.0f64..1.0, n * n),
    )
        .prop_map(move |(eig, a, b)| {
            let q1 = DMatrix::from_vec(n, n, a).qr().q();
            let q2 = DMatrix::from_vec(n, n, b).qr().q();
            let m = &q1 * DMatrix::from_diagonal(&eig.into()) * q1.transpose();
            ((&m + m.transpose()) * 0.5, q2)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn phi_is_orthogonally_invariant(inner in inner(), (m, q) in (1usize..5).prop_flat_map(spd_and_rotation)) {
        let a = phi_matrix_eval(&inner, &m).unwrap();
        let b = phi_matrix_eval(&inner, &(q.transpose() * &m * &q)).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn coefficients_are_positive(
        groups in prop::collection::vec((inner(), prop::collection::vec(1.0f64..60.0, 1..4)), 1..4),
        outer in outer(),
    ) {
        let spec = FunctionalSpec {
            outer,
            groups: groups.iter().map(|(inner, ev)| GroupSpec { k: ev.len(), inner: *inner }).collect(),
        };
        let eigenvalues: Vec<Vec<f64>> = groups
            .iter()
            .map(|(_, ev)| { let mut v = ev.clone(); v.sort_by(f64::total_cmp); v })
            .collect();
        let coeffs = extremality_coefficients(&spec, &eigenvalues).unwrap();
        for a in coeffs.iter().flatten() {
            prop_assert!(*a > 0.0 && a.is_finite(), "{coeffs:?}");
        }
    }

    #[test]
    fn assembly_is_symmetric_and_mass_sums_to_area(
        w in 0.3f64..3.0, h in 0.3f64..3.0, nx in 2usize..10, ny in 2usize..10,
    ) {
        let mesh = build_rectangle_mesh(w, h, nx, ny).unwrap();
        let k = assemble_stiffness(&mesh).unwrap();
        let b = assemble_mass(&mesh).unwrap();
        prop_assert!(k.max_asymmetry() <= 1e-14 * k.max_abs());
        prop_assert!(b.max_asymmetry() <= 1e-14 * b.max_abs());
        let total: f64 = b.row_sums().iter().sum();
        prop_assert!((total - w * h).abs() <= 1e-12 * w * h);
        // constants lie in the stiffness kernel before boundary conditions
        let ones = vec![1.0; mesh.n_vertices()];
        prop_assert!(k.matvec(&ones).iter().all(|r| r.abs() <= 1e-12 * k.max_abs()));
    }

    #[test]
    fn checkpoints_round_trip_bit_exactly(
        values in prop::collection::vec(
            prop_oneof![
                any::<f64>().prop_filter("finite", |x| x.is_finite()),
                Just(0.0), Just(-0.0), Just(f64::MIN_POSITIVE), Just(5e-324), Just(f64::MAX),
            ],
            6..=6,
        ),
        beta in 1e-3f64..1e9,
    ) {
        let groups = vec![
            vec![Field::new(values[..3].to_vec())],
            vec![Field::new(values[3..].to_vec())],
        ];
        let state = GroupState::new(groups, beta, 1.0).unwrap();
        let (back, hash) = checkpoint_from_str(&checkpoint_to_string(&state, "0123456789abcdef")).unwrap();
        prop_assert_eq!(hash, "0123456789abcdef");
        for (x, y) in state.groups.iter().flatten().zip(back.groups.iter().flatten()) {
            for (a, b) in x.values.iter().zip(&y.values) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        prop_assert_eq!(back.beta.to_bits(), beta.to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn retraction_orthonormalizes(seed in any::<u64>(), k0 in 1usize..4, k1 in 1usize..3) {
        let disc = disk(6);
        let ops = disc.operators();
        let state = random_state(&disc, &[k0, k1], 5.0, 1.0, seed);
        let again = retract(&state, &ops).unwrap();
        for (x, y) in state.groups.iter().flatten().zip(again.groups.iter().flatten()) {
            let d = x.values.iter().zip(&y.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(d < 1e-10, "retraction moved an orthonormal state by {d}");
        }
        for group in &state.groups {
            let gram = mass_gram(group, &ops);
            let err = (gram - DMatrix::identity(group.len(), group.len())).abs().max();
            prop_assert!(err < 1e-12, "{err}");
        }
    }

    #[test]
    fn energy_is_invariant_under_group_rotations(seed in any::<u64>(), angle in 0.0f64..6.3) {
        let disc = disk(6);
        let ops = disc.operators();
        let spec = sum_spec(&[2, 1]);
        let state = random_state(&disc, &[2, 1], 50.0, 1.0, seed);
        let (c, s) = (angle.cos(), angle.sin());
        let mut turned = state.clone();
        turned.combine_group(0, &DMatrix::from_row_slice(2, 2, &[c, -s, s, c]));
        let a = energy_eval(&state, &spec, &ops).unwrap();
        let b = energy_eval(&turned, &spec, &ops).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs(), "{a} vs {b}");
    }
}

use exitgrid::benchmarks::builtin;
use exitgrid::export::{read_exgf, rle_decode, rle_encode, write_exgf};
use exitgrid::hamiltonian::{hamiltonian, horizontal_hamiltonian};
use exitgrid::regularity::{check_pointedness, cone_hausdorff_deg, min_norm_point, SingularMasks, RegularityOptions};
use exitgrid::vecops::{dot, norm};
use exitgrid::{build_grid, solve_value, Expr, NodeStatus, SolveOptions, ValueField};
use proptest::prelude::*;
use std::sync::OnceLock;

fn unit(a: f64) -> Vec<f64> {
    vec![a.cos(), a.sin()]
}

proptest! {
    #[test]
    fn ravel_unravel_round_trip(n1 in 3usize..20, n2 in 3usize..20, n3 in 3usize..8, k in 0usize..10_000) {
        let g = build_grid(&[[0.0, 1.0], [-1.0, 1.0], [2.0, 3.0]], &[n1, n2, n3]).unwrap();
        let k = k % g.len();
        prop_assert_eq!(g.ravel(&g.unravel(k)), k);
        prop_assert!(g.contains(&g.node(k)));
    }

    #[test]
    fn interpolation_reproduces_bilinear(a in -2.0..2.0f64, b in -2.0..2.0f64, c in -2.0..2.0f64, x in -1.0..1.0f64, y in 0.0..2.0f64) {
        let g = build_grid(&[[-1.0, 1.0], [0.0, 2.0]], &[7, 9]).unwrap();
        let f = |p: &[f64]| a * p[0] + b * p[1] + c * p[0] * p[1];
        let field = ValueField::from_fn(g, f);
        let v = field.interpolate(&[x, y]).unwrap();
        prop_assert!((v - f(&[x, y])).abs() <= 1e-12);
    }

    #[test]
    fn expression_arithmetic_matches_rust(x in -3.0..3.0f64, u in -3.0..3.0f64) {
        let e = Expr::parse("2*x1^2 - sin(u1)/(1 + x1^2) + abs(x1 - u1)").unwrap();
        let want = 2.0 * x * x - u.sin() / (1.0 + x * x) + (x - u).abs();
        prop_assert!((e.eval(&[x], &[u]).unwrap() - want).abs() <= 1e-12);
    }

    #[test]
    fn hamiltonian_dominates_every_control(x1 in -1.5..1.5f64, x2 in -1.5..1.5f64, q1 in -2.0..2.0f64, q2 in -2.0..2.0f64) {
        let p = builtin("GEN").unwrap().problem;
        let (x, q) = ([x1, x2], [q1, q2]);
        let h = hamiltonian(&p, &x, &q).unwrap();
        let h0 = horizontal_hamiltonian(&p, &x, &q).unwrap();
        for w in &p.controls {
            let f = p.eval_dynamics(&x, w).unwrap();
            let r = p.eval_running_cost(&x, w).unwrap();
            prop_assert!(h.value >= -dot(&q, &f) - r - 1e-12);
            prop_assert!(h0.value >= -dot(&q, &f) - 1e-12);
        }
        prop_assert!(!h.argmax.is_empty());
    }

    #[test]
    fn rle_round_trip(bits in proptest::collection::vec(any::<bool>(), 0..200)) {
        let runs = rle_encode(&bits);
        prop_assert_eq!(rle_decode(&runs, bits.len()).unwrap(), bits);
    }

    #[test]
    fn min_norm_point_is_no_longer_than_any_generator(angles in proptest::collection::vec(0.0..std::f64::consts::TAU, 1..6)) {
        let gens: Vec<Vec<f64>> = angles.iter().map(|&a| unit(a)).collect();
        let m = min_norm_point(&gens, 200);
        for g in &gens {
            prop_assert!(norm(&m) <= norm(g) + 1e-9);
        }
    }

    #[test]
    fn pointed_inside_open_half_plane(base in 0.0..std::f64::consts::TAU, spread in proptest::collection::vec(-1.4..1.4f64, 1..5)) {
        let gens: Vec<Vec<f64>> = spread.iter().map(|s| unit(base + s)).collect();
        prop_assert!(check_pointedness(&gens).0);
    }

    #[test]
    fn cone_distance_is_symmetric_and_zero_on_itself(a in proptest::collection::vec(0.0..1.5f64, 1..4), b in proptest::collection::vec(0.0..1.5f64, 1..4)) {
        let ga: Vec<Vec<f64>> = a.iter().map(|&t| unit(t)).collect();
        let gb: Vec<Vec<f64>> = b.iter().map(|&t| unit(t)).collect();
        prop_assert!(cone_hausdorff_deg(&ga, &ga) <= 1e-6);
        prop_assert!((cone_hausdorff_deg(&ga, &gb) - cone_hausdorff_deg(&gb, &ga)).abs() <= 1e-9);
    }
}

fn exa_field() -> &'static ValueField {
    static F: OnceLock<ValueField> = OnceLock::new();
    F.get_or_init(|| {
        let p = builtin("EXA").unwrap().problem;
        solve_value(&p, &build_grid(&p.domain, &[101, 86]).unwrap(), &SolveOptions::default()).unwrap()
    })
}

#[test]
fn non_lipschitz_mask_is_inside_singular_mask() {
    let f = exa_field();
    let m = SingularMasks::detect(f, &RegularityOptions::default());
    assert!(m.sigma_v_inf.iter().any(|&b| b));
    assert!(m.sigma_v_inf.iter().zip(&m.sigma_v).all(|(i, s)| !i || *s));
}

#[test]
fn solved_values_are_nonnegative_and_zero_on_target() {
    let f = exa_field();
    for k in 0..f.grid.len() {
        match f.status[k] {
            NodeStatus::Target => assert_eq!(f.values[k], 0.0),
            _ => assert!(f.values[k] >= 0.0),
        }
    }
}

#[test]
fn exgf_round_trip_of_solved_field() {
    let f = exa_field();
    let mut buf = Vec::new();
    write_exgf(f, &mut buf).unwrap();
    let g = read_exgf(&mut buf.as_slice()).unwrap();
    assert_eq!(g.values, f.values);
    assert_eq!(g.status, f.status);
    assert_eq!(g.grid, f.grid);
}

#[test]
fn jacobi_and_gauss_seidel_agree() {
    let p = builtin("EIK16").unwrap().problem;
    let g = build_grid(&p.domain, &[41, 41]).unwrap();
    let gs = solve_value(&p, &g, &SolveOptions::default()).unwrap();
    let opts = SolveOptions { mode: exitgrid::SweepMode::Jacobi, max_sweeps: 2000, ..SolveOptions::default() };
    let ja = solve_value(&p, &g, &opts).unwrap();
    assert!(ja.stats.converged);
    let diff = gs.values.iter().zip(&ja.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff <= 1e-6, "{diff}");
}

//! End-to-end runs through the public API on the built-in problems.

use exitgrid::arcs::*;
use exitgrid::benchmarks::builtin;
use exitgrid::regularity::*;
use exitgrid::grid::dilate;
use exitgrid::solver::{hjb_residual_field, residual_exclusion};
use exitgrid::{build_grid, parse_problem, solve_value, validate_hypotheses, ControlProblem, NodeStatus, SolveOptions, ValueField};
use std::sync::OnceLock;

fn solved(name: &str, n: &[usize]) -> (ControlProblem, ValueField) {
    let p = builtin(name).unwrap().problem;
    let f = solve_value(&p, &build_grid(&p.domain, n).unwrap(), &SolveOptions::default()).unwrap();
    (p, f)
}

fn eik() -> &'static (ControlProblem, ValueField) {
    static F: OnceLock<(ControlProblem, ValueField)> = OnceLock::new();
    F.get_or_init(|| solved("EIK64", &[161, 161]))
}

fn exa() -> &'static (ControlProblem, ValueField) {
    static F: OnceLock<(ControlProblem, ValueField)> = OnceLock::new();
    F.get_or_init(|| solved("EXA", &[201, 171]))
}

#[test]
fn values_at_reference_points() {
    let (_, e) = eik();
    assert!((e.interpolate(&[1.5, 0.0]).unwrap() - 0.5).abs() <= 0.03);
    let (_, a) = exa();
    assert!((a.interpolate(&[0.5, 1.0]).unwrap() - (2f64.sqrt() - 0.5)).abs() <= 0.05);
    assert!((a.interpolate(&[0.0, 0.0]).unwrap() - 1.0).abs() <= 0.05);
}

#[test]
fn gradients_at_reference_points() {
    let (_, e) = eik();
    let g = e.numeric_gradient(&[1.5, 0.0]).unwrap().central;
    assert!((g[0] - 1.0).abs() <= 0.05 && g[1].abs() <= 0.05);
    let (_, a) = exa();
    let g = a.numeric_gradient(&[0.5, 1.0]).unwrap().central;
    assert!((g[0] + 1.0).abs() <= 0.05 && (g[1] - 1.0 / (6.0 * 2f64.sqrt())).abs() <= 0.05, "{g:?}");
}

#[test]
fn residuals_small_where_value_is_lipschitz() {
    let (p, e) = eik();
    let r = hjb_residual_field(p, e, None, 0.9);
    assert!(r.count > 0 && r.linf <= 0.1, "{}", r.linf);
    let (p, a) = exa();
    let band = dilate(&a.grid, &detect_nonlipschitz_set(a, 1.0), 2);
    let r = hjb_residual_field(p, a, Some(&band), 0.9);
    assert!(r.linf <= 0.2, "{}", r.linf);
    assert_eq!(residual_exclusion(a).len(), a.grid.len());
}

#[test]
fn sublevel_set_is_a_disk() {
    let (_, e) = eik();
    let m = e.sublevel_mask(0.5);
    let h = e.grid.max_spacing();
    for k in 0..e.grid.len() {
        let r = exitgrid::vecops::norm(&e.grid.node(k));
        if r <= 1.5 - h {
            assert!(m[k]);
        }
        if r >= 1.5 + h {
            assert!(!m[k]);
        }
    }
}

#[test]
fn synthesis_reference_costs() {
    let (p, e) = eik();
    let t = forward_synthesis(p, e, &[1.5, 0.0], 0.5 * e.grid.min_spacing(), 100_000).unwrap();
    assert!((t.cost - 0.5).abs() <= 0.05);
    assert!((t.exit_point[0] - 1.0).abs() <= 0.02);
    let (p, f) = solved("EXB", &[201, 171]);
    let t = forward_synthesis(&p, &f, &[-1.0, 0.0], 0.5 * f.grid.min_spacing(), 100_000).unwrap();
    assert!((t.cost - 1.0).abs() <= 0.05, "{}", t.cost);
}

#[test]
fn transported_normals_reference_points() {
    let (p, e) = eik();
    let step = 0.5 * e.grid.min_spacing();
    let tn = transported_normals(p, e, &[1.5, 0.0], step, 100_000).unwrap();
    assert!(tn.n0.is_empty());
    assert!(tn.n1.iter().all(|q| (q[0] - 1.0).abs() <= 0.02 && q[1].abs() <= 0.05), "{:?}", tn.n1);

    let (p, a) = exa();
    let step = 0.5 * a.grid.min_spacing();
    let tn = transported_normals(p, a, &[0.0, 0.5], step, 100_000).unwrap();
    assert_eq!(tn.n1.len(), 2);
    assert!((tn.n1[0][0] + tn.n1[1][0]).abs() <= 1e-6 && (tn.n1[0][1] - tn.n1[1][1]).abs() <= 1e-6);
    let tn = transported_normals(p, a, &[0.5, 0.0], step, 100_000).unwrap();
    assert_eq!(tn.n0.len(), 1);
    assert!(tn.n0[0][0].abs() <= 1e-9 && (tn.n0[0][1] - 1.0).abs() <= 1e-9);
}

#[test]
fn radial_arc_is_certified() {
    let (p, e) = eik();
    let td = terminal_data(p, &[1.0, 0.0], None).unwrap();
    let arc = backward_extremal(p, &td, 0.8, 1e-3).unwrap();
    // The arc runs from y(0) = (1.8, 0) to the target with control (-1, 0).
    assert!((arc.y[0][0] - 1.8).abs() <= 1e-9);
    let n = arc.len();
    let y = arc.y.clone();
    let pc = arc.p.clone();
    let traj = Trajectory {
        t: arc.t.clone(),
        y: y.clone(),
        u: vec![vec![-1.0, 0.0]; n - 1],
        u_index: vec![None; n - 1],
        cost: 0.8,
        exit_point: y[n - 1].clone(),
    };
    let cert = certify_optimality(p, e, &traj, Some(&pc), &CertifyOptions::default()).unwrap();
    assert_eq!(cert.verdict, Verdict::Certified, "{cert:?}");
    assert!(!cert.checked.is_empty());
}

#[test]
fn detection_on_reference_problems() {
    let (_, e) = eik();
    let m = detect_nonlipschitz_set(e, 1.0);
    assert!(!m.iter().any(|&b| b));
    let (_, a) = exa();
    let s = detect_singular_set(a, 0.5, 1.0);
    let kink = a.grid.nearest(&[0.0, 0.8]).unwrap();
    assert!(s[kink]);
    let smooth = a.grid.nearest(&[0.7, 0.8]).unwrap();
    assert!(!s[smooth]);
}

#[test]
fn representation_at_reference_points() {
    let opts = RegularityOptions::default();
    let (p, e) = eik();
    let masks = SingularMasks::detect(e, &opts);
    let rep = compare_representation(p, e, &masks, &[1.5, 0.0], &opts).unwrap();
    assert!(rep.pointed && rep.distance_p_deg <= 3.0 && rep.distance_inf_deg <= 3.0);
    let (p, a) = exa();
    let masks = SingularMasks::detect(a, &opts);
    let rep = compare_representation(p, a, &masks, &[0.0, 0.5], &opts).unwrap();
    assert!(rep.pointed && rep.distance_p_deg <= 10.0, "{}", rep.distance_p_deg);
    let (diff, _) = check_hypograph_differentiability(&rep.fan, opts.diff_tol_deg);
    assert!(!diff);
}

#[test]
fn inline_problem_matches_builtin() {
    let text = r#"
[problem]
name = "disk"
d = 2
m = 2
f = ["u1", "u2"]
r = "1"
g = "0"
h = "x1^2 + x2^2 - 1"
controls = { shape = "sphere", count = 64 }
domain = [[-2.0, 2.0], [-2.0, 2.0]]
constants = { N = 1.001, r0 = 1.0, G = 0.0, rho0 = 1.0 }
"#;
    let p = parse_problem(text).unwrap();
    assert!(validate_hypotheses(&p, 200, 1).all_pass());
    let f = solve_value(&p, &build_grid(&p.domain, &[81, 81]).unwrap(), &SolveOptions::default()).unwrap();
    let (q, g) = solved("EIK64", &[81, 81]);
    assert_eq!(p.controls.len(), q.controls.len());
    let diff = f.values.iter().zip(&g.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff <= 1e-9, "{diff}");
    assert_eq!(f.count(NodeStatus::Target), g.count(NodeStatus::Target));
}

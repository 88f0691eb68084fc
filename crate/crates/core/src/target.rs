//! Geometry of the target `S = {h <= 0}`.

use crate::error::{Error, Result};
use crate::problem::{sphere_controls, ControlProblem};
use crate::vecops::{axpy, dist, dot, norm, scale, sub};
use serde::{Deserialize, Serialize};

/// Tolerance on `|h|` for a point to count as on the boundary.
pub const TOL_B: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryClass {
    N0,
    N1,
    Unreachable,
}

impl BoundaryClass {
    pub fn label(self) -> &'static str {
        match self {
            BoundaryClass::N0 => "N0",
            BoundaryClass::N1 => "N1",
            BoundaryClass::Unreachable => "UNREACHABLE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub x: Vec<f64>,
    /// Unit normal pointing into the target.
    pub xi: Vec<f64>,
    pub margin: f64,
    pub class: BoundaryClass,
}

/// Margin tolerance separating tangential from transversal normals.
pub fn tol_m(p: &ControlProblem) -> f64 {
    1e-6 * p.constants.speed
}

pub fn proximal_normal(p: &ControlProblem, x: &[f64]) -> Result<Vec<f64>> {
    let g = p.eval_level_gradient(x)?;
    let n = norm(&g);
    if !(n > 1e-14) {
        return Err(Error::VanishingGradient(x.to_vec()));
    }
    Ok(scale(&g, -1.0 / n))
}

pub fn classify_boundary(p: &ControlProblem, x: &[f64], xi: &[f64]) -> Result<(f64, BoundaryClass)> {
    let mut margin = f64::NEG_INFINITY;
    for w in &p.controls {
        margin = margin.max(dot(xi, &p.eval_dynamics(x, w)?));
    }
    let tol = tol_m(p);
    let class = if margin > tol {
        BoundaryClass::N1
    } else if margin >= -tol {
        BoundaryClass::N0
    } else {
        BoundaryClass::Unreachable
    };
    Ok((margin, class))
}

/// Builds the boundary record at a point already on the boundary.
pub fn boundary_point(p: &ControlProblem, x: &[f64]) -> Result<BoundaryPoint> {
    let xi = proximal_normal(p, x)?;
    let (margin, class) = classify_boundary(p, x, &xi)?;
    Ok(BoundaryPoint { x: x.to_vec(), xi, margin, class })
}

/// Damped Newton projection onto `{h = 0}`.
pub fn project_to_boundary(p: &ControlProblem, x0: &[f64]) -> Result<BoundaryPoint> {
    let mut x = x0.to_vec();
    let mut hx = p.eval_level(&x)?;
    for _ in 0..100 {
        if hx.abs() <= TOL_B {
            return boundary_point(p, &x);
        }
        let g = p.eval_level_gradient(&x)?;
        let g2 = dot(&g, &g);
        if !(g2 > 1e-28) {
            return Err(Error::VanishingGradient(x));
        }
        let step = scale(&g, -hx / g2);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = axpy(&x, t, &step);
            if let Ok(hc) = p.eval_level(&cand) {
                if hc.abs() < hx.abs() {
                    x = cand;
                    hx = hc;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if hx.abs() <= TOL_B {
        return boundary_point(p, &x);
    }
    Err(Error::NoConvergence(100))
}

fn unit_directions(d: usize, count: usize) -> Vec<Vec<f64>> {
    if let Ok(v) = sphere_controls(d, count) {
        return v;
    }
    let mut out = Vec::new();
    for i in 0..d {
        for s in [1.0, -1.0] {
            let mut e = vec![0.0; d];
            e[i] = s;
            out.push(e);
        }
    }
    out
}

/// Sampled inner-ball radius at a boundary point. Samples lie on a fixed
/// geometric ladder of radii, so the estimate can only shrink as
/// `search_radius` grows.
pub fn inner_ball_radius(p: &ControlProblem, bp: &BoundaryPoint, search_radius: f64, n_samples: usize) -> f64 {
    let dirs = unit_directions(p.d, n_samples.max(4));
    let mut best = f64::INFINITY;
    let mut r = 1e-3;
    while r <= search_radius {
        for e in &dirs {
            let y = axpy(&bp.x, r, e);
            let s = dot(&bp.xi, &scale(e, r));
            if s <= 0.0 {
                continue;
            }
            if let Ok(hy) = p.eval_level(&y) {
                if hy >= 0.0 {
                    best = best.min(r * r / (2.0 * s));
                }
            }
        }
        r *= 1.15;
    }
    best
}

/// Boundary samples: grid edges of an `n_per_axis` mesh of the domain across
/// which `h` changes sign are Newton-projected, duplicates merged, and
/// tangential points between samples refined.
pub fn boundary_samples(p: &ControlProblem, n_per_axis: usize) -> Vec<BoundaryPoint> {
    let n = n_per_axis.max(3);
    let d = p.d;
    let spacing: Vec<f64> = p.domain.iter().map(|[lo, hi]| (hi - lo) / (n - 1) as f64).collect();
    let total = n.pow(d as u32);
    let coord = |idx: usize| -> Vec<f64> {
        let mut rem = idx;
        let mut c = vec![0.0; d];
        for a in (0..d).rev() {
            let i = rem % n;
            rem /= n;
            let [lo, hi] = p.domain[a];
            let t = i as f64 / (n - 1) as f64;
            c[a] = lo * (1.0 - t) + hi * t;
        }
        c
    };
    let hv: Vec<Option<f64>> = (0..total).map(|k| p.eval_level(&coord(k)).ok()).collect();
    let mut starts = Vec::new();
    for k in 0..total {
        let Some(hk) = hv[k] else { continue };
        let mut stride = 1;
        let mut rem = k;
        for _ in (0..d).rev() {
            let i = rem % n;
            rem /= n;
            if i + 1 < n {
                if let Some(hn) = hv[k + stride] {
                    if hk * hn <= 0.0 {
                        starts.push(if hk.abs() <= hn.abs() { k } else { k + stride });
                    }
                }
            }
            stride *= n;
        }
    }
    starts.sort_unstable();
    starts.dedup();
    let min_sp = spacing.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut out: Vec<BoundaryPoint> = Vec::new();
    for k in starts {
        if let Ok(bp) = project_to_boundary(p, &coord(k)) {
            if p.in_box(&bp.x, 1e-12) && out.iter().all(|q| dist(&q.x, &bp.x) > 0.25 * min_sp) {
                out.push(bp);
            }
        }
    }
    let extra = refine_tangential_points(p, &out, min_sp);
    for bp in extra {
        if out.iter().all(|q| dist(&q.x, &bp.x) > 1e-6 || q.class != BoundaryClass::N0) {
            out.push(bp);
        }
    }
    out
}

fn point_on_segment(p: &ControlProblem, a: &[f64], b: &[f64], s: f64) -> Option<BoundaryPoint> {
    let x = axpy(a, s, &sub(b, a));
    project_to_boundary(p, &x).ok()
}

/// Locates zero-margin points between neighbouring samples, both where the
/// margin changes sign and where it touches zero at a local minimum of its
/// magnitude.
pub fn refine_tangential_points(p: &ControlProblem, samples: &[BoundaryPoint], spacing: f64) -> Vec<BoundaryPoint> {
    let tol = tol_m(p);
    let reach = 2.5 * spacing;
    let mut found: Vec<BoundaryPoint> = Vec::new();
    let push = |bp: BoundaryPoint, found: &mut Vec<BoundaryPoint>| {
        if bp.class == BoundaryClass::N0 && found.iter().all(|q| dist(&q.x, &bp.x) > 0.5 * spacing) {
            found.push(bp);
        }
    };
    for (i, a) in samples.iter().enumerate() {
        let neighbours: Vec<usize> = (0..samples.len())
            .filter(|&j| j != i && dist(&samples[j].x, &a.x) <= reach)
            .collect();
        for &j in &neighbours {
            let b = &samples[j];
            if j > i && a.margin > tol && b.margin < -tol || a.margin < -tol && b.margin > tol && j > i {
                let (mut lo, mut hi) = (0.0, 1.0);
                let sign_lo = a.margin.signum();
                let mut last = None;
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    let Some(bp) = point_on_segment(p, &a.x, &b.x, mid) else { break };
                    if bp.margin.signum() == sign_lo && bp.margin.abs() > tol {
                        lo = mid;
                    } else if bp.margin.abs() <= tol {
                        last = Some(bp);
                        break;
                    } else {
                        hi = mid;
                    }
                    last = Some(bp);
                }
                if let Some(bp) = last {
                    push(bp, &mut found);
                }
            }
        }
        let am = a.margin.abs();
        if am <= tol || am > 0.05 * p.constants.speed {
            continue;
        }
        if neighbours.iter().any(|&j| samples[j].margin.abs() < am) {
            continue;
        }
        for &j in &neighbours {
            // Golden-section search for the smallest |margin| on the segment.
            let b = &samples[j];
            let g = 0.5 * (5f64.sqrt() - 1.0);
            let f = |s: f64| point_on_segment(p, &a.x, &b.x, s).map(|bp| bp.margin.abs()).unwrap_or(f64::INFINITY);
            let (mut lo, mut hi) = (0.0, 1.0);
            let mut c = hi - g * (hi - lo);
            let mut d = lo + g * (hi - lo);
            let (mut fc, mut fd) = (f(c), f(d));
            for _ in 0..80 {
                if fc < fd {
                    hi = d;
                    d = c;
                    fd = fc;
                    c = hi - g * (hi - lo);
                    fc = f(c);
                } else {
                    lo = c;
                    c = d;
                    fc = fd;
                    d = lo + g * (hi - lo);
                    fd = f(d);
                }
            }
            if let Some(bp) = point_on_segment(p, &a.x, &b.x, 0.5 * (lo + hi)) {
                push(bp, &mut found);
            }
        }
    }
    found
}

/// Smallest sampled margin over the boundary; the Petrov condition holds when
/// it is positive.
pub fn petrov_check(p: &ControlProblem, n_boundary_samples: usize) -> (f64, bool) {
    let samples = boundary_samples(p, n_boundary_samples);
    let mu = samples.iter().map(|b| b.margin).fold(f64::INFINITY, f64::min);
    (mu, mu > tol_m(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::builtin;
    use crate::problem::parse_problem;

    fn half_space() -> ControlProblem {
        parse_problem(
            "d = 2\nm = 2\nf = [\"u1\", \"u2\"]\nr = \"1\"\ng = \"0\"\nh = \"x1\"\ncontrols = { shape = \"sphere\", count = 8 }\ndomain = [[-2,2],[-2,6]]\n[constants]\nN = 1.001\nr0 = 1\nG = 0\nrho0 = 1\n",
        )
        .unwrap()
    }

    #[test]
    fn radial_projection() {
        let p = builtin("EIK64").unwrap().problem;
        let bp = project_to_boundary(&p, &[2.0, 0.0]).unwrap();
        assert!((bp.x[0] - 1.0).abs() < 1e-10 && bp.x[1].abs() < 1e-12);
        assert!((bp.xi[0] + 1.0).abs() < 1e-12);
        assert_eq!(bp.class, BoundaryClass::N1);
        assert!((bp.margin - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flat_projection() {
        let p = half_space();
        let bp = project_to_boundary(&p, &[-1.0, 5.0]).unwrap();
        assert!(bp.x[0].abs() <= 1e-10 && bp.x[1] == 5.0);
        assert!((bp.xi[0] + 1.0).abs() < 1e-12 && bp.xi[1].abs() < 1e-12);
        assert!(inner_ball_radius(&p, &bp, 1.0, 32).is_infinite());
    }

    #[test]
    fn exa_projection_lands_on_boundary() {
        let p = builtin("EXA").unwrap().problem;
        let bp = project_to_boundary(&p, &[1.0, 0.2]).unwrap();
        assert!(p.eval_level(&bp.x).unwrap().abs() <= TOL_B);
    }

    #[test]
    fn exa_normals_and_margins() {
        let p = builtin("EXA").unwrap().problem;
        let xi = proximal_normal(&p, &[1.0, 0.0]).unwrap();
        assert_eq!(xi, vec![-0.0, -1.0]);
        let (m, c) = classify_boundary(&p, &[1.0, 0.0], &xi).unwrap();
        assert_eq!(m, 0.0);
        assert_eq!(c, BoundaryClass::N0);
        let x = [2f64.sqrt(), 1.0];
        let xi = proximal_normal(&p, &x).unwrap();
        let s73 = 73f64.sqrt();
        assert!((xi[0] - 6.0 * 2f64.sqrt() / s73).abs() < 1e-12);
        assert!((xi[1] + 1.0 / s73).abs() < 1e-12);
        let (m, c) = classify_boundary(&p, &x, &xi).unwrap();
        assert!((m - 6.0 * 2f64.sqrt() / s73).abs() < 1e-12);
        assert_eq!(c, BoundaryClass::N1);
        let eik = builtin("EIK64").unwrap().problem;
        let xi = proximal_normal(&eik, &[0.0, 1.0]).unwrap();
        assert!(xi[0].abs() < 1e-15 && (xi[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn inner_ball_of_disk() {
        let p = builtin("EIK64").unwrap().problem;
        let bp = boundary_point(&p, &[1.0, 0.0]).unwrap();
        let rho = inner_ball_radius(&p, &bp, 0.5, 64);
        assert!(rho >= 1.0 - 1e-3, "{rho}");
        assert!(rho.is_finite());
    }

    #[test]
    fn inner_ball_exa_finite() {
        let p = builtin("EXA").unwrap().problem;
        let bp = boundary_point(&p, &[1.0, 0.0]).unwrap();
        let rho = inner_ball_radius(&p, &bp, 0.5, 64);
        assert!(rho.is_finite() && rho > 0.0, "{rho}");
    }

    #[test]
    fn vanishing_gradient_is_reported() {
        let p = parse_problem(
            "d = 2\nm = 2\nf = [\"u1\", \"u2\"]\nr = \"1\"\ng = \"0\"\nh = \"x1^2 + x2^2 + 1\"\ncontrols = [[1.0, 0.0]]\ndomain = [[-2,2],[-2,2]]\n[constants]\nN = 2\nr0 = 1\nG = 0\nrho0 = 1\n",
        )
        .unwrap();
        assert!(matches!(project_to_boundary(&p, &[0.0, 0.0]), Err(Error::VanishingGradient(_))));
    }

    #[test]
    fn petrov_examples() {
        let (mu, holds) = petrov_check(&builtin("EIK64").unwrap().problem, 41);
        // Worst boundary direction sits halfway between two of the 64 velocities.
        let worst = (std::f64::consts::PI / 64.0).cos();
        assert!(holds && mu >= worst - 1e-9 && mu <= 1.0 + 1e-12, "{mu}");
        let (mu, holds) = petrov_check(&builtin("EXA").unwrap().problem, 41);
        assert!(!holds && mu.abs() <= 1e-3, "{mu}");
        let (mu, holds) = petrov_check(&builtin("EXB").unwrap().problem, 41);
        assert!(!holds && mu.abs() <= 1e-3, "{mu}");
    }

    #[test]
    fn exa_tangential_points_found_off_grid() {
        // 40 nodes per axis do not contain x1 = +-1.
        let p = builtin("EXA").unwrap().problem;
        let samples = boundary_samples(&p, 40);
        let n0: Vec<_> = samples.iter().filter(|b| b.class == BoundaryClass::N0).collect();
        for target in [[1.0, 0.0], [-1.0, 0.0]] {
            assert!(n0.iter().any(|b| dist(&b.x, &target) < 1e-2), "{target:?} missing");
        }
    }
}

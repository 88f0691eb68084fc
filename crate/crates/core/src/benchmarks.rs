//! Built-in problems and their analytic value functions.

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::{build_grid, dilate, NodeStatus, ValueField};
use crate::problem::{interval_controls, sphere_controls, Constants, ControlProblem};
use crate::solver::{solve_value, SolveOptions};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::time::Instant;

pub const NAMES: [&str; 7] = ["EIK16", "EIK64", "EIK3D", "EXA", "EXB", "GEN", "RGEN"];

pub type ScalarFn = fn(&[f64]) -> f64;
pub type VectorFn = fn(&[f64]) -> Vec<f64>;

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub name: String,
    pub problem: ControlProblem,
    pub oracle: Option<ScalarFn>,
    pub oracle_gradient: Option<VectorFn>,
    /// Region where the oracle is valid.
    pub oracle_region: Option<fn(&[f64]) -> bool>,
    /// Half-width of the band around `x2 = 0` excluded from error norms.
    pub band: Option<f64>,
    pub notes: &'static str,
}

fn ex(s: &str) -> Expr {
    Expr::parse(s).expect("builtin expression")
}

fn exs(v: &[&str]) -> Vec<Expr> {
    v.iter().map(|s| ex(s)).collect()
}

fn zeros(d: usize) -> Vec<Vec<Expr>> {
    vec![exs(&vec!["0"; d]); d]
}

fn eikonal(name: &str, d: usize, count: usize) -> Result<Benchmark> {
    let vars: Vec<String> = (1..=d).map(|k| format!("u{k}")).collect();
    let h = (1..=d).map(|k| format!("x{k}^2")).collect::<Vec<_>>().join(" + ") + " - 1";
    let dh: Vec<String> = (1..=d).map(|k| format!("2*x{k}")).collect();
    let problem = ControlProblem {
        name: name.into(),
        d,
        m: d,
        f: vars.iter().map(|s| ex(s)).collect(),
        df: Some(zeros(d)),
        r: ex("1"),
        dr: Some(exs(&vec!["0"; d])),
        g: ex("0"),
        dg: Some(exs(&vec!["0"; d])),
        h: ex(&h),
        dh: Some(dh.iter().map(|s| ex(s)).collect()),
        controls: sphere_controls(d, count)?,
        domain: vec![[-2.0, 2.0]; d],
        constants: Constants { speed: 1.001, r0: 1.0, g_lip: 0.0, rho0: 1.0 },
    };
    Ok(Benchmark {
        name: name.into(),
        problem,
        oracle: Some(|x| crate::vecops::norm(x) - 1.0),
        oracle_gradient: Some(|x| crate::vecops::scale(x, 1.0 / crate::vecops::norm(x))),
        oracle_region: Some(|x| crate::vecops::norm(x) >= 1.0),
        band: None,
        notes: "minimum time to the unit ball with unit speed; smooth value, Petrov condition holds",
    })
}

fn double_well(name: &str, controls: Vec<Vec<f64>>, m: usize) -> ControlProblem {
    let f = if m == 1 { exs(&["u1", "0"]) } else { exs(&["u1", "u2"]) };
    ControlProblem {
        name: name.into(),
        d: 2,
        m,
        f,
        df: Some(zeros(2)),
        r: ex("1"),
        dr: Some(exs(&["0", "0"])),
        g: ex("0"),
        dg: Some(exs(&["0", "0"])),
        h: ex("x2 - (x1^2 - 1)^3"),
        dh: Some(exs(&["-6*x1*(x1^2 - 1)^2", "1"])),
        controls,
        domain: vec![[-2.0, 2.0], [-0.5, 1.5]],
        constants: Constants { speed: 1.001, r0: 1.0, g_lip: 0.0, rho0: 0.05 },
    }
}

fn exa_value(x: &[f64]) -> f64 {
    (1.0 + x[1].cbrt()).sqrt() - x[0].abs()
}

fn exa_gradient(x: &[f64]) -> Vec<f64> {
    let a = (1.0 + x[1].cbrt()).sqrt();
    vec![-x[0].signum(), 1.0 / (6.0 * a * x[1].abs().powf(2.0 / 3.0))]
}

fn rgen_value(x: &[f64]) -> f64 {
    (1.0 + x[1].cbrt()).sqrt() - x[0]
}

fn rgen_gradient(x: &[f64]) -> Vec<f64> {
    let a = (1.0 + x[1].cbrt()).sqrt();
    vec![-1.0, 1.0 / (6.0 * a * x[1].abs().powf(2.0 / 3.0))]
}

fn exb_value(x: &[f64]) -> f64 {
    x[1].signum() * x[1].abs().powf(0.6) - x[0]
}

fn exb_gradient(x: &[f64]) -> Vec<f64> {
    vec![-1.0, 0.6 * x[1].abs().powf(-0.4)]
}

fn outside_double_well(x: &[f64]) -> bool {
    x[1] > -1.0 && x[1] - (x[0] * x[0] - 1.0).powi(3) > 0.0
}

pub fn builtin(name: &str) -> Result<Benchmark> {
    match name {
        "EIK16" => eikonal(name, 2, 16),
        "EIK64" => eikonal(name, 2, 64),
        "EIK3D" => eikonal(name, 3, 24),
        "EXA" => Ok(Benchmark {
            name: name.into(),
            problem: double_well(name, interval_controls(-1.0, 1.0, 11), 1),
            oracle: Some(exa_value),
            oracle_gradient: Some(exa_gradient),
            oracle_region: Some(outside_double_well),
            band: Some(0.1),
            notes: "double-well target with horizontal motion; value non-Lipschitz along x2 = 0, |x1| < 1, \
                    hypograph differentiable at the origin with two optimal exits",
        }),
        "EXB" => {
            let mut p = double_well(name, interval_controls(-1.0, 1.0, 11), 1);
            p.h = ex("x2 - cbrt(x1)^5");
            p.dh = Some(exs(&["-5/3*cbrt(x1)^2", "1"]));
            p.domain = vec![[-2.0, 2.0], [-1.0, 1.0]];
            Ok(Benchmark {
                name: name.into(),
                problem: p,
                oracle: Some(exb_value),
                oracle_gradient: Some(exb_gradient),
                oracle_region: Some(|x| x[1] - x[0].cbrt().powi(5) > 0.0),
                band: Some(0.1),
                notes: "target below x1^(5/3); the constant control 1/2 from (-1,0) is not optimal; \
                        the target boundary has unbounded curvature at the origin, so no inner ball of fixed radius",
            })
        }
        "GEN" => {
            let p = ControlProblem {
                name: name.into(),
                d: 2,
                m: 2,
                f: exs(&["u1", "u2"]),
                df: Some(zeros(2)),
                r: ex("1 + x1^2"),
                dr: Some(exs(&["2*x1", "0"])),
                g: ex("0.1*x1"),
                dg: Some(exs(&["0.1", "0"])),
                h: ex("x1^2 + x2^2 - 1"),
                dh: Some(exs(&["2*x1", "2*x2"])),
                controls: sphere_controls(2, 16)?,
                domain: vec![[-2.0, 2.0], [-2.0, 2.0]],
                constants: Constants { speed: 1.001, r0: 1.0, g_lip: 0.1, rho0: 1.0 },
            };
            Ok(Benchmark {
                name: name.into(),
                problem: p,
                oracle: None,
                oracle_gradient: None,
                oracle_region: None,
                band: None,
                notes: "state-dependent running cost and linear terminal cost; nonconstant costates along extremals",
            })
        }
        "RGEN" => {
            // Velocities on the quarter circle: rightward and upward only.
            let controls = (0..=10)
                .map(|k| {
                    let a = 0.5 * PI * k as f64 / 10.0;
                    vec![a.cos(), a.sin()]
                })
                .collect();
            Ok(Benchmark {
                name: name.into(),
                problem: double_well(name, controls, 2),
                oracle: Some(rgen_value),
                oracle_gradient: Some(rgen_gradient),
                oracle_region: Some(outside_double_well),
                band: Some(0.1),
                notes: "double-well target with velocities on a quarter circle; the tangential exit at (1,0) has a \
                        unique maximizing control, so its backward horizontal characteristic is a genuine curve",
            })
        }
        other => Err(Error::UnknownBenchmark(other.into())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub name: String,
    pub n: Vec<usize>,
    pub linf: f64,
    pub l1: f64,
    pub solve_seconds: f64,
    pub sweeps: usize,
}

/// L-infinity and L1 error of a field against the oracle over converged nodes
/// accepted by `region`.
pub fn oracle_errors(bench: &Benchmark, field: &ValueField, region: &dyn Fn(&[f64]) -> bool) -> Result<(f64, f64, usize)> {
    let oracle = bench.oracle.ok_or_else(|| Error::Config(format!("{} has no oracle", bench.name)))?;
    let mut linf = 0.0f64;
    let mut l1 = 0.0;
    let mut count = 0;
    for idx in 0..field.grid.len() {
        if field.status[idx] != NodeStatus::Converged {
            continue;
        }
        let x = field.grid.node(idx);
        if !region(&x) {
            continue;
        }
        let e = (field.values[idx] - oracle(&x)).abs();
        linf = linf.max(e);
        l1 += e;
        count += 1;
    }
    Ok((linf, l1 * field.grid.cell_volume(), count))
}

/// Default comparison region: the oracle region minus a 2-node collar around
/// the target and, where set, the band around `x2 = 0`.
pub fn default_region_mask(bench: &Benchmark, field: &ValueField) -> Vec<bool> {
    let target: Vec<bool> = field.status.iter().map(|s| *s == NodeStatus::Target).collect();
    let collar = dilate(&field.grid, &target, 2);
    (0..field.grid.len())
        .map(|idx| {
            let x = field.grid.node(idx);
            !collar[idx]
                && bench.oracle_region.is_none_or(|r| r(&x))
                && bench.band.is_none_or(|b| x[1].abs() >= b)
        })
        .collect()
}

pub fn run_benchmark(name: &str, resolutions: &[Vec<usize>], opts: &SolveOptions) -> Result<Vec<ConvergenceRow>> {
    let bench = builtin(name)?;
    if bench.oracle.is_none() {
        return Err(Error::Config(format!("{name} has no analytic oracle")));
    }
    let mut rows = Vec::new();
    for n in resolutions {
        let grid = build_grid(&bench.problem.domain, n)?;
        let t0 = Instant::now();
        let field = solve_value(&bench.problem, &grid, opts)?;
        let secs = t0.elapsed().as_secs_f64();
        let mask = default_region_mask(&bench, &field);
        let (linf, l1, _) = oracle_errors(&bench, &field, &|x: &[f64]| {
            field.grid.nearest(x).is_some_and(|k| mask[k])
        })?;
        rows.push(ConvergenceRow { name: name.into(), n: n.clone(), linf, l1, solve_seconds: secs, sweeps: field.stats.sweeps });
    }
    Ok(rows)
}

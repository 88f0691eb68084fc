//! Semi-Lagrangian fast-sweeping solver for the exit-time value function.
//!
//! For each node `x` and control `w` the update uses the local step
//! `tau = cfl * min_spacing / |f(x,w)|`. When the segment `x -> x + tau f`
//! enters the target, the crossing is located by bisection and the candidate
//! is the exact exit cost `s tau r + g(crossing)`; otherwise it is
//! `tau r + I[V](x + tau f)` with multilinear interpolation.
//!
//! The exit test looks one cell diagonal past the foot: a foot whose
//! interpolation cell touches target nodes would otherwise read `g` there,
//! which overestimates `V` next to the boundary.

use crate::error::{Error, Result};
use crate::grid::{dilate, edge_mask, Grid, Mask, NodeStatus, SolveStats, ValueField, BIG};
use crate::hamiltonian::hamiltonian;
use crate::problem::ControlProblem;
use crate::vecops::{axpy, norm};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMode {
    #[default]
    GaussSeidel,
    Jacobi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub tol_v: f64,
    pub max_sweeps: usize,
    pub cfl: f64,
    pub mode: SweepMode,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol_v: 1e-9, max_sweeps: 500, cfl: 0.9, mode: SweepMode::GaussSeidel }
    }
}

/// Outcome of following one control from a point for one step.
#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    /// The segment reaches the target after fraction `s` of the step.
    Exit { s: f64, crossing: Vec<f64>, value: f64 },
    /// The foot stays outside the target; `cost` is the running cost of the step.
    Foot { foot: Vec<f64>, cost: f64 },
    /// Control unusable here (zero velocity, evaluation error).
    Blocked,
}

/// Bisection for the first crossing of `{h = 0}` on `a -> b`, given `h(b) <= 0`.
pub fn crossing_fraction(p: &ControlProblem, a: &[f64], b: &[f64]) -> f64 {
    let dir: Vec<f64> = b.iter().zip(a).map(|(u, v)| u - v).collect();
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match p.eval_level(&axpy(a, mid, &dir)) {
            Ok(h) if h > 0.0 => lo = mid,
            _ => hi = mid,
        }
    }
    hi
}

/// Follows control `w` from `x` for time `tau`, testing for exit over the
/// longer time `tau + reach / |f|`. `s` is measured in units of `tau`.
pub fn step_outcome_with_reach(p: &ControlProblem, x: &[f64], w: &[f64], tau: f64, reach: f64) -> StepOutcome {
    let (Ok(f), Ok(r)) = (p.eval_dynamics(x, w), p.eval_running_cost(x, w)) else {
        return StepOutcome::Blocked;
    };
    let speed = norm(&f);
    if speed < 1e-12 {
        return StepOutcome::Blocked;
    }
    let long = tau + reach / speed;
    let end = axpy(x, long, &f);
    if let Ok(h) = p.eval_level(&end) {
        if h <= 0.0 {
            let s = crossing_fraction(p, x, &end) * long / tau;
            let crossing = axpy(x, s * tau, &f);
            return match p.eval_terminal_cost(&crossing) {
                Ok(g) => StepOutcome::Exit { s, value: s * tau * r + g, crossing },
                Err(_) => StepOutcome::Blocked,
            };
        }
    }
    if reach == 0.0 {
        return StepOutcome::Foot { foot: end, cost: tau * r };
    }
    let foot = axpy(x, tau, &f);
    match p.eval_level(&foot) {
        Ok(h) if h <= 0.0 => step_outcome_with_reach(p, x, w, tau, 0.0),
        Ok(_) => StepOutcome::Foot { foot, cost: tau * r },
        Err(_) => StepOutcome::Blocked,
    }
}

/// Follows control `w` from `x` for time `tau`.
pub fn step_outcome(p: &ControlProblem, x: &[f64], w: &[f64], tau: f64) -> StepOutcome {
    step_outcome_with_reach(p, x, w, tau, 0.0)
}

/// Length of one cell diagonal.
pub fn exit_reach(grid: &Grid) -> f64 {
    grid.spacing.iter().map(|h| h * h).sum::<f64>().sqrt()
}

/// Local semi-Lagrangian step for control `w` at `x`.
pub fn local_tau(p: &ControlProblem, grid: &Grid, x: &[f64], w: &[f64], cfl: f64) -> f64 {
    let speed = p.eval_dynamics(x, w).map(|f| norm(&f)).unwrap_or(0.0);
    cfl * grid.min_spacing() / speed.max(1e-9)
}

/// Interpolated value with out-of-box lookups returning `BIG`.
pub fn lookup(field: &ValueField, x: &[f64]) -> f64 {
    field.interpolate(x).unwrap_or(BIG)
}

/// Candidate value of every control at `x`. With `step = None` this is the
/// solver's own update (local CFL step, extended exit test); with a fixed
/// step it is a plain one-step lookahead.
pub fn candidates(p: &ControlProblem, field: &ValueField, x: &[f64], step: Option<f64>, cfl: f64) -> Vec<(usize, f64)> {
    let reach = if step.is_none() { exit_reach(&field.grid) } else { 0.0 };
    p.controls
        .iter()
        .enumerate()
        .filter_map(|(k, w)| {
            let tau = step.unwrap_or_else(|| local_tau(p, &field.grid, x, w, cfl));
            match step_outcome_with_reach(p, x, w, tau, reach) {
                StepOutcome::Exit { value, .. } => Some((k, value)),
                StepOutcome::Foot { foot, cost } => Some((k, cost + lookup(field, &foot))),
                StepOutcome::Blocked => None,
            }
        })
        .collect()
}

/// Right-hand side of the discrete dynamic programming equation at node `idx`.
pub fn dpp_value(p: &ControlProblem, field: &ValueField, idx: usize, cfl: f64) -> f64 {
    let x = field.grid.node(idx);
    candidates(p, field, &x, None, cfl).into_iter().map(|(_, v)| v).fold(BIG, f64::min)
}

enum Entry {
    Exit(f64),
    Interp { base: usize, frac_at: usize, cost: f64 },
}

struct Stencils {
    /// `offsets[i]..offsets[i + 1]` are the entries of node `i`.
    offsets: Vec<usize>,
    entries: Vec<Entry>,
    fracs: Vec<f64>,
}

fn build_stencils(p: &ControlProblem, grid: &Grid, target: &[bool], cfl: f64) -> Stencils {
    let d = grid.dim();
    let per_node: Vec<(Vec<Entry>, Vec<f64>)> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let mut entries = Vec::new();
            let mut fracs = Vec::new();
            if target[idx] {
                return (entries, fracs);
            }
            let x = grid.node(idx);
            let mut base = vec![0; d];
            let mut frac = vec![0.0; d];
            let reach = exit_reach(grid);
            for w in &p.controls {
                let tau = local_tau(p, grid, &x, w, cfl);
                match step_outcome_with_reach(p, &x, w, tau, reach) {
                    StepOutcome::Exit { value, .. } => entries.push(Entry::Exit(value)),
                    StepOutcome::Foot { foot, cost } => {
                        if grid.locate(&foot, &mut base, &mut frac) {
                            entries.push(Entry::Interp { base: grid.ravel(&base), frac_at: fracs.len(), cost });
                            fracs.extend_from_slice(&frac);
                        }
                    }
                    StepOutcome::Blocked => {}
                }
            }
            (entries, fracs)
        })
        .collect();
    let mut offsets = Vec::with_capacity(grid.len() + 1);
    let mut entries = Vec::new();
    let mut fracs = Vec::new();
    offsets.push(0);
    for (e, f) in per_node {
        let shift = fracs.len();
        for en in e {
            entries.push(match en {
                Entry::Interp { base, frac_at, cost } => Entry::Interp { base, frac_at: frac_at + shift, cost },
                other => other,
            });
        }
        fracs.extend(f);
        offsets.push(entries.len());
    }
    Stencils { offsets, entries, fracs }
}

/// Best candidate at `idx` from the values `v`, solving for the weight the
/// node puts on itself.
fn update(grid: &Grid, st: &Stencils, v: &[f64], idx: usize) -> f64 {
    let d = grid.dim();
    let strides = grid.strides();
    let mut best = f64::INFINITY;
    for e in &st.entries[st.offsets[idx]..st.offsets[idx + 1]] {
        let cand = match *e {
            Entry::Exit(val) => val,
            Entry::Interp { base, frac_at, cost } => {
                let frac = &st.fracs[frac_at..frac_at + d];
                let mut acc = 0.0;
                let mut wself = 0.0;
                for mask in 0..(1usize << d) {
                    let mut w = 1.0;
                    let mut k = base;
                    for a in 0..d {
                        if mask >> a & 1 == 1 {
                            w *= frac[a];
                            k += strides[a];
                        } else {
                            w *= 1.0 - frac[a];
                        }
                    }
                    if w == 0.0 {
                        continue;
                    }
                    if k == idx {
                        wself += w;
                    } else {
                        acc += w * v[k];
                    }
                }
                if wself >= 1.0 - 1e-12 {
                    continue;
                }
                (cost + acc) / (1.0 - wself)
            }
        };
        if cand < best {
            best = cand;
        }
    }
    best
}

/// Node order for sweep direction `o`: axis `a` runs backwards when bit `a` is set.
fn sweep_order(grid: &Grid, o: usize) -> impl Iterator<Item = usize> + '_ {
    let d = grid.dim();
    let total = grid.len();
    (0..total).map(move |k| {
        let mut rem = k;
        let mut idx = 0;
        for a in 0..d {
            let s = grid.strides()[a];
            let mut i = rem / s;
            rem %= s;
            if o >> a & 1 == 1 {
                i = grid.n[a] - 1 - i;
            }
            idx += i * s;
        }
        idx
    })
}

pub fn solve_value(p: &ControlProblem, grid: &Grid, opts: &SolveOptions) -> Result<ValueField> {
    if grid.dim() != p.d {
        return Err(Error::InvalidGrid(format!("grid has {} axes, problem has d = {}", grid.dim(), p.d)));
    }
    let n = grid.len();
    let mut values = vec![BIG; n];
    let mut target = vec![false; n];
    for idx in 0..n {
        let x = grid.node(idx);
        if let Ok(h) = p.eval_level(&x) {
            if h <= 0.0 {
                target[idx] = true;
                values[idx] = p.eval_terminal_cost(&x)?;
            }
        }
    }
    if !target.iter().any(|&t| t) {
        return Err(Error::NoTarget);
    }
    let st = build_stencils(p, grid, &target, opts.cfl);
    let mut stats = SolveStats::default();
    let orders = 1usize << grid.dim();
    let rel = |new: f64, old: f64| (new - old).abs() / (1.0 + new.abs());
    while stats.sweeps < opts.max_sweeps {
        let change = match opts.mode {
            SweepMode::GaussSeidel => {
                let mut change = 0.0f64;
                for idx in sweep_order(grid, stats.sweeps % orders) {
                    if target[idx] {
                        continue;
                    }
                    let cand = update(grid, &st, &values, idx);
                    if cand < values[idx] {
                        change = change.max(rel(cand, values[idx]));
                        values[idx] = cand;
                    }
                }
                change
            }
            SweepMode::Jacobi => {
                let next: Vec<f64> = (0..n)
                    .into_par_iter()
                    .map(|idx| if target[idx] { values[idx] } else { update(grid, &st, &values, idx).min(values[idx]) })
                    .collect();
                let change = next.par_iter().zip(values.par_iter()).map(|(a, b)| rel(*a, *b)).reduce(|| 0.0, f64::max);
                values = next;
                change
            }
        };
        stats.sweeps += 1;
        stats.last_change = change;
        stats.max_value_history.push(values.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        if change <= opts.tol_v {
            stats.converged = true;
            break;
        }
    }
    let status = (0..n)
        .map(|idx| {
            if target[idx] {
                NodeStatus::Target
            } else if values[idx] >= 0.5 * BIG {
                NodeStatus::Unreached
            } else {
                NodeStatus::Converged
            }
        })
        .collect::<Vec<_>>();
    for idx in 0..n {
        if status[idx] == NodeStatus::Unreached {
            values[idx] = BIG;
        }
    }
    Ok(ValueField { grid: grid.clone(), values, status, stats })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    /// NaN at excluded nodes.
    pub per_node: Vec<f64>,
    pub linf: f64,
    pub l1: f64,
    pub count: usize,
}

/// Mask of nodes excluded from residual norms: target, unreached, a 2-node
/// collar around both, and the box faces.
pub fn residual_exclusion(field: &ValueField) -> Mask {
    let bad: Vec<bool> = field.status.iter().map(|s| *s != NodeStatus::Converged).collect();
    let collar = dilate(&field.grid, &bad, 2);
    let edges = edge_mask(&field.grid);
    collar.iter().zip(edges).map(|(a, b)| *a || b).collect()
}

/// `H(x, D V)` at every converged node with the upwind gradient picked per
/// axis by the sign of the optimal velocity.
pub fn hjb_residual_field(p: &ControlProblem, field: &ValueField, extra_exclude: Option<&[bool]>, cfl: f64) -> Residuals {
    let grid = &field.grid;
    let excl = residual_exclusion(field);
    let per_node: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            if excl[idx] || extra_exclude.is_some_and(|m| m[idx]) {
                return f64::NAN;
            }
            let x = grid.node(idx);
            let cands = candidates(p, field, &x, None, cfl);
            let Some(&(k, _)) = cands.iter().min_by(|a, b| a.1.total_cmp(&b.1)) else {
                return f64::NAN;
            };
            let Ok(f) = p.eval_dynamics(&x, &p.controls[k]) else { return f64::NAN };
            let v0 = field.values[idx];
            let mut grad = vec![0.0; grid.dim()];
            for a in 0..grid.dim() {
                let h = grid.spacing[a];
                let (Some(ip), Some(im)) = (grid.neighbor(idx, a, 1), grid.neighbor(idx, a, -1)) else {
                    return f64::NAN;
                };
                grad[a] = if f[a] > 1e-12 {
                    (field.values[ip] - v0) / h
                } else if f[a] < -1e-12 {
                    (v0 - field.values[im]) / h
                } else {
                    (field.values[ip] - field.values[im]) / (2.0 * h)
                };
            }
            hamiltonian(p, &x, &grad).map(|hv| hv.value).unwrap_or(f64::NAN)
        })
        .collect();
    let mut linf = 0.0f64;
    let mut l1 = 0.0;
    let mut count = 0;
    for r in per_node.iter().filter(|r| !r.is_nan()) {
        linf = linf.max(r.abs());
        l1 += r.abs();
        count += 1;
    }
    Residuals { per_node, linf, l1: l1 * grid.cell_volume(), count }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::builtin;
    use crate::grid::build_grid;

    #[test]
    fn no_target_is_an_error() {
        let p = builtin("EIK64").unwrap().problem;
        let g = build_grid(&[[1.5, 2.0], [1.5, 2.0]], &[5, 5]).unwrap();
        assert!(matches!(solve_value(&p, &g, &SolveOptions::default()), Err(Error::NoTarget)));
    }

    #[test]
    fn coarse_eikonal_is_reasonable() {
        let p = builtin("EIK16").unwrap().problem;
        let g = build_grid(&p.domain, &[41, 41]).unwrap();
        let f = solve_value(&p, &g, &SolveOptions::default()).unwrap();
        assert!(f.stats.converged);
        let v = f.interpolate(&[1.5, 0.0]).unwrap();
        assert!((v - 0.5).abs() < 0.06, "{v}");
        assert_eq!(f.count(NodeStatus::Unreached), 0);
        let h = &f.stats.max_value_history;
        assert!(h.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn target_everywhere_gives_empty_residual() {
        let p = crate::problem::parse_problem(
            "d = 2\nm = 2\nf = [\"u1\", \"u2\"]\nr = \"1\"\ng = \"x1\"\nh = \"-1\"\ncontrols = [[1.0, 0.0]]\ndomain = [[-1,1],[-1,1]]\n[constants]\nN = 2\nr0 = 1\nG = 0.4\nrho0 = 1\n",
        )
        .unwrap();
        let g = build_grid(&p.domain, &[5, 5]).unwrap();
        let f = solve_value(&p, &g, &SolveOptions::default()).unwrap();
        assert!(f.status.iter().all(|s| *s == NodeStatus::Target));
        assert_eq!(f.values[g.ravel(&[4, 0])], 1.0);
        let r = hjb_residual_field(&p, &f, None, 0.9);
        assert_eq!((r.linf, r.l1, r.count), (0.0, 0.0, 0));
    }

    #[test]
    fn boxed_out_region_is_unreached() {
        // Only rightward motion: nodes right of the target strip never exit.
        let p = crate::problem::parse_problem(
            "d = 2\nm = 1\nf = [\"u1\", \"0\"]\nr = \"1\"\ng = \"0\"\nh = \"abs(x1) - 0.2\"\ncontrols = [[1.0]]\ndomain = [[-1,1],[-1,1]]\n[constants]\nN = 2\nr0 = 1\nG = 0\nrho0 = 0.1\n",
        )
        .unwrap();
        let g = build_grid(&p.domain, &[21, 5]).unwrap();
        let f = solve_value(&p, &g, &SolveOptions::default()).unwrap();
        let right = g.ravel(&[20, 2]);
        let left = g.ravel(&[0, 2]);
        assert_eq!(f.status[right], NodeStatus::Unreached);
        assert_eq!(f.values[right], BIG);
        assert!((f.values[left] - 0.8).abs() < 1e-12);
        assert!(f.sublevel_mask(BIG).iter().zip(&f.status).all(|(m, s)| *m == (*s != NodeStatus::Unreached)));
    }
}

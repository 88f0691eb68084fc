//! Extremal arcs: backward characteristics, forward synthesis from a value
//! field, transported normals and supergradient checks.

use crate::error::{Error, Result};
use crate::grid::{NodeStatus, ValueField, BIG};
use crate::hamiltonian::{hamiltonian, horizontal_hamiltonian, lex_smallest, solve_terminal_multiplier};
use crate::problem::ControlProblem;
use crate::solver::{candidates, crossing_fraction};
use crate::target::{classify_boundary, proximal_normal, BoundaryClass};
use crate::vecops::{angle_deg, axpy, dist, dot, norm, normalized, scale, sub};
use serde::{Deserialize, Serialize};

/// Relative tolerance for treating two feedback candidates at `t = 0` as tied.
pub const BRANCH_TOL: f64 = 1e-6;
pub const MAX_BRANCHES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalData {
    pub x_star: Vec<f64>,
    /// Unit proximal normal pointing into the target.
    pub xi: Vec<f64>,
    pub class: BoundaryClass,
    pub margin: f64,
    pub q_star: Vec<f64>,
    pub lambda: f64,
    pub p_star: Vec<f64>,
}

/// Terminal data at a boundary point. `xi` defaults to the normal of the level set.
pub fn terminal_data(p: &ControlProblem, x_star: &[f64], xi: Option<&[f64]>) -> Result<TerminalData> {
    let xi = match xi {
        Some(v) => normalized(v).ok_or(Error::ZeroCostate)?,
        None => proximal_normal(p, x_star)?,
    };
    let (margin, class) = classify_boundary(p, x_star, &xi)?;
    let q_star = p.eval_terminal_gradient(x_star)?;
    let (lambda, p_star) = match class {
        BoundaryClass::N1 => {
            let l = solve_terminal_multiplier(p, x_star, &xi, &q_star)?;
            (l, axpy(&q_star, -l, &xi))
        }
        _ => (0.0, scale(&xi, -1.0)),
    };
    Ok(TerminalData { x_star: x_star.to_vec(), xi, class, margin, q_star, lambda, p_star })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ArcKind {
    Nonhorizontal,
    Horizontal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Degeneracy {
    None,
    /// Several maximizing controls; the lexicographically smallest was used.
    Tie,
    /// Every control ties; the arc does not move.
    DegenerateFan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremalArc {
    pub kind: ArcKind,
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub u: Vec<usize>,
    pub degeneracy: Vec<Degeneracy>,
    pub terminal: TerminalData,
}

impl ExtremalArc {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn is_fan(&self) -> bool {
        self.degeneracy.iter().any(|d| *d == Degeneracy::DegenerateFan)
    }
}

struct Rhs {
    dy: Vec<f64>,
    dp: Vec<f64>,
    u: usize,
    deg: Degeneracy,
}

fn rhs(pr: &ControlProblem, kind: ArcKind, tie_break: Option<usize>, y: &[f64], p: &[f64]) -> Result<Rhs> {
    let hv = match kind {
        ArcKind::Nonhorizontal => hamiltonian(pr, y, p)?,
        ArcKind::Horizontal => horizontal_hamiltonian(pr, y, p)?,
    };
    let all_tie = hv.argmax.len() == pr.controls.len() && pr.controls.len() > 1;
    let d = y.len();
    if kind == ArcKind::Horizontal && all_tie && tie_break.is_none() {
        return Ok(Rhs { dy: vec![0.0; d], dp: vec![0.0; d], u: lex_smallest(pr, &hv.argmax), deg: Degeneracy::DegenerateFan });
    }
    let u = match tie_break {
        Some(k) if hv.argmax.contains(&k) => k,
        _ => lex_smallest(pr, &hv.argmax),
    };
    let w = &pr.controls[u];
    let dy = pr.eval_dynamics(y, w)?;
    let jac = pr.eval_dynamics_jacobian(y, w)?;
    let mut dp: Vec<f64> = (0..d).map(|j| -(0..d).map(|i| jac[i][j] * p[i]).sum::<f64>()).collect();
    if kind == ArcKind::Nonhorizontal {
        let dr = pr.eval_running_gradient(y, w)?;
        for j in 0..d {
            dp[j] -= dr[j];
        }
    }
    let deg = if hv.unique { Degeneracy::None } else { Degeneracy::Tie };
    Ok(Rhs { dy, dp, u, deg })
}

/// One RK4 step of size `h` (negative for backward); also reports whether the
/// four stages agreed on the control.
fn rk4(pr: &ControlProblem, kind: ArcKind, tb: Option<usize>, y: &[f64], p: &[f64], h: f64) -> Result<(Vec<f64>, Vec<f64>, bool)> {
    let k1 = rhs(pr, kind, tb, y, p)?;
    let k2 = rhs(pr, kind, tb, &axpy(y, 0.5 * h, &k1.dy), &axpy(p, 0.5 * h, &k1.dp))?;
    let k3 = rhs(pr, kind, tb, &axpy(y, 0.5 * h, &k2.dy), &axpy(p, 0.5 * h, &k2.dp))?;
    let k4 = rhs(pr, kind, tb, &axpy(y, h, &k3.dy), &axpy(p, h, &k3.dp))?;
    let same = [k2.u, k3.u, k4.u].iter().all(|&u| u == k1.u)
        && [k2.deg, k3.deg, k4.deg].iter().all(|d| (*d == Degeneracy::DegenerateFan) == (k1.deg == Degeneracy::DegenerateFan));
    let comb = |a: &[f64], b: &[f64], c: &[f64], d: &[f64], z: &[f64]| -> Vec<f64> {
        (0..z.len()).map(|i| z[i] + h / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i])).collect()
    };
    let yn = comb(&k1.dy, &k2.dy, &k3.dy, &k4.dy, y);
    let pn = comb(&k1.dp, &k2.dp, &k3.dp, &k4.dp, p);
    Ok((yn, pn, same))
}

struct Integrator<'a> {
    pr: &'a ControlProblem,
    kind: ArcKind,
    tie_break: Option<usize>,
    t: Vec<f64>,
    y: Vec<Vec<f64>>,
    p: Vec<Vec<f64>>,
}

impl Integrator<'_> {
    /// Backward step from the last node by `dt > 0`, halving across switches.
    fn step(&mut self, dt: f64, depth: u32) -> Result<()> {
        let (y0, p0, t0) = (self.y.last().unwrap().clone(), self.p.last().unwrap().clone(), *self.t.last().unwrap());
        let (yn, pn, same) = rk4(self.pr, self.kind, self.tie_break, &y0, &p0, -dt)?;
        if !same && depth < 40 && dt > 1e-13 {
            self.step(0.5 * dt, depth + 1)?;
            return self.step(0.5 * dt, depth + 1);
        }
        let tn = t0 - dt;
        if !self.pr.in_box(&yn, 0.0) {
            return Err(Error::ExitedDomain(tn));
        }
        if norm(&pn) == 0.0 {
            return Err(Error::DegenerateCostate(tn));
        }
        self.t.push(tn);
        self.y.push(yn);
        self.p.push(pn);
        Ok(())
    }
}

fn integrate_backward(
    pr: &ControlProblem,
    td: &TerminalData,
    kind: ArcKind,
    duration: f64,
    step: f64,
    tie_break: Option<usize>,
    stop: &dyn Fn(&[f64]) -> bool,
) -> Result<ExtremalArc> {
    if !(duration >= 0.0) || !(step > 0.0) {
        return Err(Error::Config("duration must be >= 0 and step > 0".into()));
    }
    let mut it = Integrator { pr, kind, tie_break, t: vec![duration], y: vec![td.x_star.clone()], p: vec![td.p_star.clone()] };
    let n = (duration / step - 1e-9).ceil().max(0.0) as usize;
    for k in 0..n {
        let t_next = duration * (n - k - 1) as f64 / n as f64;
        let dt = it.t.last().unwrap() - t_next;
        it.step(dt, 0)?;
        // Pin the mesh to the uniform grid so rounding does not drift.
        *it.t.last_mut().unwrap() = t_next;
        if stop(it.y.last().unwrap()) {
            break;
        }
    }
    let Integrator { mut t, mut y, mut p, .. } = it;
    t.reverse();
    y.reverse();
    p.reverse();
    let mut u = Vec::with_capacity(t.len());
    let mut degeneracy = Vec::with_capacity(t.len());
    for i in 0..t.len() {
        let r = rhs(pr, kind, tie_break, &y[i], &p[i])?;
        u.push(r.u);
        degeneracy.push(r.deg);
    }
    Ok(ExtremalArc { kind, t, y, p, u, degeneracy, terminal: td.clone() })
}

/// Backward extremal of the characteristic system from transversal terminal data.
pub fn backward_extremal(pr: &ControlProblem, td: &TerminalData, duration: f64, step: f64) -> Result<ExtremalArc> {
    if td.class != BoundaryClass::N1 {
        return Err(Error::TangentialNormal(td.margin));
    }
    let h0 = hamiltonian(pr, &td.x_star, &td.p_star)?.value;
    if h0.abs() > 1e-10 {
        return Err(Error::TerminalInconsistent(h0));
    }
    integrate_backward(pr, td, ArcKind::Nonhorizontal, duration, step, None, &|_| false)
}

/// Backward horizontal characteristic from tangential terminal data.
pub fn backward_horizontal(pr: &ControlProblem, td: &TerminalData, duration: f64, step: f64, tie_break: Option<usize>) -> Result<ExtremalArc> {
    backward_horizontal_until(pr, td, duration, step, tie_break, &|_| false)
}

/// As [`backward_horizontal`], stopping early once `stop(y)` holds.
pub fn backward_horizontal_until(
    pr: &ControlProblem,
    td: &TerminalData,
    duration: f64,
    step: f64,
    tie_break: Option<usize>,
    stop: &dyn Fn(&[f64]) -> bool,
) -> Result<ExtremalArc> {
    if td.class != BoundaryClass::N0 {
        return Err(Error::TangentialRequired(td.margin));
    }
    integrate_backward(pr, td, ArcKind::Horizontal, duration, step, tie_break, stop)
}

/// `|H|` (or `|H0|` for horizontal arcs) at every mesh node.
pub fn check_maximum_principle(pr: &ControlProblem, arc: &ExtremalArc) -> Result<(f64, Vec<f64>)> {
    let mut per = Vec::with_capacity(arc.len());
    for (y, p) in arc.y.iter().zip(&arc.p) {
        let v = match arc.kind {
            ArcKind::Nonhorizontal => hamiltonian(pr, y, p)?.value,
            ArcKind::Horizontal => horizontal_hamiltonian(pr, y, p)?.value,
        };
        per.push(v.abs());
    }
    Ok((per.iter().cloned().fold(0.0, f64::max), per))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    /// Control applied on `[t[i], t[i+1]]`.
    pub u: Vec<Vec<f64>>,
    pub u_index: Vec<Option<usize>>,
    pub cost: f64,
    pub exit_point: Vec<f64>,
}

fn lex_best(pr: &ControlProblem, cands: &[(usize, f64)], rel_tol: f64) -> Vec<usize> {
    let Some(best) = cands.iter().map(|c| c.1).min_by(f64::total_cmp) else {
        return vec![];
    };
    let mut tied: Vec<usize> = cands.iter().filter(|c| c.1 <= best + rel_tol * (1.0 + best.abs())).map(|c| c.0).collect();
    tied.sort_by(|&a, &b| {
        if crate::vecops::lex_less(&pr.controls[a], &pr.controls[b]) {
            std::cmp::Ordering::Less
        } else if crate::vecops::lex_less(&pr.controls[b], &pr.controls[a]) {
            std::cmp::Ordering::Greater
        } else {
            a.cmp(&b)
        }
    });
    tied
}

struct Builder {
    traj: Trajectory,
}

impl Builder {
    fn new(x0: &[f64]) -> Self {
        Builder { traj: Trajectory { t: vec![0.0], y: vec![x0.to_vec()], u: vec![], u_index: vec![], cost: 0.0, exit_point: vec![] } }
    }

    /// Applies control `w` for `dt`; returns true once the target is reached.
    fn advance(&mut self, pr: &ControlProblem, w: &[f64], k: Option<usize>, dt: f64) -> Result<bool> {
        let y = self.traj.y.last().unwrap().clone();
        let f = pr.eval_dynamics(&y, w)?;
        let r = pr.eval_running_cost(&y, w)?;
        let yn = axpy(&y, dt, &f);
        let t = *self.traj.t.last().unwrap();
        self.traj.u.push(w.to_vec());
        self.traj.u_index.push(k);
        if pr.eval_level(&yn)? <= 0.0 {
            let s = crossing_fraction(pr, &y, &yn);
            let x_star = axpy(&y, s * dt, &f);
            self.traj.cost += s * dt * r + pr.eval_terminal_cost(&x_star)?;
            self.traj.t.push(t + s * dt);
            self.traj.y.push(x_star.clone());
            self.traj.exit_point = x_star;
            return Ok(true);
        }
        self.traj.cost += dt * r;
        self.traj.t.push(t + dt);
        self.traj.y.push(yn);
        Ok(false)
    }
}

fn check_start(field: &ValueField, x0: &[f64]) -> Result<()> {
    let v = field.interpolate(x0)?;
    if v >= 0.5 * BIG {
        return Err(Error::Unreached);
    }
    Ok(())
}

fn continue_synthesis(pr: &ControlProblem, field: &ValueField, mut b: Builder, step: f64, max_steps: usize) -> Result<Trajectory> {
    while b.traj.u.len() < max_steps {
        let y = b.traj.y.last().unwrap().clone();
        let cands = candidates(pr, field, &y, Some(step), 1.0);
        let Some(&k) = lex_best(pr, &cands, 1e-12).first() else {
            return Err(Error::NoUsableNeighbors);
        };
        if b.advance(pr, &pr.controls[k], Some(k), step)? {
            return Ok(b.traj);
        }
        if !field.grid.contains(b.traj.y.last().unwrap()) {
            return Err(Error::ExitedDomain(*b.traj.t.last().unwrap()));
        }
    }
    Err(Error::BudgetExceeded(max_steps))
}

/// Euler synthesis of the feedback `argmin_w [step r + I[V](y + step f)]`.
pub fn forward_synthesis(pr: &ControlProblem, field: &ValueField, x0: &[f64], step: f64, max_steps: usize) -> Result<Trajectory> {
    check_start(field, x0)?;
    if pr.eval_level(x0)? <= 0.0 {
        let mut b = Builder::new(x0);
        b.traj.cost = pr.eval_terminal_cost(x0)?;
        b.traj.exit_point = x0.to_vec();
        return Ok(b.traj);
    }
    continue_synthesis(pr, field, Builder::new(x0), step, max_steps)
}

/// One synthesized trajectory per feedback control tied at `t = 0`.
pub fn synthesize_branches(pr: &ControlProblem, field: &ValueField, x0: &[f64], step: f64, max_steps: usize) -> Result<Vec<Trajectory>> {
    check_start(field, x0)?;
    if pr.eval_level(x0)? <= 0.0 {
        return Ok(vec![forward_synthesis(pr, field, x0, step, max_steps)?]);
    }
    let cands = candidates(pr, field, x0, Some(step), 1.0);
    let tied = lex_best(pr, &cands, BRANCH_TOL);
    let mut out = Vec::new();
    for &k in tied.iter().take(MAX_BRANCHES) {
        let mut b = Builder::new(x0);
        if b.advance(pr, &pr.controls[k], Some(k), step)? {
            out.push(b.traj);
            continue;
        }
        out.push(continue_synthesis(pr, field, b, step, max_steps.saturating_sub(1))?);
    }
    Ok(out)
}

/// Euler trajectory under an arbitrary open-loop control `u(t, y)`.
pub fn simulate_open_loop(
    pr: &ControlProblem,
    x0: &[f64],
    control: &dyn Fn(f64, &[f64]) -> Vec<f64>,
    step: f64,
    max_steps: usize,
) -> Result<Trajectory> {
    let mut b = Builder::new(x0);
    if pr.eval_level(x0)? <= 0.0 {
        b.traj.cost = pr.eval_terminal_cost(x0)?;
        b.traj.exit_point = x0.to_vec();
        return Ok(b.traj);
    }
    for _ in 0..max_steps {
        let t = *b.traj.t.last().unwrap();
        let w = control(t, b.traj.y.last().unwrap());
        if b.advance(pr, &w, None, step)? {
            return Ok(b.traj);
        }
        if !pr.in_box(b.traj.y.last().unwrap(), 0.0) {
            return Err(Error::ExitedDomain(*b.traj.t.last().unwrap()));
        }
    }
    Err(Error::BudgetExceeded(max_steps))
}

/// Integrates the adjoint equation backward along a stored trajectory, from
/// `p_end` at the exit to `t = 0`. `with_cost` adds the running-cost source.
pub fn adjoint_along(pr: &ControlProblem, traj: &Trajectory, p_end: &[f64], with_cost: bool) -> Result<Vec<f64>> {
    let d = p_end.len();
    let mut p = p_end.to_vec();
    for k in (0..traj.u.len()).rev() {
        let (ya, yb) = (&traj.y[k], &traj.y[k + 1]);
        let dt = traj.t[k + 1] - traj.t[k];
        let w = &traj.u[k];
        let field = |s: f64, p: &[f64]| -> Result<Vec<f64>> {
            let y: Vec<f64> = ya.iter().zip(yb).map(|(a, b)| a + s * (b - a)).collect();
            let jac = pr.eval_dynamics_jacobian(&y, w)?;
            let mut out: Vec<f64> = (0..d).map(|j| -(0..d).map(|i| jac[i][j] * p[i]).sum::<f64>()).collect();
            if with_cost {
                let dr = pr.eval_running_gradient(&y, w)?;
                for j in 0..d {
                    out[j] -= dr[j];
                }
            }
            Ok(out)
        };
        // RK4 in reversed time s: 1 -> 0 over duration dt.
        let h = -dt;
        let k1 = field(1.0, &p)?;
        let k2 = field(0.5, &axpy(&p, 0.5 * h, &k1))?;
        let k3 = field(0.5, &axpy(&p, 0.5 * h, &k2))?;
        let k4 = field(0.0, &axpy(&p, h, &k3))?;
        for i in 0..d {
            p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitInfo {
    pub exit_point: Vec<f64>,
    pub class: BoundaryClass,
    pub margin: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportedNormals {
    pub n1: Vec<Vec<f64>>,
    /// Unit vectors.
    pub n0: Vec<Vec<f64>>,
    pub exits: Vec<ExitInfo>,
    pub branches: Vec<Trajectory>,
}

fn push_distinct(list: &mut Vec<Vec<f64>>, v: Vec<f64>) {
    if list.iter().all(|w| dist(w, &v) > 1e-9 * (1.0 + norm(&v))) {
        list.push(v);
    }
}

/// Terminal costates transported back to `x` along the synthesized optimal
/// trajectories: `N1` from transversal exits, unit `N0` from tangential ones.
pub fn transported_normals(pr: &ControlProblem, field: &ValueField, x: &[f64], step: f64, max_steps: usize) -> Result<TransportedNormals> {
    let branches = synthesize_branches(pr, field, x, step, max_steps)?;
    let mut out = TransportedNormals { n1: vec![], n0: vec![], exits: vec![], branches: vec![] };
    for traj in branches {
        let td = terminal_data(pr, &traj.exit_point, None);
        let (class, margin) = match &td {
            Ok(td) => (td.class, td.margin),
            Err(Error::TangentialNormal(m)) => (BoundaryClass::Unreachable, *m),
            Err(e) => return Err(e.clone()),
        };
        out.exits.push(ExitInfo { exit_point: traj.exit_point.clone(), class, margin, cost: traj.cost });
        if let Ok(td) = td {
            match td.class {
                BoundaryClass::N1 => push_distinct(&mut out.n1, adjoint_along(pr, &traj, &td.p_star, true)?),
                BoundaryClass::N0 => {
                    let p0 = adjoint_along(pr, &traj, &td.p_star, false)?;
                    if let Some(u) = normalized(&p0) {
                        push_distinct(&mut out.n0, u);
                    }
                }
                BoundaryClass::Unreachable => {}
            }
        }
        out.branches.push(traj);
    }
    Ok(out)
}

/// Absolute slack in the node inequalities.
fn slack(v: f64) -> f64 {
    1e-9 * (1.0 + v.abs())
}

/// Ball nodes where V is defined: reached and off the target.
fn ball_nodes(field: &ValueField, x: &[f64], radius: f64) -> Vec<usize> {
    let ok = |k: &usize| !matches!(field.status[*k], NodeStatus::Unreached | NodeStatus::Target);
    field.grid.nodes_in_ball(x, radius).into_iter().filter(ok).collect()
}

/// Checks `V(z) <= V(x) + q.(z - x) + sigma |z - x|^2` at the off-target nodes of the ball.
/// Returns the verdict and the largest violation.
pub fn verify_supergradient(field: &ValueField, x: &[f64], q: &[f64], sigma: f64, radius: f64) -> Result<(bool, f64)> {
    let vx = field.interpolate_checked(x, true)?;
    let mut worst = f64::NEG_INFINITY;
    for k in ball_nodes(field, x, radius) {
        let z = field.grid.node(k);
        let dz = sub(&z, x);
        let e = field.values[k] - vx - dot(q, &dz) - sigma * dot(&dz, &dz);
        worst = worst.max(e);
    }
    Ok((worst <= slack(vx), worst))
}

/// Checks `-xi.(z - x) <= sigma (|z - x|^2 + |beta - V(x)|^2)` over hypograph
/// samples `(z, beta)` with `beta` stepping down from `V(z)` to `V(x) - radius`.
pub fn verify_horizontal_supergradient(field: &ValueField, x: &[f64], xi: &[f64], sigma: f64, radius: f64) -> Result<(bool, f64)> {
    let vx = field.interpolate_checked(x, true)?;
    let db = field.grid.max_spacing();
    let mut worst = f64::NEG_INFINITY;
    for k in ball_nodes(field, x, radius) {
        let dz = sub(&field.grid.node(k), x);
        let lhs = -dot(xi, &dz);
        let dz2 = dot(&dz, &dz);
        let mut beta = field.values[k];
        let floor = vx - radius;
        while beta >= floor {
            let e = lhs - sigma * (dz2 + (beta - vx).powi(2));
            worst = worst.max(e);
            beta -= db;
        }
    }
    Ok((worst <= slack(vx), worst))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Certified,
    CertifiedByValue,
    Refuted,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub verdict: Verdict,
    pub cost: f64,
    pub value: f64,
    pub tolerance: f64,
    /// Node indices of the trajectory that were checked.
    pub checked: Vec<usize>,
    pub max_hamiltonian_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    pub hamiltonian_tol: f64,
    pub samples: usize,
    /// Ball radius in units of the largest grid spacing.
    pub radius_cells: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions { hamiltonian_tol: 1e-3, samples: 10, radius_cells: 5.0 }
    }
}

/// Verdict on a trajectory: refuted when its cost beats the value by more than
/// ten cells; certified when a supplied costate curve passes the supergradient
/// and Hamiltonian checks at sampled nodes.
pub fn certify_optimality(
    pr: &ControlProblem,
    field: &ValueField,
    traj: &Trajectory,
    p_curve: Option<&[Vec<f64>]>,
    opts: &CertifyOptions,
) -> Result<Certificate> {
    let h = field.grid.max_spacing();
    let value = field.interpolate(&traj.y[0])?;
    let tolerance = 10.0 * h;
    let mut cert = Certificate { verdict: Verdict::Inconclusive, cost: traj.cost, value, tolerance, checked: vec![], max_hamiltonian_residual: 0.0 };
    if traj.cost > value + tolerance {
        cert.verdict = Verdict::Refuted;
        return Ok(cert);
    }
    let Some(pc) = p_curve else {
        if (traj.cost - value).abs() <= tolerance {
            cert.verdict = Verdict::CertifiedByValue;
        }
        return Ok(cert);
    };
    if pc.len() != traj.y.len() {
        return Err(Error::Config(format!("costate curve has {} nodes, trajectory has {}", pc.len(), traj.y.len())));
    }
    let radius = opts.radius_cells * h;
    // Only nodes whose ball stays off the target and inside the box are
    // informative: V equals g on the target and has a kink across its boundary.
    let usable: Vec<usize> = (0..traj.u.len())
        .filter(|&i| {
            let y = &traj.y[i];
            pr.in_box(y, radius)
                && field.grid.nodes_in_ball(y, radius).iter().all(|&k| field.status[k] == NodeStatus::Converged)
        })
        .collect();
    if usable.is_empty() {
        return Ok(cert);
    }
    let count = opts.samples.min(usable.len()).max(1);
    let picks: Vec<usize> = (0..count).map(|j| usable[j * usable.len() / count]).collect();
    let mut ok = true;
    for &i in &picks {
        let (y, q, w) = (&traj.y[i], &pc[i], &traj.u[i]);
        let res = (-dot(q, &pr.eval_dynamics(y, w)?) - pr.eval_running_cost(y, w)?).abs();
        cert.max_hamiltonian_residual = cert.max_hamiltonian_residual.max(res);
        let mut v = scale(q, -1.0);
        v.push(1.0);
        let v = normalized(&v).ok_or(Error::ZeroCostate)?;
        let rho = crate::regularity::exterior_sphere_radius(field, y, &v, radius)?;
        let sigma = if rho.is_finite() { 1.0 / (2.0 * rho) + 1.0 } else { 1.0 };
        let (holds, _) = verify_supergradient(field, y, q, sigma, radius)?;
        ok &= holds && res <= opts.hamiltonian_tol;
        cert.checked.push(i);
    }
    if ok {
        cert.verdict = Verdict::Certified;
    }
    Ok(cert)
}

/// Smallest angle in degrees between `v` and any member of `list`.
pub fn nearest_angle(list: &[Vec<f64>], v: &[f64]) -> f64 {
    list.iter().map(|w| angle_deg(w, v)).fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::builtin;

    #[test]
    fn eik64_radial_arc() {
        let p = builtin("EIK64").unwrap().problem;
        let td = terminal_data(&p, &[1.0, 0.0], None).unwrap();
        assert_eq!(td.class, BoundaryClass::N1);
        assert!((td.lambda - 1.0).abs() < 1e-12);
        let arc = backward_extremal(&p, &td, 0.8, 1e-2).unwrap();
        assert!((arc.y[0][0] - 1.8).abs() < 1e-12 && arc.y[0][1].abs() < 1e-12);
        assert!(arc.p.iter().all(|q| (q[0] - 1.0).abs() < 1e-12 && q[1].abs() < 1e-12));
        assert!(arc.u.iter().all(|&k| p.controls[k][0] == -1.0));
        assert!(arc.t.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(*arc.t.last().unwrap(), 0.8);
        let (res, _) = check_maximum_principle(&p, &arc).unwrap();
        assert!(res <= 1e-9);
        let arc = backward_extremal(&p, &td, 0.0, 1e-2).unwrap();
        assert_eq!(arc.len(), 1);
        assert_eq!(arc.y[0], vec![1.0, 0.0]);
    }

    #[test]
    fn horizontal_requires_tangential_data() {
        let p = builtin("EIK64").unwrap().problem;
        let td = terminal_data(&p, &[1.0, 0.0], None).unwrap();
        let e = backward_horizontal(&p, &td, 1.0, 1e-2, None).unwrap_err();
        assert!(matches!(e, Error::TangentialRequired(_)));
        assert!(e.to_string().starts_with("tangential normal required"));
    }

    #[test]
    fn exa_and_exb_fans() {
        for (name, x) in [("EXA", [1.0, 0.0]), ("EXB", [0.0, 0.0])] {
            let p = builtin(name).unwrap().problem;
            let td = terminal_data(&p, &x, None).unwrap();
            assert_eq!(td.class, BoundaryClass::N0, "{name}");
            assert_eq!(td.p_star, vec![0.0, 1.0]);
            let arc = backward_horizontal(&p, &td, 0.5, 0.1, None).unwrap();
            assert!(arc.degeneracy.iter().all(|d| *d == Degeneracy::DegenerateFan));
            assert!(arc.y.iter().all(|y| y[..] == x[..]));
            assert!(arc.p.iter().all(|q| q == &vec![0.0, 1.0]));
            assert_eq!(check_maximum_principle(&p, &arc).unwrap().0, 0.0);
        }
    }

    #[test]
    fn rgen_horizontal_arc_moves_left() {
        let p = builtin("RGEN").unwrap().problem;
        let td = terminal_data(&p, &[1.0, 0.0], None).unwrap();
        assert_eq!(td.class, BoundaryClass::N0);
        let arc = backward_horizontal(&p, &td, 1.5, 1e-2, None).unwrap();
        assert!(!arc.is_fan());
        assert!((arc.y[0][0] + 0.5).abs() < 1e-12 && arc.y[0][1].abs() < 1e-12);
        assert!(check_maximum_principle(&p, &arc).unwrap().0 <= 1e-12);
    }

    #[test]
    fn supergradient_examples() {
        let p = builtin("EIK64").unwrap().problem;
        let g = crate::grid::build_grid(&p.domain, &[161, 161]).unwrap();
        let f = crate::solver::solve_value(&p, &g, &Default::default()).unwrap();
        assert!(verify_supergradient(&f, &[1.5, 0.0], &[1.0, 0.0], 1.0, 0.3).unwrap().0);
        assert!(!verify_supergradient(&f, &[1.5, 0.0], &[0.0, 0.0], 1.0, 0.3).unwrap().0);
        let lin = ValueField::from_fn(g.clone(), |x| 2.0 * x[0] - x[1]);
        let (ok, worst) = verify_supergradient(&lin, &[0.3, 0.1], &[2.0, -1.0], 0.0, 0.3).unwrap();
        assert!(ok && worst <= 1e-12);
        let (ok, _) = verify_horizontal_supergradient(&lin, &[0.3, 0.1], &[0.0, 0.0], 0.0, 0.3).unwrap();
        assert!(ok);
    }

    #[test]
    fn open_loop_exb() {
        let p = builtin("EXB").unwrap().problem;
        let tr = simulate_open_loop(&p, &[-1.0, 0.0], &|_, _| vec![0.5], 1e-3, 100_000).unwrap();
        assert!((tr.cost - 2.0).abs() <= 1e-6, "{}", tr.cost);
        assert!(tr.exit_point[0].abs() < 1e-9);
    }
}

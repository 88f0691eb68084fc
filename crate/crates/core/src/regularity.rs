//! Regularity diagnostics of a solved value field: singular and non-Lipschitz
//! node masks, reachable-gradient fans and the hypograph normal cone,
//! exterior spheres, semiconcavity, the representation of supergradients by
//! transported normals, and the singular sweep.

use crate::arcs::{backward_horizontal_until, terminal_data, transported_normals, TransportedNormals};
use crate::error::{Error, Result};
use crate::grid::{Mask, NodeStatus, ValueField};
use crate::problem::ControlProblem;
use crate::target::{BoundaryClass, BoundaryPoint};
use crate::vecops::{angle_deg, dot, norm, normalized, scale, sub};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegularityOptions {
    /// Slope gap that marks a kink.
    pub theta_s: f64,
    /// Blow-up threshold is `kappa / sqrt(max spacing)`.
    pub kappa: f64,
    pub cluster_deg: f64,
    pub fan_radius_cells: f64,
    pub sphere_radius_cells: f64,
    pub beta_levels: usize,
    pub diff_tol_deg: f64,
    pub synthesis_step_cells: f64,
    pub max_steps: usize,
}

impl Default for RegularityOptions {
    fn default() -> Self {
        RegularityOptions {
            theta_s: 0.5,
            kappa: 1.0,
            cluster_deg: 5.0,
            fan_radius_cells: 1.5,
            sphere_radius_cells: 5.0,
            beta_levels: 5,
            diff_tol_deg: 5.0,
            synthesis_step_cells: 0.5,
            max_steps: 200_000,
        }
    }
}

/// Node index of the neighbour along axis `a`, both sides, when both exist and are reached.
/// Forward and backward difference quotients along axis `a`. A side whose
/// neighbor lies in the target is `None`: V lives off the target, and target
/// values are the terminal cost rather than its continuation.
fn quotients(field: &ValueField, idx: usize, a: usize) -> Option<(Option<f64>, Option<f64>)> {
    let ip = field.grid.neighbor(idx, a, 1)?;
    let im = field.grid.neighbor(idx, a, -1)?;
    if field.status[ip] == NodeStatus::Unreached || field.status[im] == NodeStatus::Unreached {
        return None;
    }
    let h = field.grid.spacing[a];
    let side = |k: usize, d: f64| (field.status[k] != NodeStatus::Target).then_some(d / h);
    let q = (side(ip, field.values[ip] - field.values[idx]), side(im, field.values[idx] - field.values[im]));
    (q.0.is_some() || q.1.is_some()).then_some(q)
}

/// Gradient at a converged node: central where both neighbors are off the
/// target, one-sided where one of them is in it.
pub fn node_gradient(field: &ValueField, idx: usize) -> Option<Vec<f64>> {
    if field.status[idx] != NodeStatus::Converged {
        return None;
    }
    (0..field.grid.dim())
        .map(|a| match quotients(field, idx, a)? {
            (Some(f), Some(b)) => Some(0.5 * (f + b)),
            (f, b) => f.or(b),
        })
        .collect()
}

/// Non-Lipschitz nodes: `|node gradient| >= kappa / sqrt(max spacing)`.
pub fn detect_nonlipschitz_set(field: &ValueField, kappa: f64) -> Mask {
    let thr = kappa / field.grid.max_spacing().sqrt();
    (0..field.grid.len()).map(|k| node_gradient(field, k).is_some_and(|g| norm(&g) >= thr)).collect()
}

/// Non-differentiable nodes: a one-sided slope gap above `theta_s` on some
/// axis, or a blow-up.
pub fn detect_singular_set(field: &ValueField, theta_s: f64, kappa: f64) -> Mask {
    let blow = detect_nonlipschitz_set(field, kappa);
    (0..field.grid.len())
        .map(|k| {
            if blow[k] {
                return true;
            }
            if field.status[k] != NodeStatus::Converged {
                return false;
            }
            (0..field.grid.dim()).any(|a| {
                let Some((Some(fwd), Some(bwd))) = quotients(field, k, a) else { return false };
                (fwd - bwd).abs() > theta_s
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularMasks {
    pub sigma_v: Mask,
    pub sigma_v_inf: Mask,
}

impl SingularMasks {
    pub fn detect(field: &ValueField, opts: &RegularityOptions) -> Self {
        SingularMasks {
            sigma_v: detect_singular_set(field, opts.theta_s, opts.kappa),
            sigma_v_inf: detect_nonlipschitz_set(field, opts.kappa),
        }
    }
}

/// Flagged fraction of all grid nodes.
pub fn area_fraction(mask: &[bool]) -> f64 {
    mask.iter().filter(|&&b| b).count() as f64 / mask.len().max(1) as f64
}

/// Blow-up direction at a node. Per axis, the larger one-sided quotient is
/// used when both sides agree in sign, the central one otherwise.
pub fn horizontal_direction(field: &ValueField, idx: usize) -> Option<Vec<f64>> {
    let mut g = Vec::with_capacity(field.grid.dim());
    for a in 0..field.grid.dim() {
        let (fwd, bwd) = match quotients(field, idx, a)? {
            (Some(f), Some(b)) => (f, b),
            (f, b) => {
                g.push(f.or(b).unwrap_or(0.0));
                continue;
            }
        };
        g.push(if fwd * bwd > 0.0 {
            if fwd.abs() >= bwd.abs() { fwd } else { bwd }
        } else {
            0.5 * (fwd + bwd)
        });
    }
    normalized(&g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalFan {
    pub x: Vec<f64>,
    pub value: f64,
    /// Cluster means of finite gradients.
    pub grads: Vec<Vec<f64>>,
    /// Cluster means of unit blow-up directions.
    pub hgrads: Vec<Vec<f64>>,
    /// Unit vectors in `R^{d+1}`: `(-g, 1)/|.|` and `(-h, 0)`.
    pub generators: Vec<Vec<f64>>,
    /// Finite gradients dropped because blow-up directions were present.
    pub dominated: usize,
}

fn lift(g: &[f64], last: f64) -> Vec<f64> {
    let mut v = scale(g, -1.0);
    v.push(last);
    v
}

/// Greedy angular clustering; returns the index of each item's cluster.
fn cluster(dirs: &[Vec<f64>], tol_deg: f64) -> Vec<usize> {
    let mut sums: Vec<Vec<f64>> = Vec::new();
    let mut label = Vec::with_capacity(dirs.len());
    for v in dirs {
        let hit = sums.iter().position(|s| angle_deg(s, v) <= tol_deg);
        match hit {
            Some(c) => {
                for (s, x) in sums[c].iter_mut().zip(v) {
                    *s += x;
                }
                label.push(c);
            }
            None => {
                sums.push(v.clone());
                label.push(sums.len() - 1);
            }
        }
    }
    label
}

fn cluster_means(items: &[Vec<f64>], dirs: &[Vec<f64>], tol_deg: f64) -> Vec<Vec<f64>> {
    let labels = cluster(dirs, tol_deg);
    let k = labels.iter().cloned().max().map_or(0, |m| m + 1);
    let d = items.first().map_or(0, |v| v.len());
    let mut sum = vec![vec![0.0; d]; k];
    let mut cnt = vec![0usize; k];
    for (v, &c) in items.iter().zip(&labels) {
        for i in 0..d {
            sum[c][i] += v[i];
        }
        cnt[c] += 1;
    }
    sum.into_iter().zip(cnt).map(|(s, c)| scale(&s, 1.0 / c as f64)).collect()
}

/// Reachable gradients from smooth nodes and blow-up directions from
/// non-Lipschitz nodes in `B(x, radius)`, clustered at `cluster_deg`.
pub fn reachable_gradient_fan(field: &ValueField, masks: &SingularMasks, x: &[f64], radius: f64, cluster_deg: f64) -> Result<NormalFan> {
    let value = field.interpolate_checked(x, true)?;
    let mut grads = Vec::new();
    let mut hdirs = Vec::new();
    for k in field.grid.nodes_in_ball(x, radius) {
        if masks.sigma_v_inf[k] {
            if let Some(h) = horizontal_direction(field, k) {
                hdirs.push(h);
            }
        } else if !masks.sigma_v[k] {
            if let Some(g) = node_gradient(field, k) {
                grads.push(g);
            }
        }
    }
    if grads.is_empty() && hdirs.is_empty() {
        return Err(Error::NoUsableNeighbors);
    }
    let hgrads: Vec<Vec<f64>> = cluster_means(&hdirs, &hdirs, cluster_deg).iter().filter_map(|v| normalized(v)).collect();
    let gdirs: Vec<Vec<f64>> = grads.iter().map(|g| normalized(&lift(g, 1.0)).unwrap()).collect();
    let gmeans = cluster_means(&grads, &gdirs, cluster_deg);
    let (grads, dominated) = if hgrads.is_empty() { (gmeans, 0) } else { (vec![], gmeans.len()) };
    let mut generators: Vec<Vec<f64>> = grads.iter().map(|g| normalized(&lift(g, 1.0)).unwrap()).collect();
    generators.extend(hgrads.iter().map(|h| lift(h, 0.0)));
    Ok(NormalFan { x: x.to_vec(), value, grads, hgrads, generators, dominated })
}

/// Minimum-norm point of the convex hull of `gens` by Frank-Wolfe with away
/// steps. Returns the point.
pub fn min_norm_point(gens: &[Vec<f64>], iters: usize) -> Vec<f64> {
    let m = gens.len();
    let mut lam: Vec<f64> = vec![0.0; m];
    let start = (0..m).min_by(|&a, &b| norm(&gens[a]).total_cmp(&norm(&gens[b]))).unwrap();
    lam[start] = 1.0;
    let mut x = gens[start].clone();
    for _ in 0..iters {
        let scores: Vec<f64> = gens.iter().map(|g| dot(g, &x)).collect();
        let s = (0..m).min_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
        let a = (0..m).filter(|&i| lam[i] > 0.0).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
        let xx = dot(&x, &x);
        let gap_fw = xx - scores[s];
        let gap_away = scores[a] - xx;
        let (dir, gmax, toward, away) = if gap_fw >= gap_away {
            (sub(&gens[s], &x), 1.0, Some(s), None)
        } else {
            (sub(&x, &gens[a]), lam[a] / (1.0 - lam[a]).max(1e-300), None, Some(a))
        };
        let dd = dot(&dir, &dir);
        if dd <= 1e-30 || gap_fw.max(gap_away) <= 1e-16 {
            break;
        }
        let gamma = (-dot(&x, &dir) / dd).clamp(0.0, gmax);
        if gamma <= 0.0 {
            break;
        }
        for (xi, di) in x.iter_mut().zip(&dir) {
            *xi += gamma * di;
        }
        if let Some(s) = toward {
            for l in lam.iter_mut() {
                *l *= 1.0 - gamma;
            }
            lam[s] += gamma;
        }
        if let Some(a) = away {
            for l in lam.iter_mut() {
                *l *= 1.0 + gamma;
            }
            lam[a] -= gamma;
            if lam[a] < 1e-15 {
                lam[a] = 0.0;
            }
        }
    }
    x
}

/// Pointed iff the hull of the unit generators stays away from the origin.
pub fn check_pointedness(generators: &[Vec<f64>]) -> (bool, f64) {
    if generators.is_empty() {
        return (false, 0.0);
    }
    let n = norm(&min_norm_point(generators, 200));
    (n > 1e-6, n)
}

/// Hypograph samples `(z - x, beta - V(x))` around `x`, with `beta` taking
/// `levels` values `V(z) - k * max spacing`. Target and unreached nodes are skipped.
fn hypograph_samples(field: &ValueField, x: &[f64], vx: f64, radius: f64, levels: usize) -> Vec<Vec<f64>> {
    let db = field.grid.max_spacing();
    let mut out = Vec::new();
    for k in field.grid.nodes_in_ball(x, radius) {
        if field.status[k] != NodeStatus::Converged {
            continue;
        }
        let dz = sub(&field.grid.node(k), x);
        for l in 0..levels {
            let mut w = dz.clone();
            w.push(field.values[k] - l as f64 * db - vx);
            out.push(w);
        }
    }
    out
}

/// Largest radius of a ball touching the hypograph at `(x, V(x))` from the
/// direction `v` without meeting the sampled hypograph; infinite when no
/// sample lies on the side of `v`.
pub fn exterior_sphere_radius(field: &ValueField, x: &[f64], v: &[f64], radius: f64) -> Result<f64> {
    exterior_sphere_radius_levels(field, x, v, radius, RegularityOptions::default().beta_levels)
}

pub fn exterior_sphere_radius_levels(field: &ValueField, x: &[f64], v: &[f64], radius: f64, levels: usize) -> Result<f64> {
    let vx = field.interpolate_checked(x, true)?;
    let mut rho = f64::INFINITY;
    for w in hypograph_samples(field, x, vx, radius, levels) {
        let vw = dot(v, &w);
        if vw > 1e-14 {
            rho = rho.min(dot(&w, &w) / (2.0 * vw));
        }
    }
    Ok(rho)
}

/// Differentiable hypograph: every generator within `tol_deg` of their mean direction.
pub fn check_hypograph_differentiability(fan: &NormalFan, tol_deg: f64) -> (bool, Vec<f64>) {
    let d1 = fan.generators.first().map_or(0, |g| g.len());
    let mut sum = vec![0.0; d1];
    for g in &fan.generators {
        for (s, x) in sum.iter_mut().zip(g) {
            *s += x;
        }
    }
    match normalized(&sum) {
        Some(dir) => (fan.generators.iter().all(|g| angle_deg(g, &dir) <= tol_deg), dir),
        None => (false, sum),
    }
}

/// Largest second difference `[V(x+he) + V(x-he) - 2V(x)] / h^2` over
/// converged, non-excluded nodes. `probe_h = None` probes at the grid spacing
/// of each axis.
pub fn semiconcavity_constant(field: &ValueField, exclude: Option<&[bool]>, probe_h: Option<f64>) -> f64 {
    let grid = &field.grid;
    let mut c = f64::NEG_INFINITY;
    for k in 0..grid.len() {
        if field.status[k] != NodeStatus::Converged || exclude.is_some_and(|m| m[k]) {
            continue;
        }
        let x = grid.node(k);
        for a in 0..grid.dim() {
            let h = probe_h.unwrap_or(grid.spacing[a]);
            let mut xp = x.clone();
            xp[a] += h;
            let mut xm = x.clone();
            xm[a] -= h;
            let (Ok(vp), Ok(vm)) = (field.interpolate_checked(&xp, true), field.interpolate_checked(&xm, true)) else {
                continue;
            };
            c = c.max((vp + vm - 2.0 * field.values[k]) / (h * h));
        }
    }
    c
}

/// Checks `-q/|q| . (z - x) <= sigma |z - x|^2` at nodes of the ball with
/// `V(z) >= alpha`. Vacuous when the sublevel set misses the ball.
pub fn verify_sublevel_normal(field: &ValueField, x: &[f64], q: &[f64], alpha: f64, sigma: f64, radius: f64) -> Result<(bool, f64)> {
    let qh = normalized(q).ok_or(Error::ZeroCostate)?;
    let nodes: Vec<usize> = field.grid.nodes_in_ball(x, radius).into_iter().filter(|&k| field.status[k] != NodeStatus::Unreached).collect();
    if nodes.iter().all(|&k| field.values[k] > alpha) {
        return Ok((true, f64::NEG_INFINITY));
    }
    let mut worst = f64::NEG_INFINITY;
    for k in nodes {
        if field.values[k] < alpha {
            continue;
        }
        let dz = sub(&field.grid.node(k), x);
        worst = worst.max(-dot(&qh, &dz) - sigma * dot(&dz, &dz));
    }
    Ok((worst <= 1e-12, worst))
}

fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() < 1e-12 {
            return None;
        }
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for c in (0..n).rev() {
        let s: f64 = (c + 1..n).map(|k| a[c][k] * x[k]).sum();
        x[c] = (b[c] - s) / a[c][c];
    }
    Some(x)
}

/// Euclidean projection of `u` onto the cone generated by `gens`, by
/// enumerating supports of size at most the dimension.
pub fn project_onto_cone(u: &[f64], gens: &[Vec<f64>]) -> Vec<f64> {
    let dim = u.len();
    let m = gens.len();
    let mut best = vec![0.0; dim];
    let mut best_res = dot(u, u);
    for mask in 1u32..(1u32 << m) {
        let idx: Vec<usize> = (0..m).filter(|&i| mask >> i & 1 == 1).collect();
        if idx.len() > dim {
            continue;
        }
        let gram: Vec<Vec<f64>> = idx.iter().map(|&i| idx.iter().map(|&j| dot(&gens[i], &gens[j])).collect()).collect();
        let rhs: Vec<f64> = idx.iter().map(|&i| dot(&gens[i], u)).collect();
        let Some(c) = solve_small(gram, rhs) else { continue };
        if c.iter().any(|&v| v < 0.0) {
            continue;
        }
        let mut p = vec![0.0; dim];
        for (ci, &i) in c.iter().zip(&idx) {
            for k in 0..dim {
                p[k] += ci * gens[i][k];
            }
        }
        let r = sub(u, &p);
        let res = dot(&r, &r);
        if res < best_res {
            best_res = res;
            best = p;
        }
    }
    best
}

/// Angle in degrees from unit `u` to the cone generated by `gens`.
fn angle_to_cone(u: &[f64], gens: &[Vec<f64>]) -> f64 {
    let p = project_onto_cone(u, gens);
    if norm(&p) > 1e-12 {
        angle_deg(u, &p)
    } else {
        gens.iter().map(|g| angle_deg(u, g)).fold(f64::INFINITY, f64::min)
    }
}

/// Unit generators plus normalized pairwise mixtures.
fn cone_probes(gens: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = gens.to_vec();
    for i in 0..gens.len() {
        for j in i + 1..gens.len() {
            for t in [0.25, 0.5, 0.75] {
                let v: Vec<f64> = gens[i].iter().zip(&gens[j]).map(|(a, b)| (1.0 - t) * a + t * b).collect();
                if let Some(u) = normalized(&v) {
                    out.push(u);
                }
            }
        }
    }
    out
}

/// Angular Hausdorff distance in degrees between two finitely generated cones;
/// 0 when both are trivial and 180 when exactly one is.
pub fn cone_hausdorff_deg(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => return 180.0,
        _ => {}
    }
    let one = |x: &[Vec<f64>], y: &[Vec<f64>]| cone_probes(x).iter().map(|u| angle_to_cone(u, y)).fold(0.0, f64::max);
    one(a, b).max(one(b, a))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Representation {
    pub distance_p_deg: f64,
    pub distance_inf_deg: f64,
    pub pointed: bool,
    pub fan: NormalFan,
    pub transported: TransportedNormals,
}

/// Compares the hypograph normal cone built from reachable gradients with the
/// one built from transported normals.
pub fn compare_representation(
    p: &ControlProblem,
    field: &ValueField,
    masks: &SingularMasks,
    x: &[f64],
    opts: &RegularityOptions,
) -> Result<Representation> {
    let h = field.grid.max_spacing();
    let fan = reachable_gradient_fan(field, masks, x, opts.fan_radius_cells * h, opts.cluster_deg)?;
    let transported = transported_normals(p, field, x, opts.synthesis_step_cells * field.grid.min_spacing(), opts.max_steps)?;
    let mut tgens: Vec<Vec<f64>> = transported.n1.iter().filter_map(|q| normalized(&lift(q, 1.0))).collect();
    tgens.extend(transported.n0.iter().map(|n| lift(n, 0.0)));
    let distance_p_deg = cone_hausdorff_deg(&fan.generators, &tgens);
    let distance_inf_deg = cone_hausdorff_deg(&fan.hgrads, &transported.n0);
    let pointed = check_pointedness(&fan.generators).0;
    Ok(Representation { distance_p_deg, distance_inf_deg, pointed, fan, transported })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub curves: Vec<Vec<Vec<f64>>>,
    pub degenerate_points: Vec<Vec<f64>>,
}

/// Backward horizontal characteristics from every tangential boundary sample.
/// Curves stop on entering the interior of the target or nearing the box
/// edge; fans contribute their base point instead.
pub fn sweep_singular_set(p: &ControlProblem, samples: &[BoundaryPoint], duration: f64, step: f64, tie_break: Option<usize>) -> SweepResult {
    let mut out = SweepResult::default();
    let margin = 2.0 * step * p.constants.speed;
    let inside = |y: &[f64]| p.eval_level(y).map_or(true, |h| h < -1e-9);
    for bp in samples.iter().filter(|b| b.class == BoundaryClass::N0) {
        let Ok(td) = terminal_data(p, &bp.x, Some(&bp.xi)) else { continue };
        let stop = |y: &[f64]| inside(y) || !p.in_box(y, margin);
        let Ok(arc) = backward_horizontal_until(p, &td, duration, step, tie_break, &stop) else { continue };
        if arc.is_fan() {
            out.degenerate_points.push(bp.x.clone());
            continue;
        }
        // Mesh runs forward in time; the curve starts at the boundary point.
        let mut poly: Vec<Vec<f64>> = Vec::new();
        for y in arc.y.iter().rev() {
            if inside(y) {
                break;
            }
            poly.push(y.clone());
        }
        if poly.len() >= 2 {
            out.curves.push(poly);
        }
    }
    out
}

/// Draws up to `count` distinct node positions among `eligible` nodes.
pub fn sample_nodes(field: &ValueField, eligible: &[bool], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut idx: Vec<usize> = (0..field.grid.len()).filter(|&k| eligible[k]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    idx.truncate(count);
    idx.into_iter().map(|k| field.grid.node(k)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointDiagnostics {
    pub x: Vec<f64>,
    pub value: f64,
    pub grads: Vec<Vec<f64>>,
    pub hgrads: Vec<Vec<f64>>,
    pub generators: Vec<Vec<f64>>,
    pub pointed: bool,
    pub min_norm: f64,
    /// Exterior-sphere radius per generator; `None` stands for infinity.
    pub sphere_radii: Vec<Option<f64>>,
    pub hypograph_differentiable: bool,
    pub direction: Vec<f64>,
    pub distance_p_deg: Option<f64>,
    pub distance_inf_deg: Option<f64>,
    pub n1: Vec<Vec<f64>>,
    pub n0: Vec<Vec<f64>>,
    pub exit_costs: Vec<f64>,
    pub error: Option<String>,
}

/// Full diagnostics at one point.
pub fn diagnose_point(p: &ControlProblem, field: &ValueField, masks: &SingularMasks, x: &[f64], opts: &RegularityOptions) -> PointDiagnostics {
    let mut out = PointDiagnostics {
        x: x.to_vec(),
        value: f64::NAN,
        grads: vec![],
        hgrads: vec![],
        generators: vec![],
        pointed: false,
        min_norm: 0.0,
        sphere_radii: vec![],
        hypograph_differentiable: false,
        direction: vec![],
        distance_p_deg: None,
        distance_inf_deg: None,
        n1: vec![],
        n0: vec![],
        exit_costs: vec![],
        error: None,
    };
    let h = field.grid.max_spacing();
    let rep = match compare_representation(p, field, masks, x, opts) {
        Ok(r) => r,
        Err(e) => {
            out.error = Some(e.to_string());
            if let Ok(fan) = reachable_gradient_fan(field, masks, x, opts.fan_radius_cells * h, opts.cluster_deg) {
                fill_fan(&mut out, field, &fan, opts);
            }
            return out;
        }
    };
    fill_fan(&mut out, field, &rep.fan, opts);
    out.distance_p_deg = Some(rep.distance_p_deg);
    out.distance_inf_deg = Some(rep.distance_inf_deg);
    out.n1 = rep.transported.n1;
    out.n0 = rep.transported.n0;
    out.exit_costs = rep.transported.exits.iter().map(|e| e.cost).collect();
    out
}

fn fill_fan(out: &mut PointDiagnostics, field: &ValueField, fan: &NormalFan, opts: &RegularityOptions) {
    let h = field.grid.max_spacing();
    out.value = fan.value;
    out.grads = fan.grads.clone();
    out.hgrads = fan.hgrads.clone();
    out.generators = fan.generators.clone();
    let (pointed, mn) = check_pointedness(&fan.generators);
    out.pointed = pointed;
    out.min_norm = mn;
    out.sphere_radii = fan
        .generators
        .iter()
        .map(|v| {
            exterior_sphere_radius_levels(field, &fan.x, v, opts.sphere_radius_cells * h, opts.beta_levels)
                .ok()
                .filter(|r| r.is_finite())
        })
        .collect();
    let (diff, dir) = check_hypograph_differentiability(fan, opts.diff_tol_deg);
    out.hypograph_differentiable = diff;
    out.direction = dir;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    #[test]
    fn pointedness_examples() {
        assert_eq!(check_pointedness(&[vec![0.0, 0.0, 1.0]]), (true, 1.0));
        let (p, n) = check_pointedness(&[vec![0.0, 1.0, 0.0], vec![0.0, -1.0, 0.0]]);
        assert!(!p && n <= 1e-6);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let (p, n) = check_pointedness(&[vec![-s, 0.0, s], vec![s, 0.0, s]]);
        assert!(p && (n - s).abs() < 1e-12);
        let tri = [vec![1.0, 0.0], vec![-0.5, 0.75f64.sqrt()], vec![-0.5, -(0.75f64.sqrt())]];
        assert!(!check_pointedness(&tri).0);
    }

    #[test]
    fn linear_field_has_no_flags() {
        let g = build_grid(&[[-1.0, 1.0], [-1.0, 1.0]], &[21, 21]).unwrap();
        let f = ValueField::from_fn(g, |x| 0.3 * x[0] - 0.7 * x[1]);
        let m = SingularMasks::detect(&f, &RegularityOptions::default());
        assert!(!m.sigma_v.iter().any(|&b| b));
        assert!(semiconcavity_constant(&f, None, None) <= 1e-12);
    }

    #[test]
    fn concave_quadratic_sphere() {
        let g = build_grid(&[[-1.0, 1.0], [-1.0, 1.0]], &[41, 41]).unwrap();
        let f = ValueField::from_fn(g, |x| -(x[0] * x[0] + x[1] * x[1]));
        let rho = exterior_sphere_radius(&f, &[0.0, 0.0], &[0.0, 0.0, 1.0], 0.5).unwrap();
        assert!(rho >= 0.5 - 1e-9, "{rho}");
    }

    #[test]
    fn cone_distance_basics() {
        let a = vec![vec![1.0, 0.0, 0.0]];
        let b = vec![vec![0.0, 1.0, 0.0]];
        assert!((cone_hausdorff_deg(&a, &b) - 90.0).abs() < 1e-9);
        assert_eq!(cone_hausdorff_deg(&a, &a), 0.0);
        assert_eq!(cone_hausdorff_deg(&[], &[]), 0.0);
        assert_eq!(cone_hausdorff_deg(&a, &[]), 180.0);
        let ab = vec![a[0].clone(), b[0].clone()];
        assert!((cone_hausdorff_deg(&ab, &a) - 90.0).abs() < 1e-9);
    }

    #[test]
    fn projection_onto_quadrant() {
        let gens = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(project_onto_cone(&[2.0, -1.0], &gens), vec![2.0, 0.0]);
        assert_eq!(project_onto_cone(&[-1.0, -1.0], &gens), vec![0.0, 0.0]);
        assert_eq!(project_onto_cone(&[0.5, 0.25], &gens), vec![0.5, 0.25]);
    }

    #[test]
    fn horizontal_direction_rule() {
        let g = build_grid(&[[-1.0, 1.0], [-1.0, 1.0]], &[5, 5]).unwrap();
        let f = ValueField::from_fn(g.clone(), |x| x[1].signum() * x[1].abs().sqrt());
        let k = g.ravel(&[2, 3]);
        let dir = horizontal_direction(&f, k).unwrap();
        assert!(dir[0].abs() < 1e-15 && (dir[1] - 1.0).abs() < 1e-15);
    }
}

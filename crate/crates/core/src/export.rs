//! CSV, JSON and binary writers for fields, arcs, trajectories and reports.
//!
//! Floats are written with Rust's shortest round-trip formatting, so equal
//! inputs give byte-identical files.

use crate::arcs::{ExtremalArc, Trajectory};
use crate::benchmarks::ConvergenceRow;
use crate::error::{Error, Result};
use crate::grid::{build_grid, Grid, NodeStatus, SolveStats, ValueField};
use crate::problem::ControlProblem;
use crate::regularity::{area_fraction, diagnose_point, PointDiagnostics, RegularityOptions, SingularMasks, SweepResult};
use crate::target::BoundaryPoint;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

pub const EXGF_MAGIC: &[u8; 4] = b"EXGF";
pub const EXGF_VERSION: u8 = 1;

fn io(e: std::io::Error) -> Error {
    Error::Io(e.to_string())
}

fn axis_header(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}{i}")).collect()
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// One row per node: `x1,..,xd,value,status`.
pub fn write_field_csv(field: &ValueField, w: &mut impl Write) -> Result<()> {
    let d = field.grid.dim();
    let mut head = axis_header("x", d);
    head.extend(["value".into(), "status".into()]);
    writeln!(w, "{}", head.join(",")).map_err(io)?;
    for k in 0..field.grid.len() {
        let x = field.grid.node(k);
        writeln!(w, "{},{},{}", join(&x), field.values[k], field.status[k].label()).map_err(io)?;
    }
    Ok(())
}

fn status_code(s: NodeStatus) -> u8 {
    match s {
        NodeStatus::Target => 0,
        NodeStatus::Converged => 1,
        NodeStatus::Unreached => 2,
    }
}

/// Binary field: magic, version, `d` (u8), per axis `n` (u32) `lo` `hi` (f64),
/// then the values (f64) and one status byte per node. Little endian.
pub fn write_exgf(field: &ValueField, w: &mut impl Write) -> Result<()> {
    let g = &field.grid;
    let d = u8::try_from(g.dim()).map_err(|_| Error::InvalidGrid("too many axes".into()))?;
    let mut buf = Vec::with_capacity(16 + 9 * g.len());
    buf.extend_from_slice(EXGF_MAGIC);
    buf.push(EXGF_VERSION);
    buf.push(d);
    for a in 0..g.dim() {
        let n = u32::try_from(g.n[a]).map_err(|_| Error::InvalidGrid("axis too long".into()))?;
        buf.extend_from_slice(&n.to_le_bytes());
        buf.extend_from_slice(&g.lo[a].to_le_bytes());
        buf.extend_from_slice(&g.hi[a].to_le_bytes());
    }
    for v in &field.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend(field.status.iter().map(|s| status_code(*s)));
    w.write_all(&buf).map_err(io)
}

pub fn read_exgf(r: &mut impl Read) -> Result<ValueField> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(io)?;
    let bad = |m: &str| Error::Io(format!("bad EXGF data: {m}"));
    let mut pos = 0usize;
    let mut take = |k: usize| -> Result<&[u8]> {
        let s = buf.get(pos..pos + k).ok_or_else(|| bad("truncated"))?;
        pos += k;
        Ok(s)
    };
    if take(4)? != EXGF_MAGIC {
        return Err(bad("magic"));
    }
    let head = take(2)?;
    if head[0] != EXGF_VERSION {
        return Err(bad("version"));
    }
    let d = head[1] as usize;
    let f64_at = |s: &[u8]| f64::from_le_bytes(s.try_into().unwrap());
    let mut n = Vec::with_capacity(d);
    let mut bounds = Vec::with_capacity(d);
    for _ in 0..d {
        n.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
        let lo = f64_at(take(8)?);
        let hi = f64_at(take(8)?);
        bounds.push([lo, hi]);
    }
    let grid = build_grid(&bounds, &n)?;
    let values = take(8 * grid.len())?.chunks_exact(8).map(f64_at).collect();
    let status = take(grid.len())?
        .iter()
        .map(|c| match c {
            0 => Ok(NodeStatus::Target),
            1 => Ok(NodeStatus::Converged),
            2 => Ok(NodeStatus::Unreached),
            _ => Err(bad("status byte")),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ValueField { grid, values, status, stats: SolveStats::default() })
}

/// `t,y1..yd,p1..pd,u_index,H_residual,degenerate`.
pub fn write_arc_csv(arc: &ExtremalArc, residuals: &[f64], w: &mut impl Write) -> Result<()> {
    let d = arc.y.first().map_or(0, |y| y.len());
    let mut head = vec!["t".to_string()];
    head.extend(axis_header("y", d));
    head.extend(axis_header("p", d));
    head.extend(["u_index".into(), "H_residual".into(), "degenerate".into()]);
    writeln!(w, "{}", head.join(",")).map_err(io)?;
    for i in 0..arc.len() {
        let deg = serde_json::to_value(arc.degeneracy[i]).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        writeln!(w, "{},{},{},{},{},{}", arc.t[i], join(&arc.y[i]), join(&arc.p[i]), arc.u[i], residuals[i], deg).map_err(io)?;
    }
    Ok(())
}

/// `t,y1..yd,u1..um,u_index`; the control columns of the last row are empty.
pub fn write_trajectory_csv(traj: &Trajectory, m: usize, w: &mut impl Write) -> Result<()> {
    let d = traj.y.first().map_or(0, |y| y.len());
    let mut head = vec!["t".to_string()];
    head.extend(axis_header("y", d));
    head.extend(axis_header("u", m));
    head.push("u_index".into());
    writeln!(w, "{}", head.join(",")).map_err(io)?;
    for i in 0..traj.t.len() {
        let (u, ui) = match traj.u.get(i) {
            Some(u) => (join(u), traj.u_index[i].map(|k| k.to_string()).unwrap_or_default()),
            None => (vec![""; m].join(","), String::new()),
        };
        writeln!(w, "{},{},{},{}", traj.t[i], join(&traj.y[i]), u, ui).map_err(io)?;
    }
    Ok(())
}

/// `x1..xd,xi1..xid,margin,class`.
pub fn write_boundary_csv(points: &[BoundaryPoint], w: &mut impl Write) -> Result<()> {
    let d = points.first().map_or(0, |b| b.x.len());
    let mut head = axis_header("x", d);
    head.extend(axis_header("xi", d));
    head.extend(["margin".into(), "class".into()]);
    writeln!(w, "{}", head.join(",")).map_err(io)?;
    for b in points {
        writeln!(w, "{},{},{},{}", join(&b.x), join(&b.xi), b.margin, b.class.label()).map_err(io)?;
    }
    Ok(())
}

/// `name,n,linf,l1,sweeps`, with `n` written as `n1xn2..`. Timings are left
/// out so the file is reproducible.
pub fn write_convergence_csv(rows: &[ConvergenceRow], w: &mut impl Write) -> Result<()> {
    writeln!(w, "name,n,linf,l1,sweeps").map_err(io)?;
    for r in rows {
        let n = r.n.iter().map(|k| k.to_string()).collect::<Vec<_>>().join("x");
        writeln!(w, "{},{},{},{},{}", r.name, n, r.linf, r.l1, r.sweeps).map_err(io)?;
    }
    Ok(())
}

/// `curve,vertex,x1..xd`.
pub fn write_sweep_csv(sweep: &SweepResult, w: &mut impl Write) -> Result<()> {
    let d = sweep.curves.first().and_then(|c| c.first()).map_or(2, |y| y.len());
    let mut head = vec!["curve".to_string(), "vertex".to_string()];
    head.extend(axis_header("x", d));
    writeln!(w, "{}", head.join(",")).map_err(io)?;
    for (c, curve) in sweep.curves.iter().enumerate() {
        for (v, y) in curve.iter().enumerate() {
            writeln!(w, "{c},{v},{}", join(y)).map_err(io)?;
        }
    }
    Ok(())
}

/// Flagged nodes only: `x1..xd,sigma_v,sigma_v_inf`.
pub fn write_masks_csv(grid: &Grid, masks: &SingularMasks, w: &mut impl Write) -> Result<()> {
    let mut head = axis_header("x", grid.dim());
    head.extend(["sigma_v".into(), "sigma_v_inf".into()]);
    writeln!(w, "{}", head.join(",")).map_err(io)?;
    for k in 0..grid.len() {
        if masks.sigma_v[k] || masks.sigma_v_inf[k] {
            writeln!(w, "{},{},{}", join(&grid.node(k)), masks.sigma_v[k] as u8, masks.sigma_v_inf[k] as u8).map_err(io)?;
        }
    }
    Ok(())
}

/// Run-length encoding of the `true` runs as `[start, length]` pairs.
pub fn rle_encode(mask: &[bool]) -> Vec<[usize; 2]> {
    let mut runs = Vec::new();
    let mut k = 0;
    while k < mask.len() {
        if mask[k] {
            let start = k;
            while k < mask.len() && mask[k] {
                k += 1;
            }
            runs.push([start, k - start]);
        } else {
            k += 1;
        }
    }
    runs
}

pub fn rle_decode(runs: &[[usize; 2]], len: usize) -> Result<Vec<bool>> {
    let mut mask = vec![false; len];
    for &[s, l] in runs {
        let run = mask.get_mut(s..s + l).ok_or_else(|| Error::Io(format!("run {s}+{l} exceeds mask length {len}")))?;
        run.fill(true);
    }
    Ok(mask)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub n: Vec<usize>,
}

impl From<&Grid> for GridInfo {
    fn from(g: &Grid) -> Self {
        GridInfo { lo: g.lo.clone(), hi: g.hi.clone(), n: g.n.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedMask {
    pub flagged: usize,
    pub area_fraction: f64,
    pub runs: Vec<[usize; 2]>,
}

impl EncodedMask {
    pub fn new(mask: &[bool]) -> Self {
        EncodedMask { flagged: mask.iter().filter(|&&b| b).count(), area_fraction: area_fraction(mask), runs: rle_encode(mask) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub problem: String,
    pub grid: GridInfo,
    pub options: RegularityOptions,
    pub sigma_v: EncodedMask,
    pub sigma_v_inf: EncodedMask,
    pub points: Vec<PointDiagnostics>,
}

/// Masks plus per-point diagnostics; points are processed in parallel and
/// reported in input order.
pub fn regularity_report(p: &ControlProblem, field: &ValueField, points: &[Vec<f64>], opts: &RegularityOptions) -> (RegularityReport, SingularMasks) {
    let masks = SingularMasks::detect(field, opts);
    let diags = points.par_iter().map(|x| diagnose_point(p, field, &masks, x, opts)).collect();
    let report = RegularityReport {
        problem: p.name.clone(),
        grid: (&field.grid).into(),
        options: *opts,
        sigma_v: EncodedMask::new(&masks.sigma_v),
        sigma_v_inf: EncodedMask::new(&masks.sigma_v_inf),
        points: diags,
    };
    (report, masks)
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))
}

/// Heat map of a 2-d field CSV.
pub fn gnuplot_field(csv_name: &str) -> String {
    format!(
        "set datafile separator ','\nset key autotitle columnhead\nset view map\nset size ratio -1\n\
         set palette rgbformulae 33,13,10\nsplot '{csv_name}' using 1:2:(strcol(4) eq 'UNREACHED' ? 1/0 : $3) with points pt 5 ps 0.5 palette notitle\n"
    )
}

/// Overlay of polylines (`curve,vertex,x1,x2`) on flagged mask nodes.
pub fn gnuplot_sweep(sweep_csv: &str, masks_csv: &str) -> String {
    format!(
        "set datafile separator ','\nset key autotitle columnhead\nset size ratio -1\n\
         plot '{masks_csv}' using 1:($4 > 0 ? $2 : 1/0) with points pt 7 ps 0.3 title 'non-Lipschitz nodes', \\\n     \
         '{sweep_csv}' using 3:4 with lines lw 2 title 'swept curves'\n"
    )
}

/// Phase-plane plot of trajectory or arc CSVs (columns 2 and 3 hold `y1,y2`).
pub fn gnuplot_paths(csv_names: &[String]) -> String {
    let plots: Vec<String> = csv_names.iter().map(|f| format!("'{f}' using 2:3 with lines title '{f}'")).collect();
    format!("set datafile separator ','\nset key autotitle columnhead\nset size ratio -1\nplot {}\n", plots.join(", \\\n     "))
}

mod config;

use clap::{Parser, Subcommand};
use config::{expand_resolution, RunConfig};
use exitgrid::arcs::{
    backward_extremal, backward_horizontal, certify_optimality, check_maximum_principle, synthesize_branches, terminal_data, CertifyOptions,
};
use exitgrid::benchmarks::run_benchmark;
use exitgrid::export::*;
use exitgrid::regularity::{sample_nodes, sweep_singular_set};
use exitgrid::solver::hjb_residual_field;
use exitgrid::target::{boundary_samples, project_to_boundary, BoundaryClass};
use exitgrid::{build_grid, parse_problem, solve_value, ControlProblem, Error, NodeStatus, ValueField};
use serde_json::json;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

#[derive(Parser, Debug)]
#[command(name = "exitgrid", version, about = "Value functions and regularity diagnostics for exit-time control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `[output] dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Node counts per axis, e.g. `201,171`.
    #[arg(long, global = true, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Solve for the value function on a grid.
    Solve,
    /// Integrate extremal arcs backward from boundary points.
    Extremal,
    /// Build optimal trajectories from the solved value function.
    Synthesize,
    /// Singular-set masks and normal-cone diagnostics at points.
    Diagnose,
    /// Sweep horizontal characteristics from tangential boundary points.
    Sweep,
    /// Convergence table against benchmark oracles.
    Bench,
}

/// Failure carrying the process exit code.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { code: if e.is_validation() { 2 } else { 3 }, msg: e.to_string() }
    }
}

fn validation(msg: impl Into<String>) -> Failure {
    Failure { code: 2, msg: msg.into() }
}

type Res<T> = std::result::Result<T, Failure>;

struct Run {
    cfg: RunConfig,
    out: PathBuf,
    seed: u64,
    quiet: bool,
    log: Vec<String>,
    t0: Instant,
}

impl Run {
    fn note(&mut self, line: String) {
        if !self.quiet {
            eprintln!("{line}");
        }
        self.log.push(line);
    }

    fn timed(&mut self, what: &str, since: Instant) {
        let line = format!("{what}: {:.3} s", since.elapsed().as_secs_f64());
        self.note(line);
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn create(&self, name: &str) -> Res<BufWriter<File>> {
        File::create(self.path(name)).map(BufWriter::new).map_err(|e| validation(format!("cannot write {}: {e}", self.path(name).display())))
    }

    fn write_text(&self, name: &str, text: &str) -> Res<()> {
        let mut w = self.create(name)?;
        w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| Failure { code: 3, msg: e.to_string() })
    }

    fn write_with(&self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> exitgrid::Result<()>) -> Res<()> {
        let mut w = self.create(name)?;
        f(&mut w)?;
        w.flush().map_err(|e| Failure { code: 3, msg: e.to_string() })
    }

    fn problem(&self) -> Res<ControlProblem> {
        Ok(parse_problem(&self.cfg.problem_text()?)?)
    }

    fn grid_n(&self, p: &ControlProblem) -> Res<Vec<usize>> {
        let n = self.cfg.grid.n.clone().ok_or_else(|| validation("missing grid size: set [grid] n or pass --grid"))?;
        if n.len() != p.d {
            return Err(validation(format!("grid has {} axes but the problem has dimension {}", n.len(), p.d)));
        }
        Ok(n)
    }

    fn solve(&mut self, p: &ControlProblem) -> Res<ValueField> {
        let n = self.grid_n(p)?;
        let grid = build_grid(&p.domain, &n)?;
        let t = Instant::now();
        let field = solve_value(p, &grid, &self.cfg.solver)?;
        self.timed(&format!("solve {} on {n:?} ({} sweeps)", p.name, field.stats.sweeps), t);
        Ok(field)
    }
}

fn cmd_solve(run: &mut Run) -> Res<()> {
    let p = run.problem()?;
    let field = run.solve(&p)?;
    run.write_with("field.csv", |w| write_field_csv(&field, w))?;
    if run.cfg.output.binary {
        run.write_with("field.exgf", |w| write_exgf(&field, w))?;
    }
    let res = hjb_residual_field(&p, &field, None, run.cfg.solver.cfl);
    let summary = json!({
        "problem": p.name,
        "grid": GridInfo::from(&field.grid),
        "stats": field.stats,
        "residual": { "linf": res.linf, "l1": res.l1, "count": res.count },
        "nodes": {
            "target": field.count(NodeStatus::Target),
            "converged": field.count(NodeStatus::Converged),
            "unreached": field.count(NodeStatus::Unreached),
        },
    });
    run.write_text("residuals.json", &to_json(&summary)?)?;
    if run.cfg.output.gnuplot && p.d == 2 {
        run.write_text("field.gp", &gnuplot_field("field.csv"))?;
    }
    Ok(())
}

fn cmd_extremal(run: &mut Run) -> Res<()> {
    let p = run.problem()?;
    let sec = run.cfg.extremal.clone();
    if sec.points.is_empty() {
        return Err(validation("[extremal] points is empty"));
    }
    if let Some(bad) = sec.points.iter().position(|x| x.len() != p.d) {
        return Err(validation(format!("extremal point {bad} has the wrong dimension")));
    }
    let mut reports = Vec::new();
    let mut files = Vec::new();
    let mut first_err: Option<Failure> = None;
    for (i, x) in sec.points.iter().enumerate() {
        match extremal_one(run, &p, &sec, i, x) {
            Ok((report, name)) => {
                reports.push(report);
                files.push(name);
            }
            Err(f) => {
                reports.push(json!({ "point": x, "error": f.msg }));
                first_err.get_or_insert(f);
            }
        }
    }
    run.write_text("extremal.json", &to_json(&json!({ "problem": p.name, "arcs": reports }))?)?;
    if run.cfg.output.gnuplot && p.d == 2 {
        run.write_text("arcs.gp", &gnuplot_paths(&files))?;
    }
    first_err.map_or(Ok(()), Err)
}

fn extremal_one(run: &Run, p: &ControlProblem, sec: &config::ExtremalSection, i: usize, x: &[f64]) -> Res<(serde_json::Value, String)> {
    let bp = project_to_boundary(p, x)?;
    let td = terminal_data(p, &bp.x, Some(&bp.xi))?;
    let arc = match td.class {
        BoundaryClass::N1 => backward_extremal(p, &td, sec.duration, sec.step)?,
        BoundaryClass::N0 => backward_horizontal(p, &td, sec.duration, sec.step, sec.tie_break)?,
        BoundaryClass::Unreachable => return Err(Error::TangentialNormal(td.margin).into()),
    };
    let (max, per) = check_maximum_principle(p, &arc)?;
    let name = format!("arc_{i}.csv");
    run.write_with(&name, |w| write_arc_csv(&arc, &per, w))?;
    let report = json!({
        "file": name,
        "point": x,
        "boundary_point": bp.x,
        "class": td.class.label(),
        "margin": td.margin,
        "kind": arc.kind,
        "nodes": arc.len(),
        "max_hamiltonian_residual": max,
        "degenerate_fan": arc.is_fan(),
    });
    Ok((report, name))
}

fn cmd_synthesize(run: &mut Run) -> Res<()> {
    let p = run.problem()?;
    let sec = run.cfg.synthesize.clone();
    if sec.points.is_empty() {
        return Err(validation("[synthesize] points is empty"));
    }
    let field = run.solve(&p)?;
    let step = sec.step_cells * field.grid.min_spacing();
    let mut reports = Vec::new();
    let mut files = Vec::new();
    for (i, x) in sec.points.iter().enumerate() {
        let branches = synthesize_branches(&p, &field, x, step, sec.max_steps)?;
        let value = field.interpolate(x)?;
        let mut rows = Vec::new();
        for (b, traj) in branches.iter().enumerate() {
            let name = format!("traj_{i}_{b}.csv");
            run.write_with(&name, |w| write_trajectory_csv(traj, p.m, w))?;
            let cert = certify_optimality(&p, &field, traj, None, &CertifyOptions::default())?;
            rows.push(json!({
                "file": name,
                "cost": traj.cost,
                "exit_point": traj.exit_point,
                "steps": traj.t.len().saturating_sub(1),
                "verdict": cert.verdict,
                "tolerance": cert.tolerance,
            }));
            files.push(name);
        }
        reports.push(json!({ "x0": x, "value": value, "branches": rows }));
    }
    run.write_text("synthesize.json", &to_json(&json!({ "problem": p.name, "points": reports }))?)?;
    if run.cfg.output.gnuplot && p.d == 2 {
        run.write_text("trajectories.gp", &gnuplot_paths(&files))?;
    }
    Ok(())
}

fn cmd_diagnose(run: &mut Run) -> Res<()> {
    let p = run.problem()?;
    let field = run.solve(&p)?;
    let mut points = run.cfg.diagnose.points.clone();
    if let Some(bad) = points.iter().position(|x| x.len() != p.d) {
        return Err(validation(format!("diagnose point {bad} has the wrong dimension")));
    }
    if run.cfg.diagnose.samples > 0 {
        let eligible: Vec<bool> = field.status.iter().map(|s| *s == NodeStatus::Converged).collect();
        points.extend(sample_nodes(&field, &eligible, run.cfg.diagnose.samples, run.seed));
    }
    let t = Instant::now();
    let (report, masks) = regularity_report(&p, &field, &points, &run.cfg.regularity);
    run.timed(&format!("diagnose {} points", points.len()), t);
    run.write_text("report.json", &to_json(&report)?)?;
    run.write_with("masks.csv", |w| write_masks_csv(&field.grid, &masks, w))?;
    Ok(())
}

fn cmd_sweep(run: &mut Run) -> Res<()> {
    let p = run.problem()?;
    let sec = run.cfg.sweep.clone();
    let samples = boundary_samples(&p, sec.n_per_axis);
    let t = Instant::now();
    let sweep = sweep_singular_set(&p, &samples, sec.duration, sec.step, sec.tie_break);
    run.timed(&format!("sweep from {} boundary samples", samples.len()), t);
    run.write_with("sweep.csv", |w| write_sweep_csv(&sweep, w))?;
    run.write_with("boundary.csv", |w| write_boundary_csv(&samples, w))?;
    let n0 = samples.iter().filter(|b| b.class == BoundaryClass::N0).count();
    let summary = json!({
        "problem": p.name,
        "boundary_samples": samples.len(),
        "tangential_samples": n0,
        "curves": sweep.curves.len(),
        "degenerate_points": sweep.degenerate_points,
    });
    run.write_text("sweep.json", &to_json(&summary)?)?;
    // The overlay needs a mask, which needs a solved field.
    if run.cfg.grid.n.is_some() {
        let field = run.solve(&p)?;
        let masks = exitgrid::regularity::SingularMasks::detect(&field, &run.cfg.regularity);
        run.write_with("masks.csv", |w| write_masks_csv(&field.grid, &masks, w))?;
        if run.cfg.output.gnuplot && p.d == 2 {
            run.write_text("sweep.gp", &gnuplot_sweep("sweep.csv", "masks.csv"))?;
        }
    }
    Ok(())
}

fn cmd_bench(run: &mut Run) -> Res<()> {
    let sec = run.cfg.bench.clone();
    if sec.names.is_empty() || sec.resolutions.is_empty() {
        return Err(validation("[bench] needs names and resolutions"));
    }
    let mut rows = Vec::new();
    for name in &sec.names {
        let d = exitgrid::benchmarks::builtin(name)?.problem.d;
        let res: Vec<Vec<usize>> = sec.resolutions.iter().map(|r| expand_resolution(r, d)).collect();
        let t = Instant::now();
        let table = run_benchmark(name, &res, &run.cfg.solver)?;
        for r in &table {
            run.note(format!("bench {name} {:?}: linf {:.3e}, {:.3} s", r.n, r.linf, r.solve_seconds));
        }
        run.timed(&format!("bench {name}"), t);
        rows.extend(table);
    }
    run.write_with("convergence.csv", |w| write_convergence_csv(&rows, w))
}

fn load_config(cli: &Cli) -> Res<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| validation(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(n) = &cli.grid {
        cfg.grid.n = Some(n.clone());
    }
    if let Some(dir) = &cli.out {
        cfg.output.dir = dir.clone();
    }
    Ok(cfg)
}

fn configure_threads() -> Res<()> {
    let Ok(v) = std::env::var("EXITGRID_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| validation(format!("EXITGRID_THREADS must be a positive integer, got '{v}'")))?;
    if n == 0 {
        return Err(validation("EXITGRID_THREADS must be positive"));
    }
    // A second initialization in the same process is harmless.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn write_log(out: &Path, lines: &[String]) {
    let Ok(mut f) = File::create(out.join("run.log")) else { return };
    for l in lines {
        let _ = writeln!(f, "{l}");
    }
}

fn execute(cli: &Cli) -> Res<()> {
    configure_threads()?;
    let cfg = load_config(cli)?;
    let out = cfg.output.dir.clone();
    fs::create_dir_all(&out).map_err(|e| validation(format!("cannot create {}: {e}", out.display())))?;
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    let mut run = Run { cfg, out, seed, quiet: cli.quiet, log: Vec::new(), t0: Instant::now() };
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    run.log.push(format!("start {:?} at unix {stamp}, seed {seed}, threads {}", cli.command, rayon::current_num_threads()));
    let result = match cli.command {
        Command::Solve => cmd_solve(&mut run),
        Command::Extremal => cmd_extremal(&mut run),
        Command::Synthesize => cmd_synthesize(&mut run),
        Command::Diagnose => cmd_diagnose(&mut run),
        Command::Sweep => cmd_sweep(&mut run),
        Command::Bench => cmd_bench(&mut run),
    };
    let total = run.t0.elapsed().as_secs_f64();
    match &result {
        Ok(()) => run.log.push(format!("done in {total:.3} s")),
        Err(f) => run.log.push(format!("failed with exit code {} after {total:.3} s: {}", f.code, f.msg)),
    }
    write_log(&run.out, &run.log);
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("exitgrid: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

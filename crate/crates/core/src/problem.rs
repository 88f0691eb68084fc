//! Control problems: dynamics, costs, target, control samples and declared constants.

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::target;
use crate::vecops::{dist, norm};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// Speed bound.
    #[serde(rename = "N")]
    pub speed: f64,
    /// Running-cost floor.
    pub r0: f64,
    /// Terminal Lipschitz bound.
    #[serde(rename = "G")]
    pub g_lip: f64,
    /// Inner-ball radius of the target.
    pub rho0: f64,
}

#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub name: String,
    pub d: usize,
    pub m: usize,
    pub f: Vec<Expr>,
    /// Row `i` holds the partials of `f_i` with respect to `x1..xd`.
    pub df: Option<Vec<Vec<Expr>>>,
    pub r: Expr,
    pub dr: Option<Vec<Expr>>,
    pub g: Expr,
    pub dg: Option<Vec<Expr>>,
    pub h: Expr,
    pub dh: Option<Vec<Expr>>,
    pub controls: Vec<Vec<f64>>,
    pub domain: Vec<[f64; 2]>,
    pub constants: Constants,
}

fn fd_step(x: &[f64]) -> f64 {
    1e-6 * (1.0 + norm(x))
}

impl ControlProblem {
    pub fn eval_dynamics(&self, x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        self.f.iter().map(|e| e.eval(x, w)).collect()
    }

    pub fn eval_running_cost(&self, x: &[f64], w: &[f64]) -> Result<f64> {
        self.r.eval(x, w)
    }

    pub fn eval_terminal_cost(&self, x: &[f64]) -> Result<f64> {
        self.g.eval(x, &[])
    }

    pub fn eval_level(&self, x: &[f64]) -> Result<f64> {
        self.h.eval(x, &[])
    }

    /// Jacobian `D_x f`, row-major `d x d`.
    pub fn eval_dynamics_jacobian(&self, x: &[f64], w: &[f64]) -> Result<Vec<Vec<f64>>> {
        if let Some(df) = &self.df {
            return df.iter().map(|row| row.iter().map(|e| e.eval(x, w)).collect()).collect();
        }
        let mut jac = vec![vec![0.0; self.d]; self.d];
        let s = fd_step(x);
        let mut xp = x.to_vec();
        for j in 0..self.d {
            xp[j] = x[j] + s;
            let fp = self.eval_dynamics(&xp, w)?;
            xp[j] = x[j] - s;
            let fm = self.eval_dynamics(&xp, w)?;
            xp[j] = x[j];
            for i in 0..self.d {
                jac[i][j] = (fp[i] - fm[i]) / (2.0 * s);
            }
        }
        Ok(jac)
    }

    pub fn eval_running_gradient(&self, x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        match &self.dr {
            Some(dr) => dr.iter().map(|e| e.eval(x, w)).collect(),
            None => fd_gradient(&self.r, x, w),
        }
    }

    pub fn eval_terminal_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.dg {
            Some(dg) => dg.iter().map(|e| e.eval(x, &[])).collect(),
            None => fd_gradient(&self.g, x, &[]),
        }
    }

    pub fn eval_level_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.dh {
            Some(dh) => dh.iter().map(|e| e.eval(x, &[])).collect(),
            None => fd_gradient(&self.h, x, &[]),
        }
    }

    pub fn in_box(&self, x: &[f64], margin: f64) -> bool {
        x.iter()
            .zip(&self.domain)
            .all(|(v, [lo, hi])| *v >= lo - margin && *v <= hi + margin)
    }

    /// Checks structural invariants and the declared-constant form of (H3).
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("state dimension must be positive".into()));
        }
        if self.f.len() != self.d {
            return Err(Error::Config(format!("f has {} components, expected d = {}", self.f.len(), self.d)));
        }
        if self.domain.len() != self.d {
            return Err(Error::Config(format!("domain has {} axes, expected {}", self.domain.len(), self.d)));
        }
        if self.domain.iter().any(|[lo, hi]| !(hi > lo) || !lo.is_finite() || !hi.is_finite()) {
            return Err(Error::Config("domain box is degenerate".into()));
        }
        if self.controls.is_empty() {
            return Err(Error::Config("control list is empty".into()));
        }
        if self.controls.iter().any(|c| c.len() != self.m) {
            return Err(Error::Config(format!("every control must have m = {} components", self.m)));
        }
        let exprs = self.f.iter().chain([&self.r, &self.g, &self.h]);
        for e in exprs {
            if e.state_arity() > self.d {
                return Err(Error::Config(format!("'{e}' references a state beyond d = {}", self.d)));
            }
            if e.control_arity() > self.m {
                return Err(Error::Config(format!("'{e}' references a control beyond m = {}", self.m)));
            }
        }
        for e in [&self.g, &self.h] {
            if e.control_arity() > 0 {
                return Err(Error::Config(format!("'{e}' must not depend on controls")));
            }
        }
        if let Some(df) = &self.df {
            if df.len() != self.d || df.iter().any(|r| r.len() != self.d) {
                return Err(Error::Config("Df must be d x d".into()));
            }
        }
        for (name, v) in [("Dr", &self.dr), ("Dg", &self.dg), ("Dh", &self.dh)] {
            if let Some(v) = v {
                if v.len() != self.d {
                    return Err(Error::Config(format!("{name} must have d components")));
                }
            }
        }
        let c = self.constants;
        if !(c.r0 > 0.0) {
            return Err(Error::Hypothesis(format!("(H2) violated: r0 = {} must be positive", c.r0)));
        }
        if !(c.speed > 0.0) {
            return Err(Error::Hypothesis(format!("(H1) violated: N = {} must be positive", c.speed)));
        }
        if !(c.g_lip >= 0.0) || c.g_lip >= c.r0 / c.speed {
            return Err(Error::Hypothesis(format!(
                "(H3) violated: G = {} must satisfy 0 <= G < r0/N = {}",
                c.g_lip,
                c.r0 / c.speed
            )));
        }
        if !(c.rho0 > 0.0) {
            return Err(Error::Hypothesis(format!("(H4) violated: rho0 = {} must be positive", c.rho0)));
        }
        Ok(())
    }
}

fn fd_gradient(e: &Expr, x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    let s = fd_step(x);
    let mut xp = x.to_vec();
    let mut out = vec![0.0; x.len()];
    for j in 0..x.len() {
        xp[j] = x[j] + s;
        let a = e.eval(&xp, w)?;
        xp[j] = x[j] - s;
        let b = e.eval(&xp, w)?;
        xp[j] = x[j];
        out[j] = (a - b) / (2.0 * s);
    }
    Ok(out)
}

/// Evenly spread unit vectors: a circle for `dim = 2`, a Fibonacci lattice for `dim = 3`.
pub fn sphere_controls(dim: usize, count: usize) -> Result<Vec<Vec<f64>>> {
    match dim {
        2 => Ok((0..count)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect()),
        3 => {
            let golden = PI * (3.0 - 5f64.sqrt());
            Ok((0..count)
                .map(|k| {
                    let z = 1.0 - (2.0 * k as f64 + 1.0) / count as f64;
                    let rho = (1.0 - z * z).sqrt();
                    let a = golden * k as f64;
                    vec![rho * a.cos(), rho * a.sin(), z]
                })
                .collect())
        }
        _ => Err(Error::Config(format!("sphere controls need m = 2 or 3, got {dim}"))),
    }
}

/// `count` evenly spaced samples of `[lo, hi]` (endpoints included).
pub fn interval_controls(lo: f64, hi: f64, count: usize) -> Vec<Vec<f64>> {
    if count == 1 {
        return vec![vec![0.5 * (lo + hi)]];
    }
    (0..count)
        .map(|k| {
            let t = k as f64 / (count - 1) as f64;
            // Symmetric formula keeps the midpoint sample exact.
            vec![lo * (1.0 - t) + hi * t]
        })
        .collect()
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ControlSpec {
    List(Vec<Vec<f64>>),
    Shape {
        shape: String,
        count: usize,
        lo: Option<f64>,
        hi: Option<f64>,
    },
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ProblemSpec {
    builtin: Option<String>,
    name: Option<String>,
    d: Option<usize>,
    m: Option<usize>,
    f: Option<Vec<String>>,
    #[serde(rename = "Df")]
    df: Option<Vec<Vec<String>>>,
    r: Option<String>,
    #[serde(rename = "Dr")]
    dr: Option<Vec<String>>,
    g: Option<String>,
    #[serde(rename = "Dg")]
    dg: Option<Vec<String>>,
    h: Option<String>,
    #[serde(rename = "Dh")]
    dh: Option<Vec<String>>,
    controls: Option<ControlSpec>,
    domain: Option<Vec<[f64; 2]>>,
    constants: Option<PartialConstants>,
}

#[derive(Debug, Deserialize, Default, Clone, Copy)]
#[serde(deny_unknown_fields)]
struct PartialConstants {
    #[serde(rename = "N")]
    speed: Option<f64>,
    r0: Option<f64>,
    #[serde(rename = "G")]
    g_lip: Option<f64>,
    rho0: Option<f64>,
}

fn parse_list(v: &[String]) -> Result<Vec<Expr>> {
    v.iter().map(|s| Expr::parse(s)).collect()
}

/// Builds a problem from config text. The problem may sit at the top level or
/// inside a `[problem]` table; other tables are ignored.
pub fn parse_problem(config_text: &str) -> Result<ControlProblem> {
    let value: toml::Value = toml::from_str(config_text).map_err(|e| Error::Config(e.to_string()))?;
    let table = match value.get("problem") {
        Some(p) => p.clone(),
        None => {
            let mut t = value.as_table().cloned().unwrap_or_default();
            t.retain(|k, _| {
                matches!(
                    &k[..],
                    "builtin" | "name" | "d" | "m" | "f" | "Df" | "r" | "Dr" | "g" | "Dg" | "h" | "Dh" | "controls" | "domain" | "constants"
                )
            });
            toml::Value::Table(t)
        }
    };
    let spec: ProblemSpec = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    problem_from_spec(spec)
}

fn problem_from_spec(spec: ProblemSpec) -> Result<ControlProblem> {
    let overrides = spec.constants.unwrap_or_default();
    let mut p = if let Some(name) = &spec.builtin {
        crate::benchmarks::builtin(name)?.problem
    } else {
        let need = |f: &str| Error::MissingField(f.to_string());
        let d = spec.d.ok_or_else(|| need("d"))?;
        let m = spec.m.ok_or_else(|| need("m"))?;
        let f = parse_list(spec.f.as_deref().ok_or_else(|| need("f"))?)?;
        let df = match &spec.df {
            Some(rows) => Some(rows.iter().map(|r| parse_list(r)).collect::<Result<Vec<_>>>()?),
            None => None,
        };
        let r = Expr::parse(spec.r.as_deref().ok_or_else(|| need("r"))?)?;
        let g = Expr::parse(spec.g.as_deref().ok_or_else(|| need("g"))?)?;
        let h = Expr::parse(spec.h.as_deref().ok_or_else(|| need("h"))?)?;
        let opt = |v: &Option<Vec<String>>| v.as_deref().map(parse_list).transpose();
        let controls = match spec.controls.ok_or_else(|| need("controls"))? {
            ControlSpec::List(l) => l,
            ControlSpec::Shape { shape, count, lo, hi } => match shape.as_str() {
                "sphere" => sphere_controls(m, count)?,
                "interval" => {
                    if m != 1 {
                        return Err(Error::Config("interval controls need m = 1".into()));
                    }
                    interval_controls(lo.unwrap_or(-1.0), hi.unwrap_or(1.0), count)
                }
                other => return Err(Error::Config(format!("unknown control shape '{other}'"))),
            },
        };
        let domain = spec.domain.clone().ok_or_else(|| need("domain"))?;
        let c = overrides;
        let constants = Constants {
            speed: c.speed.ok_or_else(|| need("constants.N"))?,
            r0: c.r0.ok_or_else(|| need("constants.r0"))?,
            g_lip: c.g_lip.ok_or_else(|| need("constants.G"))?,
            rho0: c.rho0.ok_or_else(|| need("constants.rho0"))?,
        };
        ControlProblem {
            name: spec.name.clone().unwrap_or_else(|| "custom".into()),
            d,
            m,
            f,
            df,
            r,
            dr: opt(&spec.dr)?,
            g,
            dg: opt(&spec.dg)?,
            h,
            dh: opt(&spec.dh)?,
            controls,
            domain,
            constants,
        }
    };
    if spec.builtin.is_some() {
        let c = &mut p.constants;
        if let Some(v) = overrides.speed {
            c.speed = v;
        }
        if let Some(v) = overrides.r0 {
            c.r0 = v;
        }
        if let Some(v) = overrides.g_lip {
            c.g_lip = v;
        }
        if let Some(v) = overrides.rho0 {
            c.rho0 = v;
        }
        if let Some(dom) = spec.domain {
            p.domain = dom;
        }
    }
    p.validate()?;
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Pass,
    Fail,
    Unchecked,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub name: String,
    pub status: Status,
    /// Advisory checks are reported but do not count towards [`HypothesisReport::all_pass`].
    pub advisory: bool,
    /// State (followed by the control, when relevant) witnessing a failure.
    pub witness: Option<Vec<f64>>,
    pub detail: String,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub checks: Vec<HypothesisCheck>,
    pub sup_f: f64,
    pub lip_f: f64,
    pub lip_df: f64,
    pub min_r: f64,
    pub lip_r: f64,
    pub lip_dr: f64,
    pub lip_g_near_boundary: f64,
    pub min_inner_ball: f64,
    pub convexity_defect: f64,
}

impl HypothesisReport {
    pub fn get(&self, name: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.advisory || c.status != Status::Fail)
    }
}

fn random_point(rng: &mut ChaCha8Rng, domain: &[[f64; 2]]) -> Vec<f64> {
    domain.iter().map(|[lo, hi]| rng.random_range(*lo..=*hi)).collect()
}

fn random_offset(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-scale..=scale)).collect()
}

/// Monte-Carlo checks of the standing hypotheses. Sample points where an
/// expression leaves its domain are skipped.
pub fn validate_hypotheses(p: &ControlProblem, n_samples: usize, seed: u64) -> HypothesisReport {
    let n = n_samples.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = p.d;
    let diam = p.domain.iter().map(|[lo, hi]| (hi - lo).powi(2)).sum::<f64>().sqrt();
    let pair_scale = 1e-2 * diam;
    let c = p.constants;

    let mut sup_f = 0.0f64;
    let mut sup_f_witness = None;
    let mut min_r = f64::INFINITY;
    let mut min_r_witness = None;
    let (mut lip_f, mut lip_df, mut lip_r, mut lip_dr) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut used = 0usize;
    for _ in 0..n {
        let x = random_point(&mut rng, &p.domain);
        let k = rng.random_range(0..p.controls.len());
        let w = &p.controls[k];
        let y: Vec<f64> = x.iter().zip(random_offset(&mut rng, d, pair_scale)).map(|(a, b)| a + b).collect();
        let sample = (|| -> Result<()> {
            let fx = p.eval_dynamics(&x, w)?;
            let fy = p.eval_dynamics(&y, w)?;
            let rx = p.eval_running_cost(&x, w)?;
            let ry = p.eval_running_cost(&y, w)?;
            let jx = p.eval_dynamics_jacobian(&x, w)?;
            let jy = p.eval_dynamics_jacobian(&y, w)?;
            let gx = p.eval_running_gradient(&x, w)?;
            let gy = p.eval_running_gradient(&y, w)?;
            let s = dist(&x, &y).max(1e-300);
            let nf = norm(&fx);
            if nf > sup_f {
                sup_f = nf;
                let mut wit = x.clone();
                wit.extend_from_slice(w);
                sup_f_witness = Some(wit);
            }
            if rx < min_r {
                min_r = rx;
                let mut wit = x.clone();
                wit.extend_from_slice(w);
                min_r_witness = Some(wit);
            }
            lip_f = lip_f.max(dist(&fx, &fy) / s);
            let jd: f64 = jx.iter().flatten().zip(jy.iter().flatten()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            lip_df = lip_df.max(jd / s);
            lip_r = lip_r.max((rx - ry).abs() / s);
            lip_dr = lip_dr.max(dist(&gx, &gy) / s);
            Ok(())
        })();
        if sample.is_ok() {
            used += 1;
        }
    }

    let mut checks = Vec::new();
    let finite = |v: f64| v.is_finite();
    let h1_ok = sup_f < c.speed && finite(lip_f) && finite(lip_df);
    checks.push(HypothesisCheck {
        name: "H1".into(),
        status: if used == 0 { Status::Unchecked } else if h1_ok { Status::Pass } else { Status::Fail },
        advisory: false,
        witness: if sup_f >= c.speed { sup_f_witness } else { None },
        detail: format!("sup|f| = {sup_f:.6} vs N = {}, Lip f ~ {lip_f:.3e}, Lip Dxf ~ {lip_df:.3e}", c.speed),
        samples: used,
    });
    let h2_ok = min_r >= c.r0 * (1.0 - 1e-12) && finite(lip_r) && finite(lip_dr);
    checks.push(HypothesisCheck {
        name: "H2".into(),
        status: if used == 0 { Status::Unchecked } else if h2_ok { Status::Pass } else { Status::Fail },
        advisory: false,
        witness: if min_r < c.r0 * (1.0 - 1e-12) { min_r_witness } else { None },
        detail: format!("min r = {min_r:.6} vs r0 = {}, Lip r ~ {lip_r:.3e}, Lip Dxr ~ {lip_dr:.3e}", c.r0),
        samples: used,
    });

    // Boundary points by projecting random domain samples.
    let n_boundary = n.min(2000);
    let mut boundary = Vec::new();
    let mut attempts = 0;
    while boundary.len() < n_boundary && attempts < 4 * n_boundary {
        attempts += 1;
        let x = random_point(&mut rng, &p.domain);
        if let Ok(bp) = target::project_to_boundary(p, &x) {
            if p.in_box(&bp.x, 0.0) {
                boundary.push(bp);
            }
        }
    }

    let mut lip_g = 0.0f64;
    let mut g_witness = None;
    let mut g_pairs = 0;
    for bp in &boundary {
        let a: Vec<f64> = bp.x.iter().zip(random_offset(&mut rng, d, 0.05)).map(|(u, v)| u + v).collect();
        let b: Vec<f64> = bp.x.iter().zip(random_offset(&mut rng, d, 0.05)).map(|(u, v)| u + v).collect();
        if let (Ok(ga), Ok(gb)) = (p.eval_terminal_cost(&a), p.eval_terminal_cost(&b)) {
            let s = dist(&a, &b);
            if s > 0.0 {
                g_pairs += 1;
                let q = (ga - gb).abs() / s;
                if q > lip_g {
                    lip_g = q;
                    g_witness = Some(a.clone());
                }
            }
        }
    }
    let h3_ok = c.g_lip < c.r0 / c.speed && lip_g <= c.g_lip * (1.0 + 1e-9) + 1e-12;
    checks.push(HypothesisCheck {
        name: "H3".into(),
        status: if g_pairs == 0 { Status::Unchecked } else if h3_ok { Status::Pass } else { Status::Fail },
        advisory: false,
        witness: if h3_ok { None } else { g_witness },
        detail: format!("sampled Lip g near boundary = {lip_g:.6} vs G = {}, r0/N = {}", c.g_lip, c.r0 / c.speed),
        samples: g_pairs,
    });

    let n_ball = boundary.len().min(500);
    let mut min_ball = f64::INFINITY;
    let mut ball_witness = None;
    for bp in boundary.iter().take(n_ball) {
        let rho = target::inner_ball_radius(p, bp, 2.0 * c.rho0, 64);
        if rho < min_ball {
            min_ball = rho;
            ball_witness = Some(bp.x.clone());
        }
    }
    let h4_ok = min_ball >= c.rho0 * (1.0 - 1e-3);
    checks.push(HypothesisCheck {
        name: "H4".into(),
        status: if n_ball == 0 { Status::Unchecked } else if h4_ok { Status::Pass } else { Status::Fail },
        advisory: false,
        witness: if h4_ok { None } else { ball_witness },
        detail: format!("min sampled inner-ball radius = {min_ball:.6} vs rho0 = {}", c.rho0),
        samples: n_ball,
    });

    let (defect, h0_witness, h0_samples, h0_tol) = convexity_defect(p, &mut rng, n.min(1000));
    let h0_ok = defect <= h0_tol;
    checks.insert(
        0,
        HypothesisCheck {
            name: "H0".into(),
            status: if h0_samples == 0 { Status::Unchecked } else if h0_ok { Status::Pass } else { Status::Fail },
            advisory: true,
            witness: if h0_ok { None } else { h0_witness },
            detail: format!("max midpoint distance to sampled velocity-cost set = {defect:.4e}, sampling resolution {h0_tol:.4e}"),
            samples: h0_samples,
        },
    );

    HypothesisReport {
        checks,
        sup_f,
        lip_f,
        lip_df,
        min_r,
        lip_r,
        lip_dr,
        lip_g_near_boundary: lip_g,
        min_inner_ball: min_ball,
        convexity_defect: defect,
    }
}

/// Largest distance from a midpoint of two sampled `(f, r)` pairs to the sampled
/// augmented set `{(f(x,w), l) : l >= r(x,w)}`, against the sampling resolution
/// (largest nearest-neighbour gap among the samples).
fn convexity_defect(p: &ControlProblem, rng: &mut ChaCha8Rng, n: usize) -> (f64, Option<Vec<f64>>, usize, f64) {
    let mut worst = 0.0f64;
    let mut witness = None;
    let mut tol = 0.0f64;
    let mut used = 0;
    let k = p.controls.len();
    for _ in 0..n {
        let x = random_point(rng, &p.domain);
        let pairs: Result<Vec<(Vec<f64>, f64)>> = p
            .controls
            .iter()
            .map(|w| Ok((p.eval_dynamics(&x, w)?, p.eval_running_cost(&x, w)?)))
            .collect();
        let Ok(pairs) = pairs else { continue };
        used += 1;
        let gap = |a: &(Vec<f64>, f64), b: &(Vec<f64>, f64)| -> f64 {
            let dv = dist(&a.0, &b.0);
            let dl = (b.1 - a.1).max(0.0);
            dv.max(dl)
        };
        let mut resolution = 0.0f64;
        if k > 1 {
            for i in 0..k {
                let nn = (0..k).filter(|&j| j != i).map(|j| gap(&pairs[i], &pairs[j])).fold(f64::INFINITY, f64::min);
                resolution = resolution.max(nn);
            }
        }
        tol = tol.max(resolution);
        let i = rng.random_range(0..k);
        let j = rng.random_range(0..k);
        let mid_v: Vec<f64> = pairs[i].0.iter().zip(&pairs[j].0).map(|(a, b)| 0.5 * (a + b)).collect();
        let mid = (mid_v, 0.5 * (pairs[i].1 + pairs[j].1));
        let defect = pairs.iter().map(|q| gap(&mid, q)).fold(f64::INFINITY, f64::min);
        if defect > worst {
            worst = defect;
            witness = Some(x.clone());
        }
    }
    (worst, witness, used, 0.5 * tol + 1e-12)
}

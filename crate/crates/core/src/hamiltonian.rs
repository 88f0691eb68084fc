//! The Hamiltonians `H(x,q) = max_w { -q.f - r }`, `H0(x,q) = max_w { -q.f }`
//! and the terminal multiplier.

use crate::error::{Error, Result};
use crate::problem::ControlProblem;
use crate::target::tol_m;
use crate::vecops::{axpy, dot};
use serde::{Deserialize, Serialize};

pub const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianValue {
    pub value: f64,
    /// Indices into the control list, in list order.
    pub argmax: Vec<usize>,
    pub unique: bool,
}

fn maximize(p: &ControlProblem, x: &[f64], q: &[f64], with_cost: bool) -> Result<HamiltonianValue> {
    let mut vals = Vec::with_capacity(p.controls.len());
    for w in &p.controls {
        let mut v = -dot(q, &p.eval_dynamics(x, w)?);
        if with_cost {
            v -= p.eval_running_cost(x, w)?;
        }
        vals.push(v);
    }
    let value = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let argmax: Vec<usize> = (0..vals.len()).filter(|&k| vals[k] >= value - TIE_TOL).collect();
    let unique = argmax.len() == 1;
    Ok(HamiltonianValue { value, argmax, unique })
}

pub fn hamiltonian(p: &ControlProblem, x: &[f64], q: &[f64]) -> Result<HamiltonianValue> {
    maximize(p, x, q, true)
}

pub fn horizontal_hamiltonian(p: &ControlProblem, x: &[f64], q: &[f64]) -> Result<HamiltonianValue> {
    maximize(p, x, q, false)
}

/// Lexicographically smallest control among the maximizers.
pub fn lex_smallest(p: &ControlProblem, argmax: &[usize]) -> usize {
    let mut best = argmax[0];
    for &k in &argmax[1..] {
        if crate::vecops::lex_less(&p.controls[k], &p.controls[best]) {
            best = k;
        }
    }
    best
}

/// Positive root of `phi(l) = H(x*, q* - l xi)`.
pub fn solve_terminal_multiplier(p: &ControlProblem, x_star: &[f64], xi: &[f64], q_star: &[f64]) -> Result<f64> {
    let (margin, _) = crate::target::classify_boundary(p, x_star, xi)?;
    if margin <= tol_m(p) {
        return Err(Error::TangentialNormal(margin));
    }
    let phi = |l: f64| -> Result<f64> { Ok(hamiltonian(p, x_star, &axpy(q_star, -l, xi))?.value) };
    let phi0 = phi(0.0)?;
    if phi0 > 1e-10 {
        return Err(Error::TerminalInconsistent(phi0));
    }
    if phi0.abs() <= 1e-10 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, p.constants.r0 / margin);
    let mut fhi = phi(hi)?;
    let mut doublings = 0;
    while fhi < 0.0 {
        lo = hi;
        hi *= 2.0;
        fhi = phi(hi)?;
        doublings += 1;
        if doublings > 200 {
            return Err(Error::NoConvergence(doublings));
        }
    }
    // phi is convex and piecewise linear in l; regula falsi with an
    // Illinois safeguard converges in a few steps on each linear piece.
    let mut flo = phi(lo)?;
    let mut side = 0i32;
    for _ in 0..200 {
        let mut m = lo - flo * (hi - lo) / (fhi - flo);
        if !(m > lo && m < hi) {
            m = 0.5 * (lo + hi);
        }
        let fm = phi(m)?;
        if fm.abs() <= 1e-12 || hi - lo <= 1e-15 * hi.max(1.0) {
            return Ok(m);
        }
        if fm < 0.0 {
            lo = m;
            flo = fm;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        } else {
            hi = m;
            fhi = fm;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::builtin;

    #[test]
    fn eik64_values() {
        let p = builtin("EIK64").unwrap().problem;
        let h = hamiltonian(&p, &[1.5, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(h.value, -1.0);
        assert_eq!(h.argmax.len(), 64);
        let h = hamiltonian(&p, &[1.5, 0.0], &[2.0, 0.0]).unwrap();
        assert!((h.value - 1.0).abs() < 1e-15);
        assert!(h.unique);
        assert_eq!(p.controls[h.argmax[0]], vec![-1.0, 1.2246467991473532e-16]);
        let h = hamiltonian(&p, &[1.5, 0.0], &[0.6, 0.8]).unwrap();
        let gap = 2.0 * std::f64::consts::PI / 64.0;
        assert!(h.value <= 1e-15 && h.value >= (gap / 2.0).cos() - 1.0);
        let h0 = horizontal_hamiltonian(&p, &[0.0, 0.0], &[0.0, -3.0]).unwrap();
        assert!((h0.value - 3.0).abs() < 1e-14 && h0.unique);
        assert!((p.controls[h0.argmax[0]][1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_costate_ties_everything() {
        let p = builtin("GEN").unwrap().problem;
        let h0 = horizontal_hamiltonian(&p, &[0.3, 0.1], &[0.0, 0.0]).unwrap();
        assert_eq!(h0.value, 0.0);
        assert_eq!(h0.argmax.len(), p.controls.len());
        assert!(!h0.unique);
    }

    #[test]
    fn exa_horizontal_fan() {
        let p = builtin("EXA").unwrap().problem;
        let h0 = horizontal_hamiltonian(&p, &[0.4, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(h0.value, 0.0);
        assert_eq!(h0.argmax.len(), 11);
        assert_eq!(lex_smallest(&p, &h0.argmax), 0);
    }

    #[test]
    fn multiplier_examples() {
        let p = builtin("EIK64").unwrap().problem;
        let l = solve_terminal_multiplier(&p, &[1.0, 0.0], &[-1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((l - 1.0).abs() < 1e-10);
        let l = solve_terminal_multiplier(&p, &[1.0, 0.0], &[-1.0, 0.0], &[0.5, 0.0]).unwrap();
        assert!((l - 0.5).abs() < 1e-10);
        let exa = builtin("EXA").unwrap().problem;
        let x = [2f64.sqrt(), 1.0];
        let xi = crate::target::proximal_normal(&exa, &x).unwrap();
        let l = solve_terminal_multiplier(&exa, &x, &xi, &[0.0, 0.0]).unwrap();
        let exact = 73f64.sqrt() / (6.0 * 2f64.sqrt());
        assert!((l - exact).abs() < 1e-10, "{l} vs {exact}");
        let res = hamiltonian(&exa, &x, &axpy(&[0.0, 0.0], -l, &xi)).unwrap().value;
        assert!(res.abs() <= 1e-10);
    }

    #[test]
    fn multiplier_errors() {
        let exa = builtin("EXA").unwrap().problem;
        assert!(matches!(
            solve_terminal_multiplier(&exa, &[1.0, 0.0], &[0.0, -1.0], &[0.0, 0.0]),
            Err(Error::TangentialNormal(_))
        ));
        let eik = builtin("EIK64").unwrap().problem;
        assert!(matches!(
            solve_terminal_multiplier(&eik, &[1.0, 0.0], &[-1.0, 0.0], &[3.0, 0.0]),
            Err(Error::TerminalInconsistent(_))
        ));
    }
}

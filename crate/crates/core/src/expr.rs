//! Arithmetic expressions over state variables `x1..xd` and control variables `u1..um`.
//!
//! Grammar, lowest precedence first:
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?
//! atom    := number | xK | uK | func '(' sum (',' sum)* ')' | '(' sum ')'
//! ```

use crate::error::{Error, Result};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Sqrt,
    Abs,
    Cbrt,
    Min,
    Max,
}

impl Func {
    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "cbrt" => Func::Cbrt,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Cbrt => "cbrt",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    /// State variable, zero-based.
    X(usize),
    /// Control variable, zero-based.
    U(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// Real cube root, sign preserving.
pub fn cbrt(v: f64) -> f64 {
    v.cbrt()
}

impl Expr {
    pub fn parse(text: &str) -> Result<Expr> {
        if text.trim().is_empty() {
            return Err(Error::Syntax { pos: 0, msg: "empty expression".into() });
        }
        let mut p = Parser { s: text.as_bytes(), pos: 0 };
        let e = p.sum()?;
        p.skip_ws();
        if p.pos < p.s.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(e)
    }

    /// Evaluates at state `x` and control `u`. Non-finite results are domain errors.
    pub fn eval(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        let v = self.eval_raw(x, u)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Domain(format!("'{}' evaluated to {}", self, v)))
        }
    }

    fn eval_raw(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::X(i) => *x
                .get(*i)
                .ok_or_else(|| Error::Domain(format!("x{} not available (d = {})", i + 1, x.len())))?,
            Expr::U(i) => *u
                .get(*i)
                .ok_or_else(|| Error::Domain(format!("u{} not available (m = {})", i + 1, u.len())))?,
            Expr::Neg(a) => -a.eval_raw(x, u)?,
            Expr::Bin(op, a, b) => {
                let a = a.eval_raw(x, u)?;
                let b = b.eval_raw(x, u)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(Error::Domain("division by zero".into()));
                        }
                        a / b
                    }
                    BinOp::Pow => pow(a, b)?,
                }
            }
            Expr::Call(f, args) => {
                let a = args[0].eval_raw(x, u)?;
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(Error::Domain(format!("sqrt of negative value {a}")));
                        }
                        a.sqrt()
                    }
                    Func::Abs => a.abs(),
                    Func::Cbrt => cbrt(a),
                    Func::Min => a.min(args[1].eval_raw(x, u)?),
                    Func::Max => a.max(args[1].eval_raw(x, u)?),
                }
            }
        })
    }

    /// Largest state index referenced plus one.
    pub fn state_arity(&self) -> usize {
        self.fold_max(&|e| if let Expr::X(i) = e { i + 1 } else { 0 })
    }

    /// Largest control index referenced plus one.
    pub fn control_arity(&self) -> usize {
        self.fold_max(&|e| if let Expr::U(i) = e { i + 1 } else { 0 })
    }

    fn fold_max(&self, leaf: &dyn Fn(&Expr) -> usize) -> usize {
        match self {
            Expr::Neg(a) => a.fold_max(leaf),
            Expr::Bin(_, a, b) => a.fold_max(leaf).max(b.fold_max(leaf)),
            Expr::Call(_, args) => args.iter().map(|a| a.fold_max(leaf)).max().unwrap_or(0),
            e => leaf(e),
        }
    }
}

fn pow(a: f64, b: f64) -> Result<f64> {
    if a < 0.0 && b.fract() != 0.0 {
        return Err(Error::Domain(format!("{a}^{b} has no real value")));
    }
    if a == 0.0 && b < 0.0 {
        return Err(Error::Domain("0 raised to a negative power".into()));
    }
    if b.fract() == 0.0 && b.abs() <= 64.0 {
        Ok(a.powi(b as i32))
    } else {
        Ok(a.powf(b))
    }
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, msg: &str) -> Error {
        Error::Syntax { pos: self.pos, msg: msg.into() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn sum(&mut self) -> Result<Expr> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.product()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn product(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            None => Err(self.err("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.sum()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(_) => Err(self.err("unexpected character")),
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected '{}'", c as char)))
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        let s = self.s;
        let mut i = self.pos;
        while i < s.len() && (s[i].is_ascii_digit() || s[i] == b'.') {
            i += 1;
        }
        if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
            let mut j = i + 1;
            if j < s.len() && (s[j] == b'+' || s[j] == b'-') {
                j += 1;
            }
            if j < s.len() && s[j].is_ascii_digit() {
                while j < s.len() && s[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = std::str::from_utf8(&s[start..i]).unwrap_or("");
        let v: f64 = text.parse().map_err(|_| self.err("malformed number"))?;
        self.pos = i;
        Ok(Expr::Num(v))
    }

    fn ident(&mut self) -> Result<Expr> {
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.s[start..self.pos]).unwrap_or("");
        if let Some(f) = Func::from_name(name) {
            self.expect(b'(')?;
            let mut args = vec![self.sum()?];
            while self.peek() == Some(b',') {
                self.pos += 1;
                args.push(self.sum()?);
            }
            if args.len() != f.arity() {
                return Err(Error::Syntax {
                    pos: start,
                    msg: format!("{} takes {} argument(s), got {}", name, f.arity(), args.len()),
                });
            }
            self.expect(b')')?;
            return Ok(Expr::Call(f, args));
        }
        let var = |prefix: char| -> Option<usize> {
            let rest = name.strip_prefix(prefix)?;
            let k: usize = rest.parse().ok()?;
            (k >= 1 && !rest.starts_with('0')).then(|| k - 1)
        };
        if let Some(k) = var('x') {
            return Ok(Expr::X(k));
        }
        if let Some(k) = var('u') {
            return Ok(Expr::U(k));
        }
        Err(Error::UnknownIdentifier { name: name.into(), pos: start })
    }
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
        Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
        Expr::Neg(_) => 3,
        Expr::Bin(BinOp::Pow, ..) => 4,
        Expr::Num(v) if *v < 0.0 => 3,
        _ => 5,
    }
}

fn write_wrapped(f: &mut fmt::Formatter<'_>, e: &Expr, wrap: bool) -> fmt::Result {
    if wrap {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            // `{:?}` prints the shortest representation that parses back exactly.
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::X(i) => write!(f, "x{}", i + 1),
            Expr::U(i) => write!(f, "u{}", i + 1),
            Expr::Neg(a) => {
                write!(f, "-")?;
                write_wrapped(f, a, prec(a) < 3)
            }
            Expr::Bin(op, a, b) => {
                let (sym, p) = match op {
                    BinOp::Add => ("+", 1),
                    BinOp::Sub => ("-", 1),
                    BinOp::Mul => ("*", 2),
                    BinOp::Div => ("/", 2),
                    BinOp::Pow => ("^", 4),
                };
                if *op == BinOp::Pow {
                    write_wrapped(f, a, prec(a) <= p)?;
                    write!(f, " ^ ")?;
                    write_wrapped(f, b, prec(b) < 3)
                } else {
                    write_wrapped(f, a, prec(a) < p)?;
                    write!(f, " {sym} ")?;
                    write_wrapped(f, b, prec(b) <= p)
                }
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, x: &[f64]) -> f64 {
        Expr::parse(s).unwrap().eval(x, &[]).unwrap()
    }

    #[test]
    fn unit_circle_level() {
        assert_eq!(ev("x1^2 + x2^2 - 1", &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn cubed_cube_root() {
        assert_eq!(ev("x2 - cbrt(x1^2-1)^3", &[0.0, 0.0]), 1.0);
    }

    #[test]
    fn syntax_error_offset() {
        match Expr::parse("x1 + * 2") {
            Err(Error::Syntax { pos, .. }) => assert_eq!(pos, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_identifier() {
        assert!(matches!(Expr::parse("y1 + 1"), Err(Error::UnknownIdentifier { pos: 0, .. })));
        assert!(matches!(Expr::parse("x0"), Err(Error::UnknownIdentifier { .. })));
        assert!(matches!(Expr::parse("tan(x1)"), Err(Error::UnknownIdentifier { .. })));
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("2^3^2", &[]), 512.0);
        assert_eq!(ev("-2^2", &[]), -4.0);
        assert_eq!(ev("2^-1", &[]), 0.5);
        assert_eq!(ev("1 - 2 - 3", &[]), -4.0);
        assert_eq!(ev("8 / 4 / 2", &[]), 1.0);
        assert_eq!(ev("min(3, max(1, 2)) * 2", &[]), 4.0);
        assert_eq!(ev("1.5e1 + .5", &[]), 15.5);
    }

    #[test]
    fn cbrt_keeps_sign() {
        assert!((ev("cbrt(-8)", &[]) + 2.0).abs() < 1e-15);
        assert!((ev("cbrt(x1)", &[-0.001]) + 0.1).abs() < 1e-15);
    }

    #[test]
    fn domain_errors() {
        let e = Expr::parse("sqrt(x1)").unwrap();
        assert!(matches!(e.eval(&[-1.0], &[]), Err(Error::Domain(_))));
        let e = Expr::parse("1 / x1").unwrap();
        assert!(e.eval(&[0.0], &[]).is_err());
        let e = Expr::parse("x1 ^ 0.5").unwrap();
        assert!(e.eval(&[-1.0], &[]).is_err());
    }

    #[test]
    fn arities() {
        let e = Expr::parse("x3 * u2 + sin(x1)").unwrap();
        assert_eq!(e.state_arity(), 3);
        assert_eq!(e.control_arity(), 2);
    }

    #[test]
    fn display_round_trip_structure() {
        for s in [
            "x2 - cbrt(x1) ^ 5",
            "-(x1 - 2) * 3",
            "(x1 ^ 2) ^ 3",
            "x1 - (x2 - x1)",
            "x1 / (x2 * 2)",
            "-x1 ^ 2",
            "(-x1) ^ 2",
            "2 ^ -x1",
            "min(x1, -3.25e-7)",
        ] {
            let e = Expr::parse(s).unwrap();
            let again = Expr::parse(&e.to_string()).unwrap();
            assert_eq!(e, again, "{s} printed as {e}");
        }
    }
}

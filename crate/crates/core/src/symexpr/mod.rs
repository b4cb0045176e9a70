//! Symbolic scalar expressions in the state variables `x1..xn`.
//!
//! Expressions are parsed from infix text, differentiated symbolically and
//! evaluated either by walking the tree or through a compiled stack program.

mod compile;
mod diff;
mod parse;
mod spec;

use std::fmt;

use crate::error::{Error, Result};

pub use compile::Compiled;
pub use parse::parse;
pub use spec::{
    apply_d, apply_d_alpha, ExpansionSettings, McSettings, MomentMethod, MomentSettings, Scheme,
    SdeSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
    Tanh,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Tanh => "tanh",
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Exp => v.exp(),
            Func::Ln => v.ln(),
            Func::Tanh => v.tanh(),
        }
    }
}

/// Expression tree. Variables are zero-based: `Var(0)` prints as `x1`.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

fn finite_const(v: f64) -> Option<Expr> {
    v.is_finite().then_some(Expr::Const(v))
}

impl Expr {
    pub fn constant(v: f64) -> Expr {
        Expr::Const(v)
    }

    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    pub fn is_one(&self) -> bool {
        self.as_const() == Some(1.0)
    }

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Const(c) => Expr::Const(-c),
            Expr::Neg(inner) => *inner,
            other => Expr::Neg(Box::new(other)),
        }
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            if let Some(c) = finite_const(x + y) {
                return c;
            }
        }
        if a.is_zero() {
            return b;
        }
        if b.is_zero() {
            return a;
        }
        Expr::Add(Box::new(a), Box::new(b))
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            if let Some(c) = finite_const(x - y) {
                return c;
            }
        }
        if b.is_zero() {
            return a;
        }
        if a.is_zero() {
            return Expr::neg(b);
        }
        Expr::Sub(Box::new(a), Box::new(b))
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            if let Some(c) = finite_const(x * y) {
                return c;
            }
        }
        if a.is_zero() || b.is_zero() {
            return Expr::Const(0.0);
        }
        if a.is_one() {
            return b;
        }
        if b.is_one() {
            return a;
        }
        if a.as_const() == Some(-1.0) {
            return Expr::neg(b);
        }
        if b.as_const() == Some(-1.0) {
            return Expr::neg(a);
        }
        Expr::Mul(Box::new(a), Box::new(b))
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            if let Some(c) = finite_const(x / y) {
                return c;
            }
        }
        if a.is_zero() && !b.is_zero() {
            return Expr::Const(0.0);
        }
        if b.is_one() {
            return a;
        }
        Expr::Div(Box::new(a), Box::new(b))
    }

    pub fn pow(a: Expr, b: Expr) -> Expr {
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            if let Some(c) = finite_const(pow_value(x, y)) {
                return c;
            }
        }
        if b.is_zero() {
            return Expr::Const(1.0);
        }
        if b.is_one() {
            return a;
        }
        Expr::Pow(Box::new(a), Box::new(b))
    }

    pub fn call(f: Func, a: Expr) -> Expr {
        if let Some(x) = a.as_const() {
            if let Some(c) = finite_const(f.apply(x)) {
                // ln(1) = 0, exp(0) = 1 and similar folds
                return c;
            }
        }
        Expr::Call(f, Box::new(a))
    }

    /// Largest variable index used plus one.
    pub fn arity(&self) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Var(i) => i + 1,
            Expr::Neg(a) | Expr::Call(_, a) => a.arity(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.arity().max(b.arity()),
        }
    }

    /// Evaluates at `x`, rejecting non-finite intermediate results.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let v = self.eval_raw(x)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Domain(format!("`{self}` is not finite at {x:?}")))
        }
    }

    fn eval_raw(&self, x: &[f64]) -> Result<f64> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => *x.get(*i).ok_or_else(|| {
                Error::Dimension(format!("x{} requested, state has {} entries", i + 1, x.len()))
            })?,
            Expr::Neg(a) => -a.eval_raw(x)?,
            Expr::Add(a, b) => a.eval_raw(x)? + b.eval_raw(x)?,
            Expr::Sub(a, b) => a.eval_raw(x)? - b.eval_raw(x)?,
            Expr::Mul(a, b) => a.eval_raw(x)? * b.eval_raw(x)?,
            Expr::Div(a, b) => {
                let d = b.eval_raw(x)?;
                if d == 0.0 {
                    return Err(Error::Domain(format!("division by zero in `{self}`")));
                }
                a.eval_raw(x)? / d
            }
            Expr::Pow(a, b) => {
                let v = pow_value(a.eval_raw(x)?, b.eval_raw(x)?);
                if v.is_nan() {
                    return Err(Error::Domain(format!("`{self}` undefined at {x:?}")));
                }
                v
            }
            Expr::Call(f, a) => {
                let v = a.eval_raw(x)?;
                if *f == Func::Ln && v <= 0.0 {
                    return Err(Error::Domain(format!("ln of non-positive value {v}")));
                }
                f.apply(v)
            }
        })
    }

    /// Names of primitives without a global bound: `exp`, `ln` and powers
    /// with a non-integer exponent.
    pub fn unbounded_primitives(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_unbounded(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_unbounded(&self, out: &mut Vec<String>) {
        match self {
            Expr::Const(_) | Expr::Var(_) => {}
            Expr::Neg(a) => a.collect_unbounded(out),
            Expr::Call(f, a) => {
                if matches!(f, Func::Exp | Func::Ln) {
                    out.push(f.name().to_string());
                }
                a.collect_unbounded(out);
            }
            Expr::Pow(a, b) => {
                match b.as_const() {
                    Some(c) if c.fract() == 0.0 => {}
                    _ => out.push("pow".to_string()),
                }
                a.collect_unbounded(out);
                b.collect_unbounded(out);
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.collect_unbounded(out);
                b.collect_unbounded(out);
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Pow(..) => 4,
            Expr::Const(c) if c.is_sign_negative() => 5,
            Expr::Const(_) | Expr::Var(_) | Expr::Call(..) => 5,
        }
    }

    fn fmt_at(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        if self.precedence() < min_prec {
            write!(f, "(")?;
            self.fmt_at(f, 0)?;
            return write!(f, ")");
        }
        match self {
            Expr::Const(c) if c.is_sign_negative() => write!(f, "(-{})", -c),
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(a) => {
                write!(f, "-")?;
                a.fmt_at(f, 3)
            }
            Expr::Add(a, b) => {
                a.fmt_at(f, 1)?;
                write!(f, " + ")?;
                b.fmt_at(f, 2)
            }
            Expr::Sub(a, b) => {
                a.fmt_at(f, 1)?;
                write!(f, " - ")?;
                b.fmt_at(f, 2)
            }
            Expr::Mul(a, b) => {
                a.fmt_at(f, 2)?;
                write!(f, "*")?;
                b.fmt_at(f, 3)
            }
            Expr::Div(a, b) => {
                a.fmt_at(f, 2)?;
                write!(f, "/")?;
                b.fmt_at(f, 3)
            }
            Expr::Pow(a, b) => {
                a.fmt_at(f, 5)?;
                write!(f, "^")?;
                b.fmt_at(f, 3)
            }
            Expr::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                a.fmt_at(f, 0)?;
                write!(f, ")")
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_at(f, 0)
    }
}

impl std::str::FromStr for Expr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Expr> {
        parse(s, usize::MAX)
    }
}

pub(crate) fn pow_value(a: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && b.abs() <= i32::MAX as f64 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

use super::{pow_value, Expr, Func};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
enum Op {
    Const(f64),
    Var(usize),
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    PowI(i32),
    Call(Func),
}

/// Postfix program for fast repeated evaluation of an [`Expr`].
#[derive(Clone, Debug)]
pub struct Compiled {
    ops: Vec<Op>,
    depth: usize,
}

impl Compiled {
    pub fn new(e: &Expr) -> Compiled {
        let mut ops = Vec::new();
        emit(e, &mut ops);
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        for op in &ops {
            match op {
                Op::Const(_) | Op::Var(_) => depth += 1,
                Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Pow => depth -= 1,
                Op::Neg | Op::PowI(_) | Op::Call(_) => {}
            }
            max_depth = max_depth.max(depth);
        }
        Compiled {
            ops,
            depth: max_depth,
        }
    }

    /// Evaluates with a caller-provided scratch stack. Returns NaN on domain
    /// errors; use [`Compiled::eval`] for a checked result.
    pub fn eval_with(&self, x: &[f64], stack: &mut Vec<f64>) -> f64 {
        stack.clear();
        stack.reserve(self.depth);
        for op in &self.ops {
            match *op {
                Op::Const(c) => stack.push(c),
                Op::Var(i) => stack.push(x[i]),
                Op::Neg => {
                    let a = stack.last_mut().unwrap();
                    *a = -*a;
                }
                Op::PowI(k) => {
                    let a = stack.last_mut().unwrap();
                    *a = a.powi(k);
                }
                Op::Call(f) => {
                    let a = stack.last_mut().unwrap();
                    *a = if f == Func::Ln && *a <= 0.0 {
                        f64::NAN
                    } else {
                        f.apply(*a)
                    };
                }
                Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Pow => {
                    let b = stack.pop().unwrap();
                    let a = stack.last_mut().unwrap();
                    *a = match op {
                        Op::Add => *a + b,
                        Op::Sub => *a - b,
                        Op::Mul => *a * b,
                        Op::Div if b == 0.0 => f64::NAN,
                        Op::Div => *a / b,
                        _ => pow_value(*a, b),
                    };
                }
            }
        }
        stack[0]
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let mut stack = Vec::with_capacity(self.depth);
        let v = self.eval_with(x, &mut stack);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Domain(format!("non-finite value at {x:?}")))
        }
    }
}

fn emit(e: &Expr, ops: &mut Vec<Op>) {
    match e {
        Expr::Const(c) => ops.push(Op::Const(*c)),
        Expr::Var(i) => ops.push(Op::Var(*i)),
        Expr::Neg(a) => {
            emit(a, ops);
            ops.push(Op::Neg);
        }
        Expr::Call(f, a) => {
            emit(a, ops);
            ops.push(Op::Call(*f));
        }
        Expr::Pow(a, b) => {
            emit(a, ops);
            match b.as_const() {
                Some(c) if c.fract() == 0.0 && c.abs() <= 64.0 => ops.push(Op::PowI(c as i32)),
                _ => {
                    emit(b, ops);
                    ops.push(Op::Pow);
                }
            }
        }
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
            emit(a, ops);
            emit(b, ops);
            ops.push(match e {
                Expr::Add(..) => Op::Add,
                Expr::Sub(..) => Op::Sub,
                Expr::Mul(..) => Op::Mul,
                _ => Op::Div,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symexpr::parse;

    #[test]
    fn compiled_matches_tree_walk() {
        let srcs = [
            "x1*x2 + sin(x1)^2 - 3",
            "exp(-x1^2)/(1 + x2^2)",
            "x1^x2 + tanh(x2)^(-1)",
        ];
        for src in srcs {
            let e = parse(src, 2).unwrap();
            let c = Compiled::new(&e);
            for x in [[0.3, 1.2], [1.5, -0.4], [2.0, 0.5]] {
                assert_eq!(c.eval(&x).unwrap(), e.eval(&x).unwrap(), "{src}");
            }
        }
        let c = Compiled::new(&parse("ln(x1)", 1).unwrap());
        assert!(c.eval(&[-1.0]).is_err());
    }
}

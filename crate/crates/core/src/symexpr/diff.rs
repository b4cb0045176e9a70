use super::{Expr, Func};

impl Expr {
    /// Partial derivative with respect to `x{var+1}`, simplified on the fly.
    pub fn diff(&self, var: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(i) => Expr::Const(if *i == var { 1.0 } else { 0.0 }),
            Expr::Neg(a) => Expr::neg(a.diff(var)),
            Expr::Add(a, b) => Expr::add(a.diff(var), b.diff(var)),
            Expr::Sub(a, b) => Expr::sub(a.diff(var), b.diff(var)),
            Expr::Mul(a, b) => Expr::add(
                Expr::mul(a.diff(var), (**b).clone()),
                Expr::mul((**a).clone(), b.diff(var)),
            ),
            Expr::Div(a, b) => {
                let num = Expr::sub(
                    Expr::mul(a.diff(var), (**b).clone()),
                    Expr::mul((**a).clone(), b.diff(var)),
                );
                Expr::div(num, Expr::pow((**b).clone(), Expr::Const(2.0)))
            }
            Expr::Pow(a, b) => {
                let da = a.diff(var);
                let db = b.diff(var);
                if db.is_zero() {
                    // d(u^c) = c u^(c-1) u'
                    let c_minus_one = Expr::sub((**b).clone(), Expr::Const(1.0));
                    Expr::mul(
                        Expr::mul((**b).clone(), Expr::pow((**a).clone(), c_minus_one)),
                        da,
                    )
                } else {
                    // d(u^v) = u^v (v' ln u + v u'/u)
                    let ln_part = Expr::mul(db, Expr::call(Func::Ln, (**a).clone()));
                    let ratio = Expr::div(Expr::mul((**b).clone(), da), (**a).clone());
                    Expr::mul(self.clone(), Expr::add(ln_part, ratio))
                }
            }
            Expr::Call(f, a) => {
                let da = a.diff(var);
                if da.is_zero() {
                    return Expr::Const(0.0);
                }
                let inner = (**a).clone();
                let outer = match f {
                    Func::Sin => Expr::call(Func::Cos, inner),
                    Func::Cos => Expr::neg(Expr::call(Func::Sin, inner)),
                    Func::Exp => Expr::call(Func::Exp, inner),
                    Func::Ln => Expr::div(Expr::Const(1.0), inner),
                    Func::Tanh => Expr::sub(
                        Expr::Const(1.0),
                        Expr::pow(Expr::call(Func::Tanh, inner), Expr::Const(2.0)),
                    ),
                };
                Expr::mul(outer, da)
            }
        }
    }

    /// Mixed partial derivative in the listed variables, applied left to right.
    pub fn diff_many(&self, vars: &[usize]) -> Expr {
        let mut e = self.clone();
        for &v in vars {
            if e.is_zero() {
                break;
            }
            e = e.diff(v);
        }
        e
    }
}

#[cfg(test)]
mod tests {
    use crate::symexpr::parse;

    fn fd(src: &str, n: usize, x: &[f64], var: usize) -> f64 {
        let e = parse(src, n).unwrap();
        let h = 1e-6;
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[var] += h;
        xm[var] -= h;
        (e.eval(&xp).unwrap() - e.eval(&xm).unwrap()) / (2.0 * h)
    }

    #[test]
    fn known_derivatives() {
        let e = parse("x1^3", 1).unwrap();
        assert_eq!(e.diff(0).to_string(), "3*x1^2");
        let e = parse("sin(x1)*x2", 2).unwrap();
        assert_eq!(e.diff(1).to_string(), "sin(x1)");
        assert!(parse("x2", 2).unwrap().diff(0).is_zero());
        let e = parse("exp(x1)", 1).unwrap();
        assert_eq!(e.diff_many(&[0, 0, 0]).to_string(), "exp(x1)");
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let cases = [
            "x1*x2 + sin(x1)^2",
            "exp(-x1^2)/(1 + x2^2)",
            "tanh(x1 - x2) * cos(x2)",
            "ln(1 + x1^2) - x2/x1",
            "x1^x2",
            "neg(x2)^3 * x1",
        ];
        let x = [0.7, 1.3];
        for src in cases {
            let e = parse(src, 2).unwrap();
            for var in 0..2 {
                let sym = e.diff(var).eval(&x).unwrap();
                let num = fd(src, 2, &x, var);
                assert!((sym - num).abs() < 1e-6 * (1.0 + num.abs()), "{src} d{var}");
            }
        }
    }
}

use super::{Expr, Func};
use crate::error::{Error, Result};

/// Parses an infix expression over `x1..x{n_vars}`.
///
/// Precedence from loosest to tightest: `+ -`, `* /`, unary `-`, `^`
/// (right associative). Negated numeric literals fold into constants.
pub fn parse(src: &str, n_vars: usize) -> Result<Expr> {
    let mut p = Parser {
        src,
        bytes: src.as_bytes(),
        pos: 0,
        n_vars,
    };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.bytes.len() {
        return Err(p.syntax(format!("unexpected `{}`", p.bytes[p.pos] as char)));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    n_vars: usize,
}

impl Parser<'_> {
    fn syntax(&self, message: impl Into<String>) -> Error {
        Error::Syntax {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                let rhs = self.term()?;
                lhs = Expr::Add(Box::new(lhs), Box::new(rhs));
            } else if self.eat(b'-') {
                let rhs = self.term()?;
                lhs = Expr::Sub(Box::new(lhs), Box::new(rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                let rhs = self.unary()?;
                lhs = Expr::Mul(Box::new(lhs), Box::new(rhs));
            } else if self.eat(b'/') {
                let rhs = self.unary()?;
                lhs = Expr::Div(Box::new(lhs), Box::new(rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat(b'-') {
            let inner = self.unary()?;
            return Ok(negate(inner));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if self.eat(b'^') {
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.peek() {
            None => Err(self.syntax("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.syntax("expected `)`"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            Some(c) => Err(self.syntax(format!("unexpected `{}`", c as char))),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        let b = self.bytes;
        while self.pos < b.len() && (b[self.pos].is_ascii_digit() || b[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < b.len() && (b[self.pos] == b'e' || b[self.pos] == b'E') {
            let mut look = self.pos + 1;
            if look < b.len() && (b[look] == b'+' || b[look] == b'-') {
                look += 1;
            }
            if look < b.len() && b[look].is_ascii_digit() {
                self.pos = look;
                while self.pos < b.len() && b[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            }
        }
        let text = &self.src[start..self.pos];
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Expr::Const(v)),
            _ => Err(Error::Syntax {
                offset: start,
                message: format!("invalid number `{text}`"),
            }),
        }
    }

    fn identifier(&mut self) -> Result<Expr> {
        let start = self.pos;
        let b = self.bytes;
        while self.pos < b.len() && (b[self.pos].is_ascii_alphanumeric() || b[self.pos] == b'_') {
            self.pos += 1;
        }
        let name = &self.src[start..self.pos];
        if self.peek() == Some(b'(') {
            self.pos += 1;
            let args = self.arguments()?;
            return self.call(name, start, args);
        }
        if let Some(idx) = name.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
            if idx >= 1 && idx <= self.n_vars && !name[1..].starts_with('0') {
                return Ok(Expr::Var(idx - 1));
            }
        }
        Err(Error::UnknownIdentifier {
            name: name.to_string(),
            offset: start,
        })
    }

    fn arguments(&mut self) -> Result<Vec<Expr>> {
        let mut args = Vec::new();
        if self.eat(b')') {
            return Ok(args);
        }
        loop {
            args.push(self.expr()?);
            if self.eat(b',') {
                continue;
            }
            if self.eat(b')') {
                return Ok(args);
            }
            return Err(self.syntax("expected `,` or `)`"));
        }
    }

    fn call(&self, name: &str, offset: usize, mut args: Vec<Expr>) -> Result<Expr> {
        let func = match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "ln" => Some(Func::Ln),
            "tanh" => Some(Func::Tanh),
            "neg" => None,
            _ => {
                return Err(Error::UnknownIdentifier {
                    name: name.to_string(),
                    offset,
                })
            }
        };
        if args.len() != 1 {
            return Err(Error::Arity {
                name: name.to_string(),
                expected: 1,
                found: args.len(),
                offset,
            });
        }
        let arg = args.pop().unwrap();
        Ok(match func {
            Some(f) => Expr::Call(f, Box::new(arg)),
            None => negate(arg),
        })
    }
}

fn negate(e: Expr) -> Expr {
    match e {
        Expr::Const(c) => Expr::Const(-c),
        other => Expr::Neg(Box::new(other)),
    }
}

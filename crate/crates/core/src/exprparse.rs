//! Analytic scalar expressions in `x`, `y`, `z` with forward-mode automatic
//! differentiation.
//!
//! Expressions host the analytic vector-field components. Evaluation runs a
//! 3-wide dual number through the AST, so one pass yields the value together
//! with all three partial derivatives.

use std::fmt;

use thiserror::Error;

use crate::Vec3;

#[derive(Debug, Error, PartialEq)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("evaluation outside domain: {0}")]
    EvalDomain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
}

/// AST over numbers, the variables `x`, `y`, `z`, binary operators and a
/// small set of functions.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    /// Variable by axis index: 0 = x, 1 = y, 2 = z.
    Var(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Value plus gradient, propagated through every AST node.
#[derive(Debug, Clone, Copy)]
struct Dual3 {
    v: f64,
    g: Vec3,
}

impl Dual3 {
    fn constant(v: f64) -> Self {
        Dual3 { v, g: Vec3::zeros() }
    }

    fn var(axis: usize, v: f64) -> Self {
        let mut g = Vec3::zeros();
        g[axis] = 1.0;
        Dual3 { v, g }
    }
}

impl Expr {
    /// Evaluate the expression at `p`.
    pub fn eval(&self, p: &Vec3) -> Result<f64, ExprError> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Var(axis) => p[*axis],
            Expr::Neg(e) => -e.eval(p)?,
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(p)?, b.eval(p)?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(ExprError::EvalDomain("division by zero".into()));
                        }
                        a / b
                    }
                    BinOp::Pow => pow_value(a, b)?,
                }
            }
            Expr::Call(f, e) => {
                let a = e.eval(p)?;
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(ExprError::EvalDomain("sqrt of negative".into()));
                        }
                        a.sqrt()
                    }
                }
            }
        })
    }

    /// Evaluate value and exact gradient at `p` in one pass.
    pub fn eval_with_gradient(&self, p: &Vec3) -> Result<(f64, Vec3), ExprError> {
        let d = self.eval_dual(p)?;
        Ok((d.v, d.g))
    }

    fn eval_dual(&self, p: &Vec3) -> Result<Dual3, ExprError> {
        Ok(match self {
            Expr::Num(v) => Dual3::constant(*v),
            Expr::Var(axis) => Dual3::var(*axis, p[*axis]),
            Expr::Neg(e) => {
                let a = e.eval_dual(p)?;
                Dual3 { v: -a.v, g: -a.g }
            }
            Expr::Bin(op, ea, eb) => {
                let a = ea.eval_dual(p)?;
                let b = eb.eval_dual(p)?;
                match op {
                    BinOp::Add => Dual3 { v: a.v + b.v, g: a.g + b.g },
                    BinOp::Sub => Dual3 { v: a.v - b.v, g: a.g - b.g },
                    BinOp::Mul => Dual3 {
                        v: a.v * b.v,
                        g: a.g * b.v + b.g * a.v,
                    },
                    BinOp::Div => {
                        if b.v == 0.0 {
                            return Err(ExprError::EvalDomain("division by zero".into()));
                        }
                        Dual3 {
                            v: a.v / b.v,
                            g: (a.g * b.v - b.g * a.v) / (b.v * b.v),
                        }
                    }
                    BinOp::Pow => pow_dual(a, b)?,
                }
            }
            Expr::Call(f, e) => {
                let a = e.eval_dual(p)?;
                match f {
                    Func::Sin => Dual3 { v: a.v.sin(), g: a.g * a.v.cos() },
                    Func::Cos => Dual3 { v: a.v.cos(), g: -a.g * a.v.sin() },
                    Func::Exp => {
                        let v = a.v.exp();
                        Dual3 { v, g: a.g * v }
                    }
                    Func::Sqrt => {
                        if a.v < 0.0 {
                            return Err(ExprError::EvalDomain("sqrt of negative".into()));
                        }
                        let v = a.v.sqrt();
                        if v == 0.0 && a.g != Vec3::zeros() {
                            return Err(ExprError::EvalDomain("sqrt derivative at zero".into()));
                        }
                        Dual3 { v, g: a.g / (2.0 * v.max(f64::MIN_POSITIVE)) }
                    }
                }
            }
        })
    }
}

fn pow_value(base: f64, exp: f64) -> Result<f64, ExprError> {
    if exp.fract() == 0.0 && exp.abs() <= i32::MAX as f64 {
        if base == 0.0 && exp < 0.0 {
            return Err(ExprError::EvalDomain("zero to negative power".into()));
        }
        return Ok(base.powi(exp as i32));
    }
    if base < 0.0 {
        return Err(ExprError::EvalDomain("negative base with non-integer exponent".into()));
    }
    if base == 0.0 && exp < 0.0 {
        return Err(ExprError::EvalDomain("zero to negative power".into()));
    }
    Ok(base.powf(exp))
}

fn pow_dual(a: Dual3, b: Dual3) -> Result<Dual3, ExprError> {
    // Integer constant exponents keep the whole real line as domain.
    if b.g == Vec3::zeros() && b.v.fract() == 0.0 && b.v.abs() <= i32::MAX as f64 {
        let n = b.v as i32;
        if a.v == 0.0 && n < 0 {
            return Err(ExprError::EvalDomain("zero to negative power".into()));
        }
        let v = a.v.powi(n);
        let dv = if n == 0 { 0.0 } else { f64::from(n) * a.v.powi(n - 1) };
        return Ok(Dual3 { v, g: a.g * dv });
    }
    if a.v <= 0.0 {
        return Err(ExprError::EvalDomain(
            "non-positive base with non-constant or non-integer exponent".into(),
        ));
    }
    let v = pow_value(a.v, b.v)?;
    // d(a^b) = a^b (b' ln a + b a'/a)
    let g = (b.g * a.v.ln() + a.g * (b.v / a.v)) * v;
    Ok(Dual3 { v, g })
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

impl Expr {
    // Precedence levels: 0 add/sub, 1 mul/div, 2 unary minus, 3 pow, 4 atom.
    fn prec(&self) -> u8 {
        match self {
            Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 0,
            Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 1,
            Expr::Neg(_) => 2,
            Expr::Bin(BinOp::Pow, ..) => 3,
            Expr::Num(v) if *v < 0.0 => 2,
            _ => 4,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let prec = self.prec();
        if prec < min {
            write!(f, "(")?;
            self.fmt_prec(f, 0)?;
            return write!(f, ")");
        }
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(0) => write!(f, "x"),
            Expr::Var(1) => write!(f, "y"),
            Expr::Var(_) => write!(f, "z"),
            Expr::Neg(e) => {
                write!(f, "-")?;
                e.fmt_prec(f, 3)
            }
            Expr::Bin(op, a, b) => {
                let (sym, la, lb) = match op {
                    BinOp::Add => ("+", 0, 1),
                    BinOp::Sub => ("-", 0, 1),
                    BinOp::Mul => ("*", 1, 2),
                    BinOp::Div => ("/", 1, 2),
                    // Right-associative: left operand needs a higher level.
                    BinOp::Pow => ("^", 4, 3),
                };
                a.fmt_prec(f, la)?;
                write!(f, " {sym} ")?;
                b.fmt_prec(f, lb)
            }
            Expr::Call(func, e) => {
                let name = match func {
                    Func::Sin => "sin",
                    Func::Cos => "cos",
                    Func::Exp => "exp",
                    Func::Sqrt => "sqrt",
                };
                write!(f, "{name}(")?;
                e.fmt_prec(f, 0)?;
                write!(f, ")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { src: src.as_bytes(), pos: 0 }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    /// Next token with its byte offset; `None` at end of input.
    fn next(&mut self) -> Result<Option<(Tok, usize)>, ExprError> {
        self.skip_ws();
        if self.pos >= self.src.len() {
            return Ok(None);
        }
        let start = self.pos;
        let c = self.src[self.pos];
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'0'..=b'9' | b'.' => {
                let mut end = self.pos;
                while end < self.src.len()
                    && (self.src[end].is_ascii_digit() || self.src[end] == b'.')
                {
                    end += 1;
                }
                // Scientific exponent.
                if end < self.src.len() && (self.src[end] == b'e' || self.src[end] == b'E') {
                    let mut e = end + 1;
                    if e < self.src.len() && (self.src[e] == b'+' || self.src[e] == b'-') {
                        e += 1;
                    }
                    if e < self.src.len() && self.src[e].is_ascii_digit() {
                        end = e;
                        while end < self.src.len() && self.src[end].is_ascii_digit() {
                            end += 1;
                        }
                    }
                }
                let text = std::str::from_utf8(&self.src[start..end]).unwrap();
                let v: f64 = text.parse().map_err(|_| ExprError::Syntax {
                    offset: start,
                    message: format!("invalid number `{text}`"),
                })?;
                self.pos = end;
                return Ok(Some((Tok::Num(v), start)));
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut end = self.pos;
                while end < self.src.len()
                    && (self.src[end].is_ascii_alphanumeric() || self.src[end] == b'_')
                {
                    end += 1;
                }
                let name = std::str::from_utf8(&self.src[start..end]).unwrap().to_string();
                self.pos = end;
                return Ok(Some((Tok::Ident(name), start)));
            }
            other => {
                return Err(ExprError::Syntax {
                    offset: start,
                    message: format!("unexpected character `{}`", other as char),
                })
            }
        };
        self.pos += 1;
        Ok(Some((tok, start)))
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    idx: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&(Tok, usize)> {
        self.toks.get(self.idx)
    }

    fn bump(&mut self) -> Option<(Tok, usize)> {
        let t = self.toks.get(self.idx).cloned();
        if t.is_some() {
            self.idx += 1;
        }
        t
    }

    fn err_here(&self, message: &str) -> ExprError {
        let offset = self.peek().map(|(_, o)| *o).unwrap_or(self.end);
        ExprError::Syntax { offset, message: message.into() }
    }

    // additive := multiplicative (('+'|'-') multiplicative)*
    fn additive(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.multiplicative()?;
        while let Some((tok, _)) = self.peek() {
            let op = match tok {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.multiplicative()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn multiplicative(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some((tok, _)) = self.peek() {
            let op = match tok {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    // unary := '-' unary | power
    fn unary(&mut self) -> Result<Expr, ExprError> {
        if let Some((Tok::Minus, _)) = self.peek() {
            self.bump();
            let inner = self.unary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.power()
    }

    // power := atom ('^' unary)?   -- right-associative, binds above unary minus
    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if let Some((Tok::Caret, _)) = self.peek() {
            self.bump();
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.bump() {
            Some((Tok::Num(v), _)) => Ok(Expr::Num(v)),
            Some((Tok::Ident(name), offset)) => match name.as_str() {
                "x" => Ok(Expr::Var(0)),
                "y" => Ok(Expr::Var(1)),
                "z" => Ok(Expr::Var(2)),
                "sin" | "cos" | "exp" | "sqrt" => {
                    let func = match name.as_str() {
                        "sin" => Func::Sin,
                        "cos" => Func::Cos,
                        "exp" => Func::Exp,
                        _ => Func::Sqrt,
                    };
                    match self.bump() {
                        Some((Tok::LParen, _)) => {}
                        _ => {
                            return Err(ExprError::Syntax {
                                offset,
                                message: format!("`{name}` must be called as {name}(...)"),
                            })
                        }
                    }
                    let arg = self.additive()?;
                    match self.bump() {
                        Some((Tok::RParen, _)) => Ok(Expr::Call(func, Box::new(arg))),
                        _ => Err(self.err_here("expected `)`")),
                    }
                }
                _ => Err(ExprError::UnknownIdentifier { name, offset }),
            },
            Some((Tok::LParen, _)) => {
                let inner = self.additive()?;
                match self.bump() {
                    Some((Tok::RParen, _)) => Ok(inner),
                    _ => Err(self.err_here("expected `)`")),
                }
            }
            Some((tok, offset)) => Err(ExprError::Syntax {
                offset,
                message: format!("unexpected token {tok:?}"),
            }),
            None => Err(self.err_here("unexpected end of input")),
        }
    }
}

/// Parse an expression with standard precedence (`^` above unary minus above
/// `*`/`/` above `+`/`-`; `^` right-associative, the rest left-associative).
pub fn parse(text: &str) -> Result<Expr, ExprError> {
    let mut lexer = Lexer::new(text);
    let mut toks = Vec::new();
    while let Some(t) = lexer.next()? {
        toks.push(t);
    }
    let mut parser = Parser { toks, idx: 0, end: text.len() };
    let expr = parser.additive()?;
    if parser.idx != parser.toks.len() {
        return Err(parser.err_here("trailing input"));
    }
    Ok(expr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn grad_fd(e: &Expr, p: &Vec3, h: f64) -> Option<Vec3> {
        let mut g = Vec3::zeros();
        for axis in 0..3 {
            let mut pp = *p;
            let mut pm = *p;
            pp[axis] += h;
            pm[axis] -= h;
            let fp = e.eval(&pp).ok()?;
            let fm = e.eval(&pm).ok()?;
            g[axis] = (fp - fm) / (2.0 * h);
        }
        Some(g)
    }

    #[test]
    fn parses_field_components() {
        let e = parse("x + y^2 + 2*z^3").unwrap();
        let expected = Expr::Bin(
            BinOp::Add,
            Box::new(Expr::Bin(
                BinOp::Add,
                Box::new(Expr::Var(0)),
                Box::new(Expr::Bin(
                    BinOp::Pow,
                    Box::new(Expr::Var(1)),
                    Box::new(Expr::Num(2.0)),
                )),
            )),
            Box::new(Expr::Bin(
                BinOp::Mul,
                Box::new(Expr::Num(2.0)),
                Box::new(Expr::Bin(
                    BinOp::Pow,
                    Box::new(Expr::Var(2)),
                    Box::new(Expr::Num(3.0)),
                )),
            )),
        );
        assert_eq!(e, expected);

        let third = parse("2*x^2*y - 3*z").unwrap();
        assert_relative_eq!(third.eval(&Vec3::new(1.0, 2.0, 3.0)).unwrap(), 4.0 - 9.0);
    }

    #[test]
    fn negation_node() {
        assert_eq!(parse("-(x)").unwrap(), Expr::Neg(Box::new(Expr::Var(0))));
    }

    #[test]
    fn precedence_and_associativity() {
        // ^ binds above unary minus: -x^2 == -(x^2)
        let e = parse("-x^2").unwrap();
        assert_eq!(e.eval(&Vec3::new(3.0, 0.0, 0.0)).unwrap(), -9.0);
        // ^ right-associative: 2^3^2 == 2^9
        let e = parse("2^3^2").unwrap();
        assert_eq!(e.eval(&Vec3::zeros()).unwrap(), 512.0);
        // left-associative subtraction
        let e = parse("1 - 2 - 3").unwrap();
        assert_eq!(e.eval(&Vec3::zeros()).unwrap(), -4.0);
        // exponent may carry a unary minus
        let e = parse("2^-2").unwrap();
        assert_eq!(e.eval(&Vec3::zeros()).unwrap(), 0.25);
    }

    #[test]
    fn syntax_error_carries_offset() {
        match parse("x + * y") {
            Err(ExprError::Syntax { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("expected syntax error, got {other:?}"),
        }
        match parse("x + foo") {
            Err(ExprError::UnknownIdentifier { name, offset }) => {
                assert_eq!(name, "foo");
                assert_eq!(offset, 4);
            }
            other => panic!("expected unknown identifier, got {other:?}"),
        }
    }

    #[test]
    fn gradient_examples() {
        let e = parse("x + y^2 + 2*z^3").unwrap();
        let (v, g) = e.eval_with_gradient(&Vec3::zeros()).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g, Vec3::new(1.0, 0.0, 0.0));

        let e = parse("10*x^3 + 2*y").unwrap();
        let (v, g) = e.eval_with_gradient(&Vec3::zeros()).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g, Vec3::new(0.0, 2.0, 0.0));

        let e = parse("5").unwrap();
        let (v, g) = e.eval_with_gradient(&Vec3::new(0.3, -2.0, 7.0)).unwrap();
        assert_eq!(v, 5.0);
        assert_eq!(g, Vec3::zeros());
    }

    #[test]
    fn eval_domain_errors() {
        let e = parse("1 / (x - 1)").unwrap();
        assert!(matches!(
            e.eval(&Vec3::new(1.0, 0.0, 0.0)),
            Err(ExprError::EvalDomain(_))
        ));
        let e = parse("sqrt(x)").unwrap();
        assert!(matches!(
            e.eval(&Vec3::new(-1.0, 0.0, 0.0)),
            Err(ExprError::EvalDomain(_))
        ));
    }

    fn random_expr(rng: &mut StdRng, depth: usize) -> Expr {
        if depth == 0 || rng.random_range(0..4) == 0 {
            // Non-negative literals only: `parse` never yields a negative
            // `Num` (a leading minus becomes `Neg`), and the roundtrip check
            // relies on structural equality.
            return if rng.random_bool(0.5) {
                Expr::Var(rng.random_range(0..3))
            } else {
                Expr::Num((rng.random_range(0..=20) as f64) / 4.0)
            };
        }
        match rng.random_range(0..8) {
            0 => Expr::Bin(
                BinOp::Add,
                Box::new(random_expr(rng, depth - 1)),
                Box::new(random_expr(rng, depth - 1)),
            ),
            1 => Expr::Bin(
                BinOp::Sub,
                Box::new(random_expr(rng, depth - 1)),
                Box::new(random_expr(rng, depth - 1)),
            ),
            2 | 3 => Expr::Bin(
                BinOp::Mul,
                Box::new(random_expr(rng, depth - 1)),
                Box::new(random_expr(rng, depth - 1)),
            ),
            4 => Expr::Bin(
                BinOp::Div,
                Box::new(random_expr(rng, depth - 1)),
                Box::new(random_expr(rng, depth - 1)),
            ),
            5 => Expr::Bin(
                BinOp::Pow,
                Box::new(random_expr(rng, depth - 1)),
                Box::new(Expr::Num(rng.random_range(2..=4) as f64)),
            ),
            6 => Expr::Neg(Box::new(random_expr(rng, depth - 1))),
            _ => {
                let f = match rng.random_range(0..3) {
                    0 => Func::Sin,
                    1 => Func::Cos,
                    _ => Func::Exp,
                };
                Expr::Call(f, Box::new(random_expr(rng, depth - 1)))
            }
        }
    }

    #[test]
    fn ad_matches_central_differences_on_random_expressions() {
        let mut rng = StdRng::seed_from_u64(42);
        let mut checked = 0;
        while checked < 1000 {
            let e = random_expr(&mut rng, 4);
            let p = Vec3::new(
                rng.random_range(0.2..0.8),
                rng.random_range(0.2..0.8),
                rng.random_range(0.2..0.8),
            );
            let Ok((v, g)) = e.eval_with_gradient(&p) else { continue };
            if !v.is_finite() || !g.iter().all(|c| c.is_finite()) {
                continue;
            }
            // Skip wildly scaled expressions where the FD itself is unreliable.
            if v.abs() > 1e4 || g.norm() > 1e4 {
                continue;
            }
            let Some(fd) = grad_fd(&e, &p, 1e-6) else { continue };
            if !fd.iter().all(|c| c.is_finite()) {
                continue;
            }
            let scale = 1.0 + g.norm();
            assert!(
                (g - fd).norm() <= 1e-6 * scale * 10.0,
                "expr {e}: ad {g:?} vs fd {fd:?}"
            );
            checked += 1;
        }
    }

    #[test]
    fn print_parse_roundtrip_is_structural() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..500 {
            let e = random_expr(&mut rng, 4);
            let printed = e.to_string();
            let reparsed = parse(&printed)
                .unwrap_or_else(|err| panic!("reparse of `{printed}` failed: {err}"));
            assert_eq!(reparsed, e, "printed form `{printed}`");
        }
    }
}

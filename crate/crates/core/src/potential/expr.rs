//! Arithmetic expression language for potentials and parametrizations.

use super::scalar::Scalar;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown identifier `{name}` at position {position}")]
    UnknownIdentifier { name: String, position: usize },
    #[error("expression mixes the radius `r` with Cartesian coordinates")]
    MixedRadial,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("logarithm of non-positive value {0}")]
    LogDomain(f64),
    #[error("square root of negative value {0}")]
    SqrtDomain(f64),
    #[error("non-integer power of non-positive base {0}")]
    PowDomain(f64),
    #[error("division by zero")]
    DivisionByZero,
    #[error("non-finite result")]
    NonFinite,
    #[error("expected {expected} coordinates, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    /// Euclidean norm of the coordinate vector.
    Radius,
    /// Squared Euclidean norm; smooth at the origin.
    RadiusSq,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    PowInt(Box<Expr>, i32),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// How the coordinates are named while parsing.
#[derive(Debug, Clone)]
pub struct VarSpace {
    pub prefix: &'static str,
    pub count: usize,
    pub allow_radius: bool,
}

impl VarSpace {
    pub fn cartesian(d: usize) -> Self {
        VarSpace { prefix: "x", count: d, allow_radius: true }
    }
    pub fn parameters(k: usize) -> Self {
        VarSpace { prefix: "t", count: k, allow_radius: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Tok {
    Num(f64),
    Ident(usize, usize),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    toks: Vec<(Tok, usize)>,
}

impl<'a> Lexer<'a> {
    fn run(src: &'a str) -> Result<Vec<(Tok, usize)>, ParseError> {
        let mut lx = Lexer { src, toks: Vec::new() };
        let bytes = src.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i] as char;
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            let start = i;
            let tok = match c {
                '+' => Tok::Plus,
                '-' => Tok::Minus,
                '*' => {
                    if i + 1 < bytes.len() && bytes[i + 1] == b'*' {
                        i += 1;
                        Tok::Caret
                    } else {
                        Tok::Star
                    }
                }
                '/' => Tok::Slash,
                '^' => Tok::Caret,
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                _ if c.is_ascii_digit() || c == '.' => {
                    let mut j = i;
                    while j < bytes.len() && (bytes[j].is_ascii_digit() || bytes[j] == b'.') {
                        j += 1;
                    }
                    if j < bytes.len() && (bytes[j] == b'e' || bytes[j] == b'E') {
                        let mut k = j + 1;
                        if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                            k += 1;
                        }
                        if k < bytes.len() && bytes[k].is_ascii_digit() {
                            while k < bytes.len() && bytes[k].is_ascii_digit() {
                                k += 1;
                            }
                            j = k;
                        }
                    }
                    let text = &lx.src[i..j];
                    let v: f64 = text.parse().map_err(|_| ParseError::Syntax {
                        position: start,
                        message: format!("malformed number `{text}`"),
                    })?;
                    i = j;
                    lx.toks.push((Tok::Num(v), start));
                    continue;
                }
                _ if c.is_ascii_alphabetic() || c == '_' => {
                    let mut j = i;
                    while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                        j += 1;
                    }
                    lx.toks.push((Tok::Ident(i, j), start));
                    i = j;
                    continue;
                }
                _ => {
                    return Err(ParseError::Syntax {
                        position: start,
                        message: format!("unexpected character `{c}`"),
                    })
                }
            };
            lx.toks.push((tok, start));
            i += 1;
        }
        lx.toks.push((Tok::End, src.len()));
        Ok(lx.toks)
    }
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<(Tok, usize)>,
    pos: usize,
    vars: VarSpace,
    uses_radius: bool,
    uses_cartesian: bool,
}

/// Parses `src` over the given variable space.
pub fn parse(src: &str, vars: VarSpace) -> Result<Expr, ParseError> {
    let toks = Lexer::run(src)?;
    let mut p = Parser { src, toks, pos: 0, vars, uses_radius: false, uses_cartesian: false };
    let e = p.expr()?;
    let (t, at) = p.peek();
    if t != Tok::End {
        return Err(ParseError::Syntax { position: at, message: "unexpected trailing input".into() });
    }
    if p.uses_radius && p.uses_cartesian {
        return Err(ParseError::MixedRadial);
    }
    Ok(normalize(e))
}

impl<'a> Parser<'a> {
    fn peek(&self) -> (Tok, usize) {
        self.toks[self.pos]
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos];
        if t.0 != Tok::End {
            self.pos += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek().0 {
                Tok::Plus => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek().0 {
                Tok::Star => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Slash => {
                    self.bump();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek().0 {
            Tok::Minus => {
                self.bump();
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Tok::Plus => {
                self.bump();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.peek().0 == Tok::Caret {
            self.bump();
            let exponent = self.unary()?;
            return Ok(make_pow(base, exponent));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let (t, at) = self.bump();
        match t {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Tok::Ident(a, b) => {
                let name = &self.src[a..b];
                let func = match name {
                    "exp" => Some(Func::Exp),
                    "log" | "ln" => Some(Func::Log),
                    "sin" => Some(Func::Sin),
                    "cos" => Some(Func::Cos),
                    "sqrt" => Some(Func::Sqrt),
                    _ => None,
                };
                if let Some(f) = func {
                    let (t2, at2) = self.bump();
                    if t2 != Tok::LParen {
                        return Err(ParseError::Syntax {
                            position: at2,
                            message: format!("expected `(` after `{name}`"),
                        });
                    }
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    return Ok(Expr::Call(f, Box::new(arg)));
                }
                if name == "pi" {
                    return Ok(Expr::Const(std::f64::consts::PI));
                }
                if name == "r" && self.vars.allow_radius {
                    self.uses_radius = true;
                    return Ok(Expr::Radius);
                }
                if let Some(rest) = name.strip_prefix(self.vars.prefix) {
                    if let Ok(k) = rest.parse::<usize>() {
                        if k >= 1 && k <= self.vars.count && !rest.starts_with('0') {
                            if self.vars.allow_radius {
                                self.uses_cartesian = true;
                            }
                            return Ok(Expr::Var(k - 1));
                        }
                    }
                }
                Err(ParseError::UnknownIdentifier { name: name.to_string(), position: at })
            }
            Tok::End => Err(ParseError::Syntax { position: at, message: "unexpected end of input".into() }),
            _ => Err(ParseError::Syntax { position: at, message: "expected an operand".into() }),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        let (t, at) = self.bump();
        if t != Tok::RParen {
            return Err(ParseError::Syntax { position: at, message: "expected `)`".into() });
        }
        Ok(())
    }
}

fn constant_value(e: &Expr) -> Option<f64> {
    match e {
        Expr::Const(v) => Some(*v),
        Expr::Neg(a) => constant_value(a).map(|v| -v),
        Expr::Add(a, b) => Some(constant_value(a)? + constant_value(b)?),
        Expr::Sub(a, b) => Some(constant_value(a)? - constant_value(b)?),
        Expr::Mul(a, b) => Some(constant_value(a)? * constant_value(b)?),
        Expr::Div(a, b) => Some(constant_value(a)? / constant_value(b)?),
        Expr::PowInt(a, n) => Some(constant_value(a)?.powi(*n)),
        Expr::Pow(a, b) => Some(constant_value(a)?.powf(constant_value(b)?)),
        _ => None,
    }
}

fn make_pow(base: Expr, exponent: Expr) -> Expr {
    if let Some(v) = constant_value(&exponent) {
        if v.fract() == 0.0 && v.abs() <= i32::MAX as f64 {
            return Expr::PowInt(Box::new(base), v as i32);
        }
    }
    Expr::Pow(Box::new(base), Box::new(exponent))
}

/// Rewrites even powers of the radius as powers of its square so the
/// expression stays smooth at the origin.
fn normalize(e: Expr) -> Expr {
    use Expr::*;
    match e {
        PowInt(b, n) => {
            let b = normalize(*b);
            if b == Radius && n % 2 == 0 {
                if n == 2 {
                    RadiusSq
                } else {
                    PowInt(Box::new(RadiusSq), n / 2)
                }
            } else {
                PowInt(Box::new(b), n)
            }
        }
        Mul(a, b) => {
            let (a, b) = (normalize(*a), normalize(*b));
            if a == Radius && b == Radius {
                RadiusSq
            } else {
                Mul(Box::new(a), Box::new(b))
            }
        }
        Neg(a) => Neg(Box::new(normalize(*a))),
        Add(a, b) => Add(Box::new(normalize(*a)), Box::new(normalize(*b))),
        Sub(a, b) => Sub(Box::new(normalize(*a)), Box::new(normalize(*b))),
        Div(a, b) => Div(Box::new(normalize(*a)), Box::new(normalize(*b))),
        Pow(a, b) => Pow(Box::new(normalize(*a)), Box::new(normalize(*b))),
        Call(f, a) => Call(f, Box::new(normalize(*a))),
        other => other,
    }
}

impl Expr {
    pub fn uses_radius(&self) -> bool {
        use Expr::*;
        match self {
            Radius | RadiusSq => true,
            Const(_) | Var(_) => false,
            Neg(a) | PowInt(a, _) | Call(_, a) => a.uses_radius(),
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Pow(a, b) => a.uses_radius() || b.uses_radius(),
        }
    }

    /// Evaluates with Cartesian coordinates `x`.
    pub fn eval<T: Scalar>(&self, x: &[T]) -> Result<T, EvalError> {
        self.eval_in(x, false)
    }

    /// Evaluates a radial expression at the scalar radius `x[0]`.
    pub fn eval_profile<T: Scalar>(&self, r: T) -> Result<T, EvalError> {
        self.eval_in(&[r], true)
    }

    fn eval_in<T: Scalar>(&self, x: &[T], profile: bool) -> Result<T, EvalError> {
        use Expr::*;
        Ok(match self {
            Const(v) => T::constant(*v),
            Var(i) => x[*i],
            Radius => {
                if profile {
                    x[0]
                } else {
                    radius_sq(x).sqrt()
                }
            }
            RadiusSq => {
                if profile {
                    x[0] * x[0]
                } else {
                    radius_sq(x)
                }
            }
            Neg(a) => -a.eval_in(x, profile)?,
            Add(a, b) => a.eval_in(x, profile)? + b.eval_in(x, profile)?,
            Sub(a, b) => a.eval_in(x, profile)? - b.eval_in(x, profile)?,
            Mul(a, b) => a.eval_in(x, profile)? * b.eval_in(x, profile)?,
            Div(a, b) => {
                let d = b.eval_in(x, profile)?;
                if d.value() == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                a.eval_in(x, profile)? / d
            }
            PowInt(a, n) => {
                let b = a.eval_in(x, profile)?;
                if *n < 0 && b.value() == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                b.powi(*n)
            }
            Pow(a, b) => {
                let base = a.eval_in(x, profile)?;
                if base.value() <= 0.0 {
                    return Err(EvalError::PowDomain(base.value()));
                }
                (b.eval_in(x, profile)? * base.ln()).exp()
            }
            Call(f, a) => {
                let v = a.eval_in(x, profile)?;
                match f {
                    Func::Exp => v.exp(),
                    Func::Log => {
                        if v.value() <= 0.0 {
                            return Err(EvalError::LogDomain(v.value()));
                        }
                        v.ln()
                    }
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Sqrt => {
                        if v.value() < 0.0 {
                            return Err(EvalError::SqrtDomain(v.value()));
                        }
                        v.sqrt()
                    }
                }
            }
        })
    }

    /// Replaces the radius by the first coordinate, turning a radial
    /// profile into a one-dimensional potential.
    pub fn radius_to_coordinate(&self) -> Expr {
        use Expr::*;
        let b = |e: &Expr| Box::new(e.radius_to_coordinate());
        match self {
            Radius => Var(0),
            RadiusSq => PowInt(Box::new(Var(0)), 2),
            Const(v) => Const(*v),
            Var(i) => Var(*i),
            Neg(a) => Neg(b(a)),
            Add(x, y) => Add(b(x), b(y)),
            Sub(x, y) => Sub(b(x), b(y)),
            Mul(x, y) => Mul(b(x), b(y)),
            Div(x, y) => Div(b(x), b(y)),
            PowInt(a, n) => PowInt(b(a), *n),
            Pow(x, y) => Pow(b(x), b(y)),
            Call(f, a) => Call(*f, b(a)),
        }
    }
}

fn radius_sq<T: Scalar>(x: &[T]) -> T {
    let mut s = T::constant(0.0);
    for xi in x {
        s = s + *xi * *xi;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Result<Expr, ParseError> {
        parse(s, VarSpace::cartesian(3))
    }

    #[test]
    fn precedence_and_unary_minus() {
        let e = p("-x1^2 + 2*3").unwrap();
        assert_eq!(e.eval(&[3.0, 0.0, 0.0]).unwrap(), -3.0);
        let e = p("2^3^2").unwrap();
        assert_eq!(e.eval(&[0.0, 0.0, 0.0]).unwrap(), 512.0);
        let e = p("1/2/4").unwrap();
        assert_eq!(e.eval(&[0.0; 3]).unwrap(), 0.125);
        let e = p("x1**2").unwrap();
        assert_eq!(e.eval(&[3.0, 0.0, 0.0]).unwrap(), 9.0);
    }

    #[test]
    fn reports_syntax_position() {
        match p("x1 + * 2") {
            Err(ParseError::Syntax { position, .. }) => assert_eq!(position, 5),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(p("(x1"), Err(ParseError::Syntax { .. })));
        assert!(matches!(p("x1 x2"), Err(ParseError::Syntax { .. })));
    }

    #[test]
    fn rejects_unknown_identifiers() {
        assert!(matches!(p("x4"), Err(ParseError::UnknownIdentifier { .. })));
        assert!(matches!(p("x0"), Err(ParseError::UnknownIdentifier { .. })));
        assert!(matches!(p("tan(x1)"), Err(ParseError::UnknownIdentifier { .. })));
        assert!(matches!(parse("x1", VarSpace::parameters(1)), Err(ParseError::UnknownIdentifier { .. })));
    }

    #[test]
    fn rejects_mixed_radius_and_coordinates() {
        assert_eq!(p("r^2 + x1"), Err(ParseError::MixedRadial));
    }

    #[test]
    fn even_radius_powers_are_smooth() {
        let e = p("r^4 - r^2").unwrap();
        assert!(!format!("{e:?}").contains("Radius,"));
        assert!(format!("{e:?}").contains("RadiusSq"));
        let e = p("r^3").unwrap();
        assert!(format!("{e:?}").contains("Radius"));
    }

    #[test]
    fn domain_errors() {
        let e = p("log(x1)").unwrap();
        assert!(matches!(e.eval(&[0.0, 0.0, 0.0]), Err(EvalError::LogDomain(_))));
        let e = p("x1^0.5").unwrap();
        assert!(matches!(e.eval(&[-1.0, 0.0, 0.0]), Err(EvalError::PowDomain(_))));
        assert!((e.eval(&[4.0, 0.0, 0.0]).unwrap() - 2.0).abs() < 1e-15);
        let e = p("1/x1").unwrap();
        assert_eq!(e.eval(&[0.0, 0.0, 0.0]), Err(EvalError::DivisionByZero));
    }

    #[test]
    fn scientific_notation() {
        let e = p("1.5e-1*x1").unwrap();
        assert!((e.eval(&[2.0, 0.0, 0.0]).unwrap() - 0.3).abs() < 1e-15);
    }
}

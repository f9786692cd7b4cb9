//! Scalar expressions used by scenario files.
//!
//! Grammar:
//!
//! ```text
//! expr   := term (("+" | "-") term)*
//! term   := factor (("*" | "/") factor)*
//! factor := "-" factor | power
//! power  := atom ("^" factor)?
//! atom   := number | ident | ident "(" expr ("," expr)* ")" | "(" expr ")"
//! ```
//!
//! Identifiers are the ambient coordinates `x1..xn`, the time `t`, the group
//! coordinates `g1..gk` and the constant `pi`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    /// Ambient coordinate, 1-based.
    X(usize),
    T,
    /// Group coordinate, 1-based.
    G(usize),
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
    Tan,
    Exp,
    Log,
    Sqrt,
    Tanh,
    Abs,
    Bump,
    Min,
    Max,
}

impl Func {
    pub const ALL: [Func; 11] = [
        Func::Sin,
        Func::Cos,
        Func::Tan,
        Func::Exp,
        Func::Log,
        Func::Sqrt,
        Func::Tanh,
        Func::Abs,
        Func::Bump,
        Func::Min,
        Func::Max,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Tanh => "tanh",
            Func::Abs => "abs",
            Func::Bump => "bump",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Func::ALL.iter().copied().find(|f| f.name() == name)
    }

    fn variadic(self) -> bool {
        matches!(self, Func::Min | Func::Max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// The smooth cutoff `exp(1 - 1/(1 - s^2))` on `|s| < 1`, zero elsewhere.
pub fn bump(s: f64) -> f64 {
    let s2 = s * s;
    if s2 < 1.0 {
        (1.0 - 1.0 / (1.0 - s2)).exp()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("syntax error at byte {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound variable {0}")]
    Unbound(String),
    #[error("domain error in `{subexpr}`: {message}")]
    Domain { subexpr: String, message: String },
    #[error("{func} expects {expected} argument(s), got {got}")]
    Arity {
        func: &'static str,
        expected: &'static str,
        got: usize,
    },
}

/// Variable values for one evaluation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Bindings<'a> {
    pub x: &'a [f64],
    pub t: Option<f64>,
    pub g: &'a [f64],
}

impl<'a> Bindings<'a> {
    pub fn empty() -> Self {
        Bindings::default()
    }

    pub fn point(x: &'a [f64]) -> Self {
        Bindings { x, t: None, g: &[] }
    }

    pub fn with_group(x: &'a [f64], g: &'a [f64]) -> Self {
        Bindings { x, t: None, g }
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.t = Some(t);
        self
    }
}

impl Expr {
    pub fn eval(&self, b: &Bindings<'_>) -> Result<f64, EvalError> {
        match self {
            Expr::Num(v) => Ok(*v),
            Expr::Var(v) => lookup(*v, b),
            Expr::Neg(a) => Ok(-a.eval(b)?),
            Expr::Bin(op, l, r) => self.eval_bin(*op, l.eval(b)?, r.eval(b)?),
            Expr::Call(f, args) => {
                let vals = args
                    .iter()
                    .map(|a| a.eval(b))
                    .collect::<Result<Vec<_>, _>>()?;
                self.eval_call(*f, &vals)
            }
        }
    }

    /// Value and partial derivative with respect to `x{var+1}` (0-based
    /// `var`), by forward-mode dual arithmetic. Domain rules match [`Expr::eval`].
    pub fn eval_dual(&self, b: &Bindings<'_>, var: usize) -> Result<(f64, f64), EvalError> {
        match self {
            Expr::Num(v) => Ok((*v, 0.0)),
            Expr::Var(v) => {
                let d = if *v == Var::X(var + 1) { 1.0 } else { 0.0 };
                Ok((lookup(*v, b)?, d))
            }
            Expr::Neg(a) => {
                let (v, d) = a.eval_dual(b, var)?;
                Ok((-v, -d))
            }
            Expr::Bin(op, l, r) => {
                let (lv, ld) = l.eval_dual(b, var)?;
                let (rv, rd) = r.eval_dual(b, var)?;
                let value = self.eval_bin(*op, lv, rv)?;
                let d = match op {
                    BinOp::Add => ld + rd,
                    BinOp::Sub => ld - rd,
                    BinOp::Mul => ld * rv + lv * rd,
                    BinOp::Div => (ld * rv - lv * rd) / (rv * rv),
                    BinOp::Pow => {
                        let base = if ld == 0.0 { 0.0 } else if rv == 1.0 { ld } else { rv * lv.powf(rv - 1.0) * ld };
                        let expo = if rd == 0.0 { 0.0 } else { value * lv.ln() * rd };
                        base + expo
                    }
                };
                Ok((value, d))
            }
            Expr::Call(f, args) => {
                let vals = args
                    .iter()
                    .map(|a| a.eval_dual(b, var))
                    .collect::<Result<Vec<_>, _>>()?;
                let plain: Vec<f64> = vals.iter().map(|p| p.0).collect();
                let value = self.eval_call(*f, &plain)?;
                if f.variadic() {
                    let pick = vals.iter().find(|p| p.0 == value).map_or(0.0, |p| p.1);
                    return Ok((value, pick));
                }
                let (v, dv) = vals[0];
                let slope = match f {
                    Func::Sin => v.cos(),
                    Func::Cos => -v.sin(),
                    Func::Tan => 1.0 / (v.cos() * v.cos()),
                    Func::Exp => value,
                    Func::Log => 1.0 / v,
                    Func::Sqrt => 0.5 / value,
                    Func::Tanh => 1.0 - value * value,
                    Func::Abs => v.signum(),
                    Func::Bump => {
                        let q = 1.0 - v * v;
                        if q > 0.0 {
                            -2.0 * v * value / (q * q)
                        } else {
                            0.0
                        }
                    }
                    Func::Min | Func::Max => unreachable!(),
                };
                Ok((value, if dv == 0.0 { 0.0 } else { slope * dv }))
            }
        }
    }

    fn eval_bin(&self, op: BinOp, lv: f64, rv: f64) -> Result<f64, EvalError> {
        match op {
            BinOp::Add => Ok(lv + rv),
            BinOp::Sub => Ok(lv - rv),
            BinOp::Mul => Ok(lv * rv),
            BinOp::Div => {
                if rv == 0.0 {
                    Err(self.domain("division by zero"))
                } else {
                    Ok(lv / rv)
                }
            }
            BinOp::Pow => {
                if lv < 0.0 && rv.fract() != 0.0 {
                    Err(self.domain("non-integer power of a negative base"))
                } else if lv == 0.0 && rv < 0.0 {
                    Err(self.domain("negative power of zero"))
                } else {
                    Ok(lv.powf(rv))
                }
            }
        }
    }

    fn eval_call(&self, f: Func, vals: &[f64]) -> Result<f64, EvalError> {
        if f.variadic() {
            if vals.len() < 2 {
                return Err(EvalError::Arity {
                    func: f.name(),
                    expected: "at least 2",
                    got: vals.len(),
                });
            }
            let fold = if f == Func::Min { f64::min } else { f64::max };
            return Ok(vals[1..].iter().fold(vals[0], |acc, &v| fold(acc, v)));
        }
        if vals.len() != 1 {
            return Err(EvalError::Arity {
                func: f.name(),
                expected: "1",
                got: vals.len(),
            });
        }
        let v = vals[0];
        Ok(match f {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Tan => v.tan(),
            Func::Exp => v.exp(),
            Func::Log => {
                if v <= 0.0 {
                    return Err(self.domain("log of a non-positive value"));
                }
                v.ln()
            }
            Func::Sqrt => {
                if v < 0.0 {
                    return Err(self.domain("sqrt of a negative value"));
                }
                v.sqrt()
            }
            Func::Tanh => v.tanh(),
            Func::Abs => v.abs(),
            Func::Bump => bump(v),
            Func::Min | Func::Max => unreachable!(),
        })
    }

    fn domain(&self, message: &str) -> EvalError {
        EvalError::Domain {
            subexpr: self.to_string(),
            message: message.to_string(),
        }
    }

    /// Largest 1-based `x` index referenced, 0 if none.
    pub fn max_x_index(&self) -> usize {
        self.fold_vars(0, &|acc, v| match v {
            Var::X(i) => acc.max(i),
            _ => acc,
        })
    }

    /// Largest 1-based `g` index referenced, 0 if none.
    pub fn max_g_index(&self) -> usize {
        self.fold_vars(0, &|acc, v| match v {
            Var::G(i) => acc.max(i),
            _ => acc,
        })
    }

    pub fn uses_time(&self) -> bool {
        self.fold_vars(false, &|acc, v| acc || v == Var::T)
    }

    fn fold_vars<A: Copy>(&self, init: A, f: &dyn Fn(A, Var) -> A) -> A {
        match self {
            Expr::Num(_) => init,
            Expr::Var(v) => f(init, *v),
            Expr::Neg(a) => a.fold_vars(init, f),
            Expr::Bin(_, l, r) => {
                let acc = l.fold_vars(init, f);
                r.fold_vars(acc, f)
            }
            Expr::Call(_, args) => args.iter().fold(init, |acc, a| a.fold_vars(acc, f)),
        }
    }
}

fn lookup(v: Var, b: &Bindings<'_>) -> Result<f64, EvalError> {
    match v {
        Var::X(i) => b
            .x
            .get(i.wrapping_sub(1))
            .copied()
            .ok_or_else(|| EvalError::Unbound(format!("x{i}"))),
        Var::G(i) => b
            .g
            .get(i.wrapping_sub(1))
            .copied()
            .ok_or_else(|| EvalError::Unbound(format!("g{i}"))),
        Var::T => b.t.ok_or_else(|| EvalError::Unbound("t".into())),
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::X(i) => write!(f, "x{i}"),
            Var::T => write!(f, "t"),
            Var::G(i) => write!(f, "g{i}"),
        }
    }
}

/// Fully parenthesized; reparses to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(a) => write!(f, "-({a})"),
            Expr::Bin(op, l, r) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({l}) {sym} ({r})")
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
    End,
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(v) => format!("number {v}"),
        Tok::Ident(s) => format!("identifier `{s}`"),
        Tok::Op(c) => format!("`{c}`"),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::Comma => "`,`".into(),
        Tok::End => "end of input".into(),
    }
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        match c {
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                out.push((start, Tok::Op(c as char)));
                i += 1;
            }
            b'(' => {
                out.push((start, Tok::LParen));
                i += 1;
            }
            b')' => {
                out.push((start, Tok::RParen));
                i += 1;
            }
            b',' => {
                out.push((start, Tok::Comma));
                i += 1;
            }
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                let v: f64 = text.parse().map_err(|_| ParseError {
                    offset: start,
                    message: format!("malformed number `{text}`"),
                })?;
                out.push((start, Tok::Num(v)));
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((start, Tok::Ident(src[start..i].to_string())));
            }
            _ => {
                let ch = src[start..].chars().next().unwrap_or('?');
                return Err(ParseError {
                    offset: start,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        }
    }
    out.push((src.len(), Tok::End));
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].1
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].1.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &str) -> ParseError {
        ParseError {
            offset: self.offset(),
            message: format!("expected {expected}, found {}", describe(self.peek())),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Op('+') => BinOp::Add,
                Tok::Op('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Tok::Op('*') => BinOp::Mul,
                Tok::Op('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.factor()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Op('-') {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if *self.peek() == Tok::Op('^') {
            self.bump();
            let exp = self.factor()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let at = self.offset();
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Num(v))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                if *self.peek() == Tok::LParen {
                    let func = Func::from_name(&name).ok_or_else(|| ParseError {
                        offset: at,
                        message: format!(
                            "unknown function `{name}` (known: {})",
                            Func::ALL.map(|f| f.name()).join(", ")
                        ),
                    })?;
                    self.bump();
                    let mut args = vec![self.expr()?];
                    while *self.peek() == Tok::Comma {
                        self.bump();
                        args.push(self.expr()?);
                    }
                    self.expect_rparen()?;
                    let ok = if func.variadic() {
                        args.len() >= 2
                    } else {
                        args.len() == 1
                    };
                    if !ok {
                        return Err(ParseError {
                            offset: at,
                            message: format!(
                                "{} takes {} argument(s), got {}",
                                func.name(),
                                if func.variadic() { "at least 2" } else { "1" },
                                args.len()
                            ),
                        });
                    }
                    Ok(Expr::Call(func, args))
                } else {
                    variable(&name).ok_or_else(|| ParseError {
                        offset: at,
                        message: format!(
                            "unknown variable `{name}` (expected x<i>, g<i>, t or pi)"
                        ),
                    })
                }
            }
            _ => Err(self.error("a number, identifier or `(`")),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        if *self.peek() == Tok::RParen {
            self.bump();
            Ok(())
        } else {
            Err(self.error("`)`"))
        }
    }
}

fn variable(name: &str) -> Option<Expr> {
    if name == "t" {
        return Some(Expr::Var(Var::T));
    }
    if name == "pi" {
        return Some(Expr::Num(std::f64::consts::PI));
    }
    let index = |rest: &str| -> Option<usize> {
        if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) || rest.starts_with('0')
        {
            return None;
        }
        rest.parse().ok()
    };
    if let Some(rest) = name.strip_prefix('x') {
        return index(rest).map(|i| Expr::Var(Var::X(i)));
    }
    if let Some(rest) = name.strip_prefix('g') {
        return index(rest).map(|i| Expr::Var(Var::G(i)));
    }
    None
}

pub fn parse(source: &str) -> Result<Expr, ParseError> {
    let toks = tokenize(source)?;
    let mut p = Parser { toks, pos: 0 };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(p.error("an operator or end of input"));
    }
    Ok(e)
}

impl std::str::FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

/// Parses a list of expressions and checks every `x` index against `dim`.
pub fn parse_components(sources: &[&str], dim: usize) -> Result<Vec<Expr>, ParseError> {
    sources
        .iter()
        .map(|s| {
            let e = parse(s)?;
            if e.max_x_index() > dim {
                return Err(ParseError {
                    offset: 0,
                    message: format!(
                        "variable x{} exceeds the declared dimension {dim}",
                        e.max_x_index()
                    ),
                });
            }
            Ok(e)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn num(v: f64) -> Box<Expr> {
        Box::new(Expr::Num(v))
    }
    fn x(i: usize) -> Box<Expr> {
        Box::new(Expr::Var(Var::X(i)))
    }
    fn ev(s: &str) -> f64 {
        parse(s).unwrap().eval(&Bindings::empty()).unwrap()
    }

    #[test]
    fn single_variable() {
        assert_eq!(parse("x1").unwrap(), Expr::Var(Var::X(1)));
    }

    #[test]
    fn unary_minus_binds_looser_than_power() {
        assert_eq!(
            parse("-x2^2").unwrap(),
            Expr::Neg(Box::new(Expr::Bin(BinOp::Pow, x(2), num(2.0))))
        );
    }

    #[test]
    fn power_is_right_associative() {
        assert_eq!(
            parse("2^3^2").unwrap(),
            Expr::Bin(
                BinOp::Pow,
                num(2.0),
                Box::new(Expr::Bin(BinOp::Pow, num(3.0), num(2.0)))
            )
        );
        assert_eq!(ev("2^3^2"), 512.0);
        assert_eq!(ev("2^-1"), 0.5);
    }

    #[test]
    fn bump_call_structure() {
        let e = parse("bump((x1-1)/2)").unwrap();
        assert_eq!(
            e,
            Expr::Call(
                Func::Bump,
                vec![Expr::Bin(
                    BinOp::Div,
                    Box::new(Expr::Bin(BinOp::Sub, x(1), num(1.0))),
                    num(2.0)
                )]
            )
        );
    }

    #[test]
    fn arithmetic() {
        assert_eq!(ev("2+3*4"), 14.0);
        assert_eq!(ev("sin(0)"), 0.0);
        assert_eq!(ev("min(3, 1, 2)"), 1.0);
        assert_eq!(ev("max(3, 1)"), 3.0);
    }

    #[test]
    fn bump_values() {
        assert_eq!(ev("bump(0)"), 1.0);
        assert_eq!(ev("bump(1)"), 0.0);
        assert_eq!(ev("bump(-1.5)"), 0.0);
        let s: f64 = 0.5;
        assert!((bump(s) - (1.0 - 1.0 / (1.0 - s * s)).exp()).abs() < 1e-15);
    }

    #[test]
    fn variables_bind() {
        let e = parse("x1*g2 + t").unwrap();
        let b = Bindings::with_group(&[2.0], &[0.0, 3.0]).with_time(1.0);
        assert_eq!(e.eval(&b).unwrap(), 7.0);
        assert!(matches!(
            e.eval(&Bindings::point(&[2.0])),
            Err(EvalError::Unbound(_))
        ));
    }

    #[test]
    fn located_syntax_errors() {
        let err = parse("1 + * 2").unwrap_err();
        assert_eq!(err.offset, 4);
        let err = parse("x1 x2").unwrap_err();
        assert_eq!(err.offset, 3);
        let err = parse("(x1 + 1").unwrap_err();
        assert_eq!(err.offset, 7);
        assert!(err.message.contains("`)`"));
        let err = parse("foo(1)").unwrap_err();
        assert!(err.message.contains("unknown function"));
        let err = parse("y + 1").unwrap_err();
        assert!(err.message.contains("unknown variable"));
        assert!(parse("x0").is_err());
        assert!(parse("sin(1, 2)").is_err());
        assert!(parse("1 # 2").is_err());
    }

    #[test]
    fn domain_errors_name_the_subexpression() {
        let e = parse("1 + log(x1 - 1)").unwrap();
        match e.eval(&Bindings::point(&[1.0])) {
            Err(EvalError::Domain { subexpr, .. }) => assert!(subexpr.starts_with("log(")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse("1/0").unwrap().eval(&Bindings::empty()).is_err());
        assert!(parse("(-2)^0.5").unwrap().eval(&Bindings::empty()).is_err());
        assert_eq!(ev("(-2)^3"), -8.0);
        assert!(parse("sqrt(-1)").unwrap().eval(&Bindings::empty()).is_err());
    }

    #[test]
    fn component_dimension_check() {
        assert!(parse_components(&["x1", "x2"], 2).is_ok());
        assert!(parse_components(&["x3"], 2).is_err());
    }

    #[test]
    fn display_reparses() {
        for s in ["-x2^2", "1e-5*x1", "bump((x1-1)/2) + min(x1, 2, t)", "2^3^2", "-(-1)"] {
            let e = parse(s).unwrap();
            assert_eq!(parse(&e.to_string()).unwrap(), e, "{s}");
        }
    }

    #[test]
    fn dual_derivatives_match_differences() {
        let corpus = [
            "x1^3 - 2*x1*x2",
            "sin(x1)*cos(x2) + tan(x1/3)",
            "exp(-x1^2) / (1 + x2^2)",
            "log(2 + x1) + sqrt(3 + x2)",
            "tanh(x1*x2) + abs(x1 - 5)",
            "bump(x1/3) * x2",
            "(1 + x1^2)^x2",
            "max(x1, 2*x2) - min(x1, -x2)",
        ];
        let p = [0.4, 0.7];
        let h = 1e-6;
        for src in corpus {
            let e = parse(src).unwrap();
            for var in 0..2 {
                let mut plus = p;
                let mut minus = p;
                plus[var] += h;
                minus[var] -= h;
                let fd = (e.eval(&Bindings::point(&plus)).unwrap() - e.eval(&Bindings::point(&minus)).unwrap()) / (2.0 * h);
                let (v, d) = e.eval_dual(&Bindings::point(&p), var).unwrap();
                assert_eq!(v, e.eval(&Bindings::point(&p)).unwrap());
                assert!((d - fd).abs() < 1e-7, "{src} d/dx{}: {d} vs {fd}", var + 1);
            }
        }
    }
}

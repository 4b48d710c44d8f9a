//! Arithmetic expressions for scenario signals.
//!
//! Grammar, loosest to tightest:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?          right associative
//! atom   := number | var | func '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Variables are `t`, `y1..yp` and `u1..uq` (1-indexed). Functions are
//! `sin cos exp abs` (one argument) and `min max` (two or more).

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("parse error at offset {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("non-finite result in {0}")]
    NonFinite(&'static str),
    #[error("variable {0} is outside the evaluation context")]
    Unbound(Var),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    T,
    /// 1-based output index.
    Y(usize),
    /// 1-based input index.
    U(usize),
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::T => write!(f, "t"),
            Var::Y(j) => write!(f, "y{j}"),
            Var::U(j) => write!(f, "u{j}"),
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

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Abs,
    Min,
    Max,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn is_unary(self) -> bool {
        !matches!(self, Func::Min | Func::Max)
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

/// Values visible to an expression.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub t: f64,
    pub y: &'a [f64],
    pub u: &'a [f64],
}

impl<'a> EvalContext<'a> {
    pub fn new(t: f64, y: &'a [f64], u: &'a [f64]) -> Self {
        EvalContext { t, y, u }
    }

    /// Context with only time bound.
    pub fn time(t: f64) -> EvalContext<'static> {
        EvalContext { t, y: &[], u: &[] }
    }
}

/// Which variables an expression may reference.
#[derive(Debug, Clone, Copy)]
pub struct VarScope {
    pub outputs: usize,
    pub inputs: usize,
}

impl VarScope {
    pub fn time_only() -> Self {
        VarScope {
            outputs: 0,
            inputs: 0,
        }
    }
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    pub fn eval(&self, ctx: &EvalContext<'_>) -> Result<f64, EvalError> {
        let value = match self {
            Expr::Num(v) => *v,
            Expr::Var(var) => match *var {
                Var::T => ctx.t,
                Var::Y(j) => *ctx
                    .y
                    .get(j.wrapping_sub(1))
                    .ok_or(EvalError::Unbound(*var))?,
                Var::U(j) => *ctx
                    .u
                    .get(j.wrapping_sub(1))
                    .ok_or(EvalError::Unbound(*var))?,
            },
            Expr::Neg(a) => -a.eval(ctx)?,
            Expr::Bin(op, a, b) => {
                let a = a.eval(ctx)?;
                let b = b.eval(ctx)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(EvalError::DivisionByZero);
                        }
                        a / b
                    }
                    BinOp::Pow => power(a, b),
                }
            }
            Expr::Call(f, args) => {
                let first = args[0].eval(ctx)?;
                match f {
                    Func::Sin => first.sin(),
                    Func::Cos => first.cos(),
                    Func::Exp => first.exp(),
                    Func::Abs => first.abs(),
                    Func::Min | Func::Max => {
                        let mut acc = first;
                        for a in &args[1..] {
                            let v = a.eval(ctx)?;
                            acc = if *f == Func::Min {
                                acc.min(v)
                            } else {
                                acc.max(v)
                            };
                        }
                        acc
                    }
                }
            }
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(EvalError::NonFinite(self.kind()))
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Expr::Num(_) => "literal",
            Expr::Var(_) => "variable",
            Expr::Neg(_) => "negation",
            Expr::Bin(BinOp::Add, ..) => "addition",
            Expr::Bin(BinOp::Sub, ..) => "subtraction",
            Expr::Bin(BinOp::Mul, ..) => "multiplication",
            Expr::Bin(BinOp::Div, ..) => "division",
            Expr::Bin(BinOp::Pow, ..) => "power",
            Expr::Call(f, _) => f.name(),
        }
    }

    pub fn visit_vars(&self, f: &mut impl FnMut(Var)) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => f(*v),
            Expr::Neg(a) => a.visit_vars(f),
            Expr::Bin(_, a, b) => {
                a.visit_vars(f);
                b.visit_vars(f);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.visit_vars(f)),
        }
    }

    /// First variable reference that falls outside `scope`, if any.
    pub fn out_of_scope(&self, scope: VarScope) -> Option<Var> {
        let mut bad = None;
        self.visit_vars(&mut |v| {
            let ok = match v {
                Var::T => true,
                Var::Y(j) => (1..=scope.outputs).contains(&j),
                Var::U(j) => (1..=scope.inputs).contains(&j),
            };
            if !ok && bad.is_none() {
                bad = Some(v);
            }
        });
        bad
    }

    /// Literal zero (the parse of "0").
    pub fn is_zero_literal(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 0.0)
    }
}

/// Integer exponents up to 64 in magnitude use repeated multiplication.
fn power(base: f64, exponent: f64) -> f64 {
    if exponent.fract() == 0.0 && exponent.abs() <= 64.0 {
        base.powi(exponent as i32)
    } else {
        base.powf(exponent)
    }
}

/// Fully parenthesized printing; `parse(e.to_string())` rebuilds `e`.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => {
                if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) {
                    write!(f, "(-{:?})", -v)
                } else {
                    write!(f, "{v:?}")
                }
            }
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
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

pub fn parse(src: &str) -> Result<Expr, ParseError> {
    let mut p = Parser {
        src: src.as_bytes(),
        pos: 0,
    };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.error(format!("unexpected character '{}'", p.src[p.pos] as char)));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            Ok(Expr::Neg(Box::new(self.unary()?)))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let exponent = self.unary()?;
            Ok(Expr::bin(BinOp::Pow, base, exponent))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            None => Err(self.error("unexpected end of input, expected an expression")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected ')'"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.identifier(),
            Some(c) => Err(self.error(format!("unexpected character '{}'", c as char))),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let src = self.src;
        let digits = |p: &mut usize| {
            let s = *p;
            while *p < src.len() && src[*p].is_ascii_digit() {
                *p += 1;
            }
            *p - s
        };
        let mut end = start;
        let mut count = digits(&mut end);
        if end < src.len() && src[end] == b'.' {
            end += 1;
            count += digits(&mut end);
        }
        if count == 0 {
            return Err(ParseError {
                offset: start,
                message: "malformed number".into(),
            });
        }
        if end < src.len() && (src[end] == b'e' || src[end] == b'E') {
            let mut p = end + 1;
            if p < src.len() && (src[p] == b'+' || src[p] == b'-') {
                p += 1;
            }
            if digits(&mut p) == 0 {
                return Err(ParseError {
                    offset: start,
                    message: "malformed number: empty exponent".into(),
                });
            }
            end = p;
        }
        if end < src.len() && (src[end] == b'.' || src[end].is_ascii_alphanumeric()) {
            return Err(ParseError {
                offset: start,
                message: "malformed number".into(),
            });
        }
        let text = std::str::from_utf8(&src[start..end]).expect("ascii digits");
        let value: f64 = text.parse().map_err(|_| ParseError {
            offset: start,
            message: format!("malformed number '{text}'"),
        })?;
        if !value.is_finite() {
            return Err(ParseError {
                offset: start,
                message: format!("number '{text}' overflows"),
            });
        }
        self.pos = end;
        Ok(Expr::Num(value))
    }

    fn identifier(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii identifier");
        if let Some(func) = Func::from_name(name) {
            return self.call(func, start);
        }
        let var = match name {
            "t" => Some(Var::T),
            _ => indexed(name, 'y')
                .map(Var::Y)
                .or_else(|| indexed(name, 'u').map(Var::U)),
        };
        var.map(Expr::Var).ok_or_else(|| ParseError {
            offset: start,
            message: format!("unknown identifier '{name}'"),
        })
    }

    fn call(&mut self, func: Func, start: usize) -> Result<Expr, ParseError> {
        if !self.eat(b'(') {
            return Err(self.error(format!("expected '(' after {}", func.name())));
        }
        let mut args = vec![self.expr()?];
        while self.eat(b',') {
            args.push(self.expr()?);
        }
        if !self.eat(b')') {
            return Err(self.error("expected ')'"));
        }
        let arity_ok = if func.is_unary() {
            args.len() == 1
        } else {
            args.len() >= 2
        };
        if !arity_ok {
            return Err(ParseError {
                offset: start,
                message: format!(
                    "wrong number of arguments to {}: {}",
                    func.name(),
                    args.len()
                ),
            });
        }
        Ok(Expr::Call(func, args))
    }
}

fn indexed(name: &str, prefix: char) -> Option<usize> {
    let rest = name.strip_prefix(prefix)?;
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) || rest.starts_with('0') {
        return None;
    }
    rest.parse().ok()
}

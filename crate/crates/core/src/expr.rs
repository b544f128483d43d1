//! Coefficient expressions: a small recursive-descent parser, printer,
//! evaluator and symbolic differentiator.
//!
//! Grammar (standard precedence, `^` binds tightest and is right-associative):
//!
//! ```text
//! expression := piecewise | sum
//! piecewise  := '[' sum (',' constant ':' sum)* ']'
//! sum        := product (('+' | '-') product)*
//! product    := unary (('*' | '/') unary)*
//! unary      := '-' unary | power
//! power      := atom ('^' unary)?
//! atom       := number | 'x' | func '(' sum ')' | '(' sum ')'
//! func       := exp | log | sqrt | sin | cos | abs
//! ```
//!
//! A piecewise block `[e0, b1: e1, b2: e2]` means `e0` on `(-inf, b1)`,
//! `e1` on `[b1, b2)` and `e2` on `[b2, inf)`.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Abs => "abs",
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
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => " + ",
            BinOp::Sub => " - ",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => PREC_SUM,
            BinOp::Mul | BinOp::Div => PREC_PRODUCT,
            BinOp::Pow => PREC_POWER,
        }
    }
}

const PREC_SUM: u8 = 1;
const PREC_PRODUCT: u8 = 2;
const PREC_UNARY: u8 = 3;
const PREC_POWER: u8 = 4;
const PREC_ATOM: u8 = 5;

#[derive(Debug, Clone)]
pub enum Node {
    Num(f64),
    Var,
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Expression tree node. `offset` is the byte position in the source text
/// and is ignored by equality.
#[derive(Debug, Clone)]
pub struct Expr {
    pub node: Node,
    pub offset: usize,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        match (&self.node, &other.node) {
            (Node::Num(a), Node::Num(b)) => a.to_bits() == b.to_bits(),
            (Node::Var, Node::Var) => true,
            (Node::Neg(a), Node::Neg(b)) => a == b,
            (Node::Bin(o1, l1, r1), Node::Bin(o2, l2, r2)) => o1 == o2 && l1 == l2 && r1 == r2,
            (Node::Call(f1, a1), Node::Call(f2, a2)) => f1 == f2 && a1 == a2,
            _ => false,
        }
    }
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr { node: Node::Num(v), offset: 0 }
    }

    pub fn var() -> Expr {
        Expr { node: Node::Var, offset: 0 }
    }

    pub fn as_const(&self) -> Option<f64> {
        match self.node {
            Node::Num(v) => Some(v),
            _ => None,
        }
    }

    pub fn depends_on_x(&self) -> bool {
        match &self.node {
            Node::Num(_) => false,
            Node::Var => true,
            Node::Neg(a) | Node::Call(_, a) => a.depends_on_x(),
            Node::Bin(_, l, r) => l.depends_on_x() || r.depends_on_x(),
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let fail = |message: &str| Error::Eval { offset: self.offset, x, message: message.to_string() };
        let v = match &self.node {
            Node::Num(v) => *v,
            Node::Var => x,
            Node::Neg(a) => -a.eval(x)?,
            Node::Bin(op, l, r) => {
                let a = l.eval(x)?;
                let b = r.eval(x)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(fail("division by zero"));
                        }
                        a / b
                    }
                    BinOp::Pow => {
                        if a < 0.0 && b.fract() != 0.0 {
                            return Err(fail("negative base with fractional exponent"));
                        }
                        if a == 0.0 && b < 0.0 {
                            return Err(fail("zero raised to a negative power"));
                        }
                        a.powf(b)
                    }
                }
            }
            Node::Call(f, a) => {
                let a = a.eval(x)?;
                match f {
                    Func::Exp => a.exp(),
                    Func::Log => {
                        if a <= 0.0 {
                            return Err(fail("log of a non-positive value"));
                        }
                        a.ln()
                    }
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(fail("sqrt of a negative value"));
                        }
                        a.sqrt()
                    }
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Abs => a.abs(),
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(fail("non-finite result"))
        }
    }

    /// Symbolic derivative with respect to `x`, constant-folded.
    pub fn derivative(&self) -> Expr {
        let at = self.offset;
        match &self.node {
            Node::Num(_) => Expr::num(0.0),
            Node::Var => Expr::num(1.0),
            Node::Neg(a) => neg(a.derivative(), at),
            Node::Bin(op, l, r) => {
                let (dl, dr) = (l.derivative(), r.derivative());
                let (l, r) = ((**l).clone(), (**r).clone());
                match op {
                    BinOp::Add => bin(BinOp::Add, dl, dr, at),
                    BinOp::Sub => bin(BinOp::Sub, dl, dr, at),
                    BinOp::Mul => bin(BinOp::Add, bin(BinOp::Mul, dl, r.clone(), at), bin(BinOp::Mul, l, dr, at), at),
                    BinOp::Div => {
                        let num = bin(BinOp::Sub, bin(BinOp::Mul, dl, r.clone(), at), bin(BinOp::Mul, l, dr, at), at);
                        bin(BinOp::Div, num, bin(BinOp::Pow, r, Expr::num(2.0), at), at)
                    }
                    BinOp::Pow => {
                        if !r.depends_on_x() {
                            let lowered = bin(BinOp::Sub, r.clone(), Expr::num(1.0), at);
                            let inner = bin(BinOp::Mul, r, bin(BinOp::Pow, l, lowered, at), at);
                            bin(BinOp::Mul, inner, dl, at)
                        } else {
                            let pow = bin(BinOp::Pow, l.clone(), r.clone(), at);
                            let log_l = call(Func::Log, l.clone(), at);
                            let term1 = bin(BinOp::Mul, dr, log_l, at);
                            let term2 = bin(BinOp::Div, bin(BinOp::Mul, r, dl, at), l, at);
                            bin(BinOp::Mul, pow, bin(BinOp::Add, term1, term2, at), at)
                        }
                    }
                }
            }
            Node::Call(f, a) => {
                let da = a.derivative();
                let a = (**a).clone();
                let outer = match f {
                    Func::Exp => call(Func::Exp, a, at),
                    Func::Log => return bin(BinOp::Div, da, a, at),
                    Func::Sqrt => {
                        let denom = bin(BinOp::Mul, Expr::num(2.0), call(Func::Sqrt, a, at), at);
                        return bin(BinOp::Div, da, denom, at);
                    }
                    Func::Sin => call(Func::Cos, a, at),
                    Func::Cos => neg(call(Func::Sin, a, at), at),
                    Func::Abs => bin(BinOp::Div, a.clone(), call(Func::Abs, a, at), at),
                };
                bin(BinOp::Mul, outer, da, at)
            }
        }
    }

    fn precedence(&self) -> u8 {
        match &self.node {
            Node::Num(v) if *v < 0.0 || v.is_sign_negative() => PREC_UNARY,
            Node::Num(_) | Node::Var | Node::Call(..) => PREC_ATOM,
            Node::Neg(_) => PREC_UNARY,
            Node::Bin(op, ..) => op.precedence(),
        }
    }

    fn write_with(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        let paren = self.precedence() < min_prec;
        if paren {
            f.write_str("(")?;
        }
        match &self.node {
            Node::Num(v) => write!(f, "{v}")?,
            Node::Var => f.write_str("x")?,
            Node::Neg(a) => {
                f.write_str("-")?;
                a.write_with(f, PREC_UNARY)?;
            }
            Node::Bin(op, l, r) => {
                let (lp, rp) = match op {
                    BinOp::Add | BinOp::Sub => (PREC_SUM, PREC_PRODUCT),
                    BinOp::Mul | BinOp::Div => (PREC_PRODUCT, PREC_UNARY),
                    BinOp::Pow => (PREC_ATOM, PREC_UNARY),
                };
                l.write_with(f, lp)?;
                f.write_str(op.symbol())?;
                r.write_with(f, rp)?;
            }
            Node::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                a.write_with(f, 0)?;
                f.write_str(")")?;
            }
        }
        if paren {
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_with(f, 0)
    }
}

fn neg(a: Expr, offset: usize) -> Expr {
    match a.node {
        Node::Num(v) => Expr { node: Node::Num(-v), offset },
        Node::Neg(inner) => *inner,
        node => Expr { node: Node::Neg(Box::new(Expr { node, offset: a.offset })), offset },
    }
}

fn call(func: Func, a: Expr, offset: usize) -> Expr {
    if let Some(v) = a.as_const() {
        let folded = match func {
            Func::Exp => Some(v.exp()),
            Func::Log if v > 0.0 => Some(v.ln()),
            Func::Sqrt if v >= 0.0 => Some(v.sqrt()),
            Func::Sin => Some(v.sin()),
            Func::Cos => Some(v.cos()),
            Func::Abs => Some(v.abs()),
            _ => None,
        };
        if let Some(r) = folded.filter(|r| r.is_finite()) {
            return Expr { node: Node::Num(r), offset };
        }
    }
    Expr { node: Node::Call(func, Box::new(a)), offset }
}

/// Builds a binary node, folding constants and trivial identities.
fn bin(op: BinOp, l: Expr, r: Expr, offset: usize) -> Expr {
    let (lc, rc) = (l.as_const(), r.as_const());
    if let (Some(a), Some(b)) = (lc, rc) {
        let v = match op {
            BinOp::Add => Some(a + b),
            BinOp::Sub => Some(a - b),
            BinOp::Mul => Some(a * b),
            BinOp::Div if b != 0.0 => Some(a / b),
            BinOp::Pow if !(a < 0.0 && b.fract() != 0.0) && !(a == 0.0 && b < 0.0) => Some(a.powf(b)),
            _ => None,
        };
        if let Some(v) = v.filter(|v| v.is_finite()) {
            return Expr { node: Node::Num(v), offset };
        }
    }
    match op {
        BinOp::Add if lc == Some(0.0) => return r,
        BinOp::Add | BinOp::Sub if rc == Some(0.0) => return l,
        BinOp::Sub if lc == Some(0.0) => return neg(r, offset),
        BinOp::Mul if lc == Some(0.0) || rc == Some(0.0) => return Expr { node: Node::Num(0.0), offset },
        BinOp::Mul if lc == Some(1.0) => return r,
        BinOp::Mul | BinOp::Div if rc == Some(1.0) => return l,
        BinOp::Div if lc == Some(0.0) && rc != Some(0.0) => return Expr { node: Node::Num(0.0), offset },
        BinOp::Pow if rc == Some(1.0) => return l,
        BinOp::Pow if rc == Some(0.0) => return Expr { node: Node::Num(1.0), offset },
        _ => {}
    }
    Expr { node: Node::Bin(op, Box::new(l), Box::new(r)), offset }
}

/// Public constructors used by the compilers in [`crate::model`].
pub mod build {
    use super::{bin, call, neg, BinOp, Expr, Func};

    pub fn add(l: Expr, r: Expr) -> Expr {
        bin(BinOp::Add, l, r, 0)
    }
    pub fn sub(l: Expr, r: Expr) -> Expr {
        bin(BinOp::Sub, l, r, 0)
    }
    pub fn mul(l: Expr, r: Expr) -> Expr {
        bin(BinOp::Mul, l, r, 0)
    }
    pub fn div(l: Expr, r: Expr) -> Expr {
        bin(BinOp::Div, l, r, 0)
    }
    pub fn pow(l: Expr, r: Expr) -> Expr {
        bin(BinOp::Pow, l, r, 0)
    }
    pub fn negate(a: Expr) -> Expr {
        neg(a, 0)
    }
    pub fn sqrt(a: Expr) -> Expr {
        call(Func::Sqrt, a, 0)
    }
}

/// A parsed coefficient: one expression per segment of the real line.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    pub breakpoints: Vec<f64>,
    pub pieces: Vec<Expr>,
}

impl Expression {
    pub fn single(e: Expr) -> Self {
        Expression { breakpoints: Vec::new(), pieces: vec![e] }
    }

    pub fn piece_index(&self, x: f64) -> usize {
        self.breakpoints.partition_point(|&b| b <= x)
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        self.pieces[self.piece_index(x)].eval(x)
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.breakpoints.is_empty() {
            return write!(f, "{}", self.pieces[0]);
        }
        write!(f, "[{}", self.pieces[0])?;
        for (b, e) in self.breakpoints.iter().zip(&self.pieces[1..]) {
            write!(f, ", {b}: {e}")?;
        }
        f.write_str("]")
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    End,
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    tok: Tok,
    tok_start: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Self> {
        let mut p = Parser { src, pos: 0, tok: Tok::End, tok_start: 0 };
        p.advance()?;
        Ok(p)
    }

    fn error<T>(&self, offset: usize, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse { offset, message: message.into() })
    }

    fn advance(&mut self) -> Result<()> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        self.tok_start = self.pos;
        if self.pos >= bytes.len() {
            self.tok = Tok::End;
            return Ok(());
        }
        let c = bytes[self.pos];
        if c.is_ascii_digit() || c == b'.' {
            let start = self.pos;
            while self.pos < bytes.len() && (bytes[self.pos].is_ascii_digit() || bytes[self.pos] == b'.') {
                self.pos += 1;
            }
            if self.pos < bytes.len() && (bytes[self.pos] == b'e' || bytes[self.pos] == b'E') {
                let mut q = self.pos + 1;
                if q < bytes.len() && (bytes[q] == b'+' || bytes[q] == b'-') {
                    q += 1;
                }
                if q < bytes.len() && bytes[q].is_ascii_digit() {
                    while q < bytes.len() && bytes[q].is_ascii_digit() {
                        q += 1;
                    }
                    self.pos = q;
                }
            }
            let text = &self.src[start..self.pos];
            match text.parse::<f64>() {
                Ok(v) => self.tok = Tok::Num(v),
                Err(_) => return self.error(start, format!("malformed number '{text}'")),
            }
        } else if c.is_ascii_alphabetic() || c == b'_' {
            let start = self.pos;
            while self.pos < bytes.len() && (bytes[self.pos].is_ascii_alphanumeric() || bytes[self.pos] == b'_') {
                self.pos += 1;
            }
            self.tok = Tok::Ident(self.src[start..self.pos].to_string());
        } else if b"+-*/^(),:[]".contains(&c) {
            self.pos += 1;
            self.tok = Tok::Sym(c as char);
        } else {
            let ch = self.src[self.pos..].chars().next().unwrap_or('?');
            return self.error(self.pos, format!("unexpected character '{ch}'"));
        }
        Ok(())
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.tok == Tok::Sym(c) {
            self.advance()
        } else {
            self.error(self.tok_start, format!("expected '{c}'"))
        }
    }

    fn expression(&mut self) -> Result<Expression> {
        if self.tok == Tok::Sym('[') {
            self.advance()?;
            let mut pieces = vec![self.sum()?];
            let mut breakpoints = Vec::new();
            while self.tok == Tok::Sym(',') {
                self.advance()?;
                let at = self.tok_start;
                let b = self.unary()?;
                if b.depends_on_x() {
                    return self.error(at, "breakpoint must be a constant");
                }
                breakpoints.push(b.eval(0.0).or_else(|_| self.error(at, "breakpoint does not evaluate"))?);
                self.expect(':')?;
                pieces.push(self.sum()?);
            }
            self.expect(']')?;
            Ok(Expression { breakpoints, pieces })
        } else {
            Ok(Expression::single(self.sum()?))
        }
    }

    fn sum(&mut self) -> Result<Expr> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.tok {
                Tok::Sym('+') => BinOp::Add,
                Tok::Sym('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            let offset = self.tok_start;
            self.advance()?;
            let rhs = self.product()?;
            lhs = Expr { node: Node::Bin(op, Box::new(lhs), Box::new(rhs)), offset };
        }
    }

    fn product(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.tok {
                Tok::Sym('*') => BinOp::Mul,
                Tok::Sym('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            let offset = self.tok_start;
            self.advance()?;
            let rhs = self.unary()?;
            lhs = Expr { node: Node::Bin(op, Box::new(lhs), Box::new(rhs)), offset };
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.tok == Tok::Sym('-') {
            let offset = self.tok_start;
            self.advance()?;
            let inner = self.unary()?;
            return Ok(Expr { node: Node::Neg(Box::new(inner)), offset });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.tok == Tok::Sym('^') {
            let offset = self.tok_start;
            self.advance()?;
            let exponent = self.unary()?;
            return Ok(Expr { node: Node::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)), offset });
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let offset = self.tok_start;
        match self.tok.clone() {
            Tok::Num(v) => {
                self.advance()?;
                Ok(Expr { node: Node::Num(v), offset })
            }
            Tok::Ident(name) => {
                self.advance()?;
                if name == "x" {
                    return Ok(Expr { node: Node::Var, offset });
                }
                let Some(func) = Func::from_name(&name) else {
                    return self.error(offset, format!("unknown identifier '{name}'"));
                };
                self.expect('(')?;
                let arg = self.sum()?;
                self.expect(')')?;
                Ok(Expr { node: Node::Call(func, Box::new(arg)), offset })
            }
            Tok::Sym('(') => {
                self.advance()?;
                let inner = self.sum()?;
                self.expect(')')?;
                Ok(inner)
            }
            Tok::End => self.error(offset, "unexpected end of input"),
            Tok::Sym(c) => self.error(offset, format!("unexpected '{c}'")),
        }
    }
}

/// Parses a coefficient expression, optionally piecewise.
pub fn parse_expression(text: &str) -> Result<Expression> {
    let mut p = Parser::new(text)?;
    let e = p.expression()?;
    if p.tok != Tok::End {
        return p.error(p.tok_start, "trailing input");
    }
    Ok(e)
}

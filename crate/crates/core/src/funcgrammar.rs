//! A small arithmetic language for declaring regression functions `r(y)`.
//!
//! Grammar (whitespace is ignored between tokens):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | 'y' | func '(' expr ')' | '(' expr ')'
//! func    := exp | cos | sin | abs | tanh | log
//! ```
//!
//! `^` binds tighter than unary minus, so `-y^2` is `-(y^2)`, and it is
//! right-associative. Implicit multiplication is not accepted.

use std::fmt;

use crate::error::{Error, Result};

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

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Cos,
    Sin,
    Abs,
    Tanh,
    Log,
}

impl Func {
    pub const ALL: [Func; 6] = [Func::Exp, Func::Cos, Func::Sin, Func::Abs, Func::Tanh, Func::Log];

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Cos => "cos",
            Func::Sin => "sin",
            Func::Abs => "abs",
            Func::Tanh => "tanh",
            Func::Log => "log",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn apply(self, v: f64) -> f64 {
        match self {
            Func::Exp => v.exp(),
            Func::Cos => v.cos(),
            Func::Sin => v.sin(),
            Func::Abs => v.abs(),
            Func::Tanh => v.tanh(),
            Func::Log => v.ln(),
        }
    }
}

/// Parsed expression tree in the single variable `y`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var,
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

const ATOM_PREC: u8 = 5;
const NEG_PREC: u8 = 3;

impl Expr {
    /// Evaluates in IEEE-754 double precision. Non-finite results propagate.
    pub fn eval(&self, y: f64) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var => y,
            Expr::Neg(e) => -e.eval(y),
            Expr::Binary(op, l, r) => {
                let a = l.eval(y);
                let b = r.eval(y);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                }
            }
            Expr::Call(f, e) => f.apply(e.eval(y)),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Num(_) | Expr::Var | Expr::Call(..) => ATOM_PREC,
            Expr::Neg(_) => NEG_PREC,
            Expr::Binary(op, ..) => op.precedence(),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn wrap(f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
            if parens {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var => f.write_str("y"),
            Expr::Neg(e) => {
                f.write_str("-")?;
                wrap(f, e, e.precedence() < NEG_PREC)
            }
            Expr::Call(func, e) => write!(f, "{}({e})", func.name()),
            Expr::Binary(op, l, r) => {
                let p = op.precedence();
                let (left_parens, right_parens) = if *op == BinOp::Pow {
                    // the exponent is parsed as `unary`
                    (l.precedence() <= p, r.precedence() < NEG_PREC)
                } else {
                    (l.precedence() < p, r.precedence() <= p)
                };
                wrap(f, l, left_parens)?;
                write!(f, " {} ", op.symbol())?;
                wrap(f, r, right_parens)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    /// Returns the next token and its starting byte offset.
    fn next(&mut self) -> Result<(Tok, usize)> {
        self.skip_ws();
        let start = self.pos;
        let bytes = self.src.as_bytes();
        let Some(&c) = bytes.get(start) else {
            return Ok((Tok::End, start));
        };
        if c.is_ascii_digit() || c == b'.' {
            let mut end = start;
            while end < bytes.len() && bytes[end].is_ascii_digit() {
                end += 1;
            }
            if end < bytes.len() && bytes[end] == b'.' {
                end += 1;
                while end < bytes.len() && bytes[end].is_ascii_digit() {
                    end += 1;
                }
            }
            if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
                let mut e = end + 1;
                if e < bytes.len() && (bytes[e] == b'+' || bytes[e] == b'-') {
                    e += 1;
                }
                if e < bytes.len() && bytes[e].is_ascii_digit() {
                    while e < bytes.len() && bytes[e].is_ascii_digit() {
                        e += 1;
                    }
                    end = e;
                }
            }
            let text = &self.src[start..end];
            let value: f64 = text.parse().map_err(|_| Error::Syntax {
                offset: start,
                message: format!("malformed number `{text}`"),
            })?;
            self.pos = end;
            return Ok((Tok::Num(value), start));
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let mut end = start;
            while end < bytes.len() && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_') {
                end += 1;
            }
            self.pos = end;
            return Ok((Tok::Ident(self.src[start..end].to_string()), start));
        }
        match c {
            b'+' | b'-' | b'*' | b'/' | b'^' | b'(' | b')' => {
                self.pos += 1;
                Ok((Tok::Sym(c as char), start))
            }
            _ => {
                let ch = self.src[start..].chars().next().unwrap_or('?');
                Err(Error::Syntax { offset: start, message: format!("unexpected character `{ch}`") })
            }
        }
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    tok: Tok,
    offset: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Self> {
        let mut lexer = Lexer { src, pos: 0 };
        let (tok, offset) = lexer.next()?;
        Ok(Parser { lexer, tok, offset })
    }

    fn bump(&mut self) -> Result<()> {
        let (tok, offset) = self.lexer.next()?;
        self.tok = tok;
        self.offset = offset;
        Ok(())
    }

    fn error<T>(&self, expected: &str) -> Result<T> {
        let found = match &self.tok {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Sym(c) => format!("`{c}`"),
            Tok::End => "end of input".to_string(),
        };
        Err(Error::Syntax { offset: self.offset, message: format!("expected {expected}, found {found}") })
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.tok {
                Tok::Sym('+') => BinOp::Add,
                Tok::Sym('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump()?;
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.tok {
                Tok::Sym('*') => BinOp::Mul,
                Tok::Sym('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump()?;
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.tok == Tok::Sym('-') {
            self.bump()?;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if self.tok == Tok::Sym('^') {
            self.bump()?;
            let exponent = self.unary()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.bump()?;
                Ok(Expr::Num(v))
            }
            Tok::Ident(name) => {
                let at = self.offset;
                if name == "y" {
                    self.bump()?;
                    return Ok(Expr::Var);
                }
                let Some(func) = Func::from_name(&name) else {
                    return Err(Error::UnknownIdentifier { offset: at, name });
                };
                self.bump()?;
                if self.tok != Tok::Sym('(') {
                    return self.error(&format!("`(` after `{name}`"));
                }
                self.bump()?;
                let arg = self.expr()?;
                if self.tok != Tok::Sym(')') {
                    return self.error("`)`");
                }
                self.bump()?;
                Ok(Expr::Call(func, Box::new(arg)))
            }
            Tok::Sym('(') => {
                self.bump()?;
                let inner = self.expr()?;
                if self.tok != Tok::Sym(')') {
                    return self.error("`)`");
                }
                self.bump()?;
                Ok(inner)
            }
            _ => self.error("number, `y`, function call or `(`"),
        }
    }
}

pub fn parse(text: &str) -> Result<Expr> {
    let mut p = Parser::new(text)?;
    let e = p.expr()?;
    if p.tok != Tok::End {
        return p.error("operator or end of input");
    }
    Ok(e)
}

/// A named regression function together with its linear growth bound
/// `|r(y)| <= rho |y| + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub source: &'static str,
    pub rho: f64,
    pub b: f64,
    pub bounded: bool,
}

/// Growth rate assigned to bounded regression functions when none is given.
pub const BOUNDED_DEFAULT_RHO: f64 = 0.1;

pub const PRESETS: [Preset; 3] = [
    Preset { name: "paper_r1", source: "0.7*y + 2*exp(-25*y^2)", rho: 0.7, b: 2.0, bounded: false },
    Preset {
        name: "paper_r2",
        source: "2/(1+exp(10*y)) - 1",
        rho: BOUNDED_DEFAULT_RHO,
        b: 1.0,
        bounded: true,
    },
    Preset { name: "paper_r3", source: "-2*cos(y) - 1", rho: BOUNDED_DEFAULT_RHO, b: 3.0, bounded: true },
];

pub fn preset(name: &str) -> Result<Preset> {
    PRESETS.iter().copied().find(|p| p.name == name).ok_or_else(|| Error::UnknownPreset(name.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, y: f64) -> f64 {
        parse(s).unwrap().eval(y)
    }

    #[test]
    fn spec_examples() {
        assert_eq!(ev("0.7*y + 2*exp(-25*y^2)", 0.0), 2.0);
        assert_eq!(ev("-2*cos(y) - 1", 0.0), -3.0);
        assert_eq!(ev("2/(1+exp(10*y)) - 1", 0.0), 0.0);
        assert_eq!(ev("y", 3.5), 3.5);
        assert_eq!(ev("abs(y)^3", -2.0), 8.0);
        let v = ev("0.7*y+2*exp(-25*y^2)", 1.0);
        assert!((v - 0.700_000_000_027_775_9).abs() < 1e-15, "{v}");
    }

    #[test]
    fn trailing_operator_reports_offset() {
        match parse("0.7*y +") {
            Err(Error::Syntax { offset, .. }) => assert_eq!(offset, 7),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_identifier() {
        match parse("2*z") {
            Err(Error::UnknownIdentifier { offset, name }) => {
                assert_eq!(offset, 2);
                assert_eq!(name, "z");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn implicit_multiplication_rejected() {
        assert!(parse("2y").is_err());
        assert!(parse("2(y)").is_err());
        assert!(parse("exp y").is_err());
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("-y^2", 3.0), -9.0);
        assert_eq!(ev("2^3^2", 0.0), 512.0);
        assert_eq!(ev("8/4/2", 0.0), 1.0);
        assert_eq!(ev("8-4-2", 0.0), 2.0);
        assert_eq!(ev("2^-1", 0.0), 0.5);
        assert_eq!(ev("1+2*3", 0.0), 7.0);
        assert_eq!(ev("  ( 1 + 2 ) * 3 ", 0.0), 9.0);
        assert_eq!(ev("1.5e1", 0.0), 15.0);
    }

    #[test]
    fn non_finite_propagates() {
        assert!(ev("log(y)", -1.0).is_nan());
        assert!(ev("1/y", 0.0).is_infinite());
    }

    #[test]
    fn presets_parse() {
        for p in PRESETS {
            parse(p.source).unwrap();
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn pretty_print_round_trip() {
        for s in ["-y^2", "(-y)^2", "2^3^2", "(2^3)^2", "a", "8-(4-2)", "-(1+y)", "--y", "y*-y", "exp(-25*y^2)"] {
            let Ok(e) = parse(s) else { continue };
            let printed = e.to_string();
            assert_eq!(parse(&printed).unwrap(), e, "{s} -> {printed}");
        }
    }
}

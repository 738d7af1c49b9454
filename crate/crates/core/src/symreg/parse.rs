//! Infix grammar shared by the exporter and the parser:
//!
//! ```text
//! expr    := term (("+" | "-") term)*
//! term    := factor (("*" | "/") factor)*
//! factor  := "-" number | postfix
//! postfix := primary ("^" "2")*
//! primary := number | "z" digits | name "(" expr ")" | "(" expr ")"
//! ```
//!
//! `name` is one of `square exp log sin sqrt abs`; `x^2` is `square(x)`.
//! Binary operators associate to the left.

use std::fmt;
use std::str::FromStr;

use super::expr::{BinaryOp, Expr, UnaryOp};
use crate::error::{Error, Result};

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => 1,
        Expr::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => 2,
        Expr::Const(c) if c.is_sign_negative() => 0,
        _ => 3,
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
    if prec(e) < min {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(i) => write!(f, "z{i}"),
            Expr::Unary(UnaryOp::Square, a) => {
                let atom = matches!(**a, Expr::Var(_))
                    || matches!(**a, Expr::Const(c) if !c.is_sign_negative())
                    || matches!(**a, Expr::Unary(op, _) if op != UnaryOp::Square);
                if atom {
                    write!(f, "{a}^2")
                } else {
                    write!(f, "({a})^2")
                }
            }
            Expr::Unary(op, a) => write!(f, "{}({a})", op.name()),
            Expr::Binary(op, a, b) => {
                let p = prec(self);
                write_child(f, a, p)?;
                write!(f, " {} ", op.symbol())?;
                write_child(f, b, p + 1)
            }
        }
    }
}

fn perr(pos: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        pos,
        msg: msg.into(),
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

fn lex(s: &str) -> Result<Vec<(usize, Tok)>> {
    let b = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let c = b[i] as char;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < b.len() && ((b[i] as char).is_ascii_digit() || b[i] == b'.') {
                i += 1;
            }
            if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
                let mut j = i + 1;
                if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
                    j += 1;
                }
                if j < b.len() && b[j].is_ascii_digit() {
                    i = j;
                    while i < b.len() && b[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &s[start..i];
            let v = text
                .parse::<f64>()
                .map_err(|_| perr(start, format!("bad number `{text}`")))?;
            out.push((start, Tok::Num(v)));
        } else if c.is_ascii_alphabetic() {
            let start = i;
            while i < b.len() && ((b[i] as char).is_ascii_alphanumeric() || b[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(s[start..i].to_string())));
        } else if "+-*/()^".contains(c) {
            out.push((i, Tok::Sym(c)));
            i += 1;
        } else {
            return Err(perr(i, format!("unexpected character `{c}`")));
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn at(&self) -> usize {
        self.toks.get(self.pos).map_or(self.len, |t| t.0)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(perr(self.at(), format!("expected `{c}`")))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut e = self.term()?;
        loop {
            let op = if self.eat('+') {
                BinaryOp::Add
            } else if self.eat('-') {
                BinaryOp::Sub
            } else {
                return Ok(e);
            };
            e = Expr::binary(op, e, self.term()?);
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut e = self.factor()?;
        loop {
            let op = if self.eat('*') {
                BinaryOp::Mul
            } else if self.eat('/') {
                BinaryOp::Div
            } else {
                return Ok(e);
            };
            e = Expr::binary(op, e, self.factor()?);
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return match self.peek() {
                Some(Tok::Num(v)) => {
                    let v = -*v;
                    self.pos += 1;
                    Ok(Expr::Const(v))
                }
                _ => Err(perr(
                    self.at(),
                    "unary minus only applies to number literals",
                )),
            };
        }
        let mut e = self.primary()?;
        while self.eat('^') {
            match self.peek() {
                Some(Tok::Num(v)) if *v == 2.0 => self.pos += 1,
                _ => return Err(perr(self.at(), "only `^2` is supported")),
            }
            e = Expr::unary(UnaryOp::Square, e);
        }
        Ok(e)
    }

    fn primary(&mut self) -> Result<Expr> {
        let at = self.at();
        match self.toks.get(self.pos).map(|t| t.1.clone()) {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Const(v))
            }
            Some(Tok::Sym('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if let Some(op) = UnaryOp::from_name(&name) {
                    self.expect('(')?;
                    let e = self.expr()?;
                    self.expect(')')?;
                    return Ok(Expr::unary(op, e));
                }
                match name.strip_prefix('z').map(str::parse::<usize>) {
                    Some(Ok(i)) => Ok(Expr::Var(i)),
                    _ => Err(perr(at, format!("unknown name `{name}`"))),
                }
            }
            Some(t) => Err(perr(at, format!("unexpected {t:?}"))),
            None => Err(perr(at, "unexpected end of expression")),
        }
    }
}

impl FromStr for Expr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut p = Parser {
            toks: lex(s)?,
            pos: 0,
            len: s.len(),
        };
        let e = p.expr()?;
        if p.pos != p.toks.len() {
            return Err(perr(p.at(), "trailing input"));
        }
        Ok(e)
    }
}

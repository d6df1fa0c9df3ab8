//! Concrete syntax for the fragment.
//!
//! ```text
//! spec   := clause ("and" clause)*
//! clause := ("G" | "F") "[" num "," num "]" "(" bool ")"
//! bool   := conj ("or" conj)*
//! conj   := term ("and" term)*
//! term   := "not" term | "(" bool ")" | "true" | atom
//! atom   := norm{1,2,inf} "(" "x" "," vec ["," "scale" vec] ")" cmp num
//!         | "x"k cmp num
//!         | "|" "x"k [("+" | "-") num] "|" cmp num
//! cmp    := "<=" | "<" | ">=" | ">"
//! num    := arithmetic over literals and `pi` with + - * / and parentheses
//! ```
//!
//! Strict comparisons are read as their non-strict counterparts. `#` starts a
//! comment that runs to the end of the line.

use std::fmt;

use thiserror::Error;

use super::{BoolFormula, PNorm, PredicateAtom, Specification, TemporalBlock, TemporalOp};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{line}:{column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("dimension mismatch: state has {expected} components, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("nested temporal operators are outside the supported fragment")]
    NestedTemporal,
    #[error("the until operator is not supported")]
    Until,
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    LBracket,
    RBracket,
    LParen,
    RParen,
    Comma,
    Bar,
    Plus,
    Minus,
    Star,
    Slash,
    Le,
    Lt,
    Ge,
    Gt,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Num(v) => write!(f, "number {v}"),
            Tok::LBracket => f.write_str("`[`"),
            Tok::RBracket => f.write_str("`]`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Bar => f.write_str("`|`"),
            Tok::Plus => f.write_str("`+`"),
            Tok::Minus => f.write_str("`-`"),
            Tok::Star => f.write_str("`*`"),
            Tok::Slash => f.write_str("`/`"),
            Tok::Le => f.write_str("`<=`"),
            Tok::Lt => f.write_str("`<`"),
            Tok::Ge => f.write_str("`>=`"),
            Tok::Gt => f.write_str("`>`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        let mut push = |tok: Tok, width: usize, i: &mut usize, col: &mut usize| {
            out.push(Token {
                tok,
                line: l0,
                column: c0,
            });
            *i += width;
            *col += width;
        };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                i += 1;
                col += 1;
            }
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '[' => push(Tok::LBracket, 1, &mut i, &mut col),
            ']' => push(Tok::RBracket, 1, &mut i, &mut col),
            '(' => push(Tok::LParen, 1, &mut i, &mut col),
            ')' => push(Tok::RParen, 1, &mut i, &mut col),
            ',' => push(Tok::Comma, 1, &mut i, &mut col),
            '|' => push(Tok::Bar, 1, &mut i, &mut col),
            '+' => push(Tok::Plus, 1, &mut i, &mut col),
            '-' => push(Tok::Minus, 1, &mut i, &mut col),
            '*' => push(Tok::Star, 1, &mut i, &mut col),
            '/' => push(Tok::Slash, 1, &mut i, &mut col),
            '<' | '>' => {
                let eq = chars.get(i + 1) == Some(&'=');
                let tok = match (c, eq) {
                    ('<', true) => Tok::Le,
                    ('<', false) => Tok::Lt,
                    ('>', true) => Tok::Ge,
                    _ => Tok::Gt,
                };
                push(tok, if eq { 2 } else { 1 }, &mut i, &mut col)
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                let mut j = i;
                while j < chars.len() && (chars[j].is_ascii_digit() || chars[j] == '.') {
                    j += 1;
                }
                if j < chars.len() && (chars[j] == 'e' || chars[j] == 'E') {
                    let mut k = j + 1;
                    if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                        k += 1;
                    }
                    if k < chars.len() && chars[k].is_ascii_digit() {
                        j = k;
                        while j < chars.len() && chars[j].is_ascii_digit() {
                            j += 1;
                        }
                    }
                }
                let s: String = chars[start..j].iter().collect();
                let v: f64 = s.parse().map_err(|_| ParseError {
                    line: l0,
                    column: c0,
                    kind: ParseErrorKind::Syntax(format!("malformed number `{s}`")),
                })?;
                push(Tok::Num(v), j - start, &mut i, &mut col)
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                let mut j = i;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                let s: String = chars[start..j].iter().collect();
                push(Tok::Ident(s), j - start, &mut i, &mut col)
            }
            other => {
                return Err(ParseError {
                    line: l0,
                    column: c0,
                    kind: ParseErrorKind::Syntax(format!("unexpected character `{other}`")),
                })
            }
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        column: col,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    n: usize,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err_here(&self, kind: ParseErrorKind) -> ParseError {
        let t = &self.toks[self.pos];
        ParseError {
            line: t.line,
            column: t.column,
            kind,
        }
    }

    fn unexpected(&self, wanted: &str) -> ParseError {
        self.err_here(ParseErrorKind::Syntax(format!(
            "expected {wanted}, found {}",
            self.peek()
        )))
    }

    fn expect(&mut self, tok: Tok, wanted: &str) -> PResult<()> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(wanted))
        }
    }

    fn is_ident(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Ident(i) if i == s)
    }

    fn check_until(&self) -> PResult<()> {
        if self.is_ident("U") || self.is_ident("until") {
            return Err(self.err_here(ParseErrorKind::Until));
        }
        Ok(())
    }

    fn at_temporal(&self) -> bool {
        (self.is_ident("G") || self.is_ident("F")) && *self.peek_at(1) == Tok::LBracket
    }

    fn spec(&mut self) -> PResult<Vec<TemporalBlock>> {
        let mut blocks = vec![self.clause()?];
        loop {
            self.check_until()?;
            if self.is_ident("and") {
                self.bump();
                blocks.push(self.clause()?);
            } else if *self.peek() == Tok::Eof {
                return Ok(blocks);
            } else {
                return Err(self.unexpected("`and` or end of input"));
            }
        }
    }

    fn clause(&mut self) -> PResult<TemporalBlock> {
        self.check_until()?;
        let op = match self.peek() {
            Tok::Ident(s) if s == "G" => TemporalOp::Always,
            Tok::Ident(s) if s == "F" => TemporalOp::Eventually,
            _ => return Err(self.unexpected("`G[a,b]` or `F[a,b]`")),
        };
        self.bump();
        self.expect(Tok::LBracket, "`[`")?;
        let a = self.num()?;
        self.expect(Tok::Comma, "`,`")?;
        let b = self.num()?;
        self.expect(Tok::RBracket, "`]`")?;
        if !(a >= 0.0 && a < b) {
            return Err(self.err_here(ParseErrorKind::Invalid(format!(
                "interval [{a}, {b}] must satisfy 0 <= a < b"
            ))));
        }
        self.expect(Tok::LParen, "`(`")?;
        let body = self.bool_expr()?;
        self.expect(Tok::RParen, "`)`")?;
        Ok(TemporalBlock { op, a, b, body })
    }

    fn bool_expr(&mut self) -> PResult<BoolFormula> {
        let mut terms = vec![self.conj()?];
        while self.is_ident("or") {
            self.bump();
            terms.push(self.conj()?);
        }
        Ok(BoolFormula::or(terms))
    }

    fn conj(&mut self) -> PResult<BoolFormula> {
        let mut terms = vec![self.term()?];
        while self.is_ident("and") {
            self.bump();
            terms.push(self.term()?);
        }
        Ok(BoolFormula::and(terms))
    }

    fn term(&mut self) -> PResult<BoolFormula> {
        self.check_until()?;
        if self.at_temporal() {
            return Err(self.err_here(ParseErrorKind::NestedTemporal));
        }
        match self.peek().clone() {
            Tok::Ident(s) if s == "not" => {
                self.bump();
                Ok(BoolFormula::not(self.term()?))
            }
            Tok::Ident(s) if s == "true" => {
                self.bump();
                Ok(BoolFormula::True)
            }
            Tok::LParen => {
                self.bump();
                let f = self.bool_expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(f)
            }
            Tok::Bar => self.abs_atom(),
            Tok::Ident(s) if s.starts_with("norm") => self.norm_atom(&s),
            Tok::Ident(s) if state_index(&s).is_some() => self.bound_atom(),
            _ => Err(self.unexpected("a predicate, `true`, `not` or `(`")),
        }
    }

    fn state_var(&mut self) -> PResult<usize> {
        let k = match self.peek() {
            Tok::Ident(s) => state_index(s),
            _ => None,
        };
        let Some(k) = k else {
            return Err(self.unexpected("a state component `x1`..`xn`"));
        };
        if k == 0 || k > self.n {
            return Err(self.err_here(ParseErrorKind::Dimension {
                expected: self.n,
                found: k,
            }));
        }
        self.bump();
        Ok(k - 1)
    }

    /// Returns `true` for an upper bound (`<=`, `<`).
    fn cmp(&mut self) -> PResult<bool> {
        let upper = match self.peek() {
            Tok::Le | Tok::Lt => true,
            Tok::Ge | Tok::Gt => false,
            _ => return Err(self.unexpected("a comparison")),
        };
        self.bump();
        Ok(upper)
    }

    fn bound_atom(&mut self) -> PResult<BoolFormula> {
        let k = self.state_var()?;
        let upper = self.cmp()?;
        let v = self.num()?;
        let mut c = vec![0.0; self.n];
        let atom = if upper {
            c[k] = -1.0;
            PredicateAtom::Affine { c, d: v }
        } else {
            c[k] = 1.0;
            PredicateAtom::Affine { c, d: -v }
        };
        Ok(BoolFormula::Atom(atom))
    }

    fn abs_atom(&mut self) -> PResult<BoolFormula> {
        self.expect(Tok::Bar, "`|`")?;
        let k = self.state_var()?;
        let offset = match self.peek() {
            Tok::Minus => {
                self.bump();
                self.num()?
            }
            Tok::Plus => {
                self.bump();
                -self.num()?
            }
            _ => 0.0,
        };
        self.expect(Tok::Bar, "`|`")?;
        let upper = self.cmp()?;
        let r = self.num()?;
        let mut lo = vec![0.0; self.n];
        lo[k] = 1.0;
        let mut hi = vec![0.0; self.n];
        hi[k] = -1.0;
        // |x_k - v| <= r  <=>  x_k - (v - r) >= 0  and  (v + r) - x_k >= 0
        let inside = BoolFormula::And(vec![
            BoolFormula::Atom(PredicateAtom::Affine { c: lo, d: r - offset }),
            BoolFormula::Atom(PredicateAtom::Affine { c: hi, d: offset + r }),
        ]);
        Ok(if upper { inside } else { BoolFormula::not(inside) })
    }

    fn norm_atom(&mut self, name: &str) -> PResult<BoolFormula> {
        let p = match name {
            "norm1" => PNorm::L1,
            "norm2" => PNorm::L2,
            "norminf" => PNorm::Inf,
            _ => {
                return Err(self.err_here(ParseErrorKind::Syntax(format!(
                    "unknown norm `{name}`, expected norm1, norm2 or norminf"
                ))))
            }
        };
        self.bump();
        self.expect(Tok::LParen, "`(`")?;
        if !self.is_ident("x") {
            return Err(self.unexpected("`x`"));
        }
        self.bump();
        self.expect(Tok::Comma, "`,`")?;
        let center = self.vector()?;
        let mut scale = vec![1.0; self.n];
        if *self.peek() == Tok::Comma {
            self.bump();
            if !self.is_ident("scale") {
                return Err(self.unexpected("`scale`"));
            }
            self.bump();
            scale = self.vector()?;
        }
        self.expect(Tok::RParen, "`)`")?;
        let upper = self.cmp()?;
        let radius = self.num()?;
        if !(radius > 0.0) {
            return Err(self.err_here(ParseErrorKind::Invalid(format!(
                "norm radius must be positive, got {radius}"
            ))));
        }
        let atom = BoolFormula::Atom(PredicateAtom::Norm {
            center,
            scale,
            radius,
            p,
        });
        Ok(if upper { atom } else { BoolFormula::not(atom) })
    }

    fn vector(&mut self) -> PResult<Vec<f64>> {
        let start = self.pos;
        self.expect(Tok::LBracket, "`[`")?;
        let mut v = vec![self.num()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            v.push(self.num()?);
        }
        self.expect(Tok::RBracket, "`]`")?;
        if v.len() != self.n {
            let t = &self.toks[start];
            return Err(ParseError {
                line: t.line,
                column: t.column,
                kind: ParseErrorKind::Dimension {
                    expected: self.n,
                    found: v.len(),
                },
            });
        }
        Ok(v)
    }

    fn num(&mut self) -> PResult<f64> {
        let mut v = self.num_product()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    v += self.num_product()?;
                }
                Tok::Minus => {
                    self.bump();
                    v -= self.num_product()?;
                }
                _ => return Ok(v),
            }
        }
    }

    fn num_product(&mut self) -> PResult<f64> {
        let mut v = self.num_atom()?;
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    v *= self.num_atom()?;
                }
                Tok::Slash => {
                    self.bump();
                    v /= self.num_atom()?;
                }
                _ => return Ok(v),
            }
        }
    }

    fn num_atom(&mut self) -> PResult<f64> {
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(v)
            }
            Tok::Minus => {
                self.bump();
                Ok(-self.num_atom()?)
            }
            Tok::Ident(s) if s == "pi" => {
                self.bump();
                Ok(std::f64::consts::PI)
            }
            Tok::LParen => {
                self.bump();
                let v = self.num()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(v)
            }
            _ => Err(self.unexpected("a number")),
        }
    }
}

fn state_index(s: &str) -> Option<usize> {
    let digits = s.strip_prefix('x')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Parses `text` against an `n`-dimensional state; the horizon is the
/// largest block end time.
pub fn parse_spec(text: &str, n: usize) -> Result<Specification, ParseError> {
    parse_spec_with_horizon(text, n, None)
}

pub fn parse_spec_with_horizon(text: &str, n: usize, horizon: Option<f64>) -> Result<Specification, ParseError> {
    if n == 0 {
        return Err(ParseError {
            line: 1,
            column: 1,
            kind: ParseErrorKind::Invalid("state dimension must be at least 1".into()),
        });
    }
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, n };
    let blocks = p.spec()?;
    let horizon = horizon.unwrap_or_else(|| blocks.iter().map(|b| b.b).fold(0.0, f64::max));
    Specification::new(blocks, horizon, n).map_err(|e| ParseError {
        line: 1,
        column: 1,
        kind: ParseErrorKind::Invalid(e.to_string()),
    })
}

//! Dynamic-filter mini-language.
//!
//! ```text
//! or-expr    := and-expr ('|' and-expr)*
//! and-expr   := unary ('&' unary)*
//! unary      := '!' unary | '(' or-expr ')' | comparison
//! comparison := ident op literal
//! op         := '>' | '>=' | '<' | '<=' | '==' | '=' | '!='
//! ident      := [A-Za-z_][A-Za-z0-9_]* | "quoted"
//! literal    := decimal | "quoted"
//! ```
//!
//! `!` binds tightest, then `&`, then `|`. String literals may only be used
//! with `==` / `!=`.

use std::borrow::Borrow;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::hash::Hash;

use serde::Serialize;
use thiserror::Error;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum CmpOp {
    Gt,
    Ge,
    Lt,
    Le,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }

    fn is_equality(self) -> bool {
        matches!(self, CmpOp::Eq | CmpOp::Ne)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Literal {
    Num(f64),
    Str(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum FilterExpr {
    Comparison {
        feature: String,
        op: CmpOp,
        literal: Literal,
    },
    And(Box<FilterExpr>, Box<FilterExpr>),
    Or(Box<FilterExpr>, Box<FilterExpr>),
    Not(Box<FilterExpr>),
}

impl FilterExpr {
    pub fn cmp(feature: impl Into<String>, op: CmpOp, literal: Literal) -> Self {
        FilterExpr::Comparison {
            feature: feature.into(),
            op,
            literal,
        }
    }

    pub fn and(left: FilterExpr, right: FilterExpr) -> Self {
        FilterExpr::And(Box::new(left), Box::new(right))
    }

    pub fn or(left: FilterExpr, right: FilterExpr) -> Self {
        FilterExpr::Or(Box::new(left), Box::new(right))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(inner: FilterExpr) -> Self {
        FilterExpr::Not(Box::new(inner))
    }

    /// Every feature name referenced, in first-occurrence order.
    pub fn identifiers(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_identifiers(&mut out);
        out
    }

    fn collect_identifiers<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            FilterExpr::Comparison { feature, .. } => {
                if !out.contains(&feature.as_str()) {
                    out.push(feature);
                }
            }
            FilterExpr::And(l, r) | FilterExpr::Or(l, r) => {
                l.collect_identifiers(out);
                r.collect_identifiers(out);
            }
            FilterExpr::Not(inner) => inner.collect_identifiers(out),
        }
    }
}

fn is_bare_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn write_quoted(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_str("\"")?;
    for c in s.chars() {
        match c {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            c => write!(f, "{c}")?,
        }
    }
    f.write_str("\"")
}

/// Prints with explicit parentheses around every compound node, so the
/// output reparses to the same tree regardless of precedence.
impl fmt::Display for FilterExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterExpr::Comparison {
                feature,
                op,
                literal,
            } => {
                if is_bare_ident(feature) {
                    f.write_str(feature)?;
                } else {
                    write_quoted(f, feature)?;
                }
                write!(f, " {} ", op.symbol())?;
                match literal {
                    Literal::Num(v) => write!(f, "{v:?}"),
                    Literal::Str(s) => write_quoted(f, s),
                }
            }
            FilterExpr::And(l, r) => write!(f, "({l} & {r})"),
            FilterExpr::Or(l, r) => write!(f, "({l} | {r})"),
            FilterExpr::Not(inner) => write!(f, "!({inner})"),
        }
    }
}

/// Syntax error with the byte offset where parsing stopped.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("{message} at offset {offset}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
    pub expected: Vec<String>,
}

impl ParseError {
    fn new(offset: usize, message: impl Into<String>, expected: &[&str]) -> Self {
        let expected: BTreeSet<String> = expected.iter().map(|s| s.to_string()).collect();
        Self {
            offset,
            message: message.into(),
            expected: expected.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(f64),
    Op(CmpOp),
    And,
    Or,
    Not,
    LParen,
    RParen,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Str(_) => "string".into(),
            Tok::Num(_) => "number".into(),
            Tok::Op(op) => format!("`{}`", op.symbol()),
            Tok::And => "`&`".into(),
            Tok::Or => "`|`".into(),
            Tok::Not => "`!`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
        }
    }
}

fn lex(input: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = input.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\r' | b'\n' => {
                i += 1;
                continue;
            }
            b'&' => toks.push((start, Tok::And)),
            b'|' => toks.push((start, Tok::Or)),
            b'(' => toks.push((start, Tok::LParen)),
            b')' => toks.push((start, Tok::RParen)),
            b'!' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    i += 1;
                    toks.push((start, Tok::Op(CmpOp::Ne)));
                } else {
                    toks.push((start, Tok::Not));
                }
            }
            b'>' | b'<' | b'=' => {
                let eq_follows = bytes.get(i + 1) == Some(&b'=');
                let op = match (c, eq_follows) {
                    (b'>', true) => CmpOp::Ge,
                    (b'>', false) => CmpOp::Gt,
                    (b'<', true) => CmpOp::Le,
                    (b'<', false) => CmpOp::Lt,
                    _ => CmpOp::Eq,
                };
                if eq_follows {
                    i += 1;
                }
                toks.push((start, Tok::Op(op)));
            }
            b'"' => {
                let mut s = String::new();
                let mut chars = input[i + 1..].char_indices();
                let mut closed = false;
                while let Some((off, ch)) = chars.next() {
                    match ch {
                        '"' => {
                            i = i + 1 + off;
                            closed = true;
                            break;
                        }
                        '\\' => match chars.next() {
                            Some((_, esc)) => s.push(esc),
                            None => break,
                        },
                        ch => s.push(ch),
                    }
                }
                if !closed {
                    return Err(ParseError::new(start, "unterminated string", &["`\"`"]));
                }
                toks.push((start, Tok::Str(s)));
            }
            b'0'..=b'9' | b'.' | b'+' | b'-' => {
                let end = scan_number(bytes, i);
                let text = &input[i..end];
                match text.parse::<f64>() {
                    Ok(v) if end > i && v.is_finite() => toks.push((start, Tok::Num(v))),
                    _ => return Err(ParseError::new(start, "malformed number", &["number"])),
                }
                i = end;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut end = i;
                while end < bytes.len() && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_')
                {
                    end += 1;
                }
                toks.push((start, Tok::Ident(input[i..end].to_string())));
                i = end;
                continue;
            }
            _ => {
                let ch = input[i..].chars().next().unwrap_or('?');
                return Err(ParseError::new(
                    start,
                    format!("unexpected character `{ch}`"),
                    &[],
                ));
            }
        }
        i += 1;
    }
    Ok(toks)
}

fn scan_number(bytes: &[u8], mut i: usize) -> usize {
    if matches!(bytes.get(i), Some(b'+' | b'-')) {
        i += 1;
    }
    while matches!(bytes.get(i), Some(b'0'..=b'9')) {
        i += 1;
    }
    if bytes.get(i) == Some(&b'.') {
        i += 1;
        while matches!(bytes.get(i), Some(b'0'..=b'9')) {
            i += 1;
        }
    }
    if matches!(bytes.get(i), Some(b'e' | b'E')) {
        let mut j = i + 1;
        if matches!(bytes.get(j), Some(b'+' | b'-')) {
            j += 1;
        }
        if matches!(bytes.get(j), Some(b'0'..=b'9')) {
            while matches!(bytes.get(j), Some(b'0'..=b'9')) {
                j += 1;
            }
            i = j;
        }
    }
    i
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

const OPERAND_START: &[&str] = &["identifier", "`!`", "`(`"];
const COMPARATORS: &[&str] = &["`>`", "`>=`", "`<`", "`<=`", "`==`", "`!=`"];

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn unexpected(&self, expected: &[&str]) -> ParseError {
        let found = self
            .peek()
            .map_or_else(|| "end of input".to_string(), Tok::describe);
        ParseError::new(self.offset(), format!("unexpected {found}"), expected)
    }

    fn or_expr(&mut self) -> Result<FilterExpr, ParseError> {
        let mut left = self.and_expr()?;
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            let right = self.and_expr()?;
            left = FilterExpr::or(left, right);
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> Result<FilterExpr, ParseError> {
        let mut left = self.unary()?;
        while self.peek() == Some(&Tok::And) {
            self.pos += 1;
            let right = self.unary()?;
            left = FilterExpr::and(left, right);
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<FilterExpr, ParseError> {
        match self.peek() {
            Some(Tok::Not) => {
                self.pos += 1;
                Ok(FilterExpr::not(self.unary()?))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.or_expr()?;
                if self.peek() != Some(&Tok::RParen) {
                    return Err(self.unexpected(&["`)`", "`&`", "`|`"]));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(Tok::Ident(_) | Tok::Str(_)) => self.comparison(),
            _ => Err(self.unexpected(OPERAND_START)),
        }
    }

    fn comparison(&mut self) -> Result<FilterExpr, ParseError> {
        let feature = match self.peek() {
            Some(Tok::Ident(s)) | Some(Tok::Str(s)) => s.clone(),
            _ => return Err(self.unexpected(OPERAND_START)),
        };
        self.pos += 1;
        let op = match self.peek() {
            Some(Tok::Op(op)) => *op,
            _ => return Err(self.unexpected(COMPARATORS)),
        };
        self.pos += 1;
        let literal_offset = self.offset();
        let literal = match self.peek() {
            Some(Tok::Num(v)) => Literal::Num(*v),
            Some(Tok::Str(s)) => Literal::Str(s.clone()),
            _ => return Err(self.unexpected(&["number", "string"])),
        };
        if matches!(literal, Literal::Str(_)) && !op.is_equality() {
            return Err(ParseError::new(
                literal_offset,
                format!("string literal cannot be used with `{}`", op.symbol()),
                &["number"],
            ));
        }
        self.pos += 1;
        Ok(FilterExpr::Comparison {
            feature,
            op,
            literal,
        })
    }
}

pub fn parse(input: &str) -> Result<FilterExpr, ParseError> {
    let toks = lex(input)?;
    if toks.is_empty() {
        return Err(ParseError::new(0, "empty expression", OPERAND_START));
    }
    let mut parser = Parser {
        toks,
        pos: 0,
        end: input.len(),
    };
    let expr = parser.or_expr()?;
    if parser.pos < parser.toks.len() {
        return Err(parser.unexpected(&["`&`", "`|`", "end of input"]));
    }
    Ok(expr)
}

/// A cell value seen by the evaluator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value<'a> {
    Num(f64),
    Str(&'a str),
}

pub trait RowLookup {
    fn value(&self, name: &str) -> Option<Value<'_>>;
}

impl<K> RowLookup for HashMap<K, Literal>
where
    K: Borrow<str> + Hash + Eq,
{
    fn value(&self, name: &str) -> Option<Value<'_>> {
        self.get(name).map(|lit| match lit {
            Literal::Num(v) => Value::Num(*v),
            Literal::Str(s) => Value::Str(s),
        })
    }
}

pub fn eval(expr: &FilterExpr, row: &dyn RowLookup) -> Result<bool> {
    match expr {
        FilterExpr::Comparison {
            feature,
            op,
            literal,
        } => {
            let value = row
                .value(feature)
                .ok_or_else(|| Error::UnknownNames(vec![feature.clone()]))?;
            compare(feature, value, *op, literal)
        }
        FilterExpr::And(l, r) => Ok(eval(l, row)? && eval(r, row)?),
        FilterExpr::Or(l, r) => Ok(eval(l, row)? || eval(r, row)?),
        FilterExpr::Not(inner) => Ok(!eval(inner, row)?),
    }
}

fn compare(feature: &str, value: Value<'_>, op: CmpOp, literal: &Literal) -> Result<bool> {
    match (value, literal) {
        (Value::Num(a), Literal::Num(b)) => Ok(match op {
            CmpOp::Gt => a > *b,
            CmpOp::Ge => a >= *b,
            CmpOp::Lt => a < *b,
            CmpOp::Le => a <= *b,
            CmpOp::Eq => a == *b,
            CmpOp::Ne => a != *b,
        }),
        (Value::Str(a), Literal::Str(b)) => match op {
            CmpOp::Eq => Ok(a == b),
            CmpOp::Ne => Ok(a != b),
            _ => Err(Error::Type(format!(
                "`{}` cannot compare strings (feature `{feature}`)",
                op.symbol()
            ))),
        },
        (Value::Str(_), Literal::Num(_)) => Err(Error::Type(format!(
            "feature `{feature}` is categorical and cannot be compared with a number"
        ))),
        (Value::Num(_), Literal::Str(_)) => Err(Error::Type(format!(
            "feature `{feature}` is numeric and cannot be compared with a string"
        ))),
    }
}

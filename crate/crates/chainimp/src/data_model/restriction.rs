//! Skip-pattern restriction rules.
//!
//! A restriction defines the applicable cases of a variable as a boolean
//! expression over comparisons `variable op constant`, joined by AND/OR.
//! Rules are written as text in the config (`owns == 'yes' AND age >= 18`)
//! and compiled against the variable list at load time. Evaluation is
//! three-valued: a comparison on a Missing restricting value is Unknown
//! (applicability deferred until the filter is imputed), and a comparison
//! on a NotApplicable value is False (a skipped filter satisfies nothing).

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    fn eval(self, lhs: f64, rhs: f64) -> bool {
        match self {
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
        }
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        };
        f.write_str(s)
    }
}

/// Comparison constant as written: a number or a categorical level label.
#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Number(f64),
    Label(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Cmp {
        var: String,
        op: CmpOp,
        value: Literal,
    },
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
}

/// A parsed (but not yet variable-resolved) restriction rule.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictionRule {
    pub text: String,
    pub expr: Expr,
    pub depends_on: BTreeSet<String>,
}

impl RestrictionRule {
    pub fn parse(text: &str) -> Result<Self> {
        let tokens = lex(text)?;
        let mut parser = Parser { tokens, pos: 0, text };
        let expr = parser.expr()?;
        if parser.pos != parser.tokens.len() {
            return Err(Error::validation(format!(
                "trailing input in restriction `{text}`"
            )));
        }
        let mut depends_on = BTreeSet::new();
        collect_vars(&expr, &mut depends_on);
        Ok(RestrictionRule {
            text: text.to_string(),
            expr,
            depends_on,
        })
    }
}

impl fmt::Display for RestrictionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl serde::Serialize for RestrictionRule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.text)
    }
}

impl<'de> serde::Deserialize<'de> for RestrictionRule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        RestrictionRule::parse(&text).map_err(serde::de::Error::custom)
    }
}

fn collect_vars(expr: &Expr, out: &mut BTreeSet<String>) {
    match expr {
        Expr::Cmp { var, .. } => {
            out.insert(var.clone());
        }
        Expr::And(a, b) | Expr::Or(a, b) => {
            collect_vars(a, out);
            collect_vars(b, out);
        }
    }
}

/// Three-valued logic result of evaluating a rule on one row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tri {
    True,
    False,
    Unknown,
}

impl Tri {
    fn and(self, other: Tri) -> Tri {
        match (self, other) {
            (Tri::False, _) | (_, Tri::False) => Tri::False,
            (Tri::True, Tri::True) => Tri::True,
            _ => Tri::Unknown,
        }
    }

    fn or(self, other: Tri) -> Tri {
        match (self, other) {
            (Tri::True, _) | (_, Tri::True) => Tri::True,
            (Tri::False, Tri::False) => Tri::False,
            _ => Tri::Unknown,
        }
    }
}

/// Rule compiled against a concrete variable list: names resolved to column
/// indices and level labels resolved to level indices.
#[derive(Debug, Clone)]
pub enum CompiledExpr {
    Cmp { var_idx: usize, op: CmpOp, value: f64 },
    And(Box<CompiledExpr>, Box<CompiledExpr>),
    Or(Box<CompiledExpr>, Box<CompiledExpr>),
}

impl CompiledExpr {
    /// Evaluate against a row accessor. `lookup` returns `Some(v)` when the
    /// restricting cell currently has a value, `None` when it is Missing,
    /// and NotApplicable must be mapped by the caller to `Some(f64::NAN)`
    /// (NaN fails every comparison, which encodes "satisfies nothing").
    pub fn eval(&self, lookup: &impl Fn(usize) -> Option<f64>) -> Tri {
        match self {
            CompiledExpr::Cmp { var_idx, op, value } => match lookup(*var_idx) {
                None => Tri::Unknown,
                // NaN marks NotApplicable; it must fail `!=` as well, so the
                // IEEE `NaN != x` quirk is short-circuited here.
                Some(v) if v.is_nan() => Tri::False,
                Some(v) => {
                    if op.eval(v, *value) {
                        Tri::True
                    } else {
                        Tri::False
                    }
                }
            },
            CompiledExpr::And(a, b) => a.eval(lookup).and(b.eval(lookup)),
            CompiledExpr::Or(a, b) => a.eval(lookup).or(b.eval(lookup)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Token {
    Ident(usize, usize),
    Number(f64),
    Str(usize, usize),
    Op(CmpOp),
    And,
    Or,
    LParen,
    RParen,
}

fn lex(text: &str) -> Result<Vec<(Token, String)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '(' => {
                out.push((Token::LParen, "(".into()));
                i += 1;
            }
            ')' => {
                out.push((Token::RParen, ")".into()));
                i += 1;
            }
            '=' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    out.push((Token::Op(CmpOp::Eq), "==".into()));
                    i += 2;
                } else {
                    return Err(Error::validation(format!(
                        "expected `==` in restriction `{text}`"
                    )));
                }
            }
            '!' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    out.push((Token::Op(CmpOp::Ne), "!=".into()));
                    i += 2;
                } else {
                    return Err(Error::validation(format!(
                        "expected `!=` in restriction `{text}`"
                    )));
                }
            }
            '<' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    out.push((Token::Op(CmpOp::Le), "<=".into()));
                    i += 2;
                } else {
                    out.push((Token::Op(CmpOp::Lt), "<".into()));
                    i += 1;
                }
            }
            '>' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    out.push((Token::Op(CmpOp::Ge), ">=".into()));
                    i += 2;
                } else {
                    out.push((Token::Op(CmpOp::Gt), ">".into()));
                    i += 1;
                }
            }
            '\'' | '"' => {
                let quote = bytes[i];
                let start = i + 1;
                let mut j = start;
                while j < bytes.len() && bytes[j] != quote {
                    j += 1;
                }
                if j == bytes.len() {
                    return Err(Error::validation(format!(
                        "unterminated string literal in restriction `{text}`"
                    )));
                }
                out.push((Token::Str(start, j), text[start..j].to_string()));
                i = j + 1;
            }
            '&' => {
                if bytes.get(i + 1) == Some(&b'&') {
                    out.push((Token::And, "&&".into()));
                    i += 2;
                } else {
                    return Err(Error::validation(format!(
                        "expected `&&` in restriction `{text}`"
                    )));
                }
            }
            '|' => {
                if bytes.get(i + 1) == Some(&b'|') {
                    out.push((Token::Or, "||".into()));
                    i += 2;
                } else {
                    return Err(Error::validation(format!(
                        "expected `||` in restriction `{text}`"
                    )));
                }
            }
            _ if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                let start = i;
                i += 1;
                while i < bytes.len() {
                    let d = bytes[i] as char;
                    if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' {
                        i += 1;
                    } else if (d == '-' || d == '+')
                        && matches!(bytes[i - 1] as char, 'e' | 'E')
                    {
                        i += 1;
                    } else {
                        break;
                    }
                }
                let num: f64 = text[start..i].parse().map_err(|_| {
                    Error::validation(format!(
                        "bad number `{}` in restriction `{text}`",
                        &text[start..i]
                    ))
                })?;
                out.push((Token::Number(num), text[start..i].to_string()));
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                i += 1;
                while i < bytes.len() {
                    let d = bytes[i] as char;
                    if d.is_ascii_alphanumeric() || d == '_' || d == '.' {
                        i += 1;
                    } else {
                        break;
                    }
                }
                let word = &text[start..i];
                match word.to_ascii_uppercase().as_str() {
                    "AND" => out.push((Token::And, word.to_string())),
                    "OR" => out.push((Token::Or, word.to_string())),
                    _ => out.push((Token::Ident(start, i), word.to_string())),
                }
            }
            _ => {
                return Err(Error::validation(format!(
                    "unexpected character `{c}` in restriction `{text}`"
                )))
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<(Token, String)>,
    pos: usize,
    text: &'a str,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn bump(&mut self) -> Option<(Token, String)> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    // expr := term (OR term)*
    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while matches!(self.peek(), Some(Token::Or)) {
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    // term := factor (AND factor)*
    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        while matches!(self.peek(), Some(Token::And)) {
            self.bump();
            let rhs = self.factor()?;
            lhs = Expr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(Token::LParen) => {
                self.bump();
                let inner = self.expr()?;
                match self.bump() {
                    Some((Token::RParen, _)) => Ok(inner),
                    _ => Err(Error::validation(format!(
                        "missing `)` in restriction `{}`",
                        self.text
                    ))),
                }
            }
            Some(Token::Ident(..)) => {
                let (_, var) = self.bump().unwrap();
                let op = match self.bump() {
                    Some((Token::Op(op), _)) => op,
                    _ => {
                        return Err(Error::validation(format!(
                            "expected comparison operator after `{var}` in restriction `{}`",
                            self.text
                        )))
                    }
                };
                let value = match self.bump() {
                    Some((Token::Number(n), _)) => Literal::Number(n),
                    Some((Token::Str(..), s)) => Literal::Label(s),
                    _ => {
                        return Err(Error::validation(format!(
                            "expected constant after operator in restriction `{}`",
                            self.text
                        )))
                    }
                };
                Ok(Expr::Cmp { var, op, value })
            }
            _ => Err(Error::validation(format!(
                "expected comparison or `(` in restriction `{}`",
                self.text
            ))),
        }
    }
}

//! Condition and guard expressions.
//!
//! ```text
//! expr    := or
//! or      := and ("or" and)*
//! and     := not ("and" not)*
//! not     := "not" not | cmp
//! cmp     := sum (("=" | "!=" | "<" | "<=" | ">" | ">=") sum)?
//! sum     := product (("+" | "-") product)*
//! product := unary (("*" | "/") unary)*
//! unary   := "-" unary | atom
//! atom    := literal | ident | "(" expr ")"
//! ```
//!
//! `==`, `<>`, `≠`, `≤`, `≥`, `×`, `÷`, `&&`, `||` and `!` are accepted as
//! aliases. A `${...}` wrapper around the whole source is stripped.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::event::Scalar;

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
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Eq => ord == Equal,
            CmpOp::Ne => ord != Equal,
            CmpOp::Lt => ord == Less,
            CmpOp::Le => ord != Greater,
            CmpOp::Gt => ord == Greater,
            CmpOp::Ge => ord != Less,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ArithOp {
    fn symbol(self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
            ArithOp::Div => "/",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expression {
    Lit(Scalar),
    Var(String),
    Cmp(CmpOp, Box<Expression>, Box<Expression>),
    Arith(ArithOp, Box<Expression>, Box<Expression>),
    Neg(Box<Expression>),
    And(Box<Expression>, Box<Expression>),
    Or(Box<Expression>, Box<Expression>),
    Not(Box<Expression>),
}

impl Expression {
    pub fn truth() -> Self {
        Expression::Lit(Scalar::Bool(true))
    }

    pub fn is_constant_true(&self) -> bool {
        matches!(self, Expression::Lit(Scalar::Bool(true)))
    }

    /// Variable names referenced by the expression, sorted and deduplicated.
    pub fn variables(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        match self {
            Expression::Lit(_) => {}
            Expression::Var(v) => out.push(v.clone()),
            Expression::Cmp(_, a, b)
            | Expression::Arith(_, a, b)
            | Expression::And(a, b)
            | Expression::Or(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Expression::Neg(a) | Expression::Not(a) => a.collect_vars(out),
        }
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expression::Lit(Scalar::Str(s)) => write!(f, "{s:?}"),
            Expression::Lit(l) => write!(f, "{l}"),
            Expression::Var(v) => f.write_str(v),
            Expression::Cmp(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expression::Arith(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expression::Neg(a) => write!(f, "(-{a})"),
            Expression::And(a, b) => write!(f, "({a} and {b})"),
            Expression::Or(a, b) => write!(f, "({a} or {b})"),
            Expression::Not(a) => write!(f, "(not {a})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at {line}:{column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unbound variable {0}")]
    Unbound(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("integer overflow")]
    Overflow,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Bool(bool),
    Int(i64),
    Dec(f64),
    Str(String),
    Ident(String),
    Cmp(CmpOp),
    Arith(ArithOp),
    And,
    Or,
    Not,
    LParen,
    RParen,
    End,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(src: &str) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, column, message: String| ParseError {
        line,
        column,
        message,
    };

    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        let mut push = |tok, width: usize, i: &mut usize, col: &mut usize| {
            out.push(Spanned {
                tok,
                line: l0,
                column: c0,
            });
            *i += width;
            *col += width;
        };
        let next = chars.get(i + 1).copied();
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
            '(' => push(Tok::LParen, 1, &mut i, &mut col),
            ')' => push(Tok::RParen, 1, &mut i, &mut col),
            '+' => push(Tok::Arith(ArithOp::Add), 1, &mut i, &mut col),
            '-' => push(Tok::Arith(ArithOp::Sub), 1, &mut i, &mut col),
            '*' | '×' => push(Tok::Arith(ArithOp::Mul), 1, &mut i, &mut col),
            '/' | '÷' => push(Tok::Arith(ArithOp::Div), 1, &mut i, &mut col),
            '≠' => push(Tok::Cmp(CmpOp::Ne), 1, &mut i, &mut col),
            '≤' => push(Tok::Cmp(CmpOp::Le), 1, &mut i, &mut col),
            '≥' => push(Tok::Cmp(CmpOp::Ge), 1, &mut i, &mut col),
            '=' if next == Some('=') => push(Tok::Cmp(CmpOp::Eq), 2, &mut i, &mut col),
            '=' => push(Tok::Cmp(CmpOp::Eq), 1, &mut i, &mut col),
            '!' if next == Some('=') => push(Tok::Cmp(CmpOp::Ne), 2, &mut i, &mut col),
            '!' => push(Tok::Not, 1, &mut i, &mut col),
            '<' if next == Some('=') => push(Tok::Cmp(CmpOp::Le), 2, &mut i, &mut col),
            '<' if next == Some('>') => push(Tok::Cmp(CmpOp::Ne), 2, &mut i, &mut col),
            '<' => push(Tok::Cmp(CmpOp::Lt), 1, &mut i, &mut col),
            '>' if next == Some('=') => push(Tok::Cmp(CmpOp::Ge), 2, &mut i, &mut col),
            '>' => push(Tok::Cmp(CmpOp::Gt), 1, &mut i, &mut col),
            '&' if next == Some('&') => push(Tok::And, 2, &mut i, &mut col),
            '|' if next == Some('|') => push(Tok::Or, 2, &mut i, &mut col),
            '"' => {
                let mut s = String::new();
                let mut j = i + 1;
                loop {
                    match chars.get(j) {
                        None | Some('\n') => {
                            return Err(err(l0, c0, "unterminated string literal".into()))
                        }
                        Some('"') => break,
                        Some('\\') => {
                            match chars.get(j + 1) {
                                Some('n') => s.push('\n'),
                                Some('t') => s.push('\t'),
                                Some(&e @ ('"' | '\\')) => s.push(e),
                                _ => {
                                    return Err(err(line, col + (j - i), "invalid escape".into()))
                                }
                            }
                            j += 2;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            j += 1;
                        }
                    }
                }
                push(Tok::Str(s), j + 1 - i, &mut i, &mut col);
            }
            c if c.is_ascii_digit() => {
                let mut j = i;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                let is_dec = chars.get(j) == Some(&'.')
                    && chars.get(j + 1).is_some_and(|d| d.is_ascii_digit());
                if is_dec {
                    j += 1;
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                }
                let text: String = chars[i..j].iter().collect();
                let tok = if is_dec {
                    Tok::Dec(text.parse().map_err(|_| err(l0, c0, "bad decimal".into()))?)
                } else {
                    Tok::Int(
                        text.parse()
                            .map_err(|_| err(l0, c0, "integer literal out of range".into()))?,
                    )
                };
                push(tok, j - i, &mut i, &mut col);
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                let word: String = chars[i..j].iter().collect();
                let tok = match word.as_str() {
                    "true" => Tok::Bool(true),
                    "false" => Tok::Bool(false),
                    "and" => Tok::And,
                    "or" => Tok::Or,
                    "not" => Tok::Not,
                    _ => Tok::Ident(word),
                };
                push(tok, j - i, &mut i, &mut col);
            }
            other => return Err(err(l0, c0, format!("unexpected character {other:?}"))),
        }
    }
    out.push(Spanned {
        tok: Tok::End,
        line,
        column: col,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        let s = &self.toks[self.pos];
        ParseError {
            line: s.line,
            column: s.column,
            message: message.into(),
        }
    }

    fn or(&mut self) -> Result<Expression, ParseError> {
        let mut lhs = self.and()?;
        while *self.peek() == Tok::Or {
            self.bump();
            lhs = Expression::Or(Box::new(lhs), Box::new(self.and()?));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expression, ParseError> {
        let mut lhs = self.not()?;
        while *self.peek() == Tok::And {
            self.bump();
            lhs = Expression::And(Box::new(lhs), Box::new(self.not()?));
        }
        Ok(lhs)
    }

    fn not(&mut self) -> Result<Expression, ParseError> {
        if *self.peek() == Tok::Not {
            self.bump();
            return Ok(Expression::Not(Box::new(self.not()?)));
        }
        self.cmp()
    }

    fn cmp(&mut self) -> Result<Expression, ParseError> {
        let lhs = self.sum()?;
        if let Tok::Cmp(op) = *self.peek() {
            self.bump();
            let rhs = self.sum()?;
            if matches!(self.peek(), Tok::Cmp(_)) {
                return Err(self.error("comparisons cannot be chained"));
            }
            return Ok(Expression::Cmp(op, Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn sum(&mut self) -> Result<Expression, ParseError> {
        let mut lhs = self.product()?;
        while let Tok::Arith(op @ (ArithOp::Add | ArithOp::Sub)) = *self.peek() {
            self.bump();
            lhs = Expression::Arith(op, Box::new(lhs), Box::new(self.product()?));
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Expression, ParseError> {
        let mut lhs = self.unary()?;
        while let Tok::Arith(op @ (ArithOp::Mul | ArithOp::Div)) = *self.peek() {
            self.bump();
            lhs = Expression::Arith(op, Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expression, ParseError> {
        if *self.peek() == Tok::Arith(ArithOp::Sub) {
            self.bump();
            return Ok(Expression::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expression, ParseError> {
        let e = match self.peek().clone() {
            Tok::Bool(b) => Expression::Lit(Scalar::Bool(b)),
            Tok::Int(i) => Expression::Lit(Scalar::Int(i)),
            Tok::Dec(d) => Expression::Lit(Scalar::Decimal(d)),
            Tok::Str(s) => Expression::Lit(Scalar::Str(s)),
            Tok::Ident(v) => Expression::Var(v),
            Tok::LParen => {
                self.bump();
                let inner = self.or()?;
                if *self.peek() != Tok::RParen {
                    return Err(self.error("expected ')'"));
                }
                inner
            }
            Tok::End => return Err(self.error("unexpected end of expression")),
            other => return Err(self.error(format!("unexpected token {other:?}"))),
        };
        self.bump();
        Ok(e)
    }
}

/// Removes a `${ ... }` wrapper, as written in BPMN condition expressions.
pub fn strip_wrapper(src: &str) -> &str {
    let t = src.trim();
    t.strip_prefix("${")
        .and_then(|r| r.strip_suffix('}'))
        .map(str::trim)
        .unwrap_or(t)
}

pub fn parse_expression(src: &str) -> Result<Expression, ParseError> {
    let body = strip_wrapper(src);
    if body.is_empty() {
        return Err(ParseError {
            line: 1,
            column: 1,
            message: "empty expression".into(),
        });
    }
    let mut p = Parser {
        toks: lex(body)?,
        pos: 0,
    };
    let e = p.or()?;
    if *p.peek() != Tok::End {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(e)
}

/// Anything that resolves variable names to values.
pub trait Bindings {
    fn lookup(&self, name: &str) -> Option<Scalar>;
}

impl Bindings for BTreeMap<String, Scalar> {
    fn lookup(&self, name: &str) -> Option<Scalar> {
        self.get(name).cloned()
    }
}

impl<F: Fn(&str) -> Option<Scalar>> Bindings for F {
    fn lookup(&self, name: &str) -> Option<Scalar> {
        self(name)
    }
}

fn as_f64(s: &Scalar) -> Option<f64> {
    match s {
        Scalar::Int(i) => Some(*i as f64),
        Scalar::Decimal(d) => Some(*d),
        _ => None,
    }
}

/// Total comparison of two scalars of compatible type.
pub fn compare(a: &Scalar, b: &Scalar) -> Result<std::cmp::Ordering, EvalError> {
    match (a, b) {
        (Scalar::Int(x), Scalar::Int(y)) => Ok(x.cmp(y)),
        (Scalar::Bool(x), Scalar::Bool(y)) => Ok(x.cmp(y)),
        (Scalar::Str(x), Scalar::Str(y)) => Ok(x.cmp(y)),
        _ => match (as_f64(a), as_f64(b)) {
            (Some(x), Some(y)) => Ok(x.total_cmp(&y)),
            _ => Err(EvalError::TypeMismatch(format!(
                "cannot compare {} with {}",
                a.type_name(),
                b.type_name()
            ))),
        },
    }
}

fn want_bool(v: Scalar, ctx: &str) -> Result<bool, EvalError> {
    match v {
        Scalar::Bool(b) => Ok(b),
        other => Err(EvalError::TypeMismatch(format!(
            "{ctx} expects boolean, got {}",
            other.type_name()
        ))),
    }
}

fn arith(op: ArithOp, a: Scalar, b: Scalar) -> Result<Scalar, EvalError> {
    if let (ArithOp::Add, Scalar::Str(x), Scalar::Str(y)) = (op, &a, &b) {
        return Ok(Scalar::Str(format!("{x}{y}")));
    }
    if let (Scalar::Int(x), Scalar::Int(y)) = (&a, &b) {
        let r = match op {
            ArithOp::Add => x.checked_add(*y),
            ArithOp::Sub => x.checked_sub(*y),
            ArithOp::Mul => x.checked_mul(*y),
            ArithOp::Div => {
                if *y == 0 {
                    return Err(EvalError::DivisionByZero);
                }
                return Ok(Scalar::Decimal(*x as f64 / *y as f64));
            }
        };
        return r.map(Scalar::Int).ok_or(EvalError::Overflow);
    }
    let (x, y) = match (as_f64(&a), as_f64(&b)) {
        (Some(x), Some(y)) => (x, y),
        _ => {
            return Err(EvalError::TypeMismatch(format!(
                "operator {} not defined for {} and {}",
                op.symbol(),
                a.type_name(),
                b.type_name()
            )))
        }
    };
    let r = match op {
        ArithOp::Add => x + y,
        ArithOp::Sub => x - y,
        ArithOp::Mul => x * y,
        ArithOp::Div => {
            if y == 0.0 {
                return Err(EvalError::DivisionByZero);
            }
            x / y
        }
    };
    if r.is_finite() {
        Ok(Scalar::Decimal(r))
    } else {
        Err(EvalError::Overflow)
    }
}

pub fn evaluate(expr: &Expression, env: &dyn Bindings) -> Result<Scalar, EvalError> {
    match expr {
        Expression::Lit(l) => Ok(l.clone()),
        Expression::Var(v) => env.lookup(v).ok_or_else(|| EvalError::Unbound(v.clone())),
        Expression::Cmp(op, a, b) => {
            let (x, y) = (evaluate(a, env)?, evaluate(b, env)?);
            Ok(Scalar::Bool(op.holds(compare(&x, &y)?)))
        }
        Expression::Arith(op, a, b) => arith(*op, evaluate(a, env)?, evaluate(b, env)?),
        Expression::Neg(a) => match evaluate(a, env)? {
            Scalar::Int(i) => i.checked_neg().map(Scalar::Int).ok_or(EvalError::Overflow),
            Scalar::Decimal(d) => Ok(Scalar::Decimal(-d)),
            other => Err(EvalError::TypeMismatch(format!(
                "cannot negate {}",
                other.type_name()
            ))),
        },
        Expression::And(a, b) => {
            if !want_bool(evaluate(a, env)?, "and")? {
                return Ok(Scalar::Bool(false));
            }
            Ok(Scalar::Bool(want_bool(evaluate(b, env)?, "and")?))
        }
        Expression::Or(a, b) => {
            if want_bool(evaluate(a, env)?, "or")? {
                return Ok(Scalar::Bool(true));
            }
            Ok(Scalar::Bool(want_bool(evaluate(b, env)?, "or")?))
        }
        Expression::Not(a) => Ok(Scalar::Bool(!want_bool(evaluate(a, env)?, "not")?)),
    }
}

/// Evaluates in a boolean context; non-boolean results are type errors.
pub fn evaluate_bool(expr: &Expression, env: &dyn Bindings) -> Result<bool, EvalError> {
    want_bool(evaluate(expr, env)?, "condition")
}

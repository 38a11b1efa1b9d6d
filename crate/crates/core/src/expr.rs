//! Small expression language used for search-space restrictions, preprocessor
//! defines, template arguments and launch geometry.
//!
//! Values are 64-bit signed integers, booleans and strings. Operator precedence
//! follows C: prefix `!`/`-` bind tightest, then `* / %`, `+ -`, comparisons,
//! `&&` and finally `||`. Built-in calls are `ceil_div`, `min` and `max`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Str(Arc<str>),
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Int(_) => "integer",
            Value::Bool(_) => "boolean",
            Value::Str(_) => "string",
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(v) => Some(*v),
            _ => None,
        }
    }

    /// Text used when a value is pasted into generated code (defines, template
    /// arguments). Strings are emitted raw so they can carry type names.
    pub fn to_code(&self) -> String {
        match self {
            Value::Int(v) => v.to_string(),
            Value::Bool(v) => v.to_string(),
            Value::Str(s) => s.to_string(),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Bool(v) => write!(f, "{v}"),
            Value::Str(s) => write_string_literal(f, s),
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Str(Arc::from(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinaryOp {
    fn precedence(self) -> u8 {
        use BinaryOp::*;
        match self {
            Or => 1,
            And => 2,
            Eq | Ne | Lt | Le | Gt | Ge => 3,
            Add | Sub => 4,
            Mul | Div | Rem => 5,
        }
    }

    fn symbol(self) -> &'static str {
        use BinaryOp::*;
        match self {
            Add => "+",
            Sub => "-",
            Mul => "*",
            Div => "/",
            Rem => "%",
            Eq => "==",
            Ne => "!=",
            Lt => "<",
            Le => "<=",
            Gt => ">",
            Ge => ">=",
            And => "&&",
            Or => "||",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    CeilDiv,
    Min,
    Max,
}

impl Func {
    pub fn from_name(name: &str) -> Option<Func> {
        match name {
            "ceil_div" => Some(Func::CeilDiv),
            "min" => Some(Func::Min),
            "max" => Some(Func::Max),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::CeilDiv => "ceil_div",
            Func::Min => "min",
            Func::Max => "max",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Int(i64),
    Bool(bool),
    Str(Arc<str>),
    Ident(Arc<str>),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown function `{name}` at offset {offset}")]
    UnknownFunction { offset: usize, name: String },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. } | ParseError::UnknownFunction { offset, .. } => {
                *offset
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unbound identifier `{0}`")]
    Unbound(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("modulo by zero")]
    ModuloByZero,
    #[error("integer overflow in {0}")]
    Overflow(&'static str),
    #[error("ceil_div requires a >= 0 and b > 0, got ceil_div({0}, {1})")]
    CeilDivDomain(i64, i64),
    #[error("{func} expects {expected} arguments, got {got}")]
    Arity {
        func: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Identifier bindings for evaluation.
pub trait Env {
    fn lookup(&self, name: &str) -> Option<Value>;
}

impl Env for HashMap<String, Value> {
    fn lookup(&self, name: &str) -> Option<Value> {
        self.get(name).cloned()
    }
}

impl Env for std::collections::BTreeMap<String, Value> {
    fn lookup(&self, name: &str) -> Option<Value> {
        self.get(name).cloned()
    }
}

impl Env for [(&str, Value)] {
    fn lookup(&self, name: &str) -> Option<Value> {
        self.iter().find(|(n, _)| *n == name).map(|(_, v)| v.clone())
    }
}

impl<const N: usize> Env for [(&str, Value); N] {
    fn lookup(&self, name: &str) -> Option<Value> {
        self.as_slice().lookup(name)
    }
}

/// Env with nothing bound.
pub struct EmptyEnv;

impl Env for EmptyEnv {
    fn lookup(&self, _name: &str) -> Option<Value> {
        None
    }
}

/// Looks a name up in `first`, then `second`.
pub struct Layered<'a, A: ?Sized, B: ?Sized> {
    pub first: &'a A,
    pub second: &'a B,
}

impl<A: Env + ?Sized, B: Env + ?Sized> Env for Layered<'_, A, B> {
    fn lookup(&self, name: &str) -> Option<Value> {
        self.first.lookup(name).or_else(|| self.second.lookup(name))
    }
}

pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let mut parser = Parser {
        src: text,
        tokens: tokenize(text)?,
        pos: 0,
    };
    let expr = parser.expression(0)?;
    match parser.peek() {
        Token { kind: Tok::Eof, .. } => Ok(expr),
        tok => Err(ParseError::Syntax {
            offset: tok.offset,
            message: format!("unexpected {}", tok.kind.describe(text, tok)),
        }),
    }
}

impl std::str::FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

impl Expr {
    pub fn ident(name: &str) -> Expr {
        Expr::Ident(Arc::from(name))
    }

    pub fn binary(op: BinaryOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    /// All identifiers referenced anywhere in the tree, sorted.
    pub fn identifiers(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_identifiers(&mut out);
        out
    }

    fn collect_identifiers<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Expr::Ident(name) => {
                out.insert(name);
            }
            Expr::Unary(_, e) => e.collect_identifiers(out),
            Expr::Binary(_, l, r) => {
                l.collect_identifiers(out);
                r.collect_identifiers(out);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.collect_identifiers(out)),
            Expr::Int(_) | Expr::Bool(_) | Expr::Str(_) => {}
        }
    }

    pub fn evaluate<E: Env + ?Sized>(&self, env: &E) -> Result<Value, EvalError> {
        match self {
            Expr::Int(v) => Ok(Value::Int(*v)),
            Expr::Bool(v) => Ok(Value::Bool(*v)),
            Expr::Str(s) => Ok(Value::Str(s.clone())),
            Expr::Ident(name) => env
                .lookup(name)
                .ok_or_else(|| EvalError::Unbound(name.to_string())),
            Expr::Unary(op, inner) => {
                let v = inner.evaluate(env)?;
                match (op, v) {
                    (UnaryOp::Neg, Value::Int(i)) => i
                        .checked_neg()
                        .map(Value::Int)
                        .ok_or(EvalError::Overflow("negation")),
                    (UnaryOp::Not, Value::Bool(b)) => Ok(Value::Bool(!b)),
                    (UnaryOp::Neg, v) => Err(EvalError::TypeMismatch(format!(
                        "unary `-` needs an integer, got {}",
                        v.type_name()
                    ))),
                    (UnaryOp::Not, v) => Err(EvalError::TypeMismatch(format!(
                        "`!` needs a boolean, got {}",
                        v.type_name()
                    ))),
                }
            }
            Expr::Binary(op, lhs, rhs) => {
                let l = lhs.evaluate(env)?;
                let r = rhs.evaluate(env)?;
                binary(*op, l, r)
            }
            Expr::Call(func, args) => {
                let values = args
                    .iter()
                    .map(|a| a.evaluate(env))
                    .collect::<Result<Vec<_>, _>>()?;
                call(*func, &values)
            }
        }
    }

    pub fn evaluate_int<E: Env + ?Sized>(&self, env: &E) -> Result<i64, EvalError> {
        let v = self.evaluate(env)?;
        v.as_int().ok_or_else(|| {
            EvalError::TypeMismatch(format!("expected integer, got {}", v.type_name()))
        })
    }

    pub fn evaluate_bool<E: Env + ?Sized>(&self, env: &E) -> Result<bool, EvalError> {
        let v = self.evaluate(env)?;
        v.as_bool().ok_or_else(|| {
            EvalError::TypeMismatch(format!("expected boolean, got {}", v.type_name()))
        })
    }
}

fn int_operands(op: BinaryOp, l: &Value, r: &Value) -> Result<(i64, i64), EvalError> {
    match (l, r) {
        (Value::Int(a), Value::Int(b)) => Ok((*a, *b)),
        _ => Err(EvalError::TypeMismatch(format!(
            "`{}` needs integers, got {} and {}",
            op.symbol(),
            l.type_name(),
            r.type_name()
        ))),
    }
}

fn binary(op: BinaryOp, l: Value, r: Value) -> Result<Value, EvalError> {
    use BinaryOp::*;
    match op {
        Add | Sub | Mul | Div | Rem => {
            let (a, b) = int_operands(op, &l, &r)?;
            let out = match op {
                Add => a.checked_add(b).ok_or(EvalError::Overflow("addition"))?,
                Sub => a.checked_sub(b).ok_or(EvalError::Overflow("subtraction"))?,
                Mul => a.checked_mul(b).ok_or(EvalError::Overflow("multiplication"))?,
                Div => {
                    if b == 0 {
                        return Err(EvalError::DivisionByZero);
                    }
                    a.checked_div(b).ok_or(EvalError::Overflow("division"))?
                }
                _ => {
                    if b == 0 {
                        return Err(EvalError::ModuloByZero);
                    }
                    a.checked_rem(b).ok_or(EvalError::Overflow("modulo"))?
                }
            };
            Ok(Value::Int(out))
        }
        Eq | Ne => {
            let equal = match (&l, &r) {
                (Value::Int(a), Value::Int(b)) => a == b,
                (Value::Str(a), Value::Str(b)) => a == b,
                _ => {
                    return Err(EvalError::TypeMismatch(format!(
                        "`{}` compares integers or strings, got {} and {}",
                        op.symbol(),
                        l.type_name(),
                        r.type_name()
                    )))
                }
            };
            Ok(Value::Bool(if op == Eq { equal } else { !equal }))
        }
        Lt | Le | Gt | Ge => {
            let (a, b) = int_operands(op, &l, &r)?;
            Ok(Value::Bool(match op {
                Lt => a < b,
                Le => a <= b,
                Gt => a > b,
                _ => a >= b,
            }))
        }
        And | Or => match (&l, &r) {
            (Value::Bool(a), Value::Bool(b)) => {
                Ok(Value::Bool(if op == And { *a && *b } else { *a || *b }))
            }
            _ => Err(EvalError::TypeMismatch(format!(
                "`{}` needs booleans, got {} and {}",
                op.symbol(),
                l.type_name(),
                r.type_name()
            ))),
        },
    }
}

fn call(func: Func, args: &[Value]) -> Result<Value, EvalError> {
    if args.len() != 2 {
        return Err(EvalError::Arity {
            func: func.name(),
            expected: 2,
            got: args.len(),
        });
    }
    let (a, b) = match (&args[0], &args[1]) {
        (Value::Int(a), Value::Int(b)) => (*a, *b),
        (l, r) => {
            return Err(EvalError::TypeMismatch(format!(
                "{} needs integers, got {} and {}",
                func.name(),
                l.type_name(),
                r.type_name()
            )))
        }
    };
    let out = match func {
        Func::CeilDiv => {
            if a < 0 || b <= 0 {
                return Err(EvalError::CeilDivDomain(a, b));
            }
            a.checked_add(b - 1).ok_or(EvalError::Overflow("ceil_div"))? / b
        }
        Func::Min => a.min(b),
        Func::Max => a.max(b),
    };
    Ok(Value::Int(out))
}

// ---- printing ----

const PREFIX_PRECEDENCE: u8 = 6;

fn write_string_literal(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_str("\"")?;
    for c in s.chars() {
        match c {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            '\n' => f.write_str("\\n")?,
            '\t' => f.write_str("\\t")?,
            c => write!(f, "{c}")?,
        }
    }
    f.write_str("\"")
}

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(op, ..) => op.precedence(),
            Expr::Unary(..) => PREFIX_PRECEDENCE,
            _ => u8::MAX,
        }
    }

    fn fmt_operand(&self, f: &mut fmt::Formatter<'_>, needs_parens: bool) -> fmt::Result {
        if needs_parens {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Int(v) if *v < 0 => write!(f, "({v})"),
            Expr::Int(v) => write!(f, "{v}"),
            Expr::Bool(v) => write!(f, "{v}"),
            Expr::Str(s) => write_string_literal(f, s),
            Expr::Ident(name) => f.write_str(name),
            Expr::Unary(op, inner) => {
                f.write_str(match op {
                    UnaryOp::Neg => "-",
                    UnaryOp::Not => "!",
                })?;
                inner.fmt_operand(f, inner.precedence() < PREFIX_PRECEDENCE)
            }
            Expr::Binary(op, lhs, rhs) => {
                let p = op.precedence();
                lhs.fmt_operand(f, lhs.precedence() < p)?;
                write!(f, " {} ", op.symbol())?;
                // left associative: an equal-precedence right child keeps its parens
                rhs.fmt_operand(f, rhs.precedence() <= p)
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

impl Serialize for Expr {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse(&text).map_err(serde::de::Error::custom)
    }
}

// ---- lexing ----

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Int(i64),
    Str(String),
    Ident,
    Op(&'static str),
    LParen,
    RParen,
    Comma,
    Eof,
}

impl Tok {
    fn describe(&self, src: &str, tok: &Token) -> String {
        match self {
            Tok::Eof => "end of input".to_string(),
            _ => format!("`{}`", &src[tok.offset..tok.end]),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: Tok,
    offset: usize,
    end: usize,
}

const OPERATORS: [&str; 16] = [
    "&&", "||", "==", "!=", "<=", ">=", "<", ">", "+", "-", "*", "/", "%", "!", "(", ")",
];

fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let value = src[start..i].parse::<i64>().map_err(|_| ParseError::Syntax {
                offset: start,
                message: "integer literal out of range".into(),
            })?;
            tokens.push(Token {
                kind: Tok::Int(value),
                offset: start,
                end: i,
            });
        } else if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            tokens.push(Token {
                kind: Tok::Ident,
                offset: start,
                end: i,
            });
        } else if c == b'"' {
            i += 1;
            let mut text = String::new();
            loop {
                let Some(ch) = src[i..].chars().next() else {
                    return Err(ParseError::Syntax {
                        offset: start,
                        message: "unterminated string literal".into(),
                    });
                };
                i += ch.len_utf8();
                match ch {
                    '"' => break,
                    '\\' => {
                        let esc = src[i..].chars().next().ok_or(ParseError::Syntax {
                            offset: start,
                            message: "unterminated string literal".into(),
                        })?;
                        text.push(match esc {
                            '"' => '"',
                            '\\' => '\\',
                            'n' => '\n',
                            't' => '\t',
                            _ => {
                                return Err(ParseError::Syntax {
                                    offset: i - 1,
                                    message: format!("unknown escape `\\{esc}`"),
                                })
                            }
                        });
                        i += esc.len_utf8();
                    }
                    ch => text.push(ch),
                }
            }
            tokens.push(Token {
                kind: Tok::Str(text),
                offset: start,
                end: i,
            });
        } else if c == b',' {
            i += 1;
            tokens.push(Token {
                kind: Tok::Comma,
                offset: start,
                end: i,
            });
        } else if let Some(op) = OPERATORS
            .iter()
            .find(|op| src[i..].starts_with(*op))
            .copied()
        {
            i += op.len();
            let kind = match op {
                "(" => Tok::LParen,
                ")" => Tok::RParen,
                op => Tok::Op(op),
            };
            tokens.push(Token {
                kind,
                offset: start,
                end: i,
            });
        } else {
            let ch = src[i..].chars().next().unwrap_or('?');
            return Err(ParseError::Syntax {
                offset: start,
                message: format!("unexpected character `{ch}`"),
            });
        }
    }
    tokens.push(Token {
        kind: Tok::Eof,
        offset: src.len(),
        end: src.len(),
    });
    Ok(tokens)
}

// ---- parsing (precedence climbing) ----

struct Parser<'a> {
    src: &'a str,
    tokens: Vec<Token>,
    pos: usize,
}

fn binary_op(symbol: &str) -> Option<BinaryOp> {
    use BinaryOp::*;
    Some(match symbol {
        "+" => Add,
        "-" => Sub,
        "*" => Mul,
        "/" => Div,
        "%" => Rem,
        "==" => Eq,
        "!=" => Ne,
        "<" => Lt,
        "<=" => Le,
        ">" => Gt,
        ">=" => Ge,
        "&&" => And,
        "||" => Or,
        _ => return None,
    })
}

impl Parser<'_> {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> Token {
        let tok = self.tokens[self.pos].clone();
        if tok.kind != Tok::Eof {
            self.pos += 1;
        }
        tok
    }

    fn unexpected(&self, expected: &str) -> ParseError {
        let tok = self.peek();
        ParseError::Syntax {
            offset: tok.offset,
            message: format!(
                "expected {expected}, found {}",
                tok.kind.describe(self.src, tok)
            ),
        }
    }

    fn expression(&mut self, min_precedence: u8) -> Result<Expr, ParseError> {
        let mut lhs = self.prefix()?;
        loop {
            let op = match &self.peek().kind {
                Tok::Op(sym) => match binary_op(sym) {
                    Some(op) if op.precedence() > min_precedence => op,
                    _ => break,
                },
                _ => break,
            };
            self.bump();
            let rhs = self.expression(op.precedence())?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn prefix(&mut self) -> Result<Expr, ParseError> {
        match self.peek().kind {
            Tok::Op("-") => {
                self.bump();
                Ok(Expr::Unary(UnaryOp::Neg, Box::new(self.prefix()?)))
            }
            Tok::Op("!") => {
                self.bump();
                Ok(Expr::Unary(UnaryOp::Not, Box::new(self.prefix()?)))
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let tok = self.peek().clone();
        match tok.kind {
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::Int(v))
            }
            Tok::Str(ref s) => {
                self.bump();
                Ok(Expr::Str(Arc::from(s.as_str())))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expression(0)?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Tok::Ident => {
                self.bump();
                let name = &self.src[tok.offset..tok.end];
                if self.peek().kind == Tok::LParen {
                    let func = Func::from_name(name).ok_or_else(|| ParseError::UnknownFunction {
                        offset: tok.offset,
                        name: name.to_string(),
                    })?;
                    self.bump();
                    let mut args = Vec::new();
                    if self.peek().kind != Tok::RParen {
                        loop {
                            args.push(self.expression(0)?);
                            if self.peek().kind == Tok::Comma {
                                self.bump();
                            } else {
                                break;
                            }
                        }
                    }
                    self.expect_rparen()?;
                    if args.len() != 2 {
                        return Err(ParseError::Syntax {
                            offset: tok.offset,
                            message: format!(
                                "{} takes 2 arguments, got {}",
                                func.name(),
                                args.len()
                            ),
                        });
                    }
                    return Ok(Expr::Call(func, args));
                }
                Ok(match name {
                    "true" => Expr::Bool(true),
                    "false" => Expr::Bool(false),
                    _ => Expr::Ident(Arc::from(name)),
                })
            }
            _ => Err(self.unexpected("an operand")),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        if self.peek().kind == Tok::RParen {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected("`)`"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn int(v: i64) -> Expr {
        Expr::Int(v)
    }

    fn bin(op: BinaryOp, l: Expr, r: Expr) -> Expr {
        Expr::binary(op, l, r)
    }

    #[test]
    fn precedence_mul_over_add() {
        assert_eq!(
            parse("1 + 2 * 3").unwrap(),
            bin(BinaryOp::Add, int(1), bin(BinaryOp::Mul, int(2), int(3)))
        );
    }

    #[test]
    fn block_product_restriction() {
        let e = parse("block_x * block_y * block_z <= 1024").unwrap();
        let expected = bin(
            BinaryOp::Le,
            bin(
                BinaryOp::Mul,
                bin(BinaryOp::Mul, Expr::ident("block_x"), Expr::ident("block_y")),
                Expr::ident("block_z"),
            ),
            int(1024),
        );
        assert_eq!(e, expected);
    }

    #[test]
    fn unbalanced_paren_reports_end_offset() {
        let src = "ceil_div(problem_x, block_x";
        let err = parse(src).unwrap_err();
        assert!(matches!(err, ParseError::Syntax { .. }));
        assert_eq!(err.offset(), src.len());
    }

    #[test]
    fn unknown_function() {
        let err = parse("1 + pow(2, 3)").unwrap_err();
        assert_eq!(
            err,
            ParseError::UnknownFunction {
                offset: 4,
                name: "pow".into()
            }
        );
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        assert_eq!(parse("1 2").unwrap_err().offset(), 2);
        assert_eq!(parse("a = 1").unwrap_err().offset(), 2);
    }

    #[test]
    fn prefix_operators_bind_tighter_than_binary() {
        assert_eq!(
            parse("-a * b").unwrap(),
            bin(
                BinaryOp::Mul,
                Expr::Unary(UnaryOp::Neg, Box::new(Expr::ident("a"))),
                Expr::ident("b")
            )
        );
        assert_eq!(
            parse("!x && y").unwrap(),
            bin(
                BinaryOp::And,
                Expr::Unary(UnaryOp::Not, Box::new(Expr::ident("x"))),
                Expr::ident("y")
            )
        );
    }

    #[test]
    fn ceil_div_constant() {
        assert_eq!(parse("ceil_div(1000, 512)").unwrap().evaluate(&EmptyEnv), Ok(Value::Int(2)));
    }

    #[test]
    fn product_with_env() {
        let env = [("block_x", Value::Int(256)), ("tile_x", Value::Int(2))];
        assert_eq!(parse("block_x * tile_x").unwrap().evaluate(&env), Ok(Value::Int(512)));
    }

    #[test]
    fn string_comparison_or() {
        let e = parse("unravel == \"XYZ\" || tile_z > 1").unwrap();
        // truth table over both disjuncts
        for (unravel, tile_z) in [("XYZ", 1), ("XYZ", 4), ("ZYX", 1), ("ZYX", 4)] {
            let env = [("unravel", Value::from(unravel)), ("tile_z", Value::Int(tile_z))];
            let expected = unravel == "XYZ" || tile_z > 1;
            assert_eq!(e.evaluate(&env), Ok(Value::Bool(expected)));
        }
    }

    #[test]
    fn truncating_division_and_remainder() {
        let eval = |s: &str| parse(s).unwrap().evaluate(&EmptyEnv).unwrap();
        assert_eq!(eval("-7 / 2"), Value::Int(-3));
        assert_eq!(eval("-7 % 2"), Value::Int(-1));
        assert_eq!(eval("7 % -2"), Value::Int(1));
        assert_eq!(eval("min(3, -4)"), Value::Int(-4));
        assert_eq!(eval("max(3, -4)"), Value::Int(3));
    }

    #[test]
    fn evaluation_errors() {
        let eval = |s: &str| parse(s).unwrap().evaluate(&EmptyEnv);
        assert_eq!(eval("missing + 1"), Err(EvalError::Unbound("missing".into())));
        assert_eq!(eval("1 / 0"), Err(EvalError::DivisionByZero));
        assert_eq!(eval("1 % 0"), Err(EvalError::ModuloByZero));
        assert_eq!(
            eval("9223372036854775807 + 1"),
            Err(EvalError::Overflow("addition"))
        );
        assert_eq!(
            eval("3037000500 * 3037000500"),
            Err(EvalError::Overflow("multiplication"))
        );
        assert!(matches!(eval("1 && true"), Err(EvalError::TypeMismatch(_))));
        assert!(matches!(eval("\"a\" < \"b\""), Err(EvalError::TypeMismatch(_))));
        assert!(matches!(eval("true == true"), Err(EvalError::TypeMismatch(_))));
        assert!(matches!(eval("!3"), Err(EvalError::TypeMismatch(_))));
        assert_eq!(eval("ceil_div(-1, 4)"), Err(EvalError::CeilDivDomain(-1, 4)));
        assert_eq!(eval("ceil_div(1, 0)"), Err(EvalError::CeilDivDomain(1, 0)));
        assert_eq!(
            eval("ceil_div(9223372036854775807, 2)"),
            Err(EvalError::Overflow("ceil_div"))
        );
    }

    #[test]
    fn call_arity_is_checked_at_parse_time() {
        assert!(parse("min(1)").is_err());
        assert!(parse("max(1, 2, 3)").is_err());
    }

    #[test]
    fn identifiers_are_collected_verbatim() {
        let e = parse("ceil_div(problem_x, block_x * tile_x) + arg3").unwrap();
        let ids: Vec<_> = e.identifiers().into_iter().collect();
        assert_eq!(ids, ["arg3", "block_x", "problem_x", "tile_x"]);
    }

    #[test]
    fn string_escapes_round_trip() {
        let e = parse(r#"name == "a\"b\\c""#).unwrap();
        assert_eq!(parse(&e.to_string()).unwrap(), e);
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0i64..1_000_000).prop_map(Expr::Int),
            any::<bool>().prop_map(Expr::Bool),
            "[a-z_][a-z0-9_]{0,6}"
                .prop_filter("keyword", |s| s != "true" && s != "false")
                .prop_map(|s| Expr::ident(&s)),
            "[ -~]{0,5}".prop_map(|s| Expr::Str(Arc::from(s.as_str()))),
        ];
        leaf.prop_recursive(5, 48, 3, |inner| {
            let ops = prop::sample::select(vec![
                BinaryOp::Add,
                BinaryOp::Sub,
                BinaryOp::Mul,
                BinaryOp::Div,
                BinaryOp::Rem,
                BinaryOp::Eq,
                BinaryOp::Ne,
                BinaryOp::Lt,
                BinaryOp::Le,
                BinaryOp::Gt,
                BinaryOp::Ge,
                BinaryOp::And,
                BinaryOp::Or,
            ]);
            let funcs = prop::sample::select(vec![Func::CeilDiv, Func::Min, Func::Max]);
            prop_oneof![
                (ops, inner.clone(), inner.clone()).prop_map(|(op, l, r)| Expr::binary(op, l, r)),
                (any::<bool>(), inner.clone()).prop_map(|(neg, e)| Expr::Unary(
                    if neg { UnaryOp::Neg } else { UnaryOp::Not },
                    Box::new(e)
                )),
                (funcs, inner.clone(), inner).prop_map(|(f, a, b)| Expr::Call(f, vec![a, b])),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(e in arb_expr()) {
            let printed = e.to_string();
            prop_assert_eq!(parse(&printed).unwrap(), e);
        }

        #[test]
        fn evaluation_is_pure(e in arb_expr(), a in -50i64..50, b in -50i64..50) {
            let env = [("a", Value::Int(a)), ("b", Value::Int(b))];
            prop_assert_eq!(e.evaluate(&env), e.evaluate(&env));
        }
    }
}

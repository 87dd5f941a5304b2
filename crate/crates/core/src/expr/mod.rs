//! The ClassAd expression subset used for job filters and requirements.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! or      := and ( "||" and )*
//! and     := cmp ( "&&" cmp )*
//! cmp     := unary ( ("==" | "!=" | "<" | "<=" | ">" | ">=" | "is" | "isnt") unary )*
//! unary   := "!" unary | primary
//! primary := literal | name | builtin "(" args ")" | "(" or ")"
//! ```
//!
//! Evaluation is three-valued: attributes that are not present evaluate to
//! `undefined`, which propagates through comparisons and logic unless the
//! other operand settles the result (`undefined || true` is `true`).

mod ast;
mod eval;
mod lexer;
mod parser;
mod value;

use thiserror::Error;

pub use ast::{BinaryOp, Builtin, Expr, ExprKind, Span, UnaryOp};
pub use eval::{eval, matches, string_list_member, DEFAULT_LIST_DELIMITERS};
pub use parser::parse;
pub use value::{AttrBag, AttrLookup, Overlay, Value};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: expected {expected}, found {found}")]
    Syntax {
        offset: usize,
        expected: String,
        found: String,
    },
    #[error("unknown function `{name}` at offset {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("`{name}` at offset {offset} takes {min}..={max} arguments, got {got}")]
    Arity {
        name: String,
        offset: usize,
        min: usize,
        max: usize,
        got: usize,
    },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::UnknownFunction { offset, .. }
            | ParseError::Arity { offset, .. } => *offset,
        }
    }
}

/// Parses a single literal (as accepted inside an expression).
pub fn parse_literal(text: &str) -> Option<Value> {
    match parse(text).ok()?.kind {
        ExprKind::Literal(v) => Some(v),
        _ => None,
    }
}

/// True for names usable as attribute references.
pub fn is_valid_attr_name(name: &str) -> bool {
    let mut chars = name.chars();
    let head_ok = chars
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_');
    head_ok
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        && !matches!(
            name.to_ascii_lowercase().as_str(),
            "true" | "false" | "undefined" | "error" | "is" | "isnt"
        )
}

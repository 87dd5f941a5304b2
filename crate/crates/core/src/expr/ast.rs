use std::fmt;

use super::value::{render_string, Value};

/// Byte range of a node in the source text.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Or,
    And,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Is,
    Isnt,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Or => "||",
            BinaryOp::And => "&&",
            BinaryOp::Eq => "==",
            BinaryOp::Ne => "!=",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::Ge => ">=",
            BinaryOp::Is => "is",
            BinaryOp::Isnt => "isnt",
        }
    }

    pub(crate) fn precedence(self) -> u8 {
        match self {
            BinaryOp::Or => 1,
            BinaryOp::And => 2,
            _ => 3,
        }
    }
}

/// The functions an expression may call. Anything else fails to parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    IsUndefined,
    StringListMember,
}

impl Builtin {
    pub const ALL: [Builtin; 2] = [Builtin::IsUndefined, Builtin::StringListMember];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::IsUndefined => "isUndefined",
            Builtin::StringListMember => "stringListMember",
        }
    }

    pub fn lookup(name: &str) -> Option<Builtin> {
        Self::ALL
            .into_iter()
            .find(|b| b.name().eq_ignore_ascii_case(name))
    }

    /// Inclusive argument-count range.
    pub fn arity(self) -> (usize, usize) {
        match self {
            Builtin::IsUndefined => (1, 1),
            Builtin::StringListMember => (2, 3),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Literal(Value),
    Attr(String),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Call(Builtin, Vec<Expr>),
}

/// A parsed expression. Equality is structural and ignores spans.
#[derive(Debug, Clone)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

impl Expr {
    pub fn new(kind: ExprKind) -> Self {
        Expr {
            kind,
            span: Span::default(),
        }
    }

    pub fn literal(value: impl Into<Value>) -> Self {
        Expr::new(ExprKind::Literal(value.into()))
    }

    pub fn attr(name: impl Into<String>) -> Self {
        Expr::new(ExprKind::Attr(name.into()))
    }

    pub fn negate(operand: Expr) -> Self {
        Expr::new(ExprKind::Unary(UnaryOp::Not, Box::new(operand)))
    }

    pub fn binary(op: BinaryOp, lhs: Expr, rhs: Expr) -> Self {
        Expr::new(ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)))
    }

    pub fn and(lhs: Expr, rhs: Expr) -> Self {
        Expr::binary(BinaryOp::And, lhs, rhs)
    }

    pub fn call(func: Builtin, args: Vec<Expr>) -> Self {
        Expr::new(ExprKind::Call(func, args))
    }

    fn precedence(&self) -> u8 {
        match &self.kind {
            ExprKind::Binary(op, ..) => op.precedence(),
            ExprKind::Unary(..) => 4,
            _ => 5,
        }
    }

    /// Operands of a top-level `&&` chain, left to right. A non-`&&`
    /// expression is a single conjunct.
    pub fn conjuncts(&self) -> Vec<&Expr> {
        match &self.kind {
            ExprKind::Binary(BinaryOp::And, l, r) => {
                let mut out = l.conjuncts();
                out.extend(r.conjuncts());
                out
            }
            _ => vec![self],
        }
    }

    fn write_child(&self, f: &mut fmt::Formatter<'_>, wrap: bool) -> fmt::Result {
        if wrap {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

/// Canonical single-line form with the fewest parentheses that preserve
/// the tree shape. Binary operators are left-associative, so a right
/// operand of equal precedence is parenthesized.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ExprKind::Literal(Value::String(s)) => render_string(s, f),
            ExprKind::Literal(v) => write!(f, "{v}"),
            ExprKind::Attr(name) => f.write_str(name),
            ExprKind::Unary(UnaryOp::Not, operand) => {
                f.write_str("!")?;
                operand.write_child(f, operand.precedence() < 4)
            }
            ExprKind::Binary(op, lhs, rhs) => {
                let p = op.precedence();
                lhs.write_child(f, lhs.precedence() < p)?;
                write!(f, " {} ", op.symbol())?;
                rhs.write_child(f, rhs.precedence() <= p)
            }
            ExprKind::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, arg) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{arg}")?;
                }
                f.write_str(")")
            }
        }
    }
}

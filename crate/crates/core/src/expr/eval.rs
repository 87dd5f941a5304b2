use std::cmp::Ordering;

use super::ast::{BinaryOp, Builtin, Expr, ExprKind, UnaryOp};
use super::value::{AttrLookup, Value};

/// Evaluates `expr` against `attrs` with ClassAd three-valued semantics.
///
/// Never fails: problems such as type mismatches come back as
/// `Value::Error`.
pub fn eval<A: AttrLookup + ?Sized>(expr: &Expr, attrs: &A) -> Value {
    match &expr.kind {
        ExprKind::Literal(v) => v.clone(),
        ExprKind::Attr(name) => attrs.lookup(name),
        ExprKind::Unary(UnaryOp::Not, operand) => logical_not(eval(operand, attrs)),
        ExprKind::Binary(op, lhs, rhs) => {
            let l = eval(lhs, attrs);
            let r = eval(rhs, attrs);
            apply_binary(*op, l, r)
        }
        ExprKind::Call(func, args) => {
            let argv: Vec<Value> = args.iter().map(|a| eval(a, attrs)).collect();
            call_builtin(*func, &argv)
        }
    }
}

/// True iff `expr` evaluates to boolean true. Undefined, error and
/// non-boolean results are all "no".
pub fn matches<A: AttrLookup + ?Sized>(expr: &Expr, attrs: &A) -> bool {
    matches!(eval(expr, attrs), Value::Boolean(true))
}

pub(crate) fn logical_not(v: Value) -> Value {
    match v {
        Value::Boolean(b) => Value::Boolean(!b),
        Value::Undefined => Value::Undefined,
        e @ Value::Error(_) => e,
        other => Value::error(format!("cannot negate {}", other.type_name())),
    }
}

fn truth(v: &Value) -> Result<Option<bool>, Value> {
    match v {
        Value::Boolean(b) => Ok(Some(*b)),
        Value::Undefined => Ok(None),
        e @ Value::Error(_) => Err(e.clone()),
        other => Err(Value::error(format!(
            "logical operator applied to {}",
            other.type_name()
        ))),
    }
}

pub(crate) fn apply_binary(op: BinaryOp, l: Value, r: Value) -> Value {
    match op {
        BinaryOp::Is => Value::Boolean(l == r),
        BinaryOp::Isnt => Value::Boolean(l != r),
        BinaryOp::And | BinaryOp::Or => {
            let (a, b) = match (truth(&l), truth(&r)) {
                (Err(e), _) | (_, Err(e)) => return e,
                (Ok(a), Ok(b)) => (a, b),
            };
            // the dominant value decides regardless of undefined
            let dominant = op == BinaryOp::Or;
            if a == Some(dominant) || b == Some(dominant) {
                Value::Boolean(dominant)
            } else if a.is_none() || b.is_none() {
                Value::Undefined
            } else {
                Value::Boolean(!dominant)
            }
        }
        _ => compare(op, &l, &r),
    }
}

fn compare(op: BinaryOp, l: &Value, r: &Value) -> Value {
    if l.is_error() {
        return l.clone();
    }
    if r.is_error() {
        return r.clone();
    }
    if l.is_undefined() || r.is_undefined() {
        return Value::Undefined;
    }
    let ordering = match (l, r) {
        (Value::Integer(a), Value::Integer(b)) => Some(a.cmp(b)),
        (Value::Integer(_) | Value::Real(_), Value::Integer(_) | Value::Real(_)) => {
            match l.as_f64().unwrap().partial_cmp(&r.as_f64().unwrap()) {
                Some(o) => Some(o),
                None => return Value::error("comparison with NaN"),
            }
        }
        (Value::String(a), Value::String(b)) => Some(a.cmp(b)),
        (Value::Boolean(a), Value::Boolean(b)) => match op {
            BinaryOp::Eq | BinaryOp::Ne => Some(a.cmp(b)),
            _ => None,
        },
        _ => None,
    };
    let Some(ord) = ordering else {
        return Value::error(format!(
            "cannot compare {} {} {}",
            l.type_name(),
            op.symbol(),
            r.type_name()
        ));
    };
    let result = match op {
        BinaryOp::Eq => ord == Ordering::Equal,
        BinaryOp::Ne => ord != Ordering::Equal,
        BinaryOp::Lt => ord == Ordering::Less,
        BinaryOp::Le => ord != Ordering::Greater,
        BinaryOp::Gt => ord == Ordering::Greater,
        BinaryOp::Ge => ord != Ordering::Less,
        _ => unreachable!("non-comparison operator {op:?}"),
    };
    Value::Boolean(result)
}

fn call_builtin(func: Builtin, args: &[Value]) -> Value {
    match func {
        Builtin::IsUndefined => Value::Boolean(args[0].is_undefined()),
        Builtin::StringListMember => {
            let delims = args.get(2).cloned().unwrap_or_else(|| Value::from(""));
            string_list_member(&args[0], &args[1], &delims)
        }
    }
}

/// Delimiters used when the caller passes an empty delimiter string.
pub const DEFAULT_LIST_DELIMITERS: &str = ", ";

/// `stringListMember(member, list, delims)`.
///
/// Splits `list` on any character of `delims` (empty means comma and
/// space), trims each element and compares case-sensitively. Empty
/// elements are never members.
pub fn string_list_member(member: &Value, list: &Value, delims: &Value) -> Value {
    for v in [member, list, delims] {
        if v.is_error() {
            return v.clone();
        }
    }
    if member.is_undefined() || list.is_undefined() || delims.is_undefined() {
        return Value::Undefined;
    }
    let (Some(member), Some(list), Some(delims)) =
        (member.as_str(), list.as_str(), delims.as_str())
    else {
        return Value::error("stringListMember expects string arguments");
    };
    let delims = if delims.is_empty() {
        DEFAULT_LIST_DELIMITERS
    } else {
        delims
    };
    let found = list
        .split(|c| delims.contains(c))
        .map(str::trim)
        .any(|item| !item.is_empty() && item == member);
    Value::Boolean(found)
}

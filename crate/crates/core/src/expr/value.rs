use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;

/// A ClassAd value.
///
/// Equality (and hashing) is strict identity, the same relation the `is`
/// operator uses: `1` and `1.0` are different values, `undefined` equals
/// `undefined`, and any two `error` values are equal regardless of their
/// diagnostic.
#[derive(Debug, Clone)]
pub enum Value {
    Integer(i64),
    Real(f64),
    String(String),
    Boolean(bool),
    Undefined,
    Error(Option<String>),
}

impl Value {
    pub fn error(msg: impl Into<String>) -> Self {
        Value::Error(Some(msg.into()))
    }

    pub fn is_undefined(&self) -> bool {
        matches!(self, Value::Undefined)
    }

    pub fn is_error(&self) -> bool {
        matches!(self, Value::Error(_))
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Boolean(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::String(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Integer(i) => Some(*i),
            _ => None,
        }
    }

    /// Numeric view with integer-to-real promotion.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Integer(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Integer(_) => "integer",
            Value::Real(_) => "real",
            Value::String(_) => "string",
            Value::Boolean(_) => "boolean",
            Value::Undefined => "undefined",
            Value::Error(_) => "error",
        }
    }

    /// Human-facing form: like the literal rendering, except errors carry
    /// their diagnostic as `error(<msg>)`.
    pub fn describe(&self) -> String {
        match self {
            Value::Error(Some(msg)) => format!("error({msg})"),
            Value::Error(None) => "error()".to_string(),
            other => other.to_string(),
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Integer(a), Value::Integer(b)) => a == b,
            (Value::Real(a), Value::Real(b)) => a.to_bits() == b.to_bits(),
            (Value::String(a), Value::String(b)) => a == b,
            (Value::Boolean(a), Value::Boolean(b)) => a == b,
            (Value::Undefined, Value::Undefined) => true,
            (Value::Error(_), Value::Error(_)) => true,
            _ => false,
        }
    }
}

impl Eq for Value {}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        std::mem::discriminant(self).hash(state);
        match self {
            Value::Integer(i) => i.hash(state),
            Value::Real(r) => r.to_bits().hash(state),
            Value::String(s) => s.hash(state),
            Value::Boolean(b) => b.hash(state),
            Value::Undefined | Value::Error(_) => {}
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Integer(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Real(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Boolean(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::String(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::String(v)
    }
}

pub(crate) fn render_real(r: f64) -> String {
    if r.is_nan() || r.is_infinite() {
        // not representable as a literal
        return "error".to_string();
    }
    let s = format!("{r:?}");
    if s.contains(['.', 'e', 'E']) {
        s
    } else {
        format!("{s}.0")
    }
}

pub(crate) fn render_string(s: &str, out: &mut impl fmt::Write) -> fmt::Result {
    out.write_char('"')?;
    for c in s.chars() {
        match c {
            '"' => out.write_str("\\\"")?,
            '\\' => out.write_str("\\\\")?,
            '\n' => out.write_str("\\n")?,
            '\t' => out.write_str("\\t")?,
            '\r' => out.write_str("\\r")?,
            c => out.write_char(c)?,
        }
    }
    out.write_char('"')
}

/// Renders the value as an expression literal.
impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Integer(i) => write!(f, "{i}"),
            Value::Real(r) => f.write_str(&render_real(*r)),
            Value::String(s) => render_string(s, f),
            Value::Boolean(true) => f.write_str("true"),
            Value::Boolean(false) => f.write_str("false"),
            Value::Undefined => f.write_str("undefined"),
            Value::Error(_) => f.write_str("error"),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Integer(i) => serializer.serialize_i64(*i),
            Value::Real(r) => serializer.serialize_f64(*r),
            Value::String(s) => serializer.serialize_str(s),
            Value::Boolean(b) => serializer.serialize_bool(*b),
            Value::Undefined => serializer.serialize_none(),
            Value::Error(msg) => {
                let mut map = serializer.serialize_map(Some(1))?;
                map.serialize_entry("error", msg)?;
                map.end()
            }
        }
    }
}

/// Anything attributes can be looked up in during evaluation.
pub trait AttrLookup {
    /// Case-insensitive lookup; absent names yield `Value::Undefined`.
    fn lookup(&self, name: &str) -> Value;
}

/// Attribute name to value mapping with case-insensitive names.
///
/// The first spelling of a name seen by `insert` is kept for display.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AttrBag {
    entries: BTreeMap<String, (String, Value)>,
}

impl AttrBag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: impl Into<Value>) -> Option<Value> {
        let name = name.into();
        let folded = name.to_ascii_lowercase();
        match self.entries.get_mut(&folded) {
            Some(slot) => Some(std::mem::replace(&mut slot.1, value.into())),
            None => {
                self.entries.insert(folded, (name, value.into()));
                None
            }
        }
    }

    pub fn with(mut self, name: impl Into<String>, value: impl Into<Value>) -> Self {
        self.insert(name, value);
        self
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.entries.get(&name.to_ascii_lowercase()).map(|(_, v)| v)
    }

    pub fn remove(&mut self, name: &str) -> Option<Value> {
        self.entries
            .remove(&name.to_ascii_lowercase())
            .map(|(_, v)| v)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(&name.to_ascii_lowercase())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in case-folded name order, with their original spelling.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.entries.values().map(|(n, v)| (n.as_str(), v))
    }

    pub fn extend(&mut self, other: &AttrBag) {
        for (name, value) in other.iter() {
            self.insert(name, value.clone());
        }
    }
}

impl AttrLookup for AttrBag {
    fn lookup(&self, name: &str) -> Value {
        self.get(name).cloned().unwrap_or(Value::Undefined)
    }
}

impl<A: AttrLookup + ?Sized> AttrLookup for &A {
    fn lookup(&self, name: &str) -> Value {
        (**self).lookup(name)
    }
}

/// Layers a few extra attributes over a base bag; the overlay wins.
pub struct Overlay<'a> {
    pub base: &'a AttrBag,
    pub extra: &'a [(&'a str, Value)],
}

impl AttrLookup for Overlay<'_> {
    fn lookup(&self, name: &str) -> Value {
        self.extra
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.clone())
            .unwrap_or_else(|| self.base.lookup(name))
    }
}

impl<N: Into<String>, V: Into<Value>> FromIterator<(N, V)> for AttrBag {
    fn from_iter<I: IntoIterator<Item = (N, V)>>(iter: I) -> Self {
        let mut bag = AttrBag::new();
        for (n, v) in iter {
            bag.insert(n, v);
        }
        bag
    }
}

impl Serialize for AttrBag {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.len()))?;
        for (name, value) in self.iter() {
            map.serialize_entry(name, value)?;
        }
        map.end()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_is_case_insensitive() {
        let bag = AttrBag::new().with("DESIRED_Sites", "SDSC-PRP");
        assert_eq!(bag.lookup("desired_sites"), Value::from("SDSC-PRP"));
        assert_eq!(bag.lookup("DESIRED_SITES"), Value::from("SDSC-PRP"));
        assert_eq!(bag.lookup("Missing"), Value::Undefined);
    }

    #[test]
    fn insert_keeps_first_spelling() {
        let mut bag = AttrBag::new();
        bag.insert("RequestCpus", 1);
        assert_eq!(bag.insert("REQUESTCPUS", 2), Some(Value::Integer(1)));
        assert_eq!(bag.len(), 1);
        assert_eq!(bag.iter().next().unwrap().0, "RequestCpus");
    }

    #[test]
    fn identity_equality() {
        assert_ne!(Value::Integer(1), Value::Real(1.0));
        assert_eq!(Value::Undefined, Value::Undefined);
        assert_eq!(Value::error("a"), Value::Error(None));
        assert_eq!(Value::Real(f64::NAN), Value::Real(f64::NAN));
    }

    #[test]
    fn real_rendering_keeps_the_point() {
        assert_eq!(Value::Real(3.0).to_string(), "3.0");
        assert_eq!(Value::Real(0.25).to_string(), "0.25");
        assert_eq!(Value::from("a\"b").to_string(), "\"a\\\"b\"");
    }
}

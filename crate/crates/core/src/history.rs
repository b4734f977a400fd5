//! Values, call/return actions, and histories.
//!
//! Every checker in the crate consumes a [`History`]: a sequence of call and
//! return actions tagged with invocation ids. The text form is one action per
//! line, `CALL <inv-id> <method> <arg>` or `RET <inv-id> <value>`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Argument, return, and abstract-state values.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    /// The unit value; printed as `ok`.
    Unit,
    Int(i64),
    /// No decision (safe agreement's resolve) or an unset register.
    Bottom,
    List(Vec<Value>),
    /// A bare identifier such as `pong`.
    Text(String),
}

impl Value {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Unit => f.write_str("ok"),
            Value::Int(v) => write!(f, "{v}"),
            Value::Bottom => f.write_str("bot"),
            Value::Text(t) => f.write_str(t),
            Value::List(items) => {
                f.write_str("[")?;
                for (idx, item) in items.iter().enumerate() {
                    if idx > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str("]")
            }
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("cannot parse value `{0}`")]
pub struct ParseValueError(pub String);

impl FromStr for Value {
    type Err = ParseValueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "" | "ok" | "-" | "_" | "()" => return Ok(Value::Unit),
            "bot" | "⊥" => return Ok(Value::Bottom),
            _ => {}
        }
        if let Some(inner) = s.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            return split_top_level(inner)
                .into_iter()
                .filter(|part| !part.trim().is_empty())
                .map(|part| part.parse())
                .collect::<Result<Vec<_>, _>>()
                .map(Value::List);
        }
        if let Ok(v) = s.parse::<i64>() {
            return Ok(Value::Int(v));
        }
        let mut chars = s.chars();
        if chars.next().is_some_and(|c| c.is_ascii_alphabetic())
            && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        {
            return Ok(Value::Text(s.to_string()));
        }
        Err(ParseValueError(s.to_string()))
    }
}

fn split_top_level(s: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    for (idx, ch) in s.char_indices() {
        match ch {
            '[' => depth += 1,
            ']' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                parts.push(&s[start..idx]);
                start = idx + 1;
            }
            _ => {}
        }
    }
    parts.push(&s[start..]);
    parts
}

/// Method names understood by the built-in objects.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Write,
    Read,
    WriteMax,
    ReadMax,
    Increment,
    Update,
    Scan,
    Propose,
    Resolve,
    Ping,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Write => "write",
            Method::Read => "read",
            Method::WriteMax => "writeMax",
            Method::ReadMax => "readMax",
            Method::Increment => "increment",
            Method::Update => "update",
            Method::Scan => "scan",
            Method::Propose => "propose",
            Method::Resolve => "resolve",
            Method::Ping => "ping",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown method `{0}`")]
pub struct ParseMethodError(pub String);

impl FromStr for Method {
    type Err = ParseMethodError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "write" | "w" => Method::Write,
            "read" | "r" => Method::Read,
            "writeMax" | "writemax" => Method::WriteMax,
            "readMax" | "readmax" => Method::ReadMax,
            "increment" | "inc" => Method::Increment,
            "update" => Method::Update,
            "scan" => Method::Scan,
            "propose" => Method::Propose,
            "resolve" => Method::Resolve,
            "ping" => Method::Ping,
            other => return Err(ParseMethodError(other.to_string())),
        })
    }
}

/// Invocation identifier shared by a call and its matching return.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InvId(pub u64);

impl fmt::Display for InvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A method name with its argument, not yet bound to an invocation id.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Invocation {
    pub method: Method,
    pub arg: Value,
}

impl Invocation {
    pub fn new(method: Method, arg: impl Into<Value>) -> Self {
        Self {
            method,
            arg: arg.into(),
        }
    }

    pub fn nullary(method: Method) -> Self {
        Self {
            method,
            arg: Value::Unit,
        }
    }
}

impl fmt::Display for Invocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.arg {
            Value::Unit => write!(f, "{}()", self.method),
            arg => write!(f, "{}({arg})", self.method),
        }
    }
}

impl FromStr for Invocation {
    type Err = ParseHistoryError;

    /// Parses `write(5)`, `read()`, `w(5)` or a bare `read`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (name, arg) = match s.find('(') {
            Some(open) => {
                let close = s
                    .rfind(')')
                    .ok_or_else(|| ParseHistoryError::new(0, format!("unbalanced `{s}`")))?;
                (&s[..open], &s[open + 1..close])
            }
            None => (s, ""),
        };
        let method = name
            .parse::<Method>()
            .map_err(|e| ParseHistoryError::new(0, e.to_string()))?;
        let arg = arg
            .parse::<Value>()
            .map_err(|e| ParseHistoryError::new(0, e.to_string()))?;
        Ok(Invocation { method, arg })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Call {
        inv: InvId,
        method: Method,
        arg: Value,
    },
    Return {
        inv: InvId,
        value: Value,
    },
}

impl Action {
    pub fn call(inv: InvId, invocation: &Invocation) -> Self {
        Action::Call {
            inv,
            method: invocation.method,
            arg: invocation.arg.clone(),
        }
    }

    pub fn inv(&self) -> InvId {
        match self {
            Action::Call { inv, .. } | Action::Return { inv, .. } => *inv,
        }
    }

    pub fn is_call(&self) -> bool {
        matches!(self, Action::Call { .. })
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Call {
                inv,
                method,
                arg: Value::Unit,
            } => write!(f, "CALL {inv} {method}"),
            Action::Call { inv, method, arg } => write!(f, "CALL {inv} {method} {arg}"),
            Action::Return { inv, value } => write!(f, "RET {inv} {value}"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ParseHistoryError {
    pub line: usize,
    pub message: String,
}

impl ParseHistoryError {
    pub fn new(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MalformedHistory {
    #[error("invocation {0} is called twice")]
    DuplicateCall(InvId),
    #[error("invocation {0} returns without a preceding call")]
    ReturnWithoutCall(InvId),
    #[error("invocation {0} returns twice")]
    DuplicateReturn(InvId),
}

/// One invocation of a history, with the positions of its call and return.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Operation {
    pub inv: InvId,
    pub method: Method,
    pub arg: Value,
    pub call_at: usize,
    pub ret: Option<(usize, Value)>,
}

impl Operation {
    pub fn is_complete(&self) -> bool {
        self.ret.is_some()
    }

    /// True when this operation returned before `other` was called.
    pub fn precedes(&self, other: &Operation) -> bool {
        matches!(self.ret, Some((at, _)) if at < other.call_at)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct History(Vec<Action>);

impl History {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn from_actions(actions: Vec<Action>) -> Self {
        Self(actions)
    }

    pub fn push(&mut self, action: Action) {
        self.0.push(action);
    }

    pub fn actions(&self) -> &[Action] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains_return(&self, inv: InvId) -> bool {
        self.0
            .iter()
            .any(|a| matches!(a, Action::Return { inv: i, .. } if *i == inv))
    }

    /// Every call is immediately followed by its matching return.
    pub fn is_sequential(&self) -> bool {
        self.0.len() % 2 == 0
            && self.0.chunks(2).all(|pair| match pair {
                [Action::Call { inv: a, .. }, Action::Return { inv: b, .. }] => a == b,
                _ => false,
            })
    }

    /// Groups the history into operations, checking that ids are used once
    /// and that every return follows its call.
    pub fn operations(&self) -> Result<Vec<Operation>, MalformedHistory> {
        let mut ops: Vec<Operation> = Vec::new();
        let mut index: BTreeMap<InvId, usize> = BTreeMap::new();
        for (pos, action) in self.0.iter().enumerate() {
            match action {
                Action::Call { inv, method, arg } => {
                    if index.insert(*inv, ops.len()).is_some() {
                        return Err(MalformedHistory::DuplicateCall(*inv));
                    }
                    ops.push(Operation {
                        inv: *inv,
                        method: *method,
                        arg: arg.clone(),
                        call_at: pos,
                        ret: None,
                    });
                }
                Action::Return { inv, value } => {
                    let idx = *index
                        .get(inv)
                        .ok_or(MalformedHistory::ReturnWithoutCall(*inv))?;
                    let op = &mut ops[idx];
                    if op.ret.is_some() {
                        return Err(MalformedHistory::DuplicateReturn(*inv));
                    }
                    op.ret = Some((pos, value.clone()));
                }
            }
        }
        Ok(ops)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for action in &self.0 {
            out.push_str(&action.to_string());
            out.push('\n');
        }
        out
    }

    /// Parses the line format; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, ParseHistoryError> {
        let mut actions = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parse_inv = |tok: &str| {
                tok.parse::<u64>()
                    .map(InvId)
                    .map_err(|_| ParseHistoryError::new(line_no, format!("bad invocation id `{tok}`")))
            };
            let parse_value = |tok: &str| {
                tok.parse::<Value>()
                    .map_err(|e| ParseHistoryError::new(line_no, e.to_string()))
            };
            let action = match fields.as_slice() {
                ["CALL", inv, method, arg] => Action::Call {
                    inv: parse_inv(inv)?,
                    method: method
                        .parse()
                        .map_err(|e: ParseMethodError| ParseHistoryError::new(line_no, e.to_string()))?,
                    arg: parse_value(arg)?,
                },
                ["CALL", inv, method] => Action::Call {
                    inv: parse_inv(inv)?,
                    method: method
                        .parse()
                        .map_err(|e: ParseMethodError| ParseHistoryError::new(line_no, e.to_string()))?,
                    arg: Value::Unit,
                },
                ["RET", inv, value] => Action::Return {
                    inv: parse_inv(inv)?,
                    value: parse_value(value)?,
                },
                _ => {
                    return Err(ParseHistoryError::new(
                        line_no,
                        format!("expected `CALL <id> <method> <arg>` or `RET <id> <value>`, got `{line}`"),
                    ))
                }
            };
            actions.push(action);
        }
        Ok(History(actions))
    }
}

impl FromIterator<Action> for History {
    fn from_iter<T: IntoIterator<Item = Action>>(iter: T) -> Self {
        History(iter.into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_text_forms() {
        for text in ["ok", "7", "-3", "bot", "[1,2,[3]]", "pong"] {
            let v: Value = text.parse().unwrap();
            assert_eq!(v.to_string(), text);
        }
        assert_eq!("-".parse::<Value>().unwrap(), Value::Unit);
        assert!("7x!".parse::<Value>().is_err());
    }

    #[test]
    fn invocation_shorthand() {
        let w: Invocation = "w(5)".parse().unwrap();
        assert_eq!(w, Invocation::new(Method::Write, 5));
        let r: Invocation = "r()".parse().unwrap();
        assert_eq!(r, Invocation::nullary(Method::Read));
        assert_eq!(w.to_string(), "write(5)");
    }

    #[test]
    fn parse_and_print_history() {
        let text = "CALL 0 write 1\nCALL 1 read\nRET 0 ok\nRET 1 1\n";
        let h = History::parse(text).unwrap();
        assert_eq!(h.len(), 4);
        assert_eq!(h.to_text(), text);
        let ops = h.operations().unwrap();
        assert!(!ops[0].precedes(&ops[1]));
    }

    #[test]
    fn malformed_histories_are_rejected() {
        let h = History::parse("RET 3 1").unwrap();
        assert_eq!(
            h.operations(),
            Err(MalformedHistory::ReturnWithoutCall(InvId(3)))
        );
        let h = History::parse("CALL 1 read\nCALL 1 read").unwrap();
        assert_eq!(h.operations(), Err(MalformedHistory::DuplicateCall(InvId(1))));
        let err = History::parse("CALL 1 read\nRETURN 1 0").unwrap_err();
        assert_eq!(err.line, 2);
    }

    #[test]
    fn sequential_detection() {
        let h = History::parse("CALL 0 write 1\nRET 0 ok\nCALL 1 read\nRET 1 1").unwrap();
        assert!(h.is_sequential());
        let h = History::parse("CALL 0 write 1\nCALL 1 read\nRET 0 ok\nRET 1 1").unwrap();
        assert!(!h.is_sequential());
    }
}

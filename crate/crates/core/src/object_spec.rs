//! Sequential specifications, the linearization relation between histories,
//! and the atomic object built from a sequential specification.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::explore::Model;

use crate::history::{Action, History, InvId, Invocation, MalformedHistory, Method, Value};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SpecKind {
    MwRegister { init: i64 },
    MaxRegister { init: i64 },
    Counter,
    Snapshot { width: usize, init: i64 },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SpecError {
    #[error("{spec} has no method `{method}`")]
    UnsupportedMethod { spec: String, method: Method },
    #[error("{spec}: bad argument `{arg}` for `{method}`")]
    BadArgument {
        spec: String,
        method: Method,
        arg: Value,
    },
    #[error("invocation {inv} returned {actual}, specification gives {expected}")]
    ReturnMismatch {
        inv: InvId,
        expected: Value,
        actual: Value,
    },
    #[error("history is not sequential")]
    NotSequential,
}

/// A deterministic sequential specification.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SeqSpec {
    kind: SpecKind,
}

/// Builds one of the standard sequential specifications.
pub fn make_spec(kind: SpecKind) -> SeqSpec {
    SeqSpec { kind }
}

impl SeqSpec {
    pub fn mw_register(init: i64) -> Self {
        make_spec(SpecKind::MwRegister { init })
    }

    pub fn max_register(init: i64) -> Self {
        make_spec(SpecKind::MaxRegister { init })
    }

    pub fn counter() -> Self {
        make_spec(SpecKind::Counter)
    }

    pub fn snapshot(width: usize, init: i64) -> Self {
        make_spec(SpecKind::Snapshot { width, init })
    }

    pub fn kind(&self) -> &SpecKind {
        &self.kind
    }

    pub fn name(&self) -> String {
        match &self.kind {
            SpecKind::MwRegister { init } => format!("mw_register({init})"),
            SpecKind::MaxRegister { init } => format!("max_register({init})"),
            SpecKind::Counter => "counter".to_string(),
            SpecKind::Snapshot { width, init } => format!("snapshot({width},{init})"),
        }
    }

    pub fn initial(&self) -> Value {
        match &self.kind {
            SpecKind::MwRegister { init } | SpecKind::MaxRegister { init } => Value::Int(*init),
            SpecKind::Counter => Value::Int(0),
            SpecKind::Snapshot { width, init } => Value::List(vec![Value::Int(*init); *width]),
        }
    }

    /// Methods of the object, used by history enumerators.
    pub fn methods(&self) -> &'static [Method] {
        match &self.kind {
            SpecKind::MwRegister { .. } => &[Method::Write, Method::Read],
            SpecKind::MaxRegister { .. } => &[Method::WriteMax, Method::ReadMax],
            SpecKind::Counter => &[Method::Increment, Method::Read],
            SpecKind::Snapshot { .. } => &[Method::Update, Method::Scan],
        }
    }

    /// Applies one method to an abstract value: `(return value, next value)`.
    pub fn apply(&self, state: &Value, method: Method, arg: &Value) -> Result<(Value, Value), SpecError> {
        let unsupported = || SpecError::UnsupportedMethod {
            spec: self.name(),
            method,
        };
        let bad_arg = || SpecError::BadArgument {
            spec: self.name(),
            method,
            arg: arg.clone(),
        };
        match (&self.kind, method) {
            (SpecKind::MwRegister { .. }, Method::Write) => {
                let v = arg.as_int().ok_or_else(bad_arg)?;
                Ok((Value::Unit, Value::Int(v)))
            }
            (SpecKind::MwRegister { .. }, Method::Read) => Ok((state.clone(), state.clone())),
            (SpecKind::MaxRegister { .. }, Method::WriteMax) => {
                let v = arg.as_int().ok_or_else(bad_arg)?;
                let cur = state.as_int().ok_or_else(bad_arg)?;
                Ok((Value::Unit, Value::Int(cur.max(v))))
            }
            (SpecKind::MaxRegister { .. }, Method::ReadMax) => Ok((state.clone(), state.clone())),
            (SpecKind::Counter, Method::Increment) => {
                let cur = state.as_int().ok_or_else(bad_arg)?;
                Ok((Value::Unit, Value::Int(cur + 1)))
            }
            (SpecKind::Counter, Method::Read) => Ok((state.clone(), state.clone())),
            (SpecKind::Snapshot { width, .. }, Method::Update) => {
                let (idx, v) = match arg {
                    Value::List(items) => match items.as_slice() {
                        [Value::Int(i), v @ Value::Int(_)] if (*i as usize) < *width && *i >= 0 => {
                            (*i as usize, v.clone())
                        }
                        _ => return Err(bad_arg()),
                    },
                    _ => return Err(bad_arg()),
                };
                let mut next = match state {
                    Value::List(items) => items.clone(),
                    _ => return Err(bad_arg()),
                };
                next[idx] = v;
                Ok((Value::Unit, Value::List(next)))
            }
            (SpecKind::Snapshot { .. }, Method::Scan) => Ok((state.clone(), state.clone())),
            _ => Err(unsupported()),
        }
    }

    /// Replays a sequential history, checking every return value.
    pub fn replay(&self, seq: &History) -> Result<Value, SpecError> {
        if !seq.is_sequential() {
            return Err(SpecError::NotSequential);
        }
        let mut state = self.initial();
        for pair in seq.actions().chunks(2) {
            if let [Action::Call { inv, method, arg }, Action::Return { value, .. }] = pair {
                let (ret, next) = self.apply(&state, *method, arg)?;
                if &ret != value {
                    return Err(SpecError::ReturnMismatch {
                        inv: *inv,
                        expected: ret,
                        actual: value.clone(),
                    });
                }
                state = next;
            }
        }
        Ok(state)
    }

    /// Membership of a sequential history in the specification.
    pub fn accepts(&self, seq: &History) -> bool {
        self.replay(seq).is_ok()
    }
}

impl fmt::Display for SeqSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Decides whether `h2` is a linearization of `h1` that belongs to `spec`.
///
/// Pending calls of `h1` may be dropped or completed; a completed pending
/// call takes whatever value `h2` gives it, since its return is appended at
/// the end of `h1` and cannot precede any call.
pub fn is_linearization(h1: &History, h2: &History, spec: &SeqSpec) -> Result<bool, MalformedHistory> {
    let ops = h1.operations()?;
    if !h2.is_sequential() {
        return Ok(false);
    }
    let by_id: BTreeMap<InvId, usize> = ops.iter().enumerate().map(|(i, op)| (op.inv, i)).collect();
    let mut order: Vec<usize> = Vec::with_capacity(h2.len() / 2);
    let mut seen = BTreeSet::new();
    for pair in h2.actions().chunks(2) {
        let (inv, method, arg, value) = match pair {
            [Action::Call { inv, method, arg }, Action::Return { value, .. }] => (inv, method, arg, value),
            _ => return Ok(false),
        };
        let Some(&idx) = by_id.get(inv) else {
            return Ok(false);
        };
        let op = &ops[idx];
        if !seen.insert(*inv) || op.method != *method || &op.arg != arg {
            return Ok(false);
        }
        if let Some((_, ret)) = &op.ret {
            if ret != value {
                return Ok(false);
            }
        }
        order.push(idx);
    }
    if ops.iter().any(|op| op.is_complete() && !seen.contains(&op.inv)) {
        return Ok(false);
    }
    for (later_pos, &later) in order.iter().enumerate() {
        for &earlier in &order[..later_pos] {
            if ops[later].precedes(&ops[earlier]) {
                return Ok(false);
            }
        }
    }
    Ok(spec.accepts(h2))
}

/// State of the atomic object: the history so far and its linearization.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AtomicObjectState {
    pub h: History,
    pub hs: History,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AtomicLabel {
    Act(Action),
    Lin(InvId),
}

impl fmt::Display for AtomicLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AtomicLabel::Act(a) => write!(f, "{a}"),
            AtomicLabel::Lin(k) => write!(f, "lin({k})"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IllegalAtomicStep {
    #[error("call: invocation {0} was already called")]
    CallReused(InvId),
    #[error("return: invocation {0} does not occur in the linearization")]
    ReturnNotLinearized(InvId),
    #[error("return: invocation {inv} returns {actual} but was linearized with {expected}")]
    ReturnMismatch {
        inv: InvId,
        expected: Value,
        actual: Value,
    },
    #[error("return: invocation {0} already returned")]
    ReturnTwice(InvId),
    #[error("lin: invocation {0} has not been called")]
    LinNotCalled(InvId),
    #[error("lin: invocation {0} is already linearized")]
    LinTwice(InvId),
    #[error("lin: {0}")]
    Spec(SpecError),
}

impl AtomicObjectState {
    pub fn new() -> Self {
        Self::default()
    }

    fn call_of(&self, k: InvId) -> Option<Invocation> {
        self.h.actions().iter().find_map(|a| match a {
            Action::Call { inv, method, arg } if *inv == k => Some(Invocation {
                method: *method,
                arg: arg.clone(),
            }),
            _ => None,
        })
    }

    fn linearized_return(&self, k: InvId) -> Option<&Value> {
        self.hs.actions().iter().find_map(|a| match a {
            Action::Return { inv, value } if *inv == k => Some(value),
            _ => None,
        })
    }

    pub fn is_linearized(&self, k: InvId) -> bool {
        self.linearized_return(k).is_some()
    }
}

/// One transition of the atomic object.
pub fn atomic_step(
    spec: &SeqSpec,
    s: &AtomicObjectState,
    label: &AtomicLabel,
) -> Result<AtomicObjectState, IllegalAtomicStep> {
    let mut next = s.clone();
    match label {
        AtomicLabel::Act(action @ Action::Call { inv, .. }) => {
            if s.call_of(*inv).is_some() {
                return Err(IllegalAtomicStep::CallReused(*inv));
            }
            next.h.push(action.clone());
        }
        AtomicLabel::Act(action @ Action::Return { inv, value }) => {
            if s.h.contains_return(*inv) {
                return Err(IllegalAtomicStep::ReturnTwice(*inv));
            }
            let expected = s
                .linearized_return(*inv)
                .ok_or(IllegalAtomicStep::ReturnNotLinearized(*inv))?;
            if expected != value {
                return Err(IllegalAtomicStep::ReturnMismatch {
                    inv: *inv,
                    expected: expected.clone(),
                    actual: value.clone(),
                });
            }
            next.h.push(action.clone());
        }
        AtomicLabel::Lin(k) => {
            let call = s.call_of(*k).ok_or(IllegalAtomicStep::LinNotCalled(*k))?;
            if s.is_linearized(*k) {
                return Err(IllegalAtomicStep::LinTwice(*k));
            }
            let current = spec.replay(&s.hs).map_err(IllegalAtomicStep::Spec)?;
            let (ret, _) = spec
                .apply(&current, call.method, &call.arg)
                .map_err(IllegalAtomicStep::Spec)?;
            next.hs.push(Action::call(*k, &call));
            next.hs.push(Action::Return { inv: *k, value: ret });
        }
    }
    Ok(next)
}

/// Step of the atomic object driven by per-client scripts. Steps carry
/// their actions so trees and LTSs can be labeled from the step alone.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum AtomicStep {
    Call { client: usize, inv: InvId, invocation: Invocation },
    Ret { client: usize, inv: InvId, value: Value },
    Lin { client: usize, inv: InvId },
}

impl AtomicStep {
    pub fn label(&self) -> AtomicLabel {
        match self {
            AtomicStep::Call { inv, invocation, .. } => AtomicLabel::Act(Action::call(*inv, invocation)),
            AtomicStep::Ret { inv, value, .. } => AtomicLabel::Act(Action::Return {
                inv: *inv,
                value: value.clone(),
            }),
            AtomicStep::Lin { inv, .. } => AtomicLabel::Lin(*inv),
        }
    }

    /// The call or return action, if the step has one.
    pub fn action(&self) -> Option<Action> {
        match self.label() {
            AtomicLabel::Act(a) => Some(a),
            AtomicLabel::Lin(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AtomicModelState {
    pub obj: AtomicObjectState,
    pub cursor: Vec<usize>,
    pub current: Vec<Option<InvId>>,
    pub next_inv: u64,
}

/// `O(Seq)` where client `i` issues `scripts[i]` in order, one at a time.
#[derive(Clone, Debug)]
pub struct AtomicModel {
    pub spec: SeqSpec,
    pub scripts: Vec<Vec<Invocation>>,
}

impl AtomicModel {
    pub fn new(spec: SeqSpec, scripts: Vec<Vec<Invocation>>) -> Self {
        Self { spec, scripts }
    }
}

impl Model for AtomicModel {
    type State = AtomicModelState;
    type Step = AtomicStep;

    fn initial(&self) -> AtomicModelState {
        AtomicModelState {
            obj: AtomicObjectState::new(),
            cursor: vec![0; self.scripts.len()],
            current: vec![None; self.scripts.len()],
            next_inv: 0,
        }
    }

    fn steps(&self, s: &AtomicModelState) -> Vec<AtomicStep> {
        let mut steps = Vec::new();
        for (client, script) in self.scripts.iter().enumerate() {
            match s.current[client] {
                None => {
                    if let Some(invocation) = script.get(s.cursor[client]) {
                        steps.push(AtomicStep::Call {
                            client,
                            inv: InvId(s.next_inv),
                            invocation: invocation.clone(),
                        });
                    }
                }
                Some(inv) => match s.obj.linearized_return(inv) {
                    Some(value) => steps.push(AtomicStep::Ret {
                        client,
                        inv,
                        value: value.clone(),
                    }),
                    None => steps.push(AtomicStep::Lin { client, inv }),
                },
            }
        }
        steps
    }

    fn next(&self, s: &AtomicModelState, step: &AtomicStep) -> Option<AtomicModelState> {
        let obj = atomic_step(&self.spec, &s.obj, &step.label()).ok()?;
        let mut next = s.clone();
        next.obj = obj;
        match step {
            AtomicStep::Call { client, .. } => {
                next.current[*client] = Some(InvId(s.next_inv));
                next.cursor[*client] += 1;
                next.next_inv += 1;
            }
            AtomicStep::Ret { client, .. } => next.current[*client] = None,
            AtomicStep::Lin { .. } => {}
        }
        Some(next)
    }

    fn check(&self, s: &AtomicModelState) -> Result<(), String> {
        match is_linearization(&s.obj.h, &s.obj.hs, &self.spec) {
            Ok(true) => Ok(()),
            Ok(false) => Err("hs is not a linearization of h".into()),
            Err(e) => Err(e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist(text: &str) -> History {
        History::parse(text).unwrap()
    }

    #[test]
    fn standard_specs() {
        let reg = SeqSpec::mw_register(0);
        assert_eq!(
            reg.apply(&Value::Int(0), Method::Write, &Value::Int(7)).unwrap(),
            (Value::Unit, Value::Int(7))
        );
        assert_eq!(
            reg.apply(&Value::Int(7), Method::Read, &Value::Unit).unwrap(),
            (Value::Int(7), Value::Int(7))
        );

        let max = SeqSpec::max_register(0);
        let seq = hist("CALL 0 writeMax 3\nRET 0 ok\nCALL 1 writeMax 1\nRET 1 ok\nCALL 2 readMax\nRET 2 3");
        assert_eq!(max.replay(&seq).unwrap(), Value::Int(3));

        let counter = SeqSpec::counter();
        let seq = hist(
            "CALL 0 increment\nRET 0 ok\nCALL 1 increment\nRET 1 ok\nCALL 2 increment\nRET 2 ok\nCALL 3 read\nRET 3 3",
        );
        assert!(counter.accepts(&seq));

        let snap = SeqSpec::snapshot(2, 0);
        let seq = hist("CALL 0 update [1,5]\nRET 0 ok\nCALL 1 scan\nRET 1 [0,5]");
        assert!(snap.accepts(&seq));
        assert!(matches!(
            snap.apply(&snap.initial(), Method::Update, &Value::Int(1)),
            Err(SpecError::BadArgument { .. })
        ));
        assert!(matches!(
            counter.apply(&Value::Int(0), Method::Write, &Value::Int(1)),
            Err(SpecError::UnsupportedMethod { .. })
        ));
    }

    #[test]
    fn linearization_examples() {
        let reg = SeqSpec::mw_register(0);
        assert!(is_linearization(&History::new(), &History::new(), &reg).unwrap());

        let h1 = hist("CALL 0 write 1\nCALL 1 read\nRET 0 ok\nRET 1 1");
        let h2 = hist("CALL 0 write 1\nRET 0 ok\nCALL 1 read\nRET 1 1");
        assert!(is_linearization(&h1, &h2, &reg).unwrap());
        let wrong_order = hist("CALL 1 read\nRET 1 1\nCALL 0 write 1\nRET 0 ok");
        assert!(!is_linearization(&h1, &wrong_order, &reg).unwrap());

        // a read of 1 with no write has no linearization at all
        let h1 = hist("CALL 1 read\nRET 1 1");
        for cand in [
            History::new(),
            hist("CALL 1 read\nRET 1 1"),
            hist("CALL 1 read\nRET 1 0"),
        ] {
            assert!(!is_linearization(&h1, &cand, &reg).unwrap());
        }
    }

    #[test]
    fn pending_calls_may_be_completed_or_dropped() {
        let reg = SeqSpec::mw_register(0);
        let h1 = hist("CALL 0 write 1\nCALL 1 read\nRET 1 1");
        let with_write = hist("CALL 0 write 1\nRET 0 ok\nCALL 1 read\nRET 1 1");
        assert!(is_linearization(&h1, &with_write, &reg).unwrap());
        let h1 = hist("CALL 0 write 1\nCALL 1 read\nRET 1 0");
        assert!(is_linearization(&h1, &hist("CALL 1 read\nRET 1 0"), &reg).unwrap());
    }

    #[test]
    fn real_time_order_is_preserved() {
        let reg = SeqSpec::mw_register(0);
        let h1 = hist("CALL 0 write 1\nRET 0 ok\nCALL 1 read\nRET 1 0");
        let swapped = hist("CALL 1 read\nRET 1 0\nCALL 0 write 1\nRET 0 ok");
        assert!(!is_linearization(&h1, &swapped, &reg).unwrap());
    }

    #[test]
    fn atomic_object_transitions() {
        let reg = SeqSpec::mw_register(0);
        let s0 = AtomicObjectState::new();
        let call = Action::Call {
            inv: InvId(0),
            method: Method::Write,
            arg: Value::Int(1),
        };
        let s1 = atomic_step(&reg, &s0, &AtomicLabel::Act(call.clone())).unwrap();
        assert_eq!(s1.h.actions(), &[call.clone()]);
        assert!(s1.hs.is_empty());

        let s2 = atomic_step(&reg, &s1, &AtomicLabel::Lin(InvId(0))).unwrap();
        assert_eq!(s2.hs, hist("CALL 0 write 1\nRET 0 ok"));

        let ret = Action::Return {
            inv: InvId(0),
            value: Value::Unit,
        };
        let s3 = atomic_step(&reg, &s2, &AtomicLabel::Act(ret)).unwrap();
        assert!(is_linearization(&s3.h, &s3.hs, &reg).unwrap());

        let stray = Action::Return {
            inv: InvId(9),
            value: Value::Unit,
        };
        assert_eq!(
            atomic_step(&reg, &s2, &AtomicLabel::Act(stray)),
            Err(IllegalAtomicStep::ReturnNotLinearized(InvId(9)))
        );
        assert_eq!(
            atomic_step(&reg, &s2, &AtomicLabel::Lin(InvId(0))),
            Err(IllegalAtomicStep::LinTwice(InvId(0)))
        );
        assert_eq!(
            atomic_step(&reg, &s2, &AtomicLabel::Act(call)),
            Err(IllegalAtomicStep::CallReused(InvId(0)))
        );
    }

    #[test]
    fn atomic_model_keeps_hs_a_linearization() {
        use crate::explore::{explore, ExploreConfig};
        let w = |v: i64| Invocation::new(Method::Write, v);
        let r = Invocation::nullary(Method::Read);
        let model = AtomicModel::new(
            SeqSpec::mw_register(0),
            vec![vec![w(1), r.clone()], vec![w(2), r]],
        );
        let stats = explore(&model, &ExploreConfig::new(12));
        assert!(stats.ok(), "{:?}", stats.violation);
        assert!(stats.exhaustive());
        assert!(stats.terminals > 0);
    }
}

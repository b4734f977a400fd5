//! Linearizability by depth-first search over linearization orders, in the
//! style of Wing and Gong with a memo on (linearized set, abstract value).

use std::collections::HashSet;

use crate::history::{Action, History, Operation, Value};
use crate::object_spec::SeqSpec;

use super::CheckError;

/// Default bound on the number of invocations in a checked history.
pub const DEFAULT_MAX_OPS: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LinVerdict {
    /// A sequential witness `hs` with `h ⊑ hs`.
    Linearizable(History),
    NotLinearizable,
}

impl LinVerdict {
    pub fn is_linearizable(&self) -> bool {
        matches!(self, LinVerdict::Linearizable(_))
    }

    pub fn witness(&self) -> Option<&History> {
        match self {
            LinVerdict::Linearizable(w) => Some(w),
            LinVerdict::NotLinearizable => None,
        }
    }
}

pub fn check_linearizable(h: &History, spec: &SeqSpec) -> Result<LinVerdict, CheckError> {
    check_linearizable_with(h, spec, DEFAULT_MAX_OPS)
}

pub fn check_linearizable_with(h: &History, spec: &SeqSpec, max_ops: usize) -> Result<LinVerdict, CheckError> {
    let ops = h.operations()?;
    let bound = max_ops.min(128);
    if ops.len() > bound {
        return Err(CheckError::BoundExceeded {
            what: "invocations",
            size: ops.len(),
            bound,
        });
    }
    let mut search = Search {
        spec,
        ops: &ops,
        required: ops
            .iter()
            .enumerate()
            .filter(|(_, op)| op.is_complete())
            .fold(0u128, |m, (i, _)| m | 1 << i),
        failed: HashSet::new(),
        order: Vec::new(),
    };
    if search.dfs(0, spec.initial()) {
        let witness = search
            .order
            .iter()
            .flat_map(|(i, ret)| {
                let op = &ops[*i];
                [
                    Action::Call {
                        inv: op.inv,
                        method: op.method,
                        arg: op.arg.clone(),
                    },
                    Action::Return {
                        inv: op.inv,
                        value: ret.clone(),
                    },
                ]
            })
            .collect();
        Ok(LinVerdict::Linearizable(witness))
    } else {
        Ok(LinVerdict::NotLinearizable)
    }
}

struct Search<'a> {
    spec: &'a SeqSpec,
    ops: &'a [Operation],
    required: u128,
    failed: HashSet<(u128, Value)>,
    order: Vec<(usize, Value)>,
}

impl Search<'_> {
    /// Op `i` may go next when no unlinearized completed op returned
    /// before it was called.
    fn is_minimal(&self, done: u128, i: usize) -> bool {
        let op = &self.ops[i];
        self.ops
            .iter()
            .enumerate()
            .all(|(j, other)| j == i || done & (1 << j) != 0 || !other.precedes(op))
    }

    fn dfs(&mut self, done: u128, value: Value) -> bool {
        if done & self.required == self.required {
            return true;
        }
        if self.failed.contains(&(done, value.clone())) {
            return false;
        }
        for i in 0..self.ops.len() {
            if done & (1 << i) != 0 || !self.is_minimal(done, i) {
                continue;
            }
            let op = &self.ops[i];
            let Ok((ret, next)) = self.spec.apply(&value, op.method, &op.arg) else {
                continue;
            };
            if op.ret.as_ref().is_some_and(|(_, r)| *r != ret) {
                continue;
            }
            self.order.push((i, ret));
            if self.dfs(done | 1 << i, next) {
                return true;
            }
            self.order.pop();
        }
        self.failed.insert((done, value));
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::object_spec::is_linearization;

    fn hist(text: &str) -> History {
        History::parse(text).unwrap()
    }

    #[test]
    fn spec_examples() {
        let reg = SeqSpec::mw_register(0);
        let empty = check_linearizable(&History::new(), &reg).unwrap();
        assert_eq!(empty, LinVerdict::Linearizable(History::new()));

        let h = hist("CALL 0 write 1\nCALL 1 read\nRET 0 ok\nRET 1 1");
        let v = check_linearizable(&h, &reg).unwrap();
        assert!(is_linearization(&h, v.witness().unwrap(), &reg).unwrap());

        let h = hist("CALL 1 read\nRET 1 1");
        assert_eq!(check_linearizable(&h, &reg).unwrap(), LinVerdict::NotLinearizable);
    }

    #[test]
    fn pending_write_can_justify_a_read() {
        let reg = SeqSpec::mw_register(0);
        let h = hist("CALL 0 write 1\nCALL 1 read\nRET 1 1");
        let v = check_linearizable(&h, &reg).unwrap();
        assert_eq!(v.witness().unwrap().len(), 4);
    }

    #[test]
    fn new_old_inversion_is_rejected() {
        let reg = SeqSpec::mw_register(0);
        let h = hist("CALL 0 write 1\nCALL 1 read\nRET 1 1\nCALL 2 read\nRET 2 0");
        assert!(!check_linearizable(&h, &reg).unwrap().is_linearizable());
    }

    #[test]
    fn bound_is_enforced() {
        let reg = SeqSpec::mw_register(0);
        let h = hist("CALL 0 write 1\nRET 0 ok\nCALL 1 write 2\nRET 1 ok");
        assert!(matches!(
            check_linearizable_with(&h, &reg, 1),
            Err(CheckError::BoundExceeded { size: 2, bound: 1, .. })
        ));
        assert!(matches!(
            check_linearizable(&hist("RET 3 ok"), &reg),
            Err(CheckError::Malformed(_))
        ));
    }
}

//! Forward simulations between finite labeled transition systems.
//!
//! `F` is a forward simulation from `A` to `B` when it relates the initial
//! states and, for every `(s1, s2) ∈ F` and transition `s1 -a-> s1'`, either
//! `a` is internal and `(s1', s2) ∈ F` (stutter), or `B` has `s2 -a'-> s2'`
//! with `(s1', s2') ∈ F`, where `a' = a` for calls and returns and `a'` is
//! internal otherwise.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::hash::Hash;

use crate::explore::Model;

use super::CheckError;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LtsLabel {
    Call(String),
    Return(String),
    Internal(String),
}

impl LtsLabel {
    pub fn is_internal(&self) -> bool {
        matches!(self, LtsLabel::Internal(_))
    }

    /// Whether a step of `B` labeled `other` can match this label of `A`.
    pub fn matched_by(&self, other: &LtsLabel) -> bool {
        match self {
            LtsLabel::Internal(_) => other.is_internal(),
            _ => self == other,
        }
    }
}

impl fmt::Display for LtsLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LtsLabel::Call(a) => write!(f, "call {a}"),
            LtsLabel::Return(a) => write!(f, "ret {a}"),
            LtsLabel::Internal(a) => write!(f, "tau {a}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExplicitLts {
    pub states: usize,
    pub initial: usize,
    pub transitions: Vec<(usize, LtsLabel, usize)>,
}

impl ExplicitLts {
    pub fn new(states: usize, initial: usize, transitions: Vec<(usize, LtsLabel, usize)>) -> Self {
        assert!(initial < states);
        assert!(transitions.iter().all(|(a, _, b)| *a < states && *b < states));
        Self {
            states,
            initial,
            transitions,
        }
    }

    pub fn successors(&self, s: usize) -> impl Iterator<Item = &(usize, LtsLabel, usize)> {
        self.transitions.iter().filter(move |(from, _, _)| *from == s)
    }

    /// States of `model` reachable within `depth` steps, merged by equality.
    pub fn from_model<M, L>(model: &M, depth: usize, max_states: usize, label: L) -> Result<Self, CheckError>
    where
        M: Model,
        M::State: Eq,
        L: Fn(&M::Step) -> LtsLabel,
    {
        let mut ids: HashMap<M::State, usize> = HashMap::new();
        let mut states = vec![model.initial()];
        ids.insert(model.initial(), 0);
        let mut dist = vec![0usize];
        let mut transitions = Vec::new();
        let mut next = 0;
        while next < states.len() {
            let s = states[next].clone();
            if dist[next] < depth {
                for step in model.steps(&s) {
                    let Some(t) = model.next(&s, &step) else { continue };
                    let id = match ids.get(&t) {
                        Some(id) => *id,
                        None => {
                            if states.len() >= max_states {
                                return Err(CheckError::BoundExceeded {
                                    what: "LTS states",
                                    size: states.len() + 1,
                                    bound: max_states,
                                });
                            }
                            ids.insert(t.clone(), states.len());
                            states.push(t);
                            dist.push(dist[next] + 1);
                            states.len() - 1
                        }
                    };
                    transitions.push((next, label(&step), id));
                }
            }
            next += 1;
        }
        Ok(Self::new(states.len(), 0, transitions))
    }
}

pub type Relation = BTreeSet<(usize, usize)>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FwdSimVerdict {
    Holds(Relation),
    Fails {
        /// `(s1, label, s1', s2)`: a transition of `A` from a related pair
        /// that `B` cannot match.
        uncovered: Option<(usize, LtsLabel, usize, usize)>,
        reason: String,
    },
}

impl FwdSimVerdict {
    pub fn holds(&self) -> bool {
        matches!(self, FwdSimVerdict::Holds(_))
    }
}

fn matchable(b: &ExplicitLts, rel: &Relation, s2: usize, label: &LtsLabel, t1: usize) -> bool {
    (label.is_internal() && rel.contains(&(t1, s2)))
        || b
            .successors(s2)
            .any(|(_, l2, t2)| label.matched_by(l2) && rel.contains(&(t1, *t2)))
}

fn first_uncovered(a: &ExplicitLts, b: &ExplicitLts, rel: &Relation) -> Option<(usize, LtsLabel, usize, usize)> {
    for &(s1, s2) in rel {
        for (_, label, t1) in a.successors(s1) {
            if !matchable(b, rel, s2, label, *t1) {
                return Some((s1, label.clone(), *t1, s2));
            }
        }
    }
    None
}

/// Checks `rel` if given; otherwise computes the greatest forward
/// simulation and checks that it relates the initial states.
pub fn check_forward_simulation(a: &ExplicitLts, b: &ExplicitLts, rel: Option<&Relation>) -> FwdSimVerdict {
    match rel {
        Some(rel) => {
            if !rel.contains(&(a.initial, b.initial)) {
                return FwdSimVerdict::Fails {
                    uncovered: None,
                    reason: "initial states are not related".into(),
                };
            }
            match first_uncovered(a, b, rel) {
                None => FwdSimVerdict::Holds(rel.clone()),
                Some(u) => FwdSimVerdict::Fails {
                    reason: format!("transition {} -{}-> {} from pair with {} is not matched", u.0, u.1, u.2, u.3),
                    uncovered: Some(u),
                },
            }
        }
        None => {
            let mut rel: Relation = (0..a.states).flat_map(|s1| (0..b.states).map(move |s2| (s1, s2))).collect();
            loop {
                let bad: Vec<(usize, usize)> = rel
                    .iter()
                    .copied()
                    .filter(|&(s1, s2)| {
                        a.successors(s1)
                            .any(|(_, label, t1)| !matchable(b, &rel, s2, label, *t1))
                    })
                    .collect();
                if bad.is_empty() {
                    break;
                }
                if bad.contains(&(a.initial, b.initial)) {
                    let u = a
                        .successors(a.initial)
                        .find(|(_, label, t1)| !matchable(b, &rel, b.initial, label, *t1))
                        .map(|(s1, l, t1)| (*s1, l.clone(), *t1, b.initial));
                    return FwdSimVerdict::Fails {
                        reason: match &u {
                            Some(u) => format!("initial transition -{}-> {} cannot be matched", u.1, u.2),
                            None => "initial states are not related".into(),
                        },
                        uncovered: u,
                    };
                }
                for p in bad {
                    rel.remove(&p);
                }
            }
            FwdSimVerdict::Holds(rel)
        }
    }
}

/// `F1 ∘ F2 = {(s1, s3) | ∃ s2. (s1, s2) ∈ F1 ∧ (s2, s3) ∈ F2}`.
pub fn compose(f1: &Relation, f2: &Relation) -> Relation {
    let mut out = Relation::new();
    for &(s1, s2) in f1 {
        for &(_, s3) in f2.range((s2, 0)..=(s2, usize::MAX)) {
            out.insert((s1, s3));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(x: &str) -> LtsLabel {
        LtsLabel::Call(x.into())
    }
    fn ret(x: &str) -> LtsLabel {
        LtsLabel::Return(x.into())
    }
    fn tau() -> LtsLabel {
        LtsLabel::Internal(String::new())
    }

    fn toy() -> ExplicitLts {
        ExplicitLts::new(3, 0, vec![(0, call("m"), 1), (1, tau(), 2), (2, ret("ok"), 0)])
    }

    #[test]
    fn identity_on_toy() {
        let rel: Relation = (0..3).map(|s| (s, s)).collect();
        assert!(check_forward_simulation(&toy(), &toy(), Some(&rel)).holds());
        assert!(check_forward_simulation(&toy(), &toy(), None).holds());
    }

    #[test]
    fn internal_step_may_stutter() {
        let a = toy();
        let b = ExplicitLts::new(2, 0, vec![(0, call("m"), 1), (1, ret("ok"), 0)]);
        let rel: Relation = [(0, 0), (1, 1), (2, 1)].into();
        assert!(check_forward_simulation(&a, &b, Some(&rel)).holds());
    }

    #[test]
    fn return_mismatch_is_reported() {
        let a = ExplicitLts::new(2, 0, vec![(0, ret("1"), 1)]);
        let b = ExplicitLts::new(2, 0, vec![(0, ret("0"), 1)]);
        let FwdSimVerdict::Fails { uncovered, .. } = check_forward_simulation(&a, &b, None) else {
            panic!()
        };
        assert_eq!(uncovered, Some((0, ret("1"), 1, 0)));
        // a call cannot stutter
        let c = ExplicitLts::new(1, 0, vec![]);
        let a = ExplicitLts::new(2, 0, vec![(0, call("m"), 1)]);
        assert!(!check_forward_simulation(&a, &c, None).holds());
    }

    #[test]
    fn composition() {
        let f1: Relation = [(0, 0), (1, 1), (2, 1)].into();
        let f2: Relation = [(0, 5), (1, 6), (1, 7)].into();
        let c = compose(&f1, &f2);
        assert_eq!(c, [(0, 5), (1, 6), (1, 7), (2, 6), (2, 7)].into());
    }
}

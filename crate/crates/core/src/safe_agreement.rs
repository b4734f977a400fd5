//! Safe agreement from single-writer registers.
//!
//! Each process proposes once, then resolves any number of times. A resolve
//! may return ⊥ only while some propose is pending. The propose code announces
//! its value and id, double-collects the ids until two collects agree, and
//! publishes the set of ids it saw. Resolve picks the smallest published set
//! and returns the proposal of its minimal id once every member of that set
//! has published a superset of it.
//!
//! The step machines in [`SaProc`] work on any [`SaMemory`], so the same code
//! runs standalone ([`SaSystem`]) and inside the BG simulation.

use std::fmt;
use std::hash::Hash;

use thiserror::Error;

use crate::history::{Action, History, Invocation, Method, Value};
use crate::sm::{RegKey, SharedMemory, SmError, SmEvent, SmSystem};

/// The three register arrays of one object, indexed by owner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SaReg {
    Val(usize),
    Id(usize),
    Set(usize),
}

impl SaReg {
    pub fn owner(self) -> usize {
        match self {
            SaReg::Val(i) | SaReg::Id(i) | SaReg::Set(i) => i,
        }
    }
}

impl fmt::Display for SaReg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SaReg::Val(i) => write!(f, "Val[{i}]"),
            SaReg::Id(i) => write!(f, "Id[{i}]"),
            SaReg::Set(i) => write!(f, "Set[{i}]"),
        }
    }
}

impl RegKey for SaReg {
    fn owner(&self) -> usize {
        SaReg::owner(*self)
    }
}

/// Register contents. `Id[i]` can only ever hold `i`, so it carries no data.
/// Sets are sorted id lists.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SaCell<V> {
    Val(V),
    Id,
    Set(Vec<usize>),
}

/// Where an object's registers live.
pub trait SaMemory<V> {
    fn load(&self, reg: SaReg) -> Option<&SaCell<V>>;
    fn store(&mut self, pid: usize, reg: SaReg, cell: SaCell<V>) -> Result<(), SmError>;
    /// Register name as it appears in traces.
    fn name(&self, reg: SaReg) -> String {
        reg.to_string()
    }
}

impl<V: Clone + Hash> SaMemory<V> for SharedMemory<SaReg, SaCell<V>> {
    fn load(&self, reg: SaReg) -> Option<&SaCell<V>> {
        self.read(&reg)
    }

    fn store(&mut self, pid: usize, reg: SaReg, cell: SaCell<V>) -> Result<(), SmError> {
        self.write(pid, reg, cell)
    }
}

fn load_set<V, M: SaMemory<V> + ?Sized>(mem: &M, j: usize) -> Vec<usize> {
    match mem.load(SaReg::Set(j)) {
        Some(SaCell::Set(s)) => s.clone(),
        _ => Vec::new(),
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SaError {
    #[error("process {0} already proposed")]
    DoublePropose(usize),
    #[error("process {0} resolves before proposing")]
    NotProposed(usize),
    #[error("process {0} is already inside a method")]
    Busy(usize),
}

/// Control point of one process.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SaPc {
    Idle,
    WriteVal,
    WriteId,
    Collect1(usize),
    Collect2(usize),
    WriteSet,
    ReadSet(usize),
    ReadVal(usize),
}

/// Result of a finished method.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SaDone<V> {
    Proposed,
    Resolved(Option<V>),
}

/// Per-process local state of one object.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SaProc<V> {
    pub pc: SaPc,
    pub proposal: Option<V>,
    collect1: Vec<bool>,
    collect2: Vec<bool>,
    sets: Vec<Vec<usize>>,
    /// Double-collect iterations of the current or last propose.
    pub iterations: usize,
    /// Set when a method completes, cleared by the next one.
    pub done: Option<SaDone<V>>,
}

impl<V: Clone + Eq + Hash> SaProc<V> {
    pub fn new() -> Self {
        Self {
            pc: SaPc::Idle,
            proposal: None,
            collect1: Vec::new(),
            collect2: Vec::new(),
            sets: Vec::new(),
            iterations: 0,
            done: None,
        }
    }

    pub fn busy(&self) -> bool {
        self.pc != SaPc::Idle
    }

    pub fn propose(&mut self, pid: usize, v: V) -> Result<(), SaError> {
        if self.busy() {
            return Err(SaError::Busy(pid));
        }
        if self.proposal.is_some() {
            return Err(SaError::DoublePropose(pid));
        }
        self.proposal = Some(v);
        self.pc = SaPc::WriteVal;
        self.iterations = 0;
        self.done = None;
        Ok(())
    }

    pub fn resolve(&mut self, pid: usize) -> Result<(), SaError> {
        if self.busy() {
            return Err(SaError::Busy(pid));
        }
        if self.proposal.is_none() {
            return Err(SaError::NotProposed(pid));
        }
        self.pc = SaPc::ReadSet(0);
        self.sets.clear();
        self.done = None;
        Ok(())
    }

    /// Executes one shared access of the current method for process `pid` of
    /// `m`. When the method finishes with this access, `done` is set and the
    /// process goes idle.
    pub fn step<M: SaMemory<V> + ?Sized>(&mut self, pid: usize, m: usize, mem: &mut M) -> Result<SmEvent, SmError> {
        match self.pc.clone() {
            SaPc::Idle => Err(SmError::NoEnabledStatement(pid)),
            SaPc::WriteVal => {
                let v = self.proposal.clone().expect("propose sets the proposal");
                mem.store(pid, SaReg::Val(pid), SaCell::Val(v))?;
                self.pc = SaPc::WriteId;
                Ok(SmEvent::Write(mem.name(SaReg::Val(pid))))
            }
            SaPc::WriteId => {
                mem.store(pid, SaReg::Id(pid), SaCell::Id)?;
                self.pc = SaPc::Collect1(0);
                self.iterations = 1;
                self.collect1.clear();
                Ok(SmEvent::Write(mem.name(SaReg::Id(pid))))
            }
            SaPc::Collect1(j) => {
                self.collect1.push(mem.load(SaReg::Id(j)).is_some());
                self.pc = if j + 1 < m {
                    SaPc::Collect1(j + 1)
                } else {
                    self.collect2.clear();
                    SaPc::Collect2(0)
                };
                Ok(SmEvent::Read(mem.name(SaReg::Id(j))))
            }
            SaPc::Collect2(j) => {
                self.collect2.push(mem.load(SaReg::Id(j)).is_some());
                self.pc = if j + 1 < m {
                    SaPc::Collect2(j + 1)
                } else if self.collect1 == self.collect2 {
                    SaPc::WriteSet
                } else {
                    self.iterations += 1;
                    self.collect1.clear();
                    SaPc::Collect1(0)
                };
                Ok(SmEvent::Read(mem.name(SaReg::Id(j))))
            }
            SaPc::WriteSet => {
                let set: Vec<usize> = (0..m).filter(|&j| self.collect1[j]).collect();
                mem.store(pid, SaReg::Set(pid), SaCell::Set(set))?;
                self.pc = SaPc::Idle;
                self.done = Some(SaDone::Proposed);
                Ok(SmEvent::Write(mem.name(SaReg::Set(pid))))
            }
            SaPc::ReadSet(j) => {
                self.sets.push(load_set(mem, j));
                if j + 1 < m {
                    self.pc = SaPc::ReadSet(j + 1);
                } else {
                    match core_winner(&self.sets) {
                        Some(w) => self.pc = SaPc::ReadVal(w),
                        None => {
                            self.pc = SaPc::Idle;
                            self.done = Some(SaDone::Resolved(None));
                        }
                    }
                }
                Ok(SmEvent::Read(mem.name(SaReg::Set(j))))
            }
            SaPc::ReadVal(w) => {
                let v = match mem.load(SaReg::Val(w)) {
                    Some(SaCell::Val(v)) => v.clone(),
                    _ => {
                        return Err(SmError::Fault {
                            pid,
                            message: format!("Val[{w}] is unwritten"),
                        })
                    }
                };
                self.pc = SaPc::Idle;
                self.done = Some(SaDone::Resolved(Some(v)));
                Ok(SmEvent::Read(mem.name(SaReg::Val(w))))
            }
        }
    }
}

impl<V: Clone + Eq + Hash> Default for SaProc<V> {
    fn default() -> Self {
        Self::new()
    }
}

fn subset(a: &[usize], b: &[usize]) -> bool {
    a.iter().all(|x| b.contains(x))
}

/// The resolve decision over the collected sets: the minimal id of the core
/// set, or `None` for ⊥.
///
/// Published sets are pairwise comparable by containment, so the smallest
/// non-empty one by size is the smallest by containment.
pub fn core_winner(sets: &[Vec<usize>]) -> Option<usize> {
    let c = sets.iter().filter(|s| !s.is_empty()).min_by_key(|s| s.len())?;
    let settled = c.iter().all(|&j| !sets[j].is_empty() && subset(c, &sets[j]));
    if settled {
        c.first().copied()
    } else {
        None
    }
}

/// Checks that published sets are pairwise comparable.
pub fn check_comparable(sets: &[(usize, Vec<usize>)]) -> Result<(), String> {
    for (i, a) in sets {
        for (j, b) in sets {
            if i < j && !subset(a, b) && !subset(b, a) {
                return Err(format!("Set[{i}] = {a:?} and Set[{j}] = {b:?} are incomparable"));
            }
        }
    }
    Ok(())
}

/// Agreement, Validity and Liveness over a history of one object, where
/// proposals and resolved values are compared as [`Value`]s.
pub fn check_sa_history(h: &History) -> Result<(), String> {
    let ops = h.operations().map_err(|e| e.to_string())?;
    let mut decided: Option<&Value> = None;
    for op in ops.iter().filter(|o| o.method == Method::Resolve) {
        let Some((ret_at, v)) = &op.ret else { continue };
        if *v == Value::Bottom {
            let pending_propose = ops.iter().any(|p| {
                p.method == Method::Propose && p.call_at < op.call_at && p.ret.as_ref().is_none_or(|(r, _)| *r > op.call_at)
            });
            if !pending_propose {
                return Err(format!("resolve {} returned bot with no propose pending at its call", op.inv));
            }
            continue;
        }
        if let Some(d) = decided {
            if d != v {
                return Err(format!("agreement: resolves returned {d} and {v}"));
            }
        }
        decided = Some(v);
        let valid = ops
            .iter()
            .any(|p| p.method == Method::Propose && p.arg == *v && p.call_at < *ret_at);
        if !valid {
            return Err(format!("validity: resolve {} returned {v}, never proposed before", op.inv));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SaState {
    pub mem: SharedMemory<SaReg, SaCell<i64>>,
    pub procs: Vec<SaProc<i64>>,
    /// Return value of a finished method, emitted by the next step.
    pub ret: Vec<Option<Value>>,
    pub max_iterations: usize,
    /// First value a resolve returned.
    pub decided: Option<i64>,
    /// Whether some propose was pending when each process's current resolve
    /// was called.
    pub may_abstain: Vec<bool>,
    /// First property violation seen at a return.
    pub violation: Option<String>,
}

/// One safe agreement object shared by `m` processes, driven by a workload of
/// `propose(v)` and `resolve()` calls.
#[derive(Clone, Debug)]
pub struct SaSystem {
    m: usize,
}

impl SaSystem {
    pub fn new(m: usize) -> Self {
        assert!(m >= 1, "safe agreement needs a process");
        Self { m }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    fn written_sets(&self, s: &SaState) -> Vec<(usize, Vec<usize>)> {
        (0..self.m)
            .filter_map(|j| match s.mem.read(&SaReg::Set(j)) {
                Some(SaCell::Set(v)) => Some((j, v.clone())),
                _ => None,
            })
            .collect()
    }

    /// Whether `q` is inside a propose that has not returned.
    pub fn proposing(&self, s: &SaState, q: usize) -> bool {
        let in_code = matches!(
            s.procs[q].pc,
            SaPc::WriteVal | SaPc::WriteId | SaPc::Collect1(_) | SaPc::Collect2(_) | SaPc::WriteSet
        );
        in_code || s.ret[q] == Some(Value::Unit)
    }

    /// Checks a return against the summary kept in the state.
    fn observe_return(&self, s: &mut SaState, pid: usize, v: &Value) {
        if s.violation.is_some() {
            return;
        }
        match v {
            Value::Bottom if !s.may_abstain[pid] => {
                s.violation = Some(format!("resolve by {pid} returned bot with no propose pending at its call"));
            }
            Value::Int(x) => {
                if s.decided.is_some_and(|d| d != *x) {
                    s.violation = Some(format!("agreement: resolves returned {} and {x}", s.decided.unwrap()));
                } else if !s.procs.iter().any(|p| p.proposal == Some(*x)) {
                    s.violation = Some(format!("validity: {x} was never proposed"));
                }
                s.decided = Some(*x);
            }
            _ => {}
        }
    }

    /// Runs a resolve by `pid` alone from `s`, without recording it.
    pub fn solo_resolve(&self, s: &SaState, pid: usize) -> Result<Option<i64>, SmError> {
        let mut mem = s.mem.clone();
        let mut p = s.procs[pid].clone();
        p.resolve(pid).map_err(|e| SmError::Fault {
            pid,
            message: e.to_string(),
        })?;
        while p.busy() {
            p.step(pid, self.m, &mut mem)?;
        }
        match p.done {
            Some(SaDone::Resolved(v)) => Ok(v),
            _ => unreachable!("resolve finishes with a resolution"),
        }
    }
}

impl SmSystem for SaSystem {
    type State = SaState;

    fn name(&self) -> String {
        "safe_agreement".into()
    }

    fn processes(&self) -> usize {
        self.m
    }

    fn initial(&self) -> SaState {
        SaState {
            mem: SharedMemory::new(),
            procs: vec![SaProc::new(); self.m],
            ret: vec![None; self.m],
            max_iterations: 0,
            decided: None,
            may_abstain: vec![false; self.m],
            violation: None,
        }
    }

    fn pending(&self, s: &SaState, pid: usize) -> bool {
        s.procs[pid].busy() || s.ret[pid].is_some()
    }

    fn call(&self, s: &mut SaState, pid: usize, inv: &Invocation) -> Result<(), SmError> {
        if inv.method == Method::Resolve && pid < self.m {
            s.may_abstain[pid] = (0..self.m).any(|q| self.proposing(s, q));
        }
        let p = s.procs.get_mut(pid).ok_or(SmError::UnknownProcess(pid))?;
        let started = match (inv.method, &inv.arg) {
            (Method::Propose, Value::Int(v)) => p.propose(pid, *v),
            (Method::Resolve, Value::Unit) => p.resolve(pid),
            _ => {
                return Err(SmError::BadInvocation {
                    pid,
                    invocation: inv.to_string(),
                })
            }
        };
        started.map_err(|e| SmError::Fault {
            pid,
            message: e.to_string(),
        })
    }

    fn step(&self, s: &mut SaState, pid: usize) -> Result<SmEvent, SmError> {
        if let Some(v) = s.ret[pid].take() {
            self.observe_return(s, pid, &v);
            return Ok(SmEvent::Return(v));
        }
        let p = &mut s.procs[pid];
        let ev = p.step(pid, self.m, &mut s.mem)?;
        s.max_iterations = s.max_iterations.max(p.iterations);
        if !p.busy() {
            s.ret[pid] = Some(match p.done.clone() {
                Some(SaDone::Proposed) => Value::Unit,
                Some(SaDone::Resolved(Some(v))) => Value::Int(v),
                Some(SaDone::Resolved(None)) => Value::Bottom,
                None => unreachable!("an idle process has finished its method"),
            });
        }
        Ok(ev)
    }

    fn invariant(&self, s: &SaState, h: &History) -> Result<(), String> {
        if let Some(v) = &s.violation {
            return Err(v.clone());
        }
        if s.max_iterations > self.m {
            return Err(format!("a double collect ran {} times with m = {}", s.max_iterations, self.m));
        }
        for i in 0..self.m {
            if s.mem.read(&SaReg::Id(i)).is_some() && s.mem.read(&SaReg::Val(i)).is_none() {
                return Err(format!("Id[{i}] written before Val[{i}]"));
            }
            if s.mem.read(&SaReg::Set(i)).is_some() && s.mem.read(&SaReg::Id(i)).is_none() {
                return Err(format!("Set[{i}] written before Id[{i}]"));
            }
        }
        check_comparable(&self.written_sets(s))?;
        check_sa_history(h)
    }

    /// With no propose pending, a fresh resolve by any proposer decides.
    fn leaf_invariant(&self, s: &SaState, h: &History, _terminal: bool) -> Result<(), String> {
        if (0..self.m).any(|q| self.proposing(s, q)) {
            return Ok(());
        }
        // propose returns ok, so integer returns are decisions
        let mut seen = h
            .actions()
            .iter()
            .find_map(|a| match a {
                Action::Return { value: Value::Int(v), .. } => Some(*v),
                _ => None,
            })
            .or(s.decided);
        for pid in (0..self.m).filter(|&p| s.procs[p].proposal.is_some() && !s.procs[p].busy()) {
            match self.solo_resolve(s, pid).map_err(|e| e.to_string())? {
                None => return Err(format!("resolve by {pid} returns bot with no propose pending")),
                Some(v) => {
                    if seen.is_some_and(|w| w != v) {
                        return Err(format!("solo resolves disagree: {} and {v}", seen.unwrap()));
                    }
                    seen = Some(v);
                }
            }
        }
        Ok(())
    }
}

//! Shared-memory executions: crash-prone processes over single-writer
//! atomic registers.
//!
//! A process takes one indivisible step at a time: one shared read, one
//! shared write, or a return. Local computation is folded into the step of
//! the next shared access. Systems are deterministic per process, so the only
//! choice a scheduler makes is which process moves next. A crash is a process
//! that is never scheduled again.

use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::digest::{digest, fingerprint};
use crate::explore::Model;
use crate::history::{Action, History, InvId, Invocation, Value};
use crate::mp::{CrashScript, ProcessId, Workload};
use crate::trace::{ExecutionTrace, Rule, StepDetail, TraceHeader, TraceStep};

/// Register names. Ownership is part of the name.
pub trait RegKey: Clone + Ord + Hash + fmt::Debug + fmt::Display {
    fn owner(&self) -> usize;
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SwRegister<V> {
    pub owner: usize,
    pub value: V,
}

/// Shared registers, allocated on first write; an unwritten register holds
/// its initial value, supplied by the reader.
///
/// The memory keeps a sum of per-register fingerprints, so hashing it does
/// not depend on how many registers exist.
#[derive(Clone, Debug)]
pub struct SharedMemory<K, V> {
    regs: BTreeMap<K, SwRegister<V>>,
    sum: u128,
}

impl<K, V> Default for SharedMemory<K, V> {
    fn default() -> Self {
        Self {
            regs: BTreeMap::new(),
            sum: 0,
        }
    }
}

impl<K: PartialEq, V: PartialEq> PartialEq for SharedMemory<K, V> {
    fn eq(&self, other: &Self) -> bool {
        self.sum == other.sum && self.regs == other.regs
    }
}

impl<K: Eq, V: Eq> Eq for SharedMemory<K, V> {}

impl<K, V> Hash for SharedMemory<K, V> {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.regs.len().hash(state);
        self.sum.hash(state);
    }
}

impl<K: RegKey, V: Clone + Hash> SharedMemory<K, V> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn read(&self, key: &K) -> Option<&V> {
        self.regs.get(key).map(|r| &r.value)
    }

    pub fn write(&mut self, pid: usize, key: K, value: V) -> Result<(), SmError> {
        if key.owner() != pid {
            return Err(SmError::NotOwner {
                pid,
                register: key.to_string(),
            });
        }
        let added = fingerprint(&(&key, &value));
        let reg = SwRegister { owner: pid, value };
        if let Some(old) = self.regs.insert(key.clone(), reg) {
            self.sum = self.sum.wrapping_sub(fingerprint(&(&key, &old.value)));
        }
        self.sum = self.sum.wrapping_add(added);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.regs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&K, &SwRegister<V>)> {
        self.regs.iter()
    }
}

/// What a step did.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SmEvent {
    Read(String),
    Write(String),
    Local,
    Return(Value),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SmError {
    #[error("process {0} has crashed")]
    Crashed(usize),
    #[error("process {0} has no enabled statement")]
    NoEnabledStatement(usize),
    #[error("process {0} already has a pending invocation")]
    PendingInvocation(usize),
    #[error("process {0} does not exist")]
    UnknownProcess(usize),
    #[error("process {pid} cannot write register {register}: not its owner")]
    NotOwner { pid: usize, register: String },
    #[error("process {pid} cannot run {invocation}")]
    BadInvocation { pid: usize, invocation: String },
    #[error("process {pid}: {message}")]
    Fault { pid: usize, message: String },
}

/// A shared-memory implementation: programs for `processes()` processes.
pub trait SmSystem: Sync {
    type State: Clone + Eq + Hash + fmt::Debug + Send + Sync;

    fn name(&self) -> String;
    fn processes(&self) -> usize;
    fn initial(&self) -> Self::State;

    /// Whether `pid` is inside an invocation.
    fn pending(&self, s: &Self::State, pid: usize) -> bool;

    /// CALL rule: `pid` starts `inv`. Only the control point changes.
    fn call(&self, s: &mut Self::State, pid: usize, inv: &Invocation) -> Result<(), SmError>;

    /// One indivisible statement of a pending process.
    fn step(&self, s: &mut Self::State, pid: usize) -> Result<SmEvent, SmError>;

    /// Digest of a state, recorded after every step.
    fn digest(&self, s: &Self::State) -> u64 {
        digest(s)
    }

    /// Header keys replay needs besides `m`, `n` and the seed.
    fn header(&self, seed: u64) -> TraceHeader {
        TraceHeader::new(self.processes(), 0, seed)
            .with("kind", "sm")
            .with("impl", self.name())
    }

    /// Safety properties of a state and the history leading to it.
    fn invariant(&self, _s: &Self::State, _h: &History) -> Result<(), String> {
        Ok(())
    }

    /// Properties of states where exploration stops.
    fn leaf_invariant(&self, _s: &Self::State, _h: &History, _terminal: bool) -> Result<(), String> {
        Ok(())
    }
}

/// Applies one scheduling decision: a call if `pid` is idle and has a next
/// invocation, a statement if it is pending.
fn sm_apply<Y: SmSystem>(
    sys: &Y,
    s: &mut Y::State,
    pid: usize,
    next_call: Option<&Invocation>,
) -> Result<SmEvent, SmError> {
    if pid >= sys.processes() {
        return Err(SmError::UnknownProcess(pid));
    }
    if sys.pending(s, pid) {
        return sys.step(s, pid);
    }
    match next_call {
        Some(inv) => {
            sys.call(s, pid, inv)?;
            Ok(SmEvent::Local)
        }
        None => Err(SmError::NoEnabledStatement(pid)),
    }
}

/// What a process could do next, as seen by a scheduler.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SmCandidate {
    pub pid: usize,
    pub pending: bool,
    pub next_call: Option<Invocation>,
}

pub trait SmScheduler {
    fn seed(&self) -> u64;

    /// Picks one of the candidates, all live and with work; `None` stops.
    fn next(&mut self, step_no: usize, candidates: &[SmCandidate]) -> Option<usize>;
}

/// Seeded uniform choice. A process with work that has been passed over
/// `deadline` times in a row is scheduled next.
#[derive(Clone, Debug)]
pub struct SmFairRandom {
    seed: u64,
    rng: ChaCha8Rng,
    deadline: u32,
    skipped: BTreeMap<usize, u32>,
}

impl SmFairRandom {
    pub fn new(seed: u64, deadline: u32) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            deadline: deadline.max(1),
            skipped: BTreeMap::new(),
        }
    }

    pub fn default_deadline(processes: usize) -> u32 {
        4 * processes as u32
    }
}

impl SmScheduler for SmFairRandom {
    fn seed(&self) -> u64 {
        self.seed
    }

    fn next(&mut self, _step_no: usize, candidates: &[SmCandidate]) -> Option<usize> {
        if candidates.is_empty() {
            return None;
        }
        let overdue = candidates
            .iter()
            .filter(|c| self.skipped.get(&c.pid).copied().unwrap_or(0) >= self.deadline)
            .map(|c| c.pid)
            .next();
        let pick = match overdue {
            Some(pid) => pid,
            None => candidates[self.rng.gen_range(0..candidates.len())].pid,
        };
        self.skipped.retain(|pid, _| candidates.iter().any(|c| c.pid == *pid));
        for c in candidates {
            let n = self.skipped.entry(c.pid).or_insert(0);
            *n = if c.pid == pick { 0 } else { *n + 1 };
        }
        Some(pick)
    }
}

/// Schedules processes in cyclic order, one step each.
#[derive(Clone, Debug, Default)]
pub struct SmRoundRobin {
    last: Option<usize>,
}

impl SmRoundRobin {
    pub fn new() -> Self {
        Self::default()
    }
}

impl SmScheduler for SmRoundRobin {
    fn seed(&self) -> u64 {
        0
    }

    fn next(&mut self, _step_no: usize, candidates: &[SmCandidate]) -> Option<usize> {
        let pick = match self.last {
            Some(last) => candidates
                .iter()
                .find(|c| c.pid > last)
                .or(candidates.first())?
                .pid,
            None => candidates.first()?.pid,
        };
        self.last = Some(pick);
        Some(pick)
    }
}

/// Replays a fixed sequence of process choices, then stops.
#[derive(Clone, Debug)]
pub struct SmScripted {
    pids: Vec<usize>,
    at: usize,
}

impl SmScripted {
    pub fn new(pids: impl IntoIterator<Item = usize>) -> Self {
        Self {
            pids: pids.into_iter().collect(),
            at: 0,
        }
    }
}

impl SmScheduler for SmScripted {
    fn seed(&self) -> u64 {
        0
    }

    fn next(&mut self, _step_no: usize, _candidates: &[SmCandidate]) -> Option<usize> {
        let pid = self.pids.get(self.at).copied();
        self.at += 1;
        pid
    }
}

/// Watches a run step by step.
pub trait SmObserver<Y: SmSystem> {
    /// Called before `pid` moves at state `s`.
    fn before(&mut self, _sys: &Y, _s: &Y::State, _pid: usize) {}

    /// Called after the step; an error aborts the run.
    fn after(&mut self, _sys: &Y, _s: &Y::State, _step: &TraceStep) -> Result<(), String> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct NoObserver;

impl<Y: SmSystem> SmObserver<Y> for NoObserver {}

/// A running shared-memory execution with its trace and history.
#[derive(Clone, Debug)]
pub struct SmSimulation<'a, Y: SmSystem> {
    sys: &'a Y,
    state: Y::State,
    current: Vec<Option<InvId>>,
    next_inv: u64,
    history: History,
    trace: ExecutionTrace,
}

impl<'a, Y: SmSystem> SmSimulation<'a, Y> {
    pub fn new(sys: &'a Y, header: TraceHeader) -> Self {
        let state = sys.initial();
        let trace = ExecutionTrace::new(header, sys.digest(&state));
        Self {
            sys,
            state,
            current: vec![None; sys.processes()],
            next_inv: 0,
            history: History::new(),
            trace,
        }
    }

    pub fn state(&self) -> &Y::State {
        &self.state
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn trace(&self) -> &ExecutionTrace {
        &self.trace
    }

    pub fn into_parts(self) -> (Y::State, ExecutionTrace) {
        (self.state, self.trace)
    }

    pub fn is_pending(&self, pid: usize) -> bool {
        self.sys.pending(&self.state, pid)
    }

    /// Moves `pid`: a call of `next_call` if it is idle, a statement otherwise.
    pub fn apply(&mut self, pid: usize, next_call: Option<&Invocation>) -> Result<&TraceStep, SmError> {
        let calling = pid < self.sys.processes() && !self.sys.pending(&self.state, pid);
        let event = sm_apply(self.sys, &mut self.state, pid, next_call)?;
        let (rule, label, detail) = if calling {
            let inv = InvId(self.next_inv);
            self.next_inv += 1;
            self.current[pid] = Some(inv);
            let call = next_call.expect("calling requires an invocation");
            (Rule::Call, Some(Action::call(inv, call)), StepDetail::None)
        } else {
            match event {
                SmEvent::Read(r) => (Rule::SmRead, None, StepDetail::Register(r)),
                SmEvent::Write(r) => (Rule::SmWrite, None, StepDetail::Register(r)),
                SmEvent::Local => (Rule::SmLocal, None, StepDetail::None),
                SmEvent::Return(value) => {
                    let inv = self.current[pid].take().ok_or(SmError::NoEnabledStatement(pid))?;
                    (Rule::Ret, Some(Action::Return { inv, value }), StepDetail::None)
                }
            }
        };
        if let Some(a) = &label {
            self.history.push(a.clone());
        }
        let index = self.trace.steps.len();
        self.trace.steps.push(TraceStep {
            index,
            rule,
            pid,
            label,
            detail,
            digest: self.sys.digest(&self.state),
        });
        Ok(&self.trace.steps[index])
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SmRunError {
    #[error("step budget exhausted after {} steps", trace.steps.len())]
    BudgetExhausted { trace: Box<ExecutionTrace> },
    #[error("step {index}: {source}")]
    Step { index: usize, source: SmError },
    #[error("step {index}: observer rejected the step: {message}")]
    Rejected {
        index: usize,
        message: String,
        trace: Box<ExecutionTrace>,
    },
    #[error("step budget must be positive")]
    ZeroBudget,
}

impl SmRunError {
    pub fn partial_trace(&self) -> Option<&ExecutionTrace> {
        match self {
            SmRunError::BudgetExhausted { trace } | SmRunError::Rejected { trace, .. } => Some(trace),
            _ => None,
        }
    }
}

/// A finished run: the trace and the final state.
#[derive(Clone, Debug)]
pub struct SmRun<S> {
    pub trace: ExecutionTrace,
    pub state: S,
}

/// Drives `sys` until every live process has finished its script, no live
/// process has work left, or the budget runs out.
pub fn sm_run<Y: SmSystem, S: SmScheduler>(
    sys: &Y,
    sched: &mut S,
    workload: &Workload,
    bound: usize,
    crashes: &CrashScript,
    observer: &mut dyn SmObserver<Y>,
) -> Result<SmRun<Y::State>, SmRunError> {
    if bound == 0 {
        return Err(SmRunError::ZeroBudget);
    }
    let mut sim = SmSimulation::new(sys, sys.header(sched.seed()));
    let mut cursor = vec![0usize; sys.processes()];
    for step_no in 0..bound {
        let candidates: Vec<SmCandidate> = (0..sys.processes())
            .filter(|p| !crashes.is_crashed(ProcessId(*p), step_no))
            .map(|pid| SmCandidate {
                pid,
                pending: sim.is_pending(pid),
                next_call: workload.next(pid, cursor[pid]).cloned(),
            })
            .filter(|c| c.pending || c.next_call.is_some())
            .collect();
        if candidates.is_empty() {
            let (state, trace) = sim.into_parts();
            return Ok(SmRun { trace, state });
        }
        let Some(pid) = sched.next(step_no, &candidates) else {
            break;
        };
        let calling = !sim.is_pending(pid);
        observer.before(sys, sim.state(), pid);
        let next_call = workload.next(pid, cursor[pid]).cloned();
        let step = sim
            .apply(pid, next_call.as_ref())
            .map_err(|source| SmRunError::Step { index: step_no, source })?
            .clone();
        if calling {
            cursor[pid] += 1;
        }
        if let Err(message) = observer.after(sys, sim.state(), &step) {
            return Err(SmRunError::Rejected {
                index: step_no,
                message,
                trace: Box::new(sim.into_parts().1),
            });
        }
    }
    let done = (0..sys.processes())
        .filter(|p| !crashes.is_crashed(ProcessId(*p), bound))
        .all(|p| !sim.is_pending(p) && workload.next(p, cursor[p]).is_none());
    let (state, trace) = sim.into_parts();
    if done {
        Ok(SmRun { trace, state })
    } else {
        Err(SmRunError::BudgetExhausted { trace: Box::new(trace) })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SmReplayError {
    #[error("initial state digest mismatch")]
    InitialMismatch,
    #[error("digest mismatch at step {index}: trace has {expected:016x}, replay gives {actual:016x}")]
    DigestMismatch { index: usize, expected: u64, actual: u64 },
    #[error("step {index} does not match the recorded rule, label or register")]
    StepMismatch { index: usize },
    #[error("step {index}: {source}")]
    Step { index: usize, source: SmError },
}

/// Re-executes a shared-memory trace and checks every step and digest.
pub fn replay_sm<Y: SmSystem>(sys: &Y, trace: &ExecutionTrace) -> Result<(), SmReplayError> {
    let mut sim = SmSimulation::new(sys, trace.header.clone());
    if sim.trace().initial_digest != trace.initial_digest {
        return Err(SmReplayError::InitialMismatch);
    }
    for (index, recorded) in trace.steps.iter().enumerate() {
        let call = match (&recorded.rule, &recorded.label) {
            (Rule::Call, Some(Action::Call { method, arg, .. })) => Some(Invocation {
                method: *method,
                arg: arg.clone(),
            }),
            _ => None,
        };
        let step = sim
            .apply(recorded.pid, call.as_ref())
            .map_err(|source| SmReplayError::Step { index, source })?;
        if step.rule != recorded.rule || step.label != recorded.label || step.detail != recorded.detail {
            return Err(SmReplayError::StepMismatch { index });
        }
        if step.digest != recorded.digest {
            return Err(SmReplayError::DigestMismatch {
                index,
                expected: recorded.digest,
                actual: step.digest,
            });
        }
    }
    Ok(())
}

/// Exploration state of a shared-memory system under a workload.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SmModelState<S> {
    pub sys: S,
    pub cursor: Vec<usize>,
    pub current: Vec<Option<InvId>>,
    pub next_inv: u64,
    pub history: History,
    /// A step the system rejected; reported as a violation.
    pub fault: Option<String>,
}

/// A shared-memory system and workload as an explorable model; steps are
/// process ids.
pub struct SmModel<'a, Y: SmSystem> {
    pub sys: &'a Y,
    pub workload: Workload,
    /// Processes that never move.
    pub crashed: Vec<usize>,
    /// Keep the history in the state. Without it, states that differ only in
    /// their past collapse, and only the system's own invariants apply.
    pub record_history: bool,
}

impl<'a, Y: SmSystem> SmModel<'a, Y> {
    pub fn new(sys: &'a Y, workload: Workload) -> Self {
        Self {
            sys,
            workload,
            crashed: Vec::new(),
            record_history: true,
        }
    }

    pub fn without_history(mut self) -> Self {
        self.record_history = false;
        self
    }
}

impl<Y: SmSystem> Model for SmModel<'_, Y> {
    type State = SmModelState<Y::State>;
    type Step = usize;

    fn initial(&self) -> Self::State {
        let n = self.sys.processes();
        SmModelState {
            sys: self.sys.initial(),
            cursor: vec![0; n],
            current: vec![None; n],
            next_inv: 0,
            history: History::new(),
            fault: None,
        }
    }

    fn steps(&self, s: &Self::State) -> Vec<usize> {
        if s.fault.is_some() {
            return Vec::new();
        }
        (0..self.sys.processes())
            .filter(|p| !self.crashed.contains(p))
            .filter(|&p| self.sys.pending(&s.sys, p) || self.workload.next(p, s.cursor[p]).is_some())
            .collect()
    }

    fn next(&self, s: &Self::State, &pid: &usize) -> Option<Self::State> {
        let mut n = s.clone();
        if self.sys.pending(&s.sys, pid) {
            match self.sys.step(&mut n.sys, pid) {
                Err(e) => n.fault = Some(e.to_string()),
                Ok(SmEvent::Return(value)) => {
                    let inv = n.current[pid].take()?;
                    if self.record_history {
                        n.history.push(Action::Return { inv, value });
                    }
                }
                Ok(_) => {}
            }
        } else {
            let inv = self.workload.next(pid, s.cursor[pid])?;
            if let Err(e) = self.sys.call(&mut n.sys, pid, inv) {
                n.fault = Some(e.to_string());
                return Some(n);
            }
            n.cursor[pid] += 1;
            let id = InvId(n.next_inv);
            n.current[pid] = Some(id);
            if self.record_history {
                n.next_inv += 1;
                n.history.push(Action::call(id, inv));
            }
        }
        Some(n)
    }

    fn check(&self, s: &Self::State) -> Result<(), String> {
        if let Some(f) = &s.fault {
            return Err(f.clone());
        }
        self.sys.invariant(&s.sys, &s.history)
    }

    fn check_leaf(&self, s: &Self::State, terminal: bool) -> Result<(), String> {
        self.sys.leaf_invariant(&s.sys, &s.history, terminal)
    }
}

/// Register of the straight-line toy programs: `r<k>`, owned by process `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ToyReg(pub usize);

impl fmt::Display for ToyReg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

impl RegKey for ToyReg {
    fn owner(&self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Instr {
    Read(ToyReg),
    Write(ToyReg, i64),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ToyProc {
    pc: Option<usize>,
    last: Value,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ToyState {
    pub mem: SharedMemory<ToyReg, i64>,
    pub procs: Vec<ToyProc>,
}

/// Straight-line programs over integer registers initialized to 0. Every
/// invocation runs the caller's program once and returns the last value it
/// read (`ok` if it read nothing).
#[derive(Clone, Debug)]
pub struct SmProgram {
    programs: Vec<Vec<Instr>>,
}

impl SmProgram {
    /// Rejects programs that write registers owned by another process.
    pub fn new(programs: Vec<Vec<Instr>>) -> Result<Self, SmError> {
        for (pid, prog) in programs.iter().enumerate() {
            for instr in prog {
                if let Instr::Write(r, _) = instr {
                    if r.owner() != pid {
                        return Err(SmError::NotOwner {
                            pid,
                            register: r.to_string(),
                        });
                    }
                }
            }
        }
        Ok(Self { programs })
    }
}

impl SmSystem for SmProgram {
    type State = ToyState;

    fn name(&self) -> String {
        "program".into()
    }

    fn processes(&self) -> usize {
        self.programs.len()
    }

    fn initial(&self) -> ToyState {
        ToyState {
            mem: SharedMemory::new(),
            procs: vec![
                ToyProc {
                    pc: None,
                    last: Value::Unit
                };
                self.programs.len()
            ],
        }
    }

    fn pending(&self, s: &ToyState, pid: usize) -> bool {
        s.procs[pid].pc.is_some()
    }

    fn call(&self, s: &mut ToyState, pid: usize, _inv: &Invocation) -> Result<(), SmError> {
        let p = s.procs.get_mut(pid).ok_or(SmError::UnknownProcess(pid))?;
        if p.pc.is_some() {
            return Err(SmError::PendingInvocation(pid));
        }
        p.pc = Some(0);
        p.last = Value::Unit;
        Ok(())
    }

    fn step(&self, s: &mut ToyState, pid: usize) -> Result<SmEvent, SmError> {
        let pc = s.procs[pid].pc.ok_or(SmError::NoEnabledStatement(pid))?;
        let Some(instr) = self.programs[pid].get(pc) else {
            s.procs[pid].pc = None;
            return Ok(SmEvent::Return(s.procs[pid].last.clone()));
        };
        s.procs[pid].pc = Some(pc + 1);
        match instr {
            Instr::Read(r) => {
                let v = s.mem.read(r).copied().unwrap_or(0);
                s.procs[pid].last = Value::Int(v);
                Ok(SmEvent::Read(r.to_string()))
            }
            Instr::Write(r, v) => {
                s.mem.write(pid, *r, *v)?;
                Ok(SmEvent::Write(r.to_string()))
            }
        }
    }
}

#[cfg(test)]
mod tests;

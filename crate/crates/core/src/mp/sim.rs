use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{step_call, step_internal, step_return, GlobalOf, MpError, MpGlobalState, MpImplementation, MsgUid, ProcessId};
use crate::digest::digest;
use crate::history::{Action, History, InvId, Invocation, ParseHistoryError, Value};
use crate::trace::{ExecutionTrace, Rule, StepDetail, TraceHeader, TraceStep};

/// A step chosen by a scheduler.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum MpStep {
    Call { pid: ProcessId, invocation: Invocation },
    Return { pid: ProcessId },
    Internal { pid: ProcessId, recv: Vec<MsgUid> },
}

impl MpStep {
    pub fn pid(&self) -> ProcessId {
        match self {
            MpStep::Call { pid, .. } | MpStep::Return { pid } | MpStep::Internal { pid, .. } => *pid,
        }
    }
}

/// Per-client invocation scripts.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Workload {
    pub scripts: Vec<Vec<Invocation>>,
}

impl Workload {
    pub fn new(scripts: Vec<Vec<Invocation>>) -> Self {
        Self { scripts }
    }

    pub fn empty(clients: usize) -> Self {
        Self {
            scripts: vec![Vec::new(); clients],
        }
    }

    pub fn next(&self, client: usize, cursor: usize) -> Option<&Invocation> {
        self.scripts.get(client)?.get(cursor)
    }

    pub fn invocations(&self) -> usize {
        self.scripts.iter().map(Vec::len).sum()
    }

    /// Parses one script, e.g. `write(5) read()`.
    pub fn parse_script(text: &str) -> Result<Vec<Invocation>, ParseHistoryError> {
        text.split(|c: char| c.is_whitespace() || c == ';')
            .filter(|tok| !tok.is_empty())
            .map(Invocation::from_str)
            .collect()
    }
}

/// Processes that stop being scheduled from a given global step on.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CrashScript {
    pub crashes: Vec<(ProcessId, usize)>,
}

impl CrashScript {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn at(crashes: Vec<(ProcessId, usize)>) -> Self {
        Self { crashes }
    }

    pub fn is_crashed(&self, pid: ProcessId, step: usize) -> bool {
        self.crashes.iter().any(|(p, at)| *p == pid && step >= *at)
    }
}

/// What a live process could do next, as seen by a scheduler.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Candidate {
    pub pid: ProcessId,
    pub can_return: bool,
    pub next_call: Option<Invocation>,
    /// Undelivered messages addressed to this process and the number of its
    /// steps that have excluded each one so far.
    pub waiting: Vec<(MsgUid, u32)>,
}

impl Candidate {
    pub fn has_work(&self) -> bool {
        self.can_return || self.next_call.is_some() || !self.waiting.is_empty()
    }
}

pub trait MpScheduler {
    fn seed(&self) -> u64;

    /// Picks the next step among live processes; `None` ends the run.
    fn next(&mut self, step_no: usize, candidates: &[Candidate]) -> Option<MpStep>;
}

/// Seeded random scheduler with a delivery deadline.
///
/// A message is forced into the received set once its destination has taken
/// `deadline - 1` steps without it, so no message is skipped by `deadline`
/// consecutive steps of a live destination.
#[derive(Clone, Debug)]
pub struct FairRandom {
    seed: u64,
    rng: ChaCha8Rng,
    deadline: u32,
}

impl FairRandom {
    pub fn new(seed: u64, deadline: u32) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            deadline: deadline.max(1),
        }
    }

    /// Default deadline `4 * (m + n)`.
    pub fn default_deadline(processes: usize) -> u32 {
        4 * processes as u32
    }
}

impl MpScheduler for FairRandom {
    fn seed(&self) -> u64 {
        self.seed
    }

    fn next(&mut self, _step_no: usize, candidates: &[Candidate]) -> Option<MpStep> {
        let busy: Vec<&Candidate> = candidates.iter().filter(|c| c.has_work()).collect();
        let chosen = if busy.is_empty() {
            candidates.choose(&mut self.rng)?
        } else {
            *busy.choose(&mut self.rng)?
        };
        let pid = chosen.pid;
        let mut moves = Vec::with_capacity(3);
        if chosen.can_return {
            moves.push(0);
        }
        if chosen.next_call.is_some() {
            moves.push(1);
        }
        if !chosen.waiting.is_empty() || moves.is_empty() {
            moves.push(2);
        }
        Some(match *moves.choose(&mut self.rng)? {
            0 => MpStep::Return { pid },
            1 => MpStep::Call {
                pid,
                invocation: chosen.next_call.clone()?,
            },
            _ => {
                let deadline = self.deadline;
                let recv = chosen
                    .waiting
                    .iter()
                    .filter(|(_, age)| age + 1 >= deadline || self.rng.gen_bool(0.5))
                    .map(|(uid, _)| *uid)
                    .collect();
                MpStep::Internal { pid, recv }
            }
        })
    }
}

/// Deterministic fair scheduler: cycles through live processes, preferring
/// return, then call, then delivery of everything waiting.
#[derive(Clone, Debug, Default)]
pub struct RoundRobin {
    cursor: usize,
}

impl RoundRobin {
    pub fn new() -> Self {
        Self::default()
    }
}

impl MpScheduler for RoundRobin {
    fn seed(&self) -> u64 {
        0
    }

    fn next(&mut self, _step_no: usize, candidates: &[Candidate]) -> Option<MpStep> {
        if candidates.is_empty() {
            return None;
        }
        let len = candidates.len();
        let start = candidates
            .iter()
            .position(|c| c.pid.0 >= self.cursor)
            .unwrap_or(0);
        let pick = (0..len)
            .map(|off| &candidates[(start + off) % len])
            .find(|c| c.has_work())
            .unwrap_or(&candidates[start]);
        self.cursor = pick.pid.0 + 1;
        let pid = pick.pid;
        Some(if pick.can_return {
            MpStep::Return { pid }
        } else if let Some(invocation) = &pick.next_call {
            MpStep::Call {
                pid,
                invocation: invocation.clone(),
            }
        } else {
            MpStep::Internal {
                pid,
                recv: pick.waiting.iter().map(|(uid, _)| *uid).collect(),
            }
        })
    }
}

/// Replays a fixed list of steps, then stops.
#[derive(Clone, Debug, Default)]
pub struct Scripted {
    steps: VecDeque<MpStep>,
}

impl Scripted {
    pub fn new(steps: impl IntoIterator<Item = MpStep>) -> Self {
        Self {
            steps: steps.into_iter().collect(),
        }
    }
}

impl MpScheduler for Scripted {
    fn seed(&self) -> u64 {
        0
    }

    fn next(&mut self, _step_no: usize, _candidates: &[Candidate]) -> Option<MpStep> {
        self.steps.pop_front()
    }
}

/// A running message-passing execution with its trace and history.
#[derive(Clone, Debug)]
pub struct Simulation<'a, I: MpImplementation> {
    imp: &'a I,
    g: GlobalOf<I>,
    current: Vec<Option<InvId>>,
    next_inv: u64,
    dedupe: bool,
    delivered: BTreeSet<MsgUid>,
    ages: BTreeMap<MsgUid, u32>,
    max_exclusions: u32,
    history: History,
    trace: ExecutionTrace,
}

impl<'a, I: MpImplementation> Simulation<'a, I> {
    pub fn new(imp: &'a I, header: TraceHeader, dedupe: bool) -> Self {
        let g = MpGlobalState::initial(imp);
        let trace = ExecutionTrace::new(header, digest(&g));
        Self {
            imp,
            g,
            current: vec![None; imp.clients()],
            next_inv: 0,
            dedupe,
            delivered: BTreeSet::new(),
            ages: BTreeMap::new(),
            max_exclusions: 0,
            history: History::new(),
            trace,
        }
    }

    pub fn state(&self) -> &GlobalOf<I> {
        &self.g
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn trace(&self) -> &ExecutionTrace {
        &self.trace
    }

    pub fn into_trace(self) -> ExecutionTrace {
        self.trace
    }

    pub fn delivered(&self) -> &BTreeSet<MsgUid> {
        &self.delivered
    }

    /// Largest number of consecutive steps a destination has taken without
    /// receiving a message that was waiting for it.
    pub fn max_exclusions(&self) -> u32 {
        self.max_exclusions
    }

    pub fn is_pending(&self, pid: ProcessId) -> bool {
        self.imp.pending(self.g.state(pid))
    }

    /// Messages addressed to `pid` never delivered so far, with their ages.
    pub fn waiting_for(&self, pid: ProcessId) -> Vec<(MsgUid, u32)> {
        self.ages
            .iter()
            .filter(|(uid, _)| self.g.message(**uid).is_some_and(|m| m.dst == pid))
            .map(|(uid, age)| (*uid, *age))
            .collect()
    }

    /// Steps enabled now, with `next_calls[i]` the next invocation of client `i`.
    pub fn enabled_steps(&self, next_calls: &[Option<Invocation>], delivery: super::Delivery) -> Vec<MpStep> {
        super::enabled_steps(
            self.imp,
            &self.g,
            next_calls,
            self.dedupe.then_some(&self.delivered),
            delivery,
        )
    }

    fn track_new_messages(&mut self, before: usize, pid: ProcessId) {
        let pool = &self.g.slot(pid).pool;
        for msg in pool.iter().skip(before) {
            self.ages.insert(msg.uid, 0);
        }
    }

    /// Applies one step, recording it in the trace. Returns the action label
    /// for call and return steps.
    pub fn apply(&mut self, step: &MpStep) -> Result<Option<Action>, MpError> {
        let pid = step.pid();
        let sent_before = self.g.slots.get(pid.0).map_or(0, |s| s.pool.len());
        let (rule, label, detail) = match step {
            MpStep::Call { invocation, .. } => {
                self.g = step_call(self.imp, &self.g, pid, invocation)?;
                let inv = InvId(self.next_inv);
                self.next_inv += 1;
                self.current[pid.0] = Some(inv);
                (Rule::Call, Some(Action::call(inv, invocation)), StepDetail::None)
            }
            MpStep::Return { .. } => {
                let (g, value) = step_return(self.imp, &self.g, pid)?;
                let inv = self.current[pid.0].take().ok_or(MpError::ReturnNotEnabled(pid))?;
                self.g = g;
                (Rule::Ret, Some(Action::Return { inv, value }), StepDetail::None)
            }
            MpStep::Internal { recv, .. } => {
                self.g = step_internal(self.imp, &self.g, pid, recv)?;
                let recv: BTreeSet<MsgUid> = recv.iter().copied().collect();
                for uid in &recv {
                    self.delivered.insert(*uid);
                    self.ages.remove(uid);
                }
                let g = &self.g;
                for (uid, age) in self.ages.iter_mut() {
                    if g.message(*uid).is_some_and(|m| m.dst == pid) {
                        *age += 1;
                        self.max_exclusions = self.max_exclusions.max(*age);
                    }
                }
                (Rule::Int, None, StepDetail::Recv(recv.into_iter().collect()))
            }
        };
        self.track_new_messages(sent_before, pid);
        if let Some(action) = &label {
            self.history.push(action.clone());
        }
        self.trace.steps.push(TraceStep {
            index: self.trace.steps.len(),
            rule,
            pid: pid.0,
            label: label.clone(),
            detail,
            digest: digest(&self.g),
        });
        Ok(label)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RunError {
    #[error("step budget exhausted after {} steps", trace.steps.len())]
    BudgetExhausted { trace: Box<ExecutionTrace> },
    #[error("scheduler stopped after {} steps with work outstanding", trace.steps.len())]
    SchedulerStopped { trace: Box<ExecutionTrace> },
    #[error("step {index}: {source}")]
    Step { index: usize, source: MpError },
    #[error("step budget must be positive")]
    ZeroBudget,
}

impl RunError {
    pub fn partial_trace(&self) -> Option<&ExecutionTrace> {
        match self {
            RunError::BudgetExhausted { trace } | RunError::SchedulerStopped { trace } => Some(trace),
            _ => None,
        }
    }
}

/// Drives an implementation under a scheduler until every live client has
/// finished its script, or the budget runs out.
pub fn run<I: MpImplementation, S: MpScheduler>(
    imp: &I,
    sched: &mut S,
    workload: &Workload,
    bound: usize,
    crashes: &CrashScript,
    dedupe: bool,
) -> Result<ExecutionTrace, RunError> {
    if bound == 0 {
        return Err(RunError::ZeroBudget);
    }
    let header = TraceHeader::new(imp.clients(), imp.servers(), sched.seed())
        .with("kind", "mp")
        .with("impl", imp.name());
    let mut sim = Simulation::new(imp, header, dedupe);
    let mut cursor = vec![0usize; imp.clients()];
    for step_no in 0..bound {
        let live: Vec<ProcessId> = (0..imp.processes())
            .map(ProcessId)
            .filter(|p| !crashes.is_crashed(*p, step_no))
            .collect();
        let done = live
            .iter()
            .filter(|p| imp.is_client(**p))
            .all(|p| !sim.is_pending(*p) && workload.next(p.0, cursor[p.0]).is_none());
        if done {
            return Ok(sim.into_trace());
        }
        let candidates: Vec<Candidate> = live
            .iter()
            .map(|&pid| {
                let state = sim.state().state(pid);
                let client = imp.is_client(pid);
                Candidate {
                    pid,
                    can_return: client && imp.ret_enabled(state).is_some(),
                    next_call: if client && !imp.pending(state) {
                        workload.next(pid.0, cursor[pid.0]).cloned()
                    } else {
                        None
                    },
                    waiting: sim.waiting_for(pid),
                }
            })
            .collect();
        let Some(step) = sched.next(step_no, &candidates) else {
            return Err(RunError::SchedulerStopped {
                trace: Box::new(sim.into_trace()),
            });
        };
        sim.apply(&step)
            .map_err(|source| RunError::Step { index: step_no, source })?;
        if let MpStep::Call { pid, .. } = step {
            cursor[pid.0] += 1;
        }
    }
    let done = (0..imp.clients())
        .map(ProcessId)
        .filter(|p| !crashes.is_crashed(*p, bound))
        .all(|p| !sim.is_pending(p) && workload.next(p.0, cursor[p.0]).is_none());
    if done {
        Ok(sim.into_trace())
    } else {
        Err(RunError::BudgetExhausted {
            trace: Box::new(sim.into_trace()),
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplayError {
    #[error("initial state digest mismatch")]
    InitialMismatch,
    #[error("digest mismatch at step {index}: trace has {expected:016x}, replay gives {actual:016x}")]
    DigestMismatch { index: usize, expected: u64, actual: u64 },
    #[error("label mismatch at step {index}")]
    LabelMismatch { index: usize },
    #[error("step {index} is not a message-passing step: {message}")]
    BadStep { index: usize, message: String },
    #[error("step {index}: {source}")]
    Step { index: usize, source: MpError },
}

/// Re-executes a message-passing trace and checks every digest.
pub fn replay_mp<I: MpImplementation>(imp: &I, trace: &ExecutionTrace) -> Result<(), ReplayError> {
    let mut sim = Simulation::new(imp, trace.header.clone(), false);
    if sim.trace().initial_digest != trace.initial_digest {
        return Err(ReplayError::InitialMismatch);
    }
    for (index, recorded) in trace.steps.iter().enumerate() {
        let pid = ProcessId(recorded.pid);
        let step = match (&recorded.rule, &recorded.label, &recorded.detail) {
            (Rule::Call, Some(Action::Call { method, arg, .. }), _) => MpStep::Call {
                pid,
                invocation: Invocation {
                    method: *method,
                    arg: arg.clone(),
                },
            },
            (Rule::Ret, Some(Action::Return { .. }), _) => MpStep::Return { pid },
            (Rule::Int, None, StepDetail::Recv(recv)) => MpStep::Internal {
                pid,
                recv: recv.clone(),
            },
            (rule, _, _) => {
                return Err(ReplayError::BadStep {
                    index,
                    message: format!("rule {} with mismatched label or detail", rule.tag()),
                })
            }
        };
        let label = sim.apply(&step).map_err(|source| ReplayError::Step { index, source })?;
        if label != recorded.label {
            return Err(ReplayError::LabelMismatch { index });
        }
        let actual = sim.trace().steps[index].digest;
        if actual != recorded.digest {
            return Err(ReplayError::DigestMismatch {
                index,
                expected: recorded.digest,
                actual,
            });
        }
    }
    Ok(())
}

/// Value returned by a completed call in a history, if any.
pub fn returned_value(history: &History, inv: InvId) -> Option<&Value> {
    history.actions().iter().find_map(|a| match a {
        Action::Return { inv: i, value } if *i == inv => Some(value),
        _ => None,
    })
}

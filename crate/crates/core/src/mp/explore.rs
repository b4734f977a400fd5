//! Exhaustive exploration of message-passing implementations.
//!
//! Internal steps receive one message at a time (or nothing). With dedupe on,
//! a delivered message is never offered again, and internal steps that leave
//! the global state unchanged are pruned: the message then stays available,
//! which only adds behaviors.

use std::collections::BTreeSet;

use super::{
    enabled_steps, step_call, step_internal, step_return, CrashScript, Delivery, FairRandom, GlobalOf, MpGlobalState,
    MpImplementation, MpStep, MsgUid, ProcessId, Workload,
};
use crate::checkers::linearizability::check_linearizable;
use crate::explore::Model;
use crate::history::{Action, History, InvId};
use crate::object_spec::SeqSpec;
use crate::par::Parallelism;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MpExploreState<S, P> {
    pub g: MpGlobalState<S, P>,
    pub cursor: Vec<usize>,
    pub current: Vec<Option<InvId>>,
    pub next_inv: u64,
    pub delivered: BTreeSet<MsgUid>,
    pub history: History,
}

pub type ExploreStateOf<I> = MpExploreState<<I as MpImplementation>::State, <I as MpImplementation>::Payload>;

/// An implementation under a fixed workload, as an explorable model.
pub struct MpModel<'a, I: MpImplementation> {
    pub imp: &'a I,
    pub workload: Workload,
    /// Leaf histories are checked against this specification.
    pub spec: Option<SeqSpec>,
    pub delivery: Delivery,
    pub dedupe: bool,
    /// Processes that never take a step.
    pub crashed: BTreeSet<ProcessId>,
    /// Reject any state where a return is enabled.
    pub forbid_returns: bool,
}

impl<'a, I: MpImplementation> MpModel<'a, I> {
    pub fn new(imp: &'a I, workload: Workload) -> Self {
        Self {
            imp,
            workload,
            spec: None,
            delivery: Delivery::Singletons,
            dedupe: true,
            crashed: BTreeSet::new(),
            forbid_returns: false,
        }
    }

    pub fn checking(mut self, spec: SeqSpec) -> Self {
        self.spec = Some(spec);
        self
    }

    pub fn with_crashed(mut self, crashed: impl IntoIterator<Item = ProcessId>) -> Self {
        self.crashed = crashed.into_iter().collect();
        self
    }

    pub fn with_delivery(mut self, delivery: Delivery, dedupe: bool) -> Self {
        self.delivery = delivery;
        self.dedupe = dedupe;
        self
    }

    pub fn forbidding_returns(mut self) -> Self {
        self.forbid_returns = true;
        self
    }
}

impl<I: MpImplementation> Model for MpModel<'_, I> {
    type State = ExploreStateOf<I>;
    type Step = MpStep;

    fn initial(&self) -> Self::State {
        MpExploreState {
            g: MpGlobalState::initial(self.imp),
            cursor: vec![0; self.imp.clients()],
            current: vec![None; self.imp.clients()],
            next_inv: 0,
            delivered: BTreeSet::new(),
            history: History::new(),
        }
    }

    fn steps(&self, s: &Self::State) -> Vec<MpStep> {
        let next_calls: Vec<_> = (0..self.imp.clients())
            .map(|c| self.workload.next(c, s.cursor[c]).cloned())
            .collect();
        let mut steps = enabled_steps(
            self.imp,
            &s.g,
            &next_calls,
            self.dedupe.then_some(&s.delivered),
            self.delivery,
        );
        steps.retain(|st| !self.crashed.contains(&st.pid()));
        steps
    }

    fn next(&self, s: &Self::State, step: &MpStep) -> Option<Self::State> {
        if let MpStep::Internal { pid, recv } = step {
            let msgs = s.g.resolve_recv(*pid, recv).ok()?;
            let slot = s.g.slot(*pid);
            let t = self.imp.on_receive(*pid, &slot.state, &msgs)?;
            if self.dedupe && t.sends.is_empty() && t.state == slot.state {
                return None;
            }
            let mut n = s.clone();
            n.g.slots[pid.0] = slot.advanced(*pid, t);
            if self.dedupe {
                n.delivered.extend(recv.iter().copied());
            }
            return Some(n);
        }
        let mut n = s.clone();
        match step {
            MpStep::Call { pid, invocation } => {
                n.g = step_call(self.imp, &s.g, *pid, invocation).ok()?;
                let inv = InvId(s.next_inv);
                n.next_inv += 1;
                n.cursor[pid.0] += 1;
                n.current[pid.0] = Some(inv);
                n.history.push(Action::call(inv, invocation));
            }
            MpStep::Return { pid } => {
                let (g, value) = step_return(self.imp, &s.g, *pid).ok()?;
                n.g = g;
                let inv = n.current[pid.0].take()?;
                n.history.push(Action::Return { inv, value });
            }
            MpStep::Internal { .. } => unreachable!(),
        }
        Some(n)
    }

    fn check(&self, s: &Self::State) -> Result<(), String> {
        if self.forbid_returns {
            if let Some(c) = (0..self.imp.clients()).find(|c| self.imp.ret_enabled(s.g.state(ProcessId(*c))).is_some()) {
                return Err(format!("client {c} can return"));
            }
        }
        Ok(())
    }

    fn check_leaf(&self, s: &Self::State, _terminal: bool) -> Result<(), String> {
        let Some(spec) = &self.spec else { return Ok(()) };
        match check_linearizable(&s.history, spec) {
            Ok(v) if v.is_linearizable() => Ok(()),
            Ok(_) => Err(format!("history is not linearizable:\n{}", s.history.to_text())),
            Err(e) => Err(e.to_string()),
        }
    }
}

/// Outcome of a bounded f-nonblocking check.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NonblockingReport {
    pub runs: usize,
    /// `(crashed servers, crash step, seed, error)` for every failed run.
    pub failures: Vec<(Vec<ProcessId>, usize, u64, String)>,
}

impl NonblockingReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Every set of at most `f` servers.
pub fn server_crash_sets(clients: usize, servers: usize, f: usize) -> Vec<Vec<ProcessId>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..f {
        let mut next = Vec::new();
        for set in &frontier {
            let from = set.last().map_or(clients, |p: &ProcessId| p.0 + 1);
            for k in from..clients + servers {
                let mut s = set.clone();
                s.push(ProcessId(k));
                next.push(s);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Runs the workload under fair random schedules with every crash set of at
/// most `f` servers, crashing at each of `crash_points`, and requires every
/// invocation of the (live) clients to complete within `budget` steps.
pub fn check_f_nonblocking<I: MpImplementation>(
    imp: &I,
    workload: &Workload,
    f: usize,
    crash_points: &[usize],
    seeds: std::ops::Range<u64>,
    budget: usize,
    par: Parallelism,
) -> NonblockingReport {
    let mut cases = Vec::new();
    for set in server_crash_sets(imp.clients(), imp.servers(), f) {
        let points: &[usize] = if set.is_empty() { &[0] } else { crash_points };
        for &at in points {
            for seed in seeds.clone() {
                cases.push((set.clone(), at, seed));
            }
        }
    }
    let runs = cases.len();
    let deadline = FairRandom::default_deadline(imp.processes());
    let results = par.map(cases, |(set, at, seed)| {
        let crashes = CrashScript::at(set.iter().map(|p| (*p, at)).collect());
        let mut sched = FairRandom::new(seed, deadline);
        super::run(imp, &mut sched, workload, budget, &crashes, false)
            .err()
            .map(|e| (set, at, seed, e.to_string()))
    });
    NonblockingReport {
        runs,
        failures: results.into_iter().flatten().collect(),
    }
}

/// The global state reached by applying `steps` from the initial state.
pub fn state_after<I: MpImplementation>(imp: &I, steps: &[MpStep]) -> Result<GlobalOf<I>, super::MpError> {
    let mut g = MpGlobalState::initial(imp);
    for step in steps {
        g = match step {
            MpStep::Call { pid, invocation } => step_call(imp, &g, *pid, invocation)?,
            MpStep::Return { pid } => step_return(imp, &g, *pid)?.0,
            MpStep::Internal { pid, recv } => step_internal(imp, &g, *pid, recv)?,
        };
    }
    Ok(g)
}

//! Message-passing implementations as labeled transition systems.
//!
//! A global state maps every process to its local state and the pool of all
//! messages it has sent. Three rules advance one process at a time:
//!
//! * CALL: an idle client takes a call action,
//! * RETURN: a client whose state enables a return value takes it,
//! * INTERNAL: any process consumes a chosen subset of the messages
//!   addressed to it (possibly empty, possibly already delivered).
//!
//! Transition functions are deterministic; all nondeterminism is in which
//! process moves and which messages it receives.

mod explore;
mod sim;

use std::collections::BTreeSet;
use std::fmt;
use std::hash::Hash;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::digest::fingerprint;
use crate::history::{Invocation, Value};

pub use explore::{
    check_f_nonblocking, server_crash_sets, state_after, ExploreStateOf, MpExploreState, MpModel, NonblockingReport,
};
pub use sim::{
    replay_mp, returned_value, run, Candidate, CrashScript, FairRandom, MpScheduler, MpStep, ReplayError,
    RoundRobin, RunError, Scripted, Simulation, Workload,
};

/// Index of a process. Clients are `0..m`, servers `m..m+n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProcessId(pub usize);

impl ProcessId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Unique message id: the sender and its per-sender sequence number.
///
/// The sequence number is the message's position in the sender's pool, so a
/// uid resolves to its message in constant time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MsgUid {
    pub sender: usize,
    pub seq: u32,
}

impl fmt::Display for MsgUid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.sender, self.seq)
    }
}

impl FromStr for MsgUid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s.split_once('.').ok_or_else(|| format!("bad message uid `{s}`"))?;
        Ok(MsgUid {
            sender: a.parse().map_err(|_| format!("bad message uid `{s}`"))?,
            seq: b.parse().map_err(|_| format!("bad message uid `{s}`"))?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Message<P> {
    pub src: ProcessId,
    pub dst: ProcessId,
    pub payload: P,
    pub uid: MsgUid,
}

/// Append-only pool of the messages sent by one process.
///
/// The pool keeps a running hash of its contents, so hashing a pool costs
/// the same however many messages it holds.
#[derive(Clone, Debug)]
pub struct Pool<P> {
    msgs: Arc<Vec<Message<P>>>,
    chain: u128,
}

impl<P> Default for Pool<P> {
    fn default() -> Self {
        Pool {
            msgs: Arc::new(Vec::new()),
            chain: 0,
        }
    }
}

impl<P: PartialEq> PartialEq for Pool<P> {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.msgs, &other.msgs) || (self.chain == other.chain && self.msgs == other.msgs)
    }
}

impl<P: Eq> Eq for Pool<P> {}

impl<P> Hash for Pool<P> {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.msgs.len().hash(state);
        self.chain.hash(state);
    }
}

impl<P: Clone> Pool<P> {
    pub fn len(&self) -> usize {
        self.msgs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.msgs.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Message<P>> {
        self.msgs.iter()
    }

    pub fn get(&self, seq: u32) -> Option<&Message<P>> {
        self.msgs.get(seq as usize)
    }

    /// Adds freshly sent messages, numbering them after the existing ones.
    pub fn send(&mut self, src: ProcessId, sends: Vec<(ProcessId, P)>)
    where
        P: Hash,
    {
        if sends.is_empty() {
            return;
        }
        let pool = Arc::make_mut(&mut self.msgs);
        for (dst, payload) in sends {
            let uid = MsgUid {
                sender: src.0,
                seq: pool.len() as u32,
            };
            let msg = Message {
                src,
                dst,
                payload,
                uid,
            };
            self.chain = fingerprint(&(self.chain, &msg));
            pool.push(msg);
        }
    }

    /// Pools only grow, so inclusion is a prefix check.
    pub fn is_prefix_of(&self, later: &Pool<P>) -> bool
    where
        P: PartialEq,
    {
        Arc::ptr_eq(&self.msgs, &later.msgs)
            || (self.len() <= later.len() && self.msgs[..] == later.msgs[..self.len()])
    }
}

/// One process's entry in a global state: local state and sent pool.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Slot<S, P> {
    pub state: S,
    pub pool: Pool<P>,
}

impl<S, P: Clone + Hash> Slot<S, P> {
    pub fn new(state: S) -> Self {
        Self {
            state,
            pool: Pool::default(),
        }
    }

    /// The state/pool pair after `pid` takes a transition.
    pub fn advanced(&self, pid: ProcessId, t: Transition<S, P>) -> Self {
        let mut pool = self.pool.clone();
        pool.send(pid, t.sends);
        Slot {
            state: t.state,
            pool,
        }
    }
}

/// Result of a transition function: next local state and sent messages.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transition<S, P> {
    pub state: S,
    pub sends: Vec<(ProcessId, P)>,
}

impl<S, P> Transition<S, P> {
    pub fn silent(state: S) -> Self {
        Self {
            state,
            sends: Vec::new(),
        }
    }
}

/// A message-passing implementation with `m` clients and `n` servers.
///
/// Each method is a partial transition function; `None` means undefined.
pub trait MpImplementation: Send + Sync {
    type State: Clone + Eq + Hash + fmt::Debug + Send + Sync;
    type Payload: Clone + Eq + Ord + Hash + fmt::Debug + Send + Sync;

    fn name(&self) -> String;
    fn clients(&self) -> usize;
    fn servers(&self) -> usize;
    fn initial_state(&self, pid: ProcessId) -> Self::State;

    /// Client transition on a call action.
    fn on_call(
        &self,
        pid: ProcessId,
        state: &Self::State,
        call: &Invocation,
    ) -> Option<Transition<Self::State, Self::Payload>>;

    /// Client transition on the return action `ret(value)`.
    fn on_return(
        &self,
        pid: ProcessId,
        state: &Self::State,
        value: &Value,
    ) -> Option<Transition<Self::State, Self::Payload>>;

    /// Transition on receiving a set of messages, given sorted by uid.
    fn on_receive(
        &self,
        pid: ProcessId,
        state: &Self::State,
        msgs: &[&Message<Self::Payload>],
    ) -> Option<Transition<Self::State, Self::Payload>>;

    fn pending(&self, state: &Self::State) -> bool;

    /// The unique value `y` such that `ret(y)` is enabled, if any.
    fn ret_enabled(&self, state: &Self::State) -> Option<Value>;

    fn processes(&self) -> usize {
        self.clients() + self.servers()
    }

    fn is_client(&self, pid: ProcessId) -> bool {
        pid.0 < self.clients()
    }
}

pub type GlobalOf<I> = MpGlobalState<<I as MpImplementation>::State, <I as MpImplementation>::Payload>;
pub type SlotOf<I> = Slot<<I as MpImplementation>::State, <I as MpImplementation>::Payload>;
pub type MessageOf<I> = Message<<I as MpImplementation>::Payload>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MpError {
    #[error("process {0} does not exist")]
    UnknownProcess(ProcessId),
    #[error("process {0} is not a client")]
    NotAClient(ProcessId),
    #[error("client {0} already has a pending invocation")]
    PendingInvocation(ProcessId),
    #[error("transition of process {pid} is undefined on {input}")]
    UndefinedTransition { pid: ProcessId, input: String },
    #[error("no return is enabled at client {0}")]
    ReturnNotEnabled(ProcessId),
    #[error("message {uid} cannot be received by process {pid}")]
    ForeignMessage { pid: ProcessId, uid: MsgUid },
}

/// The global state `g`: per process, local state plus sent pool.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MpGlobalState<S, P> {
    pub clients: usize,
    pub slots: Vec<Slot<S, P>>,
}

impl<S: Clone, P: Clone + PartialEq + Hash> MpGlobalState<S, P> {
    pub fn initial<I>(imp: &I) -> Self
    where
        I: MpImplementation<State = S, Payload = P>,
    {
        Self {
            clients: imp.clients(),
            slots: (0..imp.processes())
                .map(|k| Slot::new(imp.initial_state(ProcessId(k))))
                .collect(),
        }
    }

    pub fn slot(&self, pid: ProcessId) -> &Slot<S, P> {
        &self.slots[pid.0]
    }

    pub fn state(&self, pid: ProcessId) -> &S {
        &self.slots[pid.0].state
    }

    pub fn message(&self, uid: MsgUid) -> Option<&Message<P>> {
        self.slots.get(uid.sender)?.pool.get(uid.seq)
    }

    /// All messages in any pool addressed to `dst`, in uid order.
    pub fn messages_to(&self, dst: ProcessId) -> impl Iterator<Item = &Message<P>> + '_ {
        self.slots
            .iter()
            .flat_map(|slot| slot.pool.iter())
            .filter(move |m| m.dst == dst)
    }

    pub fn total_messages(&self) -> usize {
        self.slots.iter().map(|s| s.pool.len()).sum()
    }

    /// Every pool of `self` is included in the matching pool of `later`.
    pub fn pools_included_in(&self, later: &Self) -> bool {
        self.slots.len() == later.slots.len()
            && self
                .slots
                .iter()
                .zip(&later.slots)
                .all(|(a, b)| a.pool.is_prefix_of(&b.pool))
    }

    fn check_pid(&self, pid: ProcessId) -> Result<(), MpError> {
        if pid.0 < self.slots.len() {
            Ok(())
        } else {
            Err(MpError::UnknownProcess(pid))
        }
    }

    fn check_client(&self, pid: ProcessId) -> Result<(), MpError> {
        self.check_pid(pid)?;
        if pid.0 < self.clients {
            Ok(())
        } else {
            Err(MpError::NotAClient(pid))
        }
    }

    /// Resolves a receive set, rejecting unknown messages and messages for
    /// other processes. The result is sorted by uid with duplicates removed.
    pub fn resolve_recv(&self, pid: ProcessId, recv: &[MsgUid]) -> Result<Vec<&Message<P>>, MpError> {
        let uids: BTreeSet<MsgUid> = recv.iter().copied().collect();
        uids.into_iter()
            .map(|uid| match self.message(uid) {
                Some(msg) if msg.dst == pid => Ok(msg),
                _ => Err(MpError::ForeignMessage { pid, uid }),
            })
            .collect()
    }
}

/// CALL rule.
pub fn step_call<I: MpImplementation>(
    imp: &I,
    g: &GlobalOf<I>,
    pid: ProcessId,
    call: &Invocation,
) -> Result<GlobalOf<I>, MpError> {
    g.check_client(pid)?;
    let slot = g.slot(pid);
    if imp.pending(&slot.state) {
        return Err(MpError::PendingInvocation(pid));
    }
    let t = imp
        .on_call(pid, &slot.state, call)
        .ok_or_else(|| MpError::UndefinedTransition {
            pid,
            input: format!("call {call}"),
        })?;
    let mut next = g.clone();
    next.slots[pid.0] = slot.advanced(pid, t);
    Ok(next)
}

/// RETURN rule. Returns the successor state and the returned value.
pub fn step_return<I: MpImplementation>(
    imp: &I,
    g: &GlobalOf<I>,
    pid: ProcessId,
) -> Result<(GlobalOf<I>, Value), MpError> {
    g.check_client(pid)?;
    let slot = g.slot(pid);
    let value = imp.ret_enabled(&slot.state).ok_or(MpError::ReturnNotEnabled(pid))?;
    let t = imp
        .on_return(pid, &slot.state, &value)
        .ok_or_else(|| MpError::UndefinedTransition {
            pid,
            input: format!("ret({value})"),
        })?;
    let mut next = g.clone();
    next.slots[pid.0] = slot.advanced(pid, t);
    Ok((next, value))
}

/// INTERNAL rule: `pid` receives the messages identified by `recv`.
pub fn step_internal<I: MpImplementation>(
    imp: &I,
    g: &GlobalOf<I>,
    pid: ProcessId,
    recv: &[MsgUid],
) -> Result<GlobalOf<I>, MpError> {
    g.check_pid(pid)?;
    let msgs = g.resolve_recv(pid, recv)?;
    let slot = g.slot(pid);
    let t = imp
        .on_receive(pid, &slot.state, &msgs)
        .ok_or_else(|| MpError::UndefinedTransition {
            pid,
            input: format!("{} received messages", msgs.len()),
        })?;
    let mut next = g.clone();
    next.slots[pid.0] = slot.advanced(pid, t);
    Ok(next)
}

/// How received sets are enumerated for internal steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Delivery {
    /// Every subset of the eligible messages.
    Powerset,
    /// The empty set and each eligible message alone.
    Singletons,
}

/// Enumerates enabled steps at `g`.
///
/// `next_calls[i]` is the invocation client `i` would make next, if any.
/// With `delivered` given (dedupe mode), messages already delivered once are
/// not offered again.
pub fn enabled_steps<I: MpImplementation>(
    imp: &I,
    g: &GlobalOf<I>,
    next_calls: &[Option<Invocation>],
    delivered: Option<&BTreeSet<MsgUid>>,
    delivery: Delivery,
) -> Vec<MpStep> {
    let mut steps = Vec::new();
    for c in 0..imp.clients() {
        let pid = ProcessId(c);
        let state = g.state(pid);
        if imp.ret_enabled(state).is_some() {
            steps.push(MpStep::Return { pid });
        }
        if !imp.pending(state) {
            if let Some(Some(call)) = next_calls.get(c) {
                steps.push(MpStep::Call {
                    pid,
                    invocation: call.clone(),
                });
            }
        }
    }
    for k in 0..imp.processes() {
        let pid = ProcessId(k);
        let eligible: Vec<MsgUid> = g
            .messages_to(pid)
            .map(|m| m.uid)
            .filter(|uid| delivered.is_none_or(|d| !d.contains(uid)))
            .collect();
        match delivery {
            Delivery::Powerset => {
                assert!(eligible.len() <= 20, "powerset of {} messages", eligible.len());
                for mask in 0u32..(1u32 << eligible.len()) {
                    let recv = eligible
                        .iter()
                        .enumerate()
                        .filter(|(bit, _)| mask & (1 << bit) != 0)
                        .map(|(_, uid)| *uid)
                        .collect();
                    steps.push(MpStep::Internal { pid, recv });
                }
            }
            Delivery::Singletons => {
                steps.push(MpStep::Internal { pid, recv: Vec::new() });
                for uid in eligible {
                    steps.push(MpStep::Internal { pid, recv: vec![uid] });
                }
            }
        }
    }
    steps
}

#[cfg(test)]
mod tests;

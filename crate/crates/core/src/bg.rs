//! Shared-memory simulation of a message-passing implementation.
//!
//! `m` processes over single-writer registers run the clients of an
//! implementation with `m` clients and `n` servers. Process `i` runs client
//! `i` locally, publishing its state and sent messages in `client[i]`. Server
//! steps are computed by every process and agreed upon one at a time through
//! safe agreement objects `SA[j][r]`; process `i` publishes the agreed step
//! `r` of server `j` in `server[i][j]`, tagged with `r`. Received messages are
//! gathered by reading every register, taking for each server the entry with
//! the largest step number.
//!
//! [`image`] maps a shared-memory state to the message-passing state it
//! stands for, and [`RefinementMonitor`] checks step by step that the image
//! moves by legal message-passing transitions.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::history::{Action, Invocation, Value};
use crate::mp::{
    step_call, step_internal, step_return, GlobalOf, Message, MpError, MpGlobalState, MpImplementation, MpStep, MsgUid,
    Pool, ProcessId, Simulation, Slot, Transition,
};
use crate::safe_agreement::{SaCell, SaDone, SaMemory, SaProc, SaReg};
use crate::sm::{RegKey, SharedMemory, SmError, SmEvent, SmObserver, SmSystem};
use crate::trace::{ExecutionTrace, Rule, TraceHeader, TraceStep};

/// Contents of `client[i]`. `recv` lists the messages of the step that
/// produced the cell, kept so the simulated run can be rebuilt.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ClientCell<S, P> {
    pub state: S,
    pub msgs: Pool<P>,
    pub recv: Vec<MsgUid>,
}

/// Contents of `server[i][j]`: a server state and pool tagged with its step
/// number.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ServerCell<S, P> {
    pub state: S,
    pub msgs: Pool<P>,
    pub sn: u64,
    pub recv: Vec<MsgUid>,
    /// Process whose proposal this step is (none for the initial cell).
    pub proposer: Option<usize>,
}

/// A proposed server step.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Proposal<S, P> {
    pub state: S,
    pub msgs: Pool<P>,
    pub recv: Vec<MsgUid>,
    pub proposer: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BgReg {
    Client(usize),
    /// `server[owner][server]`.
    Server(usize, usize),
    Sa {
        server: usize,
        round: u64,
        reg: SaReg,
    },
}

impl fmt::Display for BgReg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BgReg::Client(i) => write!(f, "client[{i}]"),
            BgReg::Server(i, j) => write!(f, "server[{i}][{j}]"),
            BgReg::Sa { server, round, reg } => write!(f, "SA[{server}][{round}].{reg}"),
        }
    }
}

impl RegKey for BgReg {
    fn owner(&self) -> usize {
        match self {
            BgReg::Client(i) | BgReg::Server(i, _) => *i,
            BgReg::Sa { reg, .. } => reg.owner(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum BgCell<S, P> {
    Client(ClientCell<S, P>),
    Server(ServerCell<S, P>),
    Sa(SaCell<Proposal<S, P>>),
}

pub type BgMemory<S, P> = SharedMemory<BgReg, BgCell<S, P>>;

/// Where a collect is: reading `client[k]`, or `server[i][k]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CollectPos {
    Client(usize),
    Server { server: usize, owner: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Collect<S, P> {
    /// Process whose step is being computed.
    pub target: usize,
    pub pos: CollectPos,
    pub msgs: BTreeMap<MsgUid, Message<P>>,
    /// Entries of `server[..][k]` read so far for the current server `k`.
    pub lserver: Vec<ServerCell<S, P>>,
}

/// Control point of a process. Local statements run eagerly, so a busy
/// process always waits at a shared access or its return.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum BgPc<S, P> {
    Idle,
    /// Called; the write of `client[i]` for the call is next.
    CallWrite(Invocation),
    /// `old_client` saved; the write of `client[i]` for the return is next.
    RetWrite(Value),
    /// Return of the value is next.
    RetReturn(Value),
    Collect(Box<Collect<S, P>>),
    ClientWrite(Box<ClientCell<S, P>>),
    Propose(usize),
    Resolve(usize),
    ServerWrite(Box<ServerCell<S, P>>, usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BgProc<S, P> {
    pub pc: BgPc<S, P>,
    /// Local copy of `client[i]`; process `i` is its only writer.
    pub client: ClientCell<S, P>,
    pub old_client: Option<ClientCell<S, P>>,
    /// Local copies of `server[i][j]`, by server index `j - m`.
    pub server: Vec<ServerCell<S, P>>,
    pub resolved: Vec<bool>,
    pub round: Vec<u64>,
    /// This process's side of `SA[j][round[j]]`.
    pub sa: Vec<SaProc<Proposal<S, P>>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BgState<S, P> {
    pub mem: BgMemory<S, P>,
    pub procs: Vec<BgProc<S, P>>,
}

pub type BgStateOf<I> = BgState<<I as MpImplementation>::State, <I as MpImplementation>::Payload>;
type ClientOf<I> = ClientCell<<I as MpImplementation>::State, <I as MpImplementation>::Payload>;
type ServerOf<I> = ServerCell<<I as MpImplementation>::State, <I as MpImplementation>::Payload>;

/// View of one safe agreement object inside the simulation's memory.
struct SaView<'a, S, P> {
    mem: &'a mut BgMemory<S, P>,
    server: usize,
    round: u64,
}

impl<S, P> SaMemory<Proposal<S, P>> for SaView<'_, S, P>
where
    S: Clone + std::hash::Hash,
    P: Clone + std::hash::Hash,
{
    fn load(&self, reg: SaReg) -> Option<&SaCell<Proposal<S, P>>> {
        let key = BgReg::Sa {
            server: self.server,
            round: self.round,
            reg,
        };
        match self.mem.read(&key) {
            Some(BgCell::Sa(c)) => Some(c),
            _ => None,
        }
    }

    fn store(&mut self, pid: usize, reg: SaReg, cell: SaCell<Proposal<S, P>>) -> Result<(), SmError> {
        let key = BgReg::Sa {
            server: self.server,
            round: self.round,
            reg,
        };
        self.mem.write(pid, key, BgCell::Sa(cell))
    }

    fn name(&self, reg: SaReg) -> String {
        BgReg::Sa {
            server: self.server,
            round: self.round,
            reg,
        }
        .to_string()
    }
}

/// A call or return action of a client.
#[derive(Clone, Copy, Debug)]
pub enum ClientAction<'a> {
    Call(&'a Invocation),
    Ret(&'a Value),
}

/// Applies a call or return transition to a client cell.
pub fn act_step<I: MpImplementation>(
    imp: &I,
    pid: usize,
    cell: &ClientOf<I>,
    a: ClientAction<'_>,
) -> Result<ClientOf<I>, MpError> {
    let p = ProcessId(pid);
    let t = match a {
        ClientAction::Call(inv) => imp.on_call(p, &cell.state, inv),
        ClientAction::Ret(v) => imp.on_return(p, &cell.state, v),
    };
    let t = t.ok_or_else(|| MpError::UndefinedTransition {
        pid: p,
        input: match a {
            ClientAction::Call(inv) => format!("call {inv}"),
            ClientAction::Ret(v) => format!("ret({v})"),
        },
    })?;
    let mut msgs = cell.msgs.clone();
    msgs.send(p, t.sends);
    Ok(ClientCell {
        state: t.state,
        msgs,
        recv: Vec::new(),
    })
}

/// The entry with the largest step number (the first one among equals).
pub fn most_recent<S, P>(entries: &[ServerCell<S, P>]) -> &ServerCell<S, P> {
    let mut best = &entries[0];
    for e in &entries[1..] {
        if e.sn > best.sn {
            best = e;
        }
    }
    best
}

fn apply_receive<I: MpImplementation>(
    imp: &I,
    target: usize,
    state: &I::State,
    msgs: &[&Message<I::Payload>],
) -> Result<Transition<I::State, I::Payload>, MpError> {
    imp.on_receive(ProcessId(target), state, msgs)
        .ok_or_else(|| MpError::UndefinedTransition {
            pid: ProcessId(target),
            input: format!("{} received messages", msgs.len()),
        })
}

fn fault(pid: usize, e: impl fmt::Display) -> SmError {
    SmError::Fault {
        pid,
        message: e.to_string(),
    }
}

/// The shared-memory implementation built from a message-passing one.
#[derive(Clone, Debug)]
pub struct BgSystem<I> {
    pub imp: I,
}

impl<I: MpImplementation> BgSystem<I> {
    pub fn new(imp: I) -> Self {
        Self { imp }
    }

    pub fn m(&self) -> usize {
        self.imp.clients()
    }

    pub fn n(&self) -> usize {
        self.imp.servers()
    }

    fn servers(&self) -> std::ops::Range<usize> {
        self.m()..self.m() + self.n()
    }

    pub fn initial_client(&self, i: usize) -> ClientOf<I> {
        ClientCell {
            state: self.imp.initial_state(ProcessId(i)),
            msgs: Pool::default(),
            recv: Vec::new(),
        }
    }

    pub fn initial_server(&self, j: usize) -> ServerOf<I> {
        ServerCell {
            state: self.imp.initial_state(ProcessId(j)),
            msgs: Pool::default(),
            sn: 0,
            recv: Vec::new(),
            proposer: None,
        }
    }

    /// Current value of `client[i]`.
    pub fn client_reg(&self, s: &BgStateOf<I>, i: usize) -> ClientOf<I> {
        match s.mem.read(&BgReg::Client(i)) {
            Some(BgCell::Client(c)) => c.clone(),
            _ => self.initial_client(i),
        }
    }

    /// Current value of `server[i][j]`.
    pub fn server_reg(&self, s: &BgStateOf<I>, i: usize, j: usize) -> ServerOf<I> {
        match s.mem.read(&BgReg::Server(i, j)) {
            Some(BgCell::Server(c)) => c.clone(),
            _ => self.initial_server(j),
        }
    }

    /// Messages for `j` in all registers, taking for every server the entry
    /// with the largest step number. Reads the registers at one instant.
    pub fn collect_messages(&self, s: &BgStateOf<I>, j: usize) -> Vec<Message<I::Payload>> {
        let mut out: BTreeMap<MsgUid, Message<I::Payload>> = BTreeMap::new();
        for k in 0..self.m() {
            for msg in self.client_reg(s, k).msgs.iter().filter(|m| m.dst.0 == j) {
                out.insert(msg.uid, msg.clone());
            }
        }
        for k in self.servers() {
            let entries: Vec<_> = (0..self.m()).map(|i| self.server_reg(s, i, k)).collect();
            for msg in most_recent(&entries).msgs.iter().filter(|m| m.dst.0 == j) {
                out.insert(msg.uid, msg.clone());
            }
        }
        out.into_values().collect()
    }

    /// The message-passing state a shared-memory state stands for.
    pub fn image(&self, s: &BgStateOf<I>) -> Result<GlobalOf<I>, MpError> {
        let mut slots = Vec::with_capacity(self.imp.processes());
        for (i, p) in s.procs.iter().enumerate() {
            let cell = match &p.pc {
                BgPc::CallWrite(inv) => act_step(&self.imp, i, &self.client_reg(s, i), ClientAction::Call(inv))?,
                BgPc::RetWrite(_) | BgPc::RetReturn(_) => p.old_client.clone().ok_or(MpError::ReturnNotEnabled(ProcessId(i)))?,
                _ => self.client_reg(s, i),
            };
            slots.push(Slot {
                state: cell.state,
                pool: cell.msgs,
            });
        }
        for j in self.servers() {
            let entries: Vec<_> = (0..self.m()).map(|i| self.server_reg(s, i, j)).collect();
            let best = most_recent(&entries);
            slots.push(Slot {
                state: best.state.clone(),
                pool: best.msgs.clone(),
            });
        }
        Ok(MpGlobalState {
            clients: self.m(),
            slots,
        })
    }

    fn start_collect(&self, target: usize) -> BgPc<I::State, I::Payload> {
        BgPc::Collect(Box::new(Collect {
            target,
            pos: CollectPos::Client(0),
            msgs: BTreeMap::new(),
            lserver: Vec::new(),
        }))
    }

    /// Top of the loop: return if enabled, else simulate a client step.
    fn loop_top(&self, i: usize, p: &mut BgProc<I::State, I::Payload>) {
        match self.imp.ret_enabled(&p.client.state) {
            Some(y) => {
                p.old_client = Some(p.client.clone());
                p.pc = BgPc::RetWrite(y);
            }
            None => p.pc = self.start_collect(i),
        }
    }

    /// Turn of server `j` in the round-robin loop.
    fn server_turn(&self, i: usize, p: &mut BgProc<I::State, I::Payload>, j: usize) {
        if j == self.m() + self.n() {
            return self.loop_top(i, p);
        }
        let x = j - self.m();
        if p.resolved[x] {
            p.pc = self.start_collect(j);
        } else {
            p.sa[x].resolve(i).expect("a round is proposed before it is resolved");
            p.pc = BgPc::Resolve(j);
        }
    }

    fn collect_read(
        &self,
        i: usize,
        s: &mut BgStateOf<I>,
        mut c: Box<Collect<I::State, I::Payload>>,
    ) -> Result<SmEvent, SmError> {
        let m = self.m();
        let first_server = m;
        let ev = match c.pos {
            CollectPos::Client(k) => {
                let cell = self.client_reg(s, k);
                for msg in cell.msgs.iter().filter(|x| x.dst.0 == c.target) {
                    c.msgs.insert(msg.uid, msg.clone());
                }
                c.pos = if k + 1 < m {
                    CollectPos::Client(k + 1)
                } else {
                    CollectPos::Server {
                        server: first_server,
                        owner: 0,
                    }
                };
                SmEvent::Read(BgReg::Client(k).to_string())
            }
            CollectPos::Server { server, owner } => {
                c.lserver.push(self.server_reg(s, owner, server));
                if owner + 1 < m {
                    c.pos = CollectPos::Server { server, owner: owner + 1 };
                } else {
                    let best = most_recent(&c.lserver).clone();
                    for msg in best.msgs.iter().filter(|x| x.dst.0 == c.target) {
                        c.msgs.insert(msg.uid, msg.clone());
                    }
                    c.lserver.clear();
                    c.pos = CollectPos::Server {
                        server: server + 1,
                        owner: 0,
                    };
                }
                SmEvent::Read(BgReg::Server(owner, server).to_string())
            }
        };
        let done = matches!(c.pos, CollectPos::Server { server, .. } if server == m + self.n());
        let p = &mut s.procs[i];
        if !done {
            p.pc = BgPc::Collect(c);
            return Ok(ev);
        }
        let msgs: Vec<&Message<I::Payload>> = c.msgs.values().collect();
        let recv: Vec<MsgUid> = c.msgs.keys().copied().collect();
        let target = c.target;
        if target < m {
            let t = apply_receive(&self.imp, target, &p.client.state, &msgs).map_err(|e| fault(i, e))?;
            let mut pool = p.client.msgs.clone();
            pool.send(ProcessId(target), t.sends);
            p.pc = BgPc::ClientWrite(Box::new(ClientCell {
                state: t.state,
                msgs: pool,
                recv,
            }));
        } else {
            let x = target - m;
            let t = apply_receive(&self.imp, target, &p.server[x].state, &msgs).map_err(|e| fault(i, e))?;
            let mut pool = p.server[x].msgs.clone();
            pool.send(ProcessId(target), t.sends);
            p.round[x] += 1;
            p.resolved[x] = false;
            p.sa[x] = SaProc::new();
            let proposal = Proposal {
                state: t.state,
                msgs: pool,
                recv,
                proposer: i,
            };
            p.sa[x].propose(i, proposal).map_err(|e| fault(i, e))?;
            p.pc = BgPc::Propose(target);
        }
        Ok(ev)
    }
}

impl<I: MpImplementation> SmSystem for BgSystem<I> {
    type State = BgStateOf<I>;

    fn name(&self) -> String {
        format!("bg({})", self.imp.name())
    }

    fn processes(&self) -> usize {
        self.m()
    }

    fn initial(&self) -> Self::State {
        let proc_of = |i: usize| BgProc {
            pc: BgPc::Idle,
            client: self.initial_client(i),
            old_client: None,
            server: self.servers().map(|j| self.initial_server(j)).collect(),
            resolved: vec![true; self.n()],
            round: vec![0; self.n()],
            sa: vec![SaProc::new(); self.n()],
        };
        BgState {
            mem: SharedMemory::new(),
            procs: (0..self.m()).map(proc_of).collect(),
        }
    }

    fn header(&self, seed: u64) -> TraceHeader {
        TraceHeader::new(self.m(), self.n(), seed)
            .with("kind", "sm")
            .with("impl", "bg")
            .with("inner", self.imp.name())
    }

    fn pending(&self, s: &Self::State, pid: usize) -> bool {
        s.procs[pid].pc != BgPc::Idle
    }

    fn call(&self, s: &mut Self::State, pid: usize, inv: &Invocation) -> Result<(), SmError> {
        let p = s.procs.get_mut(pid).ok_or(SmError::UnknownProcess(pid))?;
        if p.pc != BgPc::Idle {
            return Err(SmError::PendingInvocation(pid));
        }
        p.pc = BgPc::CallWrite(inv.clone());
        Ok(())
    }

    fn step(&self, s: &mut Self::State, i: usize) -> Result<SmEvent, SmError> {
        let m = self.m();
        let pc = std::mem::replace(&mut s.procs[i].pc, BgPc::Idle);
        match pc {
            BgPc::Idle => Err(SmError::NoEnabledStatement(i)),
            BgPc::CallWrite(inv) => {
                let p = &mut s.procs[i];
                let cell = act_step(&self.imp, i, &p.client, ClientAction::Call(&inv)).map_err(|e| fault(i, e))?;
                p.client = cell.clone();
                s.mem.write(i, BgReg::Client(i), BgCell::Client(cell))?;
                self.loop_top(i, &mut s.procs[i]);
                Ok(SmEvent::Write(BgReg::Client(i).to_string()))
            }
            BgPc::RetWrite(y) => {
                let p = &mut s.procs[i];
                let cell = act_step(&self.imp, i, &p.client, ClientAction::Ret(&y)).map_err(|e| fault(i, e))?;
                p.client = cell.clone();
                p.pc = BgPc::RetReturn(y);
                s.mem.write(i, BgReg::Client(i), BgCell::Client(cell))?;
                Ok(SmEvent::Write(BgReg::Client(i).to_string()))
            }
            BgPc::RetReturn(y) => {
                s.procs[i].old_client = None;
                Ok(SmEvent::Return(y))
            }
            BgPc::Collect(c) => self.collect_read(i, s, c),
            BgPc::ClientWrite(cell) => {
                s.procs[i].client = (*cell).clone();
                s.mem.write(i, BgReg::Client(i), BgCell::Client(*cell))?;
                self.server_turn(i, &mut s.procs[i], m);
                Ok(SmEvent::Write(BgReg::Client(i).to_string()))
            }
            BgPc::Propose(j) | BgPc::Resolve(j) => {
                let x = j - m;
                let BgState { mem, procs } = s;
                let p = &mut procs[i];
                let mut view = SaView {
                    mem,
                    server: j,
                    round: p.round[x],
                };
                let ev = p.sa[x].step(i, m, &mut view)?;
                if p.sa[x].busy() {
                    p.pc = if matches!(pc, BgPc::Propose(_)) {
                        BgPc::Propose(j)
                    } else {
                        BgPc::Resolve(j)
                    };
                    return Ok(ev);
                }
                match p.sa[x].done.clone() {
                    Some(SaDone::Resolved(Some(v))) => {
                        p.resolved[x] = true;
                        let cell = ServerCell {
                            state: v.state,
                            msgs: v.msgs,
                            sn: p.round[x],
                            recv: v.recv,
                            proposer: Some(v.proposer),
                        };
                        p.pc = BgPc::ServerWrite(Box::new(cell), j);
                    }
                    _ => self.server_turn(i, p, j + 1),
                }
                Ok(ev)
            }
            BgPc::ServerWrite(cell, j) => {
                let p = &mut s.procs[i];
                p.server[j - m] = (*cell).clone();
                s.mem.write(i, BgReg::Server(i, j), BgCell::Server(*cell))?;
                self.server_turn(i, &mut s.procs[i], j + 1);
                Ok(SmEvent::Write(BgReg::Server(i, j).to_string()))
            }
        }
    }
}

/// Servers that can no longer take steps: a crashed process is inside its
/// propose on the server's current round, which nobody has published yet.
pub fn stalled_servers<I: MpImplementation>(sys: &BgSystem<I>, s: &BgStateOf<I>, crashed: &[usize]) -> Vec<usize> {
    let mut out = BTreeSet::new();
    for &q in crashed {
        if let BgPc::Propose(j) = s.procs[q].pc {
            let round = s.procs[q].round[j - sys.m()];
            let published = (0..sys.m()).any(|i| sys.server_reg(s, i, j).sn >= round);
            if !published {
                out.insert(j);
            }
        }
    }
    out.into_iter().collect()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RefinementError {
    #[error("step {index}: {message}")]
    Violation { index: usize, message: String },
}

/// An induced message-passing step, with the shared-memory step it comes
/// from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InducedStep {
    pub sm_index: usize,
    pub step: MpStep,
}

/// Checks a shared-memory run of [`BgSystem`] against its image, step by
/// step, and records the induced message-passing run.
pub struct RefinementMonitor<'a, I: MpImplementation> {
    sys: &'a BgSystem<I>,
    current: GlobalOf<I>,
    /// Highest published step number per server.
    top_sn: Vec<u64>,
    pub induced: Vec<InducedStep>,
    /// Shared-memory step at which each message first appeared in a register.
    published_at: HashMap<MsgUid, usize>,
    /// Start of the collect in progress, per process.
    collect_start: Vec<Option<usize>>,
    /// Start of the collect behind each pending client write.
    client_collect: Vec<Option<usize>>,
    /// Start of the collect behind each proposal, by (server, round, proposer).
    proposal_collect: HashMap<(usize, u64, usize), usize>,
    index: usize,
    error: Option<RefinementError>,
    /// Before-state, kept between `before` and `after`.
    pre_pc: Option<BgPc<I::State, I::Payload>>,
}

impl<'a, I: MpImplementation> RefinementMonitor<'a, I> {
    pub fn new(sys: &'a BgSystem<I>) -> Self {
        let s0 = sys.initial();
        Self {
            sys,
            current: sys.image(&s0).expect("the initial state has an image"),
            top_sn: vec![0; sys.n()],
            induced: Vec::new(),
            published_at: HashMap::new(),
            collect_start: vec![None; sys.m()],
            client_collect: vec![None; sys.m()],
            proposal_collect: HashMap::new(),
            index: 0,
            error: None,
            pre_pc: None,
        }
    }

    pub fn error(&self) -> Option<&RefinementError> {
        self.error.as_ref()
    }

    fn fail(&mut self, message: String) -> Result<(), String> {
        let e = RefinementError::Violation {
            index: self.index,
            message: message.clone(),
        };
        self.error.get_or_insert(e);
        Err(message)
    }

    /// Every message for `dst` published before `start` must be received.
    fn check_delivery(&self, dst: usize, recv: &[MsgUid], start: usize, g: &GlobalOf<I>) -> Result<(), String> {
        let recv: BTreeSet<MsgUid> = recv.iter().copied().collect();
        for msg in g.messages_to(ProcessId(dst)) {
            if self.published_at.get(&msg.uid).is_some_and(|&t| t < start) && !recv.contains(&msg.uid) {
                return Err(format!(
                    "message {} for {dst} was published before the collect started at step {start} but not received",
                    msg.uid
                ));
            }
        }
        Ok(())
    }

    fn record_published(&mut self, s: &BgStateOf<I>, pid: usize) {
        let mut cells = vec![self.sys.client_reg(s, pid).msgs];
        for j in self.sys.servers() {
            cells.push(self.sys.server_reg(s, pid, j).msgs);
        }
        for pool in cells {
            for msg in pool.iter() {
                self.published_at.entry(msg.uid).or_insert(self.index);
            }
        }
    }

    fn judge(&mut self, s: &BgStateOf<I>, step: &TraceStep, pre: BgPc<I::State, I::Payload>) -> Result<(), String> {
        let sys = self.sys;
        let pid = step.pid;
        let g2 = match sys.image(s) {
            Ok(g) => g,
            Err(e) => return self.fail(format!("no image: {e}")),
        };
        let g1 = std::mem::replace(&mut self.current, g2.clone());
        match (&step.rule, &step.label) {
            (Rule::Call, Some(Action::Call { method, arg, .. })) => {
                let inv = Invocation {
                    method: *method,
                    arg: arg.clone(),
                };
                match step_call(&sys.imp, &g1, ProcessId(pid), &inv) {
                    Ok(g) if g == g2 => {}
                    Ok(_) => return self.fail("call does not match the call transition".into()),
                    Err(e) => return self.fail(format!("call is not enabled: {e}")),
                }
                self.induced.push(InducedStep {
                    sm_index: self.index,
                    step: MpStep::Call {
                        pid: ProcessId(pid),
                        invocation: inv,
                    },
                });
                return Ok(());
            }
            (Rule::Ret, Some(Action::Return { value, .. })) => {
                match step_return(&sys.imp, &g1, ProcessId(pid)) {
                    Ok((g, v)) if g == g2 && v == *value => {}
                    Ok(_) => return self.fail("return does not match the return transition".into()),
                    Err(e) => return self.fail(format!("return is not enabled: {e}")),
                }
                self.induced.push(InducedStep {
                    sm_index: self.index,
                    step: MpStep::Return { pid: ProcessId(pid) },
                });
                return Ok(());
            }
            _ => {}
        }
        if step.rule == Rule::SmWrite {
            self.record_published(s, pid);
        }
        // first collect read
        if let BgPc::Collect(c) = &pre {
            if c.pos == CollectPos::Client(0) {
                self.collect_start[pid] = Some(self.index);
            }
        }
        match &s.procs[pid].pc {
            BgPc::ClientWrite(_) if matches!(pre, BgPc::Collect(_)) => {
                self.client_collect[pid] = self.collect_start[pid];
            }
            BgPc::Propose(j) if matches!(pre, BgPc::Collect(_)) => {
                let round = s.procs[pid].round[j - sys.m()];
                if let Some(start) = self.collect_start[pid] {
                    self.proposal_collect.insert((*j, round, pid), start);
                }
            }
            _ => {}
        }
        // equal step numbers carry equal cells
        let mut fresh = false;
        if let BgPc::ServerWrite(cell, j) = &pre {
            let x = j - sys.m();
            if cell.sn > self.top_sn[x] {
                if cell.sn != self.top_sn[x] + 1 {
                    return self.fail(format!("server {j} jumped from step {} to {}", self.top_sn[x], cell.sn));
                }
                self.top_sn[x] = cell.sn;
                fresh = true;
            }
            let dup = (0..sys.m())
                .filter(|&i| i != pid)
                .map(|i| sys.server_reg(s, i, *j))
                .find(|c| c.sn == cell.sn);
            if dup.is_some_and(|c| c != **cell) {
                return self.fail(format!("two different entries for step {} of server {j}", cell.sn));
            }
        }
        // the step a write publishes, with the start of its collect
        let published = match &pre {
            BgPc::ClientWrite(cell) => Some((pid, cell.recv.clone(), self.client_collect[pid])),
            BgPc::ServerWrite(cell, j) if fresh => {
                let start = cell
                    .proposer
                    .and_then(|q| self.proposal_collect.get(&(*j, cell.sn, q)).copied());
                Some((*j, cell.recv.clone(), start))
            }
            _ => None,
        };
        if let Some((dst, recv, Some(start))) = &published {
            if let Err(e) = self.check_delivery(*dst, recv, *start, &g1) {
                return self.fail(e);
            }
        }
        let changed: Vec<usize> = (0..g1.slots.len()).filter(|&k| g1.slots[k] != g2.slots[k]).collect();
        let k = match changed.as_slice() {
            [] => return Ok(()),
            [k] => *k,
            _ => return self.fail(format!("processes {changed:?} moved in one step")),
        };
        let recv = match (published, &pre) {
            (Some((dst, recv, _)), _) if dst == k => recv,
            (_, BgPc::ServerWrite(cell, j)) if *j == k => {
                return self.fail(format!("a repeated write of step {} of server {j} changed the state", cell.sn));
            }
            _ => return self.fail(format!("step of process {pid} changed process {k} without a matching write")),
        };
        match step_internal(&sys.imp, &g1, ProcessId(k), &recv) {
            Ok(g) if g == g2 => {}
            Ok(_) => return self.fail(format!("write does not match a step of process {k}")),
            Err(e) => return self.fail(format!("not a legal step of process {k}: {e}")),
        }
        self.induced.push(InducedStep {
            sm_index: self.index,
            step: MpStep::Internal {
                pid: ProcessId(k),
                recv,
            },
        });
        Ok(())
    }

    /// The induced run as a message-passing trace, checked by re-executing
    /// it step by step.
    pub fn induced_trace(&self, seed: u64) -> Result<ExecutionTrace, MpError> {
        let header = TraceHeader::new(self.sys.m(), self.sys.n(), seed)
            .with("kind", "mp")
            .with("impl", self.sys.imp.name());
        let mut sim = Simulation::new(&self.sys.imp, header, false);
        for s in &self.induced {
            sim.apply(&s.step)?;
        }
        Ok(sim.into_trace())
    }
}

impl<I: MpImplementation> SmObserver<BgSystem<I>> for RefinementMonitor<'_, I> {
    fn before(&mut self, _sys: &BgSystem<I>, s: &BgStateOf<I>, pid: usize) {
        self.pre_pc = Some(s.procs[pid].pc.clone());
    }

    fn after(&mut self, _sys: &BgSystem<I>, s: &BgStateOf<I>, step: &TraceStep) -> Result<(), String> {
        self.index = step.index;
        let pre = self.pre_pc.take().unwrap_or(BgPc::Idle);
        self.judge(s, step, pre)
    }
}

/// Runs the monitor over a recorded shared-memory trace of `sys` by
/// re-executing it.
pub fn monitor_refinement<I: MpImplementation>(
    sys: &BgSystem<I>,
    trace: &ExecutionTrace,
) -> Result<Vec<InducedStep>, RefinementError> {
    let mut mon = RefinementMonitor::new(sys);
    let mut sim = crate::sm::SmSimulation::new(sys, trace.header.clone());
    for (index, recorded) in trace.steps.iter().enumerate() {
        let call = match (&recorded.rule, &recorded.label) {
            (Rule::Call, Some(Action::Call { method, arg, .. })) => Some(Invocation {
                method: *method,
                arg: arg.clone(),
            }),
            _ => None,
        };
        mon.before(sys, sim.state(), recorded.pid);
        let step = sim
            .apply(recorded.pid, call.as_ref())
            .map_err(|e| RefinementError::Violation {
                index,
                message: e.to_string(),
            })?
            .clone();
        if step.digest != recorded.digest || step.rule != recorded.rule || step.label != recorded.label {
            return Err(RefinementError::Violation {
                index,
                message: "trace does not re-execute".into(),
            });
        }
        if mon.after(sys, sim.state(), &step).is_err() {
            return Err(mon.error.clone().expect("failure recorded"));
        }
    }
    Ok(mon.induced)
}

#[cfg(test)]
mod tests;

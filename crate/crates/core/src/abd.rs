//! The ABD quorum-replicated register.
//!
//! Servers store a value tagged with a timestamp. A read queries a majority
//! for the highest-timestamped value, writes that value back to a majority,
//! then returns it. A multi-writer write queries a majority for the highest
//! timestamp, takes `(seq + 1, own id)`, and pushes the new value to a
//! majority. In single-writer mode client 0 is the only writer and skips the
//! query phase, numbering its writes locally.
//!
//! Every phase carries a fresh nonce; replies with an older nonce are
//! ignored. Clients count acks by server id, so redelivered replies change
//! nothing; servers remember the uids they have processed and answer each
//! request once.

use std::collections::BTreeSet;

use crate::history::{Invocation, Method, Value};
use crate::mp::{Message, MpImplementation, MpStep, MsgUid, ProcessId, Transition};

/// Totally ordered by `seq`, then `writer`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Timestamp {
    pub seq: u64,
    pub writer: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AbdMsg {
    Query { nonce: u64 },
    QueryReply { nonce: u64, ts: Timestamp, value: i64 },
    Update { nonce: u64, ts: Timestamp, value: i64 },
    Ack { nonce: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AbdServerState {
    pub value: i64,
    pub ts: Timestamp,
    pub seen: BTreeSet<MsgUid>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Idle,
    ReadQuery {
        acks: BTreeSet<usize>,
        best: Option<(Timestamp, i64)>,
    },
    ReadWriteBack {
        acks: BTreeSet<usize>,
        value: i64,
    },
    WriteQuery {
        acks: BTreeSet<usize>,
        max: Timestamp,
        value: i64,
    },
    WritePush {
        acks: BTreeSet<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AbdClientState {
    pub phase: Phase,
    pub nonce: u64,
    pub last: Option<Value>,
    /// Single-writer mode: sequence number of the writer's last write.
    pub local_seq: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum AbdState {
    Client(AbdClientState),
    Server(AbdServerState),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AbdMode {
    MultiWriter,
    /// Client 0 writes, every other client reads.
    SingleWriter,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Abd {
    clients: usize,
    servers: usize,
    init: i64,
    mode: AbdMode,
}

/// Multi-writer ABD with `m` clients and `n` servers.
pub fn abd_implementation(m: usize, n: usize) -> Abd {
    Abd::new(m, n, 0, AbdMode::MultiWriter)
}

impl Abd {
    pub fn new(clients: usize, servers: usize, init: i64, mode: AbdMode) -> Self {
        assert!(servers >= 1, "ABD needs at least one server");
        Self {
            clients,
            servers,
            init,
            mode,
        }
    }

    pub fn single_writer(readers: usize, servers: usize, init: i64) -> Self {
        Self::new(readers + 1, servers, init, AbdMode::SingleWriter)
    }

    pub fn init(&self) -> i64 {
        self.init
    }

    pub fn mode(&self) -> AbdMode {
        self.mode
    }

    pub fn majority(&self) -> usize {
        self.servers / 2 + 1
    }

    fn server_ids(&self) -> impl Iterator<Item = ProcessId> {
        (self.clients..self.clients + self.servers).map(ProcessId)
    }

    fn broadcast(&self, msg: AbdMsg) -> Vec<(ProcessId, AbdMsg)> {
        self.server_ids().map(|s| (s, msg)).collect()
    }

    fn client_receive(&self, pid: ProcessId, st: &AbdClientState, msgs: &[&Message<AbdMsg>]) -> Transition<AbdState, AbdMsg> {
        let mut st = st.clone();
        let mut sends = Vec::new();
        let majority = self.majority();
        for msg in msgs {
            let from = msg.src.0;
            match (&mut st.phase, msg.payload) {
                (Phase::ReadQuery { acks, best }, AbdMsg::QueryReply { nonce, ts, value }) if nonce == st.nonce => {
                    acks.insert(from);
                    if best.is_none_or(|(bts, _)| ts > bts) {
                        *best = Some((ts, value));
                    }
                    if acks.len() >= majority {
                        let (ts, value) = best.expect("a reply was recorded");
                        st.nonce += 1;
                        st.phase = Phase::ReadWriteBack {
                            acks: BTreeSet::new(),
                            value,
                        };
                        sends.extend(self.broadcast(AbdMsg::Update {
                            nonce: st.nonce,
                            ts,
                            value,
                        }));
                    }
                }
                (Phase::WriteQuery { acks, max, value }, AbdMsg::QueryReply { nonce, ts, .. }) if nonce == st.nonce => {
                    acks.insert(from);
                    *max = (*max).max(ts);
                    if acks.len() >= majority {
                        let ts = Timestamp {
                            seq: max.seq + 1,
                            writer: pid.0,
                        };
                        let value = *value;
                        st.nonce += 1;
                        st.phase = Phase::WritePush { acks: BTreeSet::new() };
                        sends.extend(self.broadcast(AbdMsg::Update {
                            nonce: st.nonce,
                            ts,
                            value,
                        }));
                    }
                }
                (Phase::ReadWriteBack { acks, .. } | Phase::WritePush { acks }, AbdMsg::Ack { nonce }) if nonce == st.nonce => {
                    acks.insert(from);
                }
                _ => {}
            }
        }
        Transition {
            state: AbdState::Client(st),
            sends,
        }
    }

    fn server_receive(&self, st: &AbdServerState, msgs: &[&Message<AbdMsg>]) -> Transition<AbdState, AbdMsg> {
        let mut st = st.clone();
        let mut sends = Vec::new();
        for msg in msgs {
            if !st.seen.insert(msg.uid) {
                continue;
            }
            match msg.payload {
                AbdMsg::Query { nonce } => sends.push((
                    msg.src,
                    AbdMsg::QueryReply {
                        nonce,
                        ts: st.ts,
                        value: st.value,
                    },
                )),
                AbdMsg::Update { nonce, ts, value } => {
                    if ts > st.ts {
                        st.ts = ts;
                        st.value = value;
                    }
                    sends.push((msg.src, AbdMsg::Ack { nonce }));
                }
                AbdMsg::QueryReply { .. } | AbdMsg::Ack { .. } => {}
            }
        }
        Transition {
            state: AbdState::Server(st),
            sends,
        }
    }
}

impl MpImplementation for Abd {
    type State = AbdState;
    type Payload = AbdMsg;

    fn name(&self) -> String {
        match self.mode {
            AbdMode::MultiWriter => "abd".to_string(),
            AbdMode::SingleWriter => "abd_sw".to_string(),
        }
    }

    fn clients(&self) -> usize {
        self.clients
    }

    fn servers(&self) -> usize {
        self.servers
    }

    fn initial_state(&self, pid: ProcessId) -> AbdState {
        if pid.0 < self.clients {
            AbdState::Client(AbdClientState {
                phase: Phase::Idle,
                nonce: 0,
                last: None,
                local_seq: 0,
            })
        } else {
            AbdState::Server(AbdServerState {
                value: self.init,
                ts: Timestamp::default(),
                seen: BTreeSet::new(),
            })
        }
    }

    fn on_call(&self, pid: ProcessId, state: &AbdState, call: &Invocation) -> Option<Transition<AbdState, AbdMsg>> {
        let AbdState::Client(st) = state else {
            return None;
        };
        if st.phase != Phase::Idle {
            return None;
        }
        let mut st = st.clone();
        st.nonce += 1;
        let nonce = st.nonce;
        let sends = match (self.mode, call.method) {
            (AbdMode::MultiWriter, Method::Write) => {
                st.phase = Phase::WriteQuery {
                    acks: BTreeSet::new(),
                    max: Timestamp::default(),
                    value: call.arg.as_int()?,
                };
                self.broadcast(AbdMsg::Query { nonce })
            }
            (AbdMode::SingleWriter, Method::Write) if pid.0 == 0 => {
                st.local_seq += 1;
                st.phase = Phase::WritePush { acks: BTreeSet::new() };
                self.broadcast(AbdMsg::Update {
                    nonce,
                    ts: Timestamp {
                        seq: st.local_seq,
                        writer: 0,
                    },
                    value: call.arg.as_int()?,
                })
            }
            (AbdMode::MultiWriter, Method::Read) => {
                st.phase = Phase::ReadQuery {
                    acks: BTreeSet::new(),
                    best: None,
                };
                self.broadcast(AbdMsg::Query { nonce })
            }
            (AbdMode::SingleWriter, Method::Read) if pid.0 != 0 => {
                st.phase = Phase::ReadQuery {
                    acks: BTreeSet::new(),
                    best: None,
                };
                self.broadcast(AbdMsg::Query { nonce })
            }
            _ => return None,
        };
        Some(Transition {
            state: AbdState::Client(st),
            sends,
        })
    }

    fn on_return(&self, _pid: ProcessId, state: &AbdState, value: &Value) -> Option<Transition<AbdState, AbdMsg>> {
        if self.ret_enabled(state).as_ref() != Some(value) {
            return None;
        }
        let AbdState::Client(st) = state else {
            return None;
        };
        let mut st = st.clone();
        st.phase = Phase::Idle;
        st.last = Some(value.clone());
        Some(Transition::silent(AbdState::Client(st)))
    }

    fn on_receive(&self, pid: ProcessId, state: &AbdState, msgs: &[&Message<AbdMsg>]) -> Option<Transition<AbdState, AbdMsg>> {
        Some(match state {
            AbdState::Client(st) => self.client_receive(pid, st, msgs),
            AbdState::Server(st) => self.server_receive(st, msgs),
        })
    }

    fn pending(&self, state: &AbdState) -> bool {
        matches!(state, AbdState::Client(st) if st.phase != Phase::Idle)
    }

    fn ret_enabled(&self, state: &AbdState) -> Option<Value> {
        let AbdState::Client(st) = state else {
            return None;
        };
        match &st.phase {
            Phase::ReadWriteBack { acks, value } if acks.len() >= self.majority() => Some(Value::Int(*value)),
            Phase::WritePush { acks } if acks.len() >= self.majority() => Some(Value::Unit),
            _ => None,
        }
    }
}

/// Schedules of single-writer ABD with one writer, two readers and three
/// servers that share a prefix in which the write is pending, reader 1 has
/// returned the new value, and reader 2 holds one old reply from each of two
/// servers. The branches then let reader 2 return the old value, or the new
/// one through the third server.
pub fn adversarial_read_schedules() -> Vec<Vec<MpStep>> {
    let call = |pid: usize, method: Method, arg: Value| MpStep::Call {
        pid: ProcessId(pid),
        invocation: Invocation { method, arg },
    };
    let int = |pid: usize, recv: &[(usize, u32)]| MpStep::Internal {
        pid: ProcessId(pid),
        recv: recv.iter().map(|&(sender, seq)| MsgUid { sender, seq }).collect(),
    };
    let ret = |pid: usize| MpStep::Return { pid: ProcessId(pid) };
    let prefix = vec![
        call(0, Method::Write, Value::Int(1)),
        int(3, &[(0, 0)]),
        call(2, Method::Read, Value::Unit),
        int(4, &[(2, 1)]),
        int(5, &[(2, 2)]),
        call(1, Method::Read, Value::Unit),
        int(3, &[(1, 0)]),
        int(4, &[(1, 1)]),
        int(1, &[(3, 1), (4, 1)]),
        int(3, &[(1, 3)]),
        int(4, &[(1, 4)]),
        int(1, &[(3, 2), (4, 2)]),
        ret(1),
    ];
    let old = [
        int(2, &[(4, 0), (5, 0)]),
        int(4, &[(2, 4)]),
        int(5, &[(2, 5)]),
        int(2, &[(4, 3), (5, 1)]),
        ret(2),
    ];
    let new = [
        int(3, &[(2, 0)]),
        int(2, &[(3, 3), (5, 0)]),
        int(3, &[(2, 3)]),
        int(5, &[(2, 5)]),
        int(2, &[(3, 4), (5, 1)]),
        ret(2),
    ];
    // the write finishes before reader 2 picks its replies
    let write_done = [int(5, &[(0, 2)]), int(0, &[(3, 0), (5, 1)]), ret(0)];
    let mut out = Vec::new();
    for tail in [&old[..], &new[..]] {
        let mut s = prefix.clone();
        s.extend_from_slice(tail);
        out.push(s);
    }
    let mut s = prefix.clone();
    s.extend_from_slice(&new);
    s.extend([int(5, &[(0, 2)]), int(0, &[(3, 0), (5, 2)]), ret(0)]);
    out.push(s);
    let mut s = prefix;
    s.extend_from_slice(&write_done);
    s.extend([int(3, &[(2, 0)]), int(2, &[(3, 3), (5, 0)])]);
    out.push(s);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mp::{step_call, step_internal, step_return, MpError, MpGlobalState};

    fn uids_to(g: &crate::mp::GlobalOf<Abd>, dst: usize) -> Vec<MsgUid> {
        g.messages_to(ProcessId(dst)).map(|m| m.uid).collect()
    }

    #[test]
    fn write_call_queries_every_server() {
        let abd = abd_implementation(1, 3);
        let g0 = MpGlobalState::initial(&abd);
        let g1 = step_call(&abd, &g0, ProcessId(0), &Invocation::new(Method::Write, 5)).unwrap();
        let pool = &g1.slot(ProcessId(0)).pool;
        assert_eq!(pool.len(), 3);
        assert!(pool.iter().all(|m| matches!(m.payload, AbdMsg::Query { .. })));
        assert!(abd.pending(g1.state(ProcessId(0))));
        assert_eq!(
            step_call(&abd, &g1, ProcessId(0), &Invocation::nullary(Method::Read)),
            Err(MpError::PendingInvocation(ProcessId(0)))
        );
    }

    #[test]
    fn server_adopts_larger_timestamp_and_acks() {
        let abd = abd_implementation(1, 1);
        let server = abd.initial_state(ProcessId(1));
        let update = Message {
            src: ProcessId(0),
            dst: ProcessId(1),
            payload: AbdMsg::Update {
                nonce: 4,
                ts: Timestamp { seq: 2, writer: 0 },
                value: 9,
            },
            uid: MsgUid { sender: 0, seq: 0 },
        };
        let t = abd.on_receive(ProcessId(1), &server, &[&update]).unwrap();
        let AbdState::Server(st) = &t.state else { panic!() };
        assert_eq!((st.value, st.ts), (9, Timestamp { seq: 2, writer: 0 }));
        assert_eq!(t.sends, vec![(ProcessId(0), AbdMsg::Ack { nonce: 4 })]);

        // older timestamp: still acked, not adopted
        let stale = Message {
            payload: AbdMsg::Update {
                nonce: 5,
                ts: Timestamp { seq: 1, writer: 3 },
                value: 1,
            },
            uid: MsgUid { sender: 0, seq: 1 },
            ..update.clone()
        };
        let t2 = abd.on_receive(ProcessId(1), &t.state, &[&stale]).unwrap();
        let AbdState::Server(st2) = &t2.state else { panic!() };
        assert_eq!(st2.value, 9);
        assert_eq!(t2.sends.len(), 1);

        // duplicate delivery is a no-op
        let t3 = abd.on_receive(ProcessId(1), &t2.state, &[&stale]).unwrap();
        assert_eq!(t3.state, t2.state);
        assert!(t3.sends.is_empty());
    }

    #[test]
    fn timestamps_order_by_seq_then_writer() {
        let a = Timestamp { seq: 1, writer: 5 };
        let b = Timestamp { seq: 2, writer: 0 };
        let c = Timestamp { seq: 2, writer: 1 };
        assert!(a < b && b < c);
    }

    #[test]
    fn scripted_write_returns_after_two_of_three_acks() {
        let abd = abd_implementation(1, 3);
        let c = ProcessId(0);
        let mut g = MpGlobalState::initial(&abd);
        g = step_call(&abd, &g, c, &Invocation::new(Method::Write, 5)).unwrap();
        for s in [1, 2] {
            let recv = uids_to(&g, s);
            g = step_internal(&abd, &g, ProcessId(s), &recv).unwrap();
        }
        let replies = uids_to(&g, 0);
        assert_eq!(replies.len(), 2);
        g = step_internal(&abd, &g, c, &replies).unwrap();
        let AbdState::Client(st) = g.state(c) else { panic!() };
        assert!(matches!(st.phase, Phase::WritePush { .. }));
        assert_eq!(step_return(&abd, &g, c).unwrap_err(), MpError::ReturnNotEnabled(c));

        for s in [1, 2] {
            let fresh: Vec<MsgUid> = uids_to(&g, s)
                .into_iter()
                .filter(|u| u.seq >= 3)
                .collect();
            g = step_internal(&abd, &g, ProcessId(s), &fresh).unwrap();
        }
        let acks: Vec<MsgUid> = uids_to(&g, 0)
            .into_iter()
            .filter(|u| g.message(*u).is_some_and(|m| matches!(m.payload, AbdMsg::Ack { .. })))
            .collect();
        assert_eq!(acks.len(), 2);
        g = step_internal(&abd, &g, c, &acks).unwrap();
        let (g, value) = step_return(&abd, &g, c).unwrap();
        assert_eq!(value, Value::Unit);
        assert!(!abd.pending(g.state(c)));
        let AbdState::Server(s1) = g.state(ProcessId(1)) else { panic!() };
        assert_eq!((s1.value, s1.ts), (5, Timestamp { seq: 1, writer: 0 }));
    }

    #[test]
    fn single_writer_roles() {
        let abd = Abd::single_writer(2, 3, 0);
        let g0 = MpGlobalState::initial(&abd);
        let w = step_call(&abd, &g0, ProcessId(0), &Invocation::new(Method::Write, 1)).unwrap();
        assert!(w
            .slot(ProcessId(0))
            .pool
            .iter()
            .all(|m| matches!(m.payload, AbdMsg::Update { .. })));
        assert!(step_call(&abd, &g0, ProcessId(1), &Invocation::new(Method::Write, 1)).is_err());
        assert!(step_call(&abd, &g0, ProcessId(0), &Invocation::nullary(Method::Read)).is_err());
    }

    #[test]
    fn single_writer_reads_are_not_strongly_linearizable() {
        use crate::checkers::{check_linearizable, check_strongly_linearizable, ExecutionTree, StrongVerdict};
        use crate::object_spec::SeqSpec;

        let imp = Abd::single_writer(2, 3, 0);
        let schedules = adversarial_read_schedules();
        let tree = ExecutionTree::from_mp_schedules(&imp, &schedules).unwrap();
        assert!(tree.len() <= 200);
        let reg = SeqSpec::mw_register(0);
        for leaf in tree.leaves() {
            assert!(check_linearizable(&tree.history(leaf), &reg).unwrap().is_linearizable());
        }
        let StrongVerdict::Refuted(cx) = check_strongly_linearizable(&tree, &reg).unwrap() else {
            panic!("expected a refutation");
        };
        assert_ne!(cx.pair.0, cx.pair.1);
        let returned: Vec<_> = [cx.pair.0, cx.pair.1]
            .iter()
            .map(|&n| tree.history(n).to_text())
            .collect();
        assert_ne!(returned[0], returned[1]);
    }
}

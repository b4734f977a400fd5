//! A minimal request/reply implementation used in tests and examples.
//!
//! `ping()` makes the client send one message to the first server; the
//! server answers every ping with a pong, and the client returns `pong`
//! once it has one.

use crate::history::{Invocation, Method, Value};
use crate::mp::{Message, MpImplementation, ProcessId, Transition};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum PingState {
    Client { pending: bool, answered: bool },
    Server,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PingMsg {
    Ping,
    Pong,
}

#[derive(Clone, Debug)]
pub struct PingPong {
    clients: usize,
    servers: usize,
}

impl PingPong {
    pub fn new(clients: usize, servers: usize) -> Self {
        assert!(servers >= 1, "ping needs a server");
        Self { clients, servers }
    }
}

impl MpImplementation for PingPong {
    type State = PingState;
    type Payload = PingMsg;

    fn name(&self) -> String {
        "ping".to_string()
    }

    fn clients(&self) -> usize {
        self.clients
    }

    fn servers(&self) -> usize {
        self.servers
    }

    fn initial_state(&self, pid: ProcessId) -> PingState {
        if pid.0 < self.clients {
            PingState::Client {
                pending: false,
                answered: false,
            }
        } else {
            PingState::Server
        }
    }

    fn on_call(&self, _pid: ProcessId, state: &PingState, call: &Invocation) -> Option<Transition<PingState, PingMsg>> {
        match (state, call.method) {
            (PingState::Client { pending: false, .. }, Method::Ping) => Some(Transition {
                state: PingState::Client {
                    pending: true,
                    answered: false,
                },
                sends: vec![(ProcessId(self.clients), PingMsg::Ping)],
            }),
            _ => None,
        }
    }

    fn on_return(&self, _pid: ProcessId, state: &PingState, value: &Value) -> Option<Transition<PingState, PingMsg>> {
        match state {
            PingState::Client {
                pending: true,
                answered: true,
            } if *value == Value::Text("pong".into()) => Some(Transition::silent(PingState::Client {
                pending: false,
                answered: false,
            })),
            _ => None,
        }
    }

    fn on_receive(
        &self,
        _pid: ProcessId,
        state: &PingState,
        msgs: &[&Message<PingMsg>],
    ) -> Option<Transition<PingState, PingMsg>> {
        match state {
            PingState::Server => Some(Transition {
                state: PingState::Server,
                sends: msgs
                    .iter()
                    .filter(|m| m.payload == PingMsg::Ping)
                    .map(|m| (m.src, PingMsg::Pong))
                    .collect(),
            }),
            PingState::Client { pending, answered } => {
                let pong = msgs.iter().any(|m| m.payload == PingMsg::Pong);
                Some(Transition::silent(PingState::Client {
                    pending: *pending,
                    answered: *answered || (*pending && pong),
                }))
            }
        }
    }

    fn pending(&self, state: &PingState) -> bool {
        matches!(state, PingState::Client { pending: true, .. })
    }

    fn ret_enabled(&self, state: &PingState) -> Option<Value> {
        match state {
            PingState::Client {
                pending: true,
                answered: true,
            } => Some(Value::Text("pong".into())),
            _ => None,
        }
    }
}

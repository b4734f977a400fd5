use std::collections::BTreeSet;

use proptest::prelude::*;

use super::*;
use crate::abd::abd_implementation;
use crate::history::Method;
use crate::toy::PingPong;

fn ping() -> Invocation {
    Invocation::nullary(Method::Ping)
}

#[test]
fn ping_call_sends_one_message() {
    let imp = PingPong::new(1, 1);
    let g0 = MpGlobalState::initial(&imp);
    let g1 = step_call(&imp, &g0, ProcessId(0), &ping()).unwrap();
    assert_eq!(g1.total_messages(), 1);
    let msg = g1.message(MsgUid { sender: 0, seq: 0 }).unwrap();
    assert_eq!(msg.dst, ProcessId(1));
    assert!(g0.pools_included_in(&g1));
    assert!(!g1.pools_included_in(&g0));
}

#[test]
fn second_call_while_pending_is_rejected() {
    let imp = PingPong::new(1, 1);
    let g0 = MpGlobalState::initial(&imp);
    let g1 = step_call(&imp, &g0, ProcessId(0), &ping()).unwrap();
    assert_eq!(
        step_call(&imp, &g1, ProcessId(0), &ping()),
        Err(MpError::PendingInvocation(ProcessId(0)))
    );
    assert_eq!(
        step_call(&imp, &g0, ProcessId(1), &ping()),
        Err(MpError::NotAClient(ProcessId(1)))
    );
    assert_eq!(
        step_call(&imp, &g0, ProcessId(7), &ping()),
        Err(MpError::UnknownProcess(ProcessId(7)))
    );
}

#[test]
fn return_requires_enabled_value() {
    let imp = PingPong::new(1, 1);
    let g0 = MpGlobalState::initial(&imp);
    let g1 = step_call(&imp, &g0, ProcessId(0), &ping()).unwrap();
    assert_eq!(step_return(&imp, &g1, ProcessId(0)).unwrap_err(), MpError::ReturnNotEnabled(ProcessId(0)));
    let g2 = step_internal(&imp, &g1, ProcessId(1), &[MsgUid { sender: 0, seq: 0 }]).unwrap();
    let g3 = step_internal(&imp, &g2, ProcessId(0), &[MsgUid { sender: 1, seq: 0 }]).unwrap();
    let (g4, v) = step_return(&imp, &g3, ProcessId(0)).unwrap();
    assert_eq!(v, Value::Text("pong".into()));
    assert!(!imp.pending(g4.state(ProcessId(0))));
}

#[test]
fn foreign_and_unknown_messages_are_rejected() {
    let imp = PingPong::new(1, 1);
    let g0 = MpGlobalState::initial(&imp);
    let g1 = step_call(&imp, &g0, ProcessId(0), &ping()).unwrap();
    let uid = MsgUid { sender: 0, seq: 0 };
    assert_eq!(
        step_internal(&imp, &g1, ProcessId(0), &[uid]),
        Err(MpError::ForeignMessage { pid: ProcessId(0), uid })
    );
    let ghost = MsgUid { sender: 0, seq: 9 };
    assert_eq!(
        step_internal(&imp, &g1, ProcessId(1), &[ghost]),
        Err(MpError::ForeignMessage { pid: ProcessId(1), uid: ghost })
    );
}

#[test]
fn empty_receive_is_allowed() {
    let imp = PingPong::new(1, 1);
    let g0 = MpGlobalState::initial(&imp);
    let g1 = step_internal(&imp, &g0, ProcessId(1), &[]).unwrap();
    assert_eq!(g0, g1);
}

#[test]
fn abd_write_call_adds_three_queries() {
    let imp = abd_implementation(2, 3);
    let g0 = MpGlobalState::initial(&imp);
    let g1 = step_call(&imp, &g0, ProcessId(0), &Invocation::new(Method::Write, 5)).unwrap();
    assert_eq!(g1.total_messages(), 3);
    let dsts: BTreeSet<usize> = g1.slot(ProcessId(0)).pool.iter().map(|m| m.dst.0).collect();
    assert_eq!(dsts, BTreeSet::from([2, 3, 4]));
}

#[test]
fn enabled_steps_offer_calls_and_deliveries() {
    let imp = PingPong::new(1, 1);
    let g0 = MpGlobalState::initial(&imp);
    let steps = enabled_steps(&imp, &g0, &[Some(ping())], None, Delivery::Powerset);
    assert!(steps.contains(&MpStep::Call { pid: ProcessId(0), invocation: ping() }));
    // one empty internal step per process
    assert_eq!(steps.iter().filter(|s| matches!(s, MpStep::Internal { .. })).count(), 2);

    let g1 = step_call(&imp, &g0, ProcessId(0), &ping()).unwrap();
    let steps = enabled_steps(&imp, &g1, &[Some(ping())], None, Delivery::Powerset);
    assert!(!steps.iter().any(|s| matches!(s, MpStep::Call { .. })));
    let uid = MsgUid { sender: 0, seq: 0 };
    assert!(steps.contains(&MpStep::Internal { pid: ProcessId(1), recv: vec![uid] }));

    let delivered = BTreeSet::from([uid]);
    let steps = enabled_steps(&imp, &g1, &[None], Some(&delivered), Delivery::Singletons);
    assert!(!steps.contains(&MpStep::Internal { pid: ProcessId(1), recv: vec![uid] }));
}

#[test]
fn abd_write_then_read_under_round_robin() {
    let imp = abd_implementation(2, 3);
    let workload = Workload::new(vec![
        Workload::parse_script("write(5)").unwrap(),
        Workload::parse_script("read()").unwrap(),
    ]);
    let trace = run(&imp, &mut RoundRobin::new(), &workload, 500, &CrashScript::none(), false).unwrap();
    let h = trace.history();
    assert_eq!(h.operations().unwrap().len(), 2);
    assert!(h.operations().unwrap().iter().all(|op| op.is_complete()));
    replay_mp(&imp, &trace).unwrap();
}

#[test]
fn replay_detects_tampering() {
    let imp = abd_implementation(1, 3);
    let workload = Workload::new(vec![Workload::parse_script("write(1) read()").unwrap()]);
    let mut trace = run(&imp, &mut FairRandom::new(3, 16), &workload, 2_000, &CrashScript::none(), false).unwrap();
    let last = trace.steps.len() - 1;
    trace.steps[last].digest ^= 1;
    assert!(matches!(
        replay_mp(&imp, &trace),
        Err(ReplayError::DigestMismatch { index, .. }) if index == last
    ));
}

#[test]
fn budget_exhaustion_keeps_partial_trace() {
    let imp = abd_implementation(1, 3);
    let workload = Workload::new(vec![Workload::parse_script("write(1)").unwrap()]);
    let err = run(&imp, &mut RoundRobin::new(), &workload, 2, &CrashScript::none(), false).unwrap_err();
    assert_eq!(err.partial_trace().unwrap().steps.len(), 2);
    assert_eq!(run(&imp, &mut RoundRobin::new(), &workload, 0, &CrashScript::none(), false), Err(RunError::ZeroBudget));
}

#[test]
fn crashed_minority_does_not_block_abd() {
    let imp = abd_implementation(2, 3);
    let workload = Workload::new(vec![
        Workload::parse_script("write(1) read()").unwrap(),
        Workload::parse_script("write(2) read()").unwrap(),
    ]);
    let crashes = CrashScript::at(vec![(ProcessId(4), 0)]);
    for seed in 0..20 {
        let trace = run(&imp, &mut FairRandom::new(seed, 20), &workload, 5_000, &crashes, false).unwrap();
        assert!(trace.steps.iter().all(|s| s.pid != 4));
    }
}

fn workload2() -> Workload {
    Workload::new(vec![
        Workload::parse_script("write(1) read()").unwrap(),
        Workload::parse_script("read() write(2)").unwrap(),
    ])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pools_only_grow(seed in any::<u64>()) {
        let imp = abd_implementation(2, 3);
        let mut sim = Simulation::new(&imp, crate::trace::TraceHeader::new(2, 3, seed), false);
        let mut sched = FairRandom::new(seed, 20);
        let workload = workload2();
        let mut cursor = [0usize; 2];
        for step_no in 0..200 {
            let candidates: Vec<Candidate> = (0..imp.processes()).map(ProcessId).map(|pid| {
                let st = sim.state().state(pid);
                let client = imp.is_client(pid);
                Candidate {
                    pid,
                    can_return: client && imp.ret_enabled(st).is_some(),
                    next_call: if client && !imp.pending(st) { workload.next(pid.0, cursor[pid.0]).cloned() } else { None },
                    waiting: sim.waiting_for(pid),
                }
            }).collect();
            let Some(step) = sched.next(step_no, &candidates) else { break };
            let before = sim.state().clone();
            sim.apply(&step).unwrap();
            if let MpStep::Call { pid, .. } = step { cursor[pid.0] += 1; }
            prop_assert!(before.pools_included_in(sim.state()));
            // only the stepping process changes
            for k in 0..imp.processes() {
                if k != step.pid().0 {
                    prop_assert_eq!(&before.slots[k], &sim.state().slots[k]);
                }
            }
        }
    }

    #[test]
    fn runs_are_deterministic_and_meet_the_deadline(seed in any::<u64>()) {
        let imp = abd_implementation(2, 3);
        let deadline = FairRandom::default_deadline(imp.processes());
        let a = run(&imp, &mut FairRandom::new(seed, deadline), &workload2(), 20_000, &CrashScript::none(), false).unwrap();
        let b = run(&imp, &mut FairRandom::new(seed, deadline), &workload2(), 20_000, &CrashScript::none(), false).unwrap();
        prop_assert_eq!(a.to_text(), b.to_text());
        prop_assert!(replay_mp(&imp, &a).is_ok());
    }
}

#[test]
fn fair_random_respects_delivery_deadline() {
    let imp = abd_implementation(2, 3);
    let deadline = 6;
    for seed in 0..50 {
        let mut sim = Simulation::new(&imp, crate::trace::TraceHeader::new(2, 3, seed), false);
        let mut sched = FairRandom::new(seed, deadline);
        let workload = workload2();
        let mut cursor = [0usize; 2];
        for step_no in 0..400 {
            let candidates: Vec<Candidate> = (0..imp.processes())
                .map(ProcessId)
                .map(|pid| {
                    let st = sim.state().state(pid);
                    let client = imp.is_client(pid);
                    Candidate {
                        pid,
                        can_return: client && imp.ret_enabled(st).is_some(),
                        next_call: if client && !imp.pending(st) {
                            workload.next(pid.0, cursor[pid.0]).cloned()
                        } else {
                            None
                        },
                        waiting: sim.waiting_for(pid),
                    }
                })
                .collect();
            let step = sched.next(step_no, &candidates).unwrap();
            sim.apply(&step).unwrap();
            if let MpStep::Call { pid, .. } = step {
                cursor[pid.0] += 1;
            }
        }
        assert!(sim.max_exclusions() < deadline, "seed {seed}: {}", sim.max_exclusions());
    }
}

mod model {
    use super::*;
    use crate::explore::{explore, ExploreConfig};
    use crate::object_spec::SeqSpec;
    use crate::par::Parallelism;

    #[test]
    fn ping_pong_explores_exhaustively() {
        let imp = PingPong::new(1, 2);
        let w = Workload::new(vec![vec![ping()]]);
        let model = MpModel::new(&imp, w);
        let stats = explore(&model, &ExploreConfig::new(40).sequential());
        assert!(stats.ok());
        assert!(stats.exhaustive());
        assert!(stats.terminals > 0);
    }

    #[test]
    fn abd_small_workload_stays_linearizable() {
        let imp = abd_implementation(2, 3);
        let w = Workload::new(vec![
            Workload::parse_script("write(1)").unwrap(),
            Workload::parse_script("read()").unwrap(),
        ]);
        let model = MpModel::new(&imp, w).checking(SeqSpec::mw_register(0));
        let stats = explore(&model, &ExploreConfig::new(10));
        assert!(stats.ok(), "{:?}", stats.violation);
        assert!(stats.visited > 1000);
    }

    #[test]
    fn abd_without_a_majority_never_returns() {
        let imp = abd_implementation(1, 3);
        let w = Workload::new(vec![Workload::parse_script("write(1)").unwrap()]);
        let model = MpModel::new(&imp, w)
            .with_crashed([ProcessId(2), ProcessId(3)])
            .forbidding_returns();
        let stats = explore(&model, &ExploreConfig::new(30).sequential());
        assert!(stats.ok(), "{:?}", stats.violation);
        assert!(stats.exhaustive());

        let lax = MpModel::new(&imp, Workload::new(vec![Workload::parse_script("write(1)").unwrap()]))
            .with_crashed([ProcessId(3)])
            .forbidding_returns();
        assert!(!explore(&lax, &ExploreConfig::new(30).sequential()).ok());
    }

    #[test]
    fn crash_sets_enumerate_servers_only() {
        let sets = server_crash_sets(2, 3, 2);
        assert_eq!(sets.len(), 1 + 3 + 3);
        assert!(sets.iter().flatten().all(|p| p.0 >= 2));
    }

    #[test]
    fn abd_tolerates_one_crash() {
        let imp = abd_implementation(2, 3);
        let report = check_f_nonblocking(&imp, &workload2(), 1, &[0, 5, 20], 0..5, 2_000, Parallelism::default());
        assert_eq!(report.runs, 5 + 3 * 3 * 5);
        assert!(report.ok(), "{:?}", report.failures);

        let two = check_f_nonblocking(&imp, &workload2(), 2, &[0], 0..2, 2_000, Parallelism::default());
        assert!(!two.ok());
    }
}

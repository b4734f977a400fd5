use super::*;
use crate::explore::{explore, ExploreConfig};
use crate::history::Method;

fn ping() -> Invocation {
    Invocation::nullary(Method::Ping)
}

fn writer_reader() -> SmProgram {
    SmProgram::new(vec![
        vec![Instr::Write(ToyReg(0), 7), Instr::Read(ToyReg(1))],
        vec![Instr::Read(ToyReg(0)), Instr::Write(ToyReg(1), 3)],
    ])
    .unwrap()
}

#[test]
fn foreign_write_is_rejected() {
    let err = SmProgram::new(vec![vec![Instr::Write(ToyReg(1), 1)], vec![]]).unwrap_err();
    assert!(matches!(err, SmError::NotOwner { pid: 0, .. }));
    let mut mem: SharedMemory<ToyReg, i64> = SharedMemory::new();
    assert!(mem.write(0, ToyReg(1), 5).is_err());
    assert!(mem.write(1, ToyReg(1), 5).is_ok());
    assert_eq!(mem.read(&ToyReg(1)), Some(&5));
}

#[test]
fn memory_hash_ignores_write_order() {
    let mut a: SharedMemory<ToyReg, i64> = SharedMemory::new();
    let mut b = SharedMemory::new();
    a.write(0, ToyReg(0), 1).unwrap();
    a.write(1, ToyReg(1), 2).unwrap();
    b.write(1, ToyReg(1), 9).unwrap();
    b.write(0, ToyReg(0), 1).unwrap();
    assert_ne!(a, b);
    b.write(1, ToyReg(1), 2).unwrap();
    assert_eq!(a, b);
    assert_eq!(digest(&a), digest(&b));
}

#[test]
fn round_robin_run_and_replay() {
    let sys = writer_reader();
    let w = Workload::new(vec![vec![ping()], vec![ping()]]);
    let run = sm_run(&sys, &mut SmRoundRobin::new(), &w, 100, &CrashScript::default(), &mut NoObserver).unwrap();
    let rules: Vec<_> = run.trace.steps.iter().map(|s| (s.pid, s.rule)).collect();
    assert_eq!(
        rules,
        vec![
            (0, Rule::Call),
            (1, Rule::Call),
            (0, Rule::SmWrite),
            (1, Rule::SmRead),
            (0, Rule::SmRead),
            (1, Rule::SmWrite),
            (0, Rule::Ret),
            (1, Rule::Ret),
        ]
    );
    let h = run.trace.history();
    let rets: Vec<_> = h
        .actions()
        .iter()
        .filter_map(|a| match a {
            Action::Return { value, .. } => Some(value.clone()),
            _ => None,
        })
        .collect();
    assert_eq!(rets, vec![Value::Int(0), Value::Int(7)]);
    replay_sm(&sys, &run.trace).unwrap();

    let mut bad = run.trace.clone();
    bad.steps[3].digest ^= 1;
    assert!(matches!(replay_sm(&sys, &bad), Err(SmReplayError::DigestMismatch { index: 3, .. })));
}

#[test]
fn fair_random_is_seeded() {
    let sys = writer_reader();
    let w = Workload::new(vec![vec![ping(); 3], vec![ping(); 3]]);
    let go = |seed| {
        let mut s = SmFairRandom::new(seed, SmFairRandom::default_deadline(2));
        sm_run(&sys, &mut s, &w, 1000, &CrashScript::default(), &mut NoObserver).unwrap().trace
    };
    assert_eq!(go(5), go(5));
    assert!((0..20).any(|s| go(s) != go(5)));
}

#[test]
fn crashed_process_stops_and_others_finish() {
    let sys = writer_reader();
    let w = Workload::new(vec![vec![ping()], vec![ping()]]);
    let crashes = CrashScript::at(vec![(ProcessId(0), 1)]);
    let run = sm_run(&sys, &mut SmRoundRobin::new(), &w, 100, &crashes, &mut NoObserver).unwrap();
    assert!(run.trace.steps[1..].iter().all(|s| s.pid == 1));
    assert!(sys.pending(&run.state, 0));
    assert!(!sys.pending(&run.state, 1));
}

#[test]
fn scripted_stop_is_budget_error() {
    let sys = writer_reader();
    let w = Workload::new(vec![vec![ping()], vec![]]);
    let err = sm_run(&sys, &mut SmScripted::new([0, 0]), &w, 100, &CrashScript::default(), &mut NoObserver)
        .unwrap_err();
    assert_eq!(err.partial_trace().unwrap().steps.len(), 2);
    assert!(matches!(
        sm_run(&sys, &mut SmScripted::new([1]), &w, 100, &CrashScript::default(), &mut NoObserver),
        Err(SmRunError::Step { index: 0, source: SmError::NoEnabledStatement(1) })
    ));
}

struct Veto;

impl SmObserver<SmProgram> for Veto {
    fn after(&mut self, _: &SmProgram, _: &ToyState, step: &TraceStep) -> Result<(), String> {
        if step.rule == Rule::SmWrite {
            Err("no writes".into())
        } else {
            Ok(())
        }
    }
}

#[test]
fn observer_can_abort() {
    let sys = writer_reader();
    let w = Workload::new(vec![vec![ping()], vec![]]);
    let err = sm_run(&sys, &mut SmRoundRobin::new(), &w, 100, &CrashScript::default(), &mut Veto).unwrap_err();
    assert!(matches!(err, SmRunError::Rejected { index: 1, .. }));
}

#[test]
fn explore_counts_interleavings() {
    let sys = writer_reader();
    let w = Workload::new(vec![vec![ping()], vec![ping()]]);
    let model = SmModel::new(&sys, w);
    let stats = explore(&model, &ExploreConfig::new(20).without_memo().sequential());
    assert!(stats.ok() && stats.exhaustive());
    // two processes of four steps each
    assert_eq!(stats.terminals, 70);
}

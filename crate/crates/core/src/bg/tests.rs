use super::*;
use crate::abd::abd_implementation;
use crate::checkers::linearizability::check_linearizable;
use crate::mp::{replay_mp, CrashScript, Workload};
use crate::object_spec::SeqSpec;
use crate::sm::{sm_run, SmFairRandom, SmRoundRobin, SmRunError, SmScripted, SmSimulation};
use crate::toy::PingPong;

fn script(s: &str) -> Vec<Invocation> {
    Workload::parse_script(s).unwrap()
}

fn run_monitored<S: crate::sm::SmScheduler>(
    sys: &BgSystem<crate::abd::Abd>,
    sched: &mut S,
    w: &Workload,
    crashes: &CrashScript,
) -> (crate::sm::SmRun<BgStateOf<crate::abd::Abd>>, Vec<InducedStep>, ExecutionTrace) {
    let mut mon = RefinementMonitor::new(sys);
    let run = sm_run(sys, sched, w, 200_000, crashes, &mut mon).expect("run finishes");
    let induced = mon.induced_trace(0).expect("induced run re-executes");
    (run, mon.induced, induced)
}

#[test]
fn solo_write_read_refines() {
    let sys = BgSystem::new(abd_implementation(1, 3));
    let w = Workload::new(vec![script("write(4) read()")]);
    let (run, induced, mp_trace) = run_monitored(&sys, &mut SmRoundRobin::new(), &w, &CrashScript::none());
    let h = run.trace.history();
    assert_eq!(h.len(), 4);
    assert_eq!(mp_trace.history(), h);
    assert!(check_linearizable(&h, &SeqSpec::mw_register(0)).unwrap().is_linearizable());
    replay_mp(&sys.imp, &mp_trace).unwrap();
    assert!(induced.iter().any(|s| matches!(s.step, MpStep::Internal { pid, .. } if pid.0 >= 1)));
    assert_eq!(monitor_refinement(&sys, &run.trace).unwrap(), induced);
}

#[test]
fn concurrent_runs_refine() {
    let sys = BgSystem::new(abd_implementation(2, 3));
    let w = Workload::new(vec![script("write(1) read()"), script("write(2) read()")]);
    for seed in 0..20 {
        let mut sched = SmFairRandom::new(seed, SmFairRandom::default_deadline(2));
        let (run, _, mp_trace) = run_monitored(&sys, &mut sched, &w, &CrashScript::none());
        let h = run.trace.history();
        assert_eq!(h.len(), 8);
        assert_eq!(mp_trace.history(), h);
        assert!(check_linearizable(&h, &SeqSpec::mw_register(0)).unwrap().is_linearizable());
    }
}

#[test]
fn call_window_shows_the_call_step() {
    let sys = BgSystem::new(abd_implementation(1, 3));
    let mut sim = SmSimulation::new(&sys, sys.header(0));
    let g0 = sys.image(sim.state()).unwrap();
    let inv = Invocation::new(crate::history::Method::Write, 7);
    sim.apply(0, Some(&inv)).unwrap();
    let g1 = sys.image(sim.state()).unwrap();
    assert_eq!(g1, step_call(&sys.imp, &g0, ProcessId(0), &inv).unwrap());
    // the client write publishes the same state
    let step = sim.apply(0, None).unwrap().clone();
    assert_eq!(step.rule, Rule::SmWrite);
    assert_eq!(sys.image(sim.state()).unwrap(), g1);
}

#[test]
fn return_window_keeps_the_old_client() {
    let sys = BgSystem::new(abd_implementation(1, 3));
    let mut sim = SmSimulation::new(&sys, sys.header(0));
    sim.apply(0, Some(&Invocation::nullary(crate::history::Method::Read))).unwrap();
    let mut guard = 0;
    while !matches!(sim.state().procs[0].pc, BgPc::RetWrite(_)) {
        sim.apply(0, None).unwrap();
        guard += 1;
        assert!(guard < 10_000);
    }
    let before = sys.image(sim.state()).unwrap();
    sim.apply(0, None).unwrap();
    assert!(matches!(sim.state().procs[0].pc, BgPc::RetReturn(_)));
    assert_eq!(sys.image(sim.state()).unwrap(), before);
    let step = sim.apply(0, None).unwrap().clone();
    assert_eq!(step.rule, Rule::Ret);
    let (g, v) = step_return(&sys.imp, &before, ProcessId(0)).unwrap();
    assert_eq!(sys.image(sim.state()).unwrap(), g);
    assert_eq!(v, Value::Int(0));
}

#[test]
fn skipped_step_number_is_caught() {
    let sys = BgSystem::new(abd_implementation(1, 3));
    let mut sim = SmSimulation::new(&sys, sys.header(0));
    let mut mon = RefinementMonitor::new(&sys);
    let inv = Invocation::new(crate::history::Method::Write, 1);
    let mut call = Some(inv);
    loop {
        if let BgPc::ServerWrite(..) = sim.state().procs[0].pc {
            break;
        }
        mon.before(&sys, sim.state(), 0);
        let step = sim.apply(0, call.take().as_ref()).unwrap().clone();
        mon.after(&sys, sim.state(), &step).unwrap();
    }
    let mut s = sim.state().clone();
    if let BgPc::ServerWrite(cell, _) = &mut s.procs[0].pc {
        cell.sn += 1;
    }
    mon.before(&sys, &s, 0);
    let ev = sys.step(&mut s, 0).unwrap();
    assert!(matches!(ev, SmEvent::Write(_)));
    let step = TraceStep {
        index: sim.trace().steps.len(),
        rule: Rule::SmWrite,
        pid: 0,
        label: None,
        detail: crate::trace::StepDetail::None,
        digest: sys.digest(&s),
    };
    assert!(mon.after(&sys, &s, &step).is_err());
    let RefinementError::Violation { index, message } = mon.error().unwrap().clone();
    assert_eq!(index, step.index);
    assert!(message.contains("jumped"), "{message}");
}

#[test]
fn empty_trace_induces_nothing() {
    let sys = BgSystem::new(abd_implementation(2, 3));
    let trace = ExecutionTrace::new(sys.header(0), sys.digest(&sys.initial()));
    assert_eq!(monitor_refinement(&sys, &trace).unwrap(), Vec::new());
}

#[test]
fn crashed_proposer_stalls_one_server() {
    let sys = BgSystem::new(abd_implementation(2, 3));
    let mut sim = SmSimulation::new(&sys, sys.header(0));
    sim.apply(0, Some(&Invocation::new(crate::history::Method::Write, 1))).unwrap();
    // run process 0 into its first propose and stop it after writing Val
    while !matches!(sim.state().procs[0].pc, BgPc::Propose(_)) {
        sim.apply(0, None).unwrap();
    }
    sim.apply(0, None).unwrap();
    let stalled = stalled_servers(&sys, sim.state(), &[0]);
    assert_eq!(stalled, vec![2]);
    assert!(stalled_servers(&sys, sim.state(), &[]).is_empty());
}

#[test]
fn one_crash_leaves_the_other_live() {
    let sys = BgSystem::new(abd_implementation(2, 3));
    let w = Workload::new(vec![script("write(1) read()"), script("write(2) read()")]);
    for (seed, at) in [(1u64, 5usize), (2, 40), (3, 120)] {
        let crashes = CrashScript::at(vec![(ProcessId(0), at)]);
        let mut sched = SmFairRandom::new(seed, SmFairRandom::default_deadline(2));
        let (run, _, _) = run_monitored(&sys, &mut sched, &w, &crashes);
        let h = run.trace.history();
        let done = h.actions().iter().filter(|a| !a.is_call()).count();
        assert!(done >= 2, "process 1 finished both operations");
        assert!(check_linearizable(&h, &SeqSpec::mw_register(0)).unwrap().is_linearizable());
    }
}

#[test]
fn scripted_stop_reports_budget() {
    let sys = BgSystem::new(PingPong::new(1, 1));
    let w = Workload::new(vec![script("ping()")]);
    let mut mon = RefinementMonitor::new(&sys);
    let err = sm_run(&sys, &mut SmScripted::new([0, 0]), &w, 100, &CrashScript::none(), &mut mon).unwrap_err();
    assert!(matches!(err, SmRunError::BudgetExhausted { .. }));
}

use super::*;

const ABD: &str = "
[scenario]
kind = abd
m = 1
n = 3

[workload]
0 = write(5) read()

[schedule]
seed = 1
";

#[test]
fn abd_run_is_linearizable() {
    let sc = Scenario::parse(ABD).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report = run_scenario(&sc, Some(dir.path())).unwrap();
    assert_eq!(report.exit_code(), 0, "{}", report.to_text());
    assert_eq!(report.verdicts.len(), sc.checks.len());
    assert!(report.verdict("linearizable").is_some());
    let again = replay_file(&dir.path().join("trace-1.txt"), None).unwrap();
    assert_eq!(again.exit_code(), 0, "{}", again.to_text());
}

#[test]
fn bg_run_writes_the_induced_trace() {
    let text = "
[scenario]
kind = bg
inner = abd
m = 2
n = 3
[workload]
0 = write(1) read()
1 = write(2)
[checks]
list = refinement linearizable replay
";
    let sc = Scenario::parse(text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report = run_scenario(&sc, Some(dir.path())).unwrap();
    assert_eq!(report.exit_code(), 0, "{}", report.to_text());
    let induced = dir.path().join("induced-0.txt");
    assert!(induced.exists());
    assert_eq!(replay_file(&induced, None).unwrap().exit_code(), 0);
    let r = replay_file(&dir.path().join("trace-0.txt"), None).unwrap();
    assert_eq!(r.verdict("refinement").unwrap().outcome, Outcome::Pass);
}

#[test]
fn malformed_configs_name_the_field() {
    let cases = [
        ("[scenario]\nkind = abd\nm = x\nn = 3\n", "scenario.m"),
        ("[scenario]\nkind = abd\nm = 1\n", "scenario.n"),
        ("[scenario]\nkind = nope\nm = 1\n", "scenario.kind"),
        ("[scenario]\nkind = abd\nm = 1\nn = 3\n[limits]\nsteps = 0\n", "limits.steps"),
        ("[scenario]\nkind = abd\nm = 1\nn = 3\n[limits]\nbogus = 1\n", "limits.bogus"),
        ("[scenario]\nkind = abd\nm = 1\nn = 3\n[workload]\n0 = fly()\n", "workload.0"),
        ("[scenario]\nkind = ping\nm = 1\nn = 1\n[checks]\nlist = linearizable\n", "checks.list"),
        ("[scenario]\nkind = abd\nm = 1\nn = 3\n[crash]\nat = 9@1\n", "crash.at"),
    ];
    for (text, field) in cases {
        let e = Scenario::parse(text).unwrap_err();
        assert_eq!(e.field(), Some(field), "{text}: {e}");
    }
}

#[test]
fn safe_agreement_explores_exhaustively() {
    let text = "
[scenario]
kind = safe_agreement
m = 2
proposals = 1 2
[limits]
depth = 60
";
    let sc = Scenario::parse(text).unwrap();
    let report = explore_scenario(&sc, None).unwrap();
    assert_eq!(report.exit_code(), 0, "{}", report.to_text());
    assert_eq!(report.get_count("exhaustive"), Some(1));
}

#[test]
fn depth_zero_is_vacuous() {
    let mut sc = Scenario::parse(ABD).unwrap();
    sc.depth = 0;
    let report = explore_scenario(&sc, None).unwrap();
    assert_eq!(report.exit_code(), 0);
    assert_eq!(report.get_count("visited"), Some(1));
}

#[test]
fn flipped_digest_is_reported_at_its_index() {
    let sc = Scenario::parse(ABD).unwrap();
    let dir = tempfile::tempdir().unwrap();
    run_scenario(&sc, Some(dir.path())).unwrap();
    let path = dir.path().join("trace-1.txt");
    let mut trace = ExecutionTrace::parse(&fs::read_to_string(&path).unwrap()).unwrap();
    trace.steps[3].digest ^= 1;
    fs::write(&path, trace.to_text()).unwrap();
    let r = replay_file(&path, None).unwrap();
    assert_eq!(r.exit_code(), 2);
    assert!(r.verdict("replay").unwrap().detail.contains("step 3"), "{}", r.to_text());

    let text = fs::read_to_string(&path).unwrap();
    let cut: String = text.lines().take(4).map(|l| format!("{l}\n")).collect::<String>() + "STEP 3 INT\n";
    fs::write(&path, cut).unwrap();
    let e = replay_file(&path, None).unwrap_err();
    assert!(e.to_string().contains("line 5"), "{e}");
}

#[test]
fn histories_are_checked_against_an_inferred_spec() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.txt");
    fs::write(&path, "CALL 0 write 1\nRET 0 ok\nCALL 1 read\nRET 1 0\n").unwrap();
    let out = dir.path().join("out");
    let r = check_file(&path, Some(&out), None, None).unwrap();
    assert_eq!(r.exit_code(), 2, "{}", r.to_text());
    assert!(out.join("counterexample.txt").exists());
    fs::write(&path, "CALL 0 write 1\nCALL 1 read\nRET 1 0\nRET 0 ok\n").unwrap();
    assert_eq!(check_file(&path, None, None, None).unwrap().exit_code(), 0);
}

#[test]
fn budget_exhaustion_is_bound_not_failure() {
    let mut sc = Scenario::parse(ABD).unwrap();
    sc.steps = 3;
    let r = run_scenario(&sc, None).unwrap();
    assert_eq!(r.verdict("completes").unwrap().outcome, Outcome::Bound);
    assert_eq!(r.exit_code(), 3);
}

#[test]
fn reports_are_deterministic() {
    let mut sc = Scenario::parse(ABD).unwrap();
    sc.runs = 4;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_scenario(&sc, Some(a.path())).unwrap();
    sc.parallelism = Parallelism::Sequential;
    run_scenario(&sc, Some(b.path())).unwrap();
    for name in ["report.txt", "report.csv", "stats.csv", "trace-1.txt", "trace-4.txt"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

//! Scenarios, the commands that execute them, and their reports.
//!
//! A scenario is read from a [`Config`]. `run` executes one seeded run per
//! seed and applies the requested checks to each; `explore` enumerates
//! schedules to a depth bound; `check` and `replay` work on files written by
//! earlier commands.

pub mod config;
mod report;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

pub use config::{Config, ConfigError};
pub use report::{Outcome, Report, Verdict};

use crate::abd::{Abd, AbdMode};
use crate::bg::{monitor_refinement, stalled_servers, BgSystem, RefinementMonitor};
use crate::checkers::{check_linearizable, CheckError};
use crate::explore::{explore as explore_model, ExploreConfig, ExploreStats};
use crate::history::{History, Invocation, Method};
use crate::mp::{self, CrashScript, FairRandom, MpImplementation, MpModel, MpStep, ProcessId, RoundRobin, Simulation, Workload};
use crate::object_spec::SeqSpec;
use crate::par::Parallelism;
use crate::safe_agreement::{check_sa_history, SaSystem};
use crate::sm::{
    replay_sm, sm_run, NoObserver, SmFairRandom, SmModel, SmObserver, SmRoundRobin, SmRunError, SmScheduler, SmScripted,
    SmSimulation, SmSystem,
};
use crate::toy::PingPong;
use crate::trace::ExecutionTrace;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Input(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Message-passing implementation run directly or inside the shared-memory
/// simulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Inner {
    Abd { single_writer: bool },
    Ping,
}

impl Inner {
    pub fn name(self) -> &'static str {
        match self {
            Inner::Abd { single_writer: false } => "abd",
            Inner::Abd { single_writer: true } => "abd_sw",
            Inner::Ping => "ping",
        }
    }
}

impl FromStr for Inner {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "abd" => Ok(Inner::Abd { single_writer: false }),
            "abd_sw" => Ok(Inner::Abd { single_writer: true }),
            "ping" => Ok(Inner::Ping),
            _ => Err("expected abd, abd_sw or ping".into()),
        }
    }
}

enum AnyImp {
    Abd(Abd),
    Ping(PingPong),
}

impl AnyImp {
    fn new(inner: Inner, m: usize, n: usize, init: i64) -> Self {
        match inner {
            Inner::Abd { single_writer } => {
                let mode = if single_writer {
                    AbdMode::SingleWriter
                } else {
                    AbdMode::MultiWriter
                };
                AnyImp::Abd(Abd::new(m, n, init, mode))
            }
            Inner::Ping => AnyImp::Ping(PingPong::new(m, n)),
        }
    }
}

macro_rules! with_imp {
    ($any:expr, $imp:ident => $body:expr) => {
        match $any {
            AnyImp::Abd($imp) => $body,
            AnyImp::Ping($imp) => $body,
        }
    };
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Kind {
    /// A message-passing implementation on its own.
    Mp { inner: Inner, m: usize, n: usize, init: i64 },
    SafeAgreement { m: usize },
    /// A message-passing implementation simulated in shared memory.
    Bg { inner: Inner, m: usize, n: usize, init: i64 },
}

impl Kind {
    pub fn processes(&self) -> usize {
        match *self {
            Kind::Mp { m, n, .. } => m + n,
            Kind::SafeAgreement { m } | Kind::Bg { m, .. } => m,
        }
    }

    fn inner(&self) -> Option<Inner> {
        match *self {
            Kind::Mp { inner, .. } | Kind::Bg { inner, .. } => Some(inner),
            Kind::SafeAgreement { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SchedulerKind {
    Fair { deadline: Option<u32> },
    RoundRobin,
    /// Process ids in order; shared-memory scenarios only.
    Scripted(Vec<usize>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Check {
    Completes,
    Linearizable,
    Agreement,
    Refinement,
    Replay,
}

impl Check {
    pub fn name(self) -> &'static str {
        match self {
            Check::Completes => "completes",
            Check::Linearizable => "linearizable",
            Check::Agreement => "agreement",
            Check::Refinement => "refinement",
            Check::Replay => "replay",
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Check {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "completes" => Check::Completes,
            "linearizable" => Check::Linearizable,
            "agreement" => Check::Agreement,
            "refinement" => Check::Refinement,
            "replay" => Check::Replay,
            _ => return Err(format!("unknown check `{s}`")),
        })
    }
}

/// Which run traces are written out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TracePolicy {
    All,
    /// The first run and every failing one.
    Failures,
    None,
}

impl FromStr for TracePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(TracePolicy::All),
            "failures" => Ok(TracePolicy::Failures),
            "none" => Ok(TracePolicy::None),
            _ => Err("expected all, failures or none".into()),
        }
    }
}

struct Flag(bool);

impl FromStr for Flag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "true" | "yes" | "on" | "1" => Ok(Flag(true)),
            "false" | "no" | "off" | "0" => Ok(Flag(false)),
            _ => Err("expected true or false".into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scenario {
    pub name: String,
    pub kind: Kind,
    pub workload: Workload,
    pub scheduler: SchedulerKind,
    pub seed: u64,
    pub runs: u64,
    /// `(process, step)`: the process takes no step from `step` on.
    pub crashes: Vec<(usize, usize)>,
    pub steps: usize,
    pub depth: usize,
    pub max_states: usize,
    pub parallelism: Parallelism,
    /// Keep histories in explored states.
    pub history_in_state: bool,
    pub spec: Option<SeqSpec>,
    pub checks: Vec<Check>,
    pub traces: TracePolicy,
}

const ALLOWED: &[(&str, &[&str])] = &[
    ("scenario", &["kind", "name", "m", "n", "init", "inner", "proposals"]),
    ("workload", &["*"]),
    ("schedule", &["scheduler", "seed", "runs", "deadline", "script"]),
    ("crash", &["at"]),
    ("limits", &["steps", "depth", "max_states", "parallel", "history"]),
    ("checks", &["list", "spec", "traces"]),
];

fn invalid(field: &str, value: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        value: value.into(),
        message: message.into(),
    }
}

fn parse_spec(name: &str, init: i64) -> Result<SeqSpec, String> {
    match name {
        "register" | "mw_register" => Ok(SeqSpec::mw_register(init)),
        "max_register" => Ok(SeqSpec::max_register(init)),
        "counter" => Ok(SeqSpec::counter()),
        _ => Err("expected register, max_register or counter".into()),
    }
}

impl Scenario {
    pub fn from_config(cfg: &Config) -> Result<Self, ConfigError> {
        cfg.restrict(ALLOWED)?;
        let kind_name = cfg.require("scenario", "kind")?;
        let m: usize = cfg.parse_required("scenario", "m")?;
        if m == 0 {
            return Err(invalid("scenario.m", "0", "need at least one process"));
        }
        let init: i64 = cfg.parse_or("scenario", "init", 0)?;
        let servers = || -> Result<usize, ConfigError> {
            let n: usize = cfg.parse_required("scenario", "n")?;
            if n == 0 {
                return Err(invalid("scenario.n", "0", "need at least one server"));
            }
            Ok(n)
        };
        let kind = match kind_name {
            "abd" | "abd_sw" | "ping" => Kind::Mp {
                inner: kind_name.parse().expect("matched above"),
                m,
                n: servers()?,
                init,
            },
            "safe_agreement" => Kind::SafeAgreement { m },
            "bg" => Kind::Bg {
                inner: cfg.parse_required("scenario", "inner")?,
                m,
                n: servers()?,
                init,
            },
            other => {
                return Err(invalid(
                    "scenario.kind",
                    other,
                    "expected abd, abd_sw, ping, safe_agreement or bg",
                ))
            }
        };

        let mut scripts = vec![Vec::new(); m];
        let mut any = false;
        for (k, v) in cfg.section("workload") {
            let field = format!("workload.{k}");
            let i: usize = k.parse().map_err(|_| ConfigError::Unknown { field: field.clone() })?;
            if i >= m {
                return Err(invalid(&field, v, format!("only processes 0..{m} take calls")));
            }
            scripts[i] = Workload::parse_script(v).map_err(|e| invalid(&field, v, e.to_string()))?;
            any = true;
        }
        if let Some(p) = cfg.get("scenario", "proposals") {
            if kind_name != "safe_agreement" {
                return Err(ConfigError::Unknown {
                    field: "scenario.proposals".into(),
                });
            }
            if any {
                return Err(invalid("scenario.proposals", p, "give proposals or a [workload], not both"));
            }
            let values: Vec<i64> = p
                .split_whitespace()
                .map(|v| config::parse_field("scenario", "proposals", v))
                .collect::<Result<_, _>>()?;
            if values.len() != m {
                return Err(invalid("scenario.proposals", p, format!("expected {m} values")));
            }
            for (i, v) in values.into_iter().enumerate() {
                scripts[i] = vec![Invocation::new(Method::Propose, v), Invocation::nullary(Method::Resolve)];
            }
        }
        let workload = Workload::new(scripts);

        let scheduler = match cfg.get("schedule", "scheduler").unwrap_or("fair") {
            "fair" => SchedulerKind::Fair {
                deadline: match cfg.get("schedule", "deadline") {
                    Some(d) => Some(config::parse_field("schedule", "deadline", d)?),
                    None => None,
                },
            },
            "round_robin" => SchedulerKind::RoundRobin,
            "scripted" => {
                let s = cfg.require("schedule", "script")?;
                let pids: Vec<usize> = s
                    .split_whitespace()
                    .map(|v| config::parse_field("schedule", "script", v))
                    .collect::<Result<_, _>>()?;
                if matches!(kind, Kind::Mp { .. }) {
                    return Err(invalid(
                        "schedule.scheduler",
                        "scripted",
                        "scripted schedules apply to shared-memory scenarios",
                    ));
                }
                if let Some(p) = pids.iter().find(|&&p| p >= kind.processes()) {
                    return Err(invalid("schedule.script", s, format!("no process {p}")));
                }
                SchedulerKind::Scripted(pids)
            }
            other => return Err(invalid("schedule.scheduler", other, "expected fair, round_robin or scripted")),
        };

        let mut crashes = Vec::new();
        if let Some(at) = cfg.get("crash", "at") {
            for tok in at.split_whitespace() {
                let bad = || invalid("crash.at", tok, "expected pid@step");
                let (p, s) = tok.split_once('@').ok_or_else(bad)?;
                let p: usize = p.parse().map_err(|_| bad())?;
                let s: usize = s.parse().map_err(|_| bad())?;
                if p >= kind.processes() {
                    return Err(invalid("crash.at", tok, format!("no process {p}")));
                }
                crashes.push((p, s));
            }
        }

        let positive = |section: &str, key: &str, default: usize| -> Result<usize, ConfigError> {
            let v: usize = cfg.parse_or(section, key, default)?;
            if v == 0 {
                return Err(invalid(&format!("{section}.{key}"), "0", "must be positive"));
            }
            Ok(v)
        };
        let steps = positive("limits", "steps", 100_000)?;
        let max_states = positive("limits", "max_states", 5_000_000)?;
        let depth: usize = cfg.parse_or("limits", "depth", 20)?;
        let runs = positive("schedule", "runs", 1)? as u64;
        let parallelism = if cfg.parse_or("limits", "parallel", Flag(true))?.0 {
            Parallelism::Parallel
        } else {
            Parallelism::Sequential
        };
        let history_in_state = cfg.parse_or("limits", "history", Flag(true))?.0;

        let spec = match cfg.get("checks", "spec") {
            Some(s) => Some(parse_spec(s, init).map_err(|e| invalid("checks.spec", s, e))?),
            None => match kind.inner() {
                Some(Inner::Abd { .. }) => Some(SeqSpec::mw_register(init)),
                _ => None,
            },
        };
        let checks = match cfg.get("checks", "list") {
            Some(list) => {
                let mut out: Vec<Check> = Vec::new();
                for tok in list.split_whitespace() {
                    let c: Check = config::parse_field("checks", "list", tok)?;
                    if !out.contains(&c) {
                        out.push(c);
                    }
                }
                out
            }
            None => {
                let mut out = vec![Check::Completes];
                match &kind {
                    Kind::Mp { .. } => {}
                    Kind::SafeAgreement { .. } => out.push(Check::Agreement),
                    Kind::Bg { .. } => out.push(Check::Refinement),
                }
                if spec.is_some() {
                    out.push(Check::Linearizable);
                }
                out.push(Check::Replay);
                out
            }
        };
        for c in &checks {
            let ok = match c {
                Check::Linearizable => spec.is_some(),
                Check::Agreement => matches!(kind, Kind::SafeAgreement { .. }),
                Check::Refinement => matches!(kind, Kind::Bg { .. }),
                Check::Completes | Check::Replay => true,
            };
            if !ok {
                return Err(invalid(
                    "checks.list",
                    cfg.get("checks", "list").unwrap_or(""),
                    format!("`{c}` does not apply to this scenario"),
                ));
            }
        }
        let traces = match cfg.get("checks", "traces") {
            Some(t) => config::parse_field("checks", "traces", t)?,
            None if runs <= 10 => TracePolicy::All,
            None => TracePolicy::Failures,
        };
        Ok(Self {
            name: cfg.get("scenario", "name").unwrap_or(kind_name).to_string(),
            kind,
            workload,
            scheduler,
            seed: cfg.parse_or("schedule", "seed", 0)?,
            runs,
            crashes,
            steps,
            depth,
            max_states,
            parallelism,
            history_in_state,
            spec,
            checks,
            traces,
        })
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::from_config(&Config::parse(text)?)
    }

    fn crash_script(&self) -> CrashScript {
        CrashScript::at(self.crashes.iter().map(|&(p, s)| (ProcessId(p), s)).collect())
    }

    fn crashed_by(&self, step: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.crashes.iter().filter(|c| c.1 <= step).map(|c| c.0).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn init(&self) -> i64 {
        match self.kind {
            Kind::Mp { init, .. } | Kind::Bg { init, .. } => init,
            Kind::SafeAgreement { .. } => 0,
        }
    }
}

#[derive(Default)]
struct RunResult {
    seed: u64,
    trace: Option<ExecutionTrace>,
    induced: Option<ExecutionTrace>,
    failures: Vec<(Check, String)>,
    bounded: Vec<(Check, String)>,
    steps: usize,
    returns: usize,
    stalled: usize,
}

impl RunResult {
    fn fail(&mut self, c: Check, message: impl Into<String>) {
        self.failures.push((c, message.into()));
    }

    fn bound(&mut self, c: Check, message: impl Into<String>) {
        self.bounded.push((c, message.into()));
    }

    fn linearizable(&mut self, sc: &Scenario, h: &History) {
        if !sc.checks.contains(&Check::Linearizable) {
            return;
        }
        let spec = sc.spec.as_ref().expect("validated");
        match check_linearizable(h, spec) {
            Ok(v) if v.is_linearizable() => {}
            Ok(_) => self.fail(Check::Linearizable, "history is not linearizable"),
            Err(CheckError::BoundExceeded { .. }) => self.bound(Check::Linearizable, "history too long to check"),
            Err(e) => self.fail(Check::Linearizable, e.to_string()),
        }
    }

    fn finish(&mut self, trace: ExecutionTrace) {
        self.steps = trace.steps.len();
        self.returns = trace.history().actions().iter().filter(|a| !a.is_call()).count();
        self.trace = Some(trace);
    }
}

fn run_mp<I: MpImplementation>(imp: &I, sc: &Scenario, seed: u64) -> RunResult {
    let mut r = RunResult {
        seed,
        ..Default::default()
    };
    let crashes = sc.crash_script();
    let res = match &sc.scheduler {
        SchedulerKind::Fair { deadline } => {
            let d = deadline.unwrap_or_else(|| FairRandom::default_deadline(imp.processes()));
            mp::run(imp, &mut FairRandom::new(seed, d), &sc.workload, sc.steps, &crashes, true)
        }
        SchedulerKind::RoundRobin => mp::run(imp, &mut RoundRobin::new(), &sc.workload, sc.steps, &crashes, true),
        SchedulerKind::Scripted(_) => unreachable!("rejected by the config"),
    };
    let mut trace = match res {
        Ok(t) => t,
        Err(e) => match e.partial_trace() {
            Some(t) => {
                r.bound(Check::Completes, e.to_string());
                t.clone()
            }
            None => {
                r.fail(Check::Completes, e.to_string());
                return r;
            }
        },
    };
    trace.header.seed = seed;
    trace.header.set("init", sc.init());
    r.linearizable(sc, &trace.history());
    if sc.checks.contains(&Check::Replay) {
        if let Err(e) = mp::replay_mp(imp, &trace) {
            r.fail(Check::Replay, e.to_string());
        }
    }
    r.finish(trace);
    r
}

fn sm_sched_run<Y: SmSystem>(
    sys: &Y,
    sc: &Scenario,
    seed: u64,
    observer: &mut dyn SmObserver<Y>,
) -> Result<crate::sm::SmRun<Y::State>, SmRunError> {
    let crashes = sc.crash_script();
    fn go<Y: SmSystem, S: SmScheduler>(
        sys: &Y,
        sched: &mut S,
        sc: &Scenario,
        crashes: &CrashScript,
        obs: &mut dyn SmObserver<Y>,
    ) -> Result<crate::sm::SmRun<Y::State>, SmRunError> {
        sm_run(sys, sched, &sc.workload, sc.steps, crashes, obs)
    }
    match &sc.scheduler {
        SchedulerKind::Fair { deadline } => {
            let d = deadline.unwrap_or_else(|| SmFairRandom::default_deadline(sys.processes()));
            go(sys, &mut SmFairRandom::new(seed, d), sc, &crashes, observer)
        }
        SchedulerKind::RoundRobin => go(sys, &mut SmRoundRobin::new(), sc, &crashes, observer),
        SchedulerKind::Scripted(pids) => go(sys, &mut SmScripted::new(pids.clone()), sc, &crashes, observer),
    }
}

/// Splits a shared-memory run result into its trace and, when it finished,
/// its final state.
fn sm_outcome<S>(r: &mut RunResult, res: Result<crate::sm::SmRun<S>, SmRunError>) -> Option<(ExecutionTrace, Option<S>)> {
    match res {
        Ok(run) => Some((run.trace, Some(run.state))),
        Err(SmRunError::Rejected { index, message, trace }) => {
            r.fail(Check::Refinement, format!("step {index}: {message}"));
            Some((*trace, None))
        }
        Err(e) => match e.partial_trace() {
            Some(t) => {
                r.bound(Check::Completes, e.to_string());
                Some((t.clone(), None))
            }
            None => {
                r.fail(Check::Completes, e.to_string());
                None
            }
        },
    }
}

fn run_sa(sys: &SaSystem, sc: &Scenario, seed: u64) -> RunResult {
    let mut r = RunResult {
        seed,
        ..Default::default()
    };
    let res = sm_sched_run(sys, sc, seed, &mut NoObserver);
    let Some((mut trace, state)) = sm_outcome(&mut r, res) else {
        return r;
    };
    trace.header.seed = seed;
    let h = trace.history();
    if sc.checks.contains(&Check::Agreement) {
        let mut verdict = check_sa_history(&h);
        if let (Ok(()), Some(s)) = (&verdict, &state) {
            verdict = sys.invariant(s, &h).and_then(|_| sys.leaf_invariant(s, &h, true));
        }
        if let Err(e) = verdict {
            r.fail(Check::Agreement, e);
        }
    }
    if sc.checks.contains(&Check::Replay) {
        if let Err(e) = replay_sm(sys, &trace) {
            r.fail(Check::Replay, e.to_string());
        }
    }
    r.finish(trace);
    r
}

fn run_bg<I: MpImplementation>(sys: &BgSystem<I>, sc: &Scenario, seed: u64) -> RunResult {
    let mut r = RunResult {
        seed,
        ..Default::default()
    };
    let mut mon = RefinementMonitor::new(sys);
    let res = sm_sched_run(sys, sc, seed, &mut mon);
    let Some((mut trace, state)) = sm_outcome(&mut r, res) else {
        return r;
    };
    trace.header.seed = seed;
    trace.header.set("init", sc.init());
    let h = trace.history();
    if sc.checks.contains(&Check::Refinement) && mon.error().is_none() {
        match mon.induced_trace(seed) {
            Ok(mut induced) => {
                induced.header.set("init", sc.init());
                if let Err(e) = mp::replay_mp(&sys.imp, &induced) {
                    r.fail(Check::Refinement, format!("induced run does not replay: {e}"));
                } else if induced.history() != h {
                    r.fail(Check::Refinement, "induced history differs from the run's history");
                }
                r.induced = Some(induced);
            }
            Err(e) => r.fail(Check::Refinement, format!("induced run is not legal: {e}")),
        }
    }
    if let Some(s) = &state {
        r.stalled = stalled_servers(sys, s, &sc.crashed_by(trace.steps.len())).len();
    }
    r.linearizable(sc, &h);
    if sc.checks.contains(&Check::Replay) {
        if let Err(e) = replay_sm(sys, &trace) {
            r.fail(Check::Replay, e.to_string());
        }
    }
    r.finish(trace);
    r
}

fn write_file(out: &Path, name: &str, text: &str) -> Result<String, HarnessError> {
    let path = out.join(name);
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(name.to_string())
}

fn prepare_out(out: Option<&Path>) -> Result<(), HarnessError> {
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(())
}

fn finish_report(report: &mut Report, out: Option<&Path>) -> Result<(), HarnessError> {
    if let Some(dir) = out {
        report.files.push("report.txt".into());
        report.files.push("report.csv".into());
        report.files.push("stats.csv".into());
        write_file(dir, "report.txt", &report.to_text())?;
        write_file(dir, "report.csv", &report.to_csv())?;
        write_file(dir, "stats.csv", &report.stats_csv())?;
    }
    Ok(())
}

/// Executes `runs` seeded runs starting at the scenario's seed.
pub fn run_scenario(sc: &Scenario, out: Option<&Path>) -> Result<Report, HarnessError> {
    prepare_out(out)?;
    let keep = |r: &RunResult| match sc.traces {
        TracePolicy::All => true,
        TracePolicy::Failures => r.seed == sc.seed || !r.failures.is_empty(),
        TracePolicy::None => false,
    };
    let seeds = sc.seed..sc.seed + sc.runs;
    let one = |seed: u64| -> RunResult {
        let mut r = match &sc.kind {
            Kind::Mp { inner, m, n, init } => with_imp!(AnyImp::new(*inner, *m, *n, *init), imp => run_mp(&imp, sc, seed)),
            Kind::SafeAgreement { m } => run_sa(&SaSystem::new(*m), sc, seed),
            Kind::Bg { inner, m, n, init } => {
                with_imp!(AnyImp::new(*inner, *m, *n, *init), imp => run_bg(&BgSystem::new(imp), sc, seed))
            }
        };
        if !keep(&r) {
            r.trace = None;
            r.induced = None;
        }
        r
    };
    let results = sc.parallelism.map_range(seeds, one);

    let mut report = Report::new("run", &sc.name);
    for &c in &sc.checks {
        let mut v = Verdict::new(c.name());
        for r in &results {
            v.runs += 1;
            if let Some((_, msg)) = r.failures.iter().find(|f| f.0 == c) {
                v.failed += 1;
                v.outcome = Outcome::Fail;
                if v.detail.is_empty() {
                    v.detail = format!("seed {}: {msg}", r.seed);
                }
            } else if let Some((_, msg)) = r.bounded.iter().find(|f| f.0 == c) {
                if v.outcome == Outcome::Pass {
                    v.outcome = Outcome::Bound;
                    v.detail = format!("seed {}: {msg}", r.seed);
                }
            }
        }
        report.verdicts.push(v);
    }
    report.count("runs", results.len() as u64);
    report.count("steps", results.iter().map(|r| r.steps as u64).sum());
    report.count("returns", results.iter().map(|r| r.returns as u64).sum());
    report.count("max_steps", results.iter().map(|r| r.steps as u64).max().unwrap_or(0));
    if matches!(sc.kind, Kind::Bg { .. }) {
        report.count("max_stalled_servers", results.iter().map(|r| r.stalled as u64).max().unwrap_or(0));
    }
    if let Some(dir) = out {
        for r in &results {
            if let Some(t) = &r.trace {
                report.files.push(write_file(dir, &format!("trace-{}.txt", r.seed), &t.to_text())?);
            }
            if let Some(t) = &r.induced {
                report.files.push(write_file(dir, &format!("induced-{}.txt", r.seed), &t.to_text())?);
            }
            if !r.failures.is_empty() {
                let mut text = String::new();
                for (c, msg) in &r.failures {
                    text.push_str(&format!("# {c}: {msg}\n"));
                }
                if let Some(t) = &r.trace {
                    text.push_str(&t.history().to_text());
                }
                report.files.push(write_file(dir, &format!("counterexample-{}.txt", r.seed), &text)?);
            }
        }
    }
    finish_report(&mut report, out)?;
    Ok(report)
}

fn explore_verdicts<S>(sc: &Scenario, stats: &ExploreStats<S>, report: &mut Report, applies: &[Check]) {
    for &c in &sc.checks {
        let mut v = Verdict::new(c.name());
        v.runs = 1;
        if !applies.contains(&c) {
            v.outcome = Outcome::Skipped;
            v.detail = "not checked by explore".into();
        } else if let Some(viol) = &stats.violation {
            v.outcome = Outcome::Fail;
            v.failed = 1;
            v.detail = viol.message.clone();
        } else if stats.budget_hit {
            v.outcome = Outcome::Bound;
            v.detail = format!("state budget of {} exhausted", sc.max_states);
        }
        report.verdicts.push(v);
    }
    report.count("visited", stats.visited as u64);
    report.count("memo_hits", stats.memo_hits as u64);
    report.count("terminals", stats.terminals as u64);
    report.count("truncated", stats.truncated as u64);
    report.count("pruned", stats.pruned as u64);
    report.count("deepest", stats.deepest as u64);
    report.count("exhaustive", stats.exhaustive() as u64);
}

/// Shared-memory counterexample path as a replayable trace.
fn sm_path_trace<Y: SmSystem>(sys: &Y, workload: &Workload, path: &[usize]) -> Option<ExecutionTrace> {
    let mut sim = SmSimulation::new(sys, sys.header(0));
    let mut cursor = vec![0usize; sys.processes()];
    for &pid in path {
        let call = if sim.is_pending(pid) {
            None
        } else {
            let c = workload.next(pid, cursor[pid]).cloned();
            cursor[pid] += 1;
            c
        };
        if sim.apply(pid, call.as_ref()).is_err() {
            break;
        }
    }
    Some(sim.into_parts().1)
}

fn mp_path_trace<I: MpImplementation>(imp: &I, path: &[MpStep], init: i64) -> ExecutionTrace {
    let header = crate::trace::TraceHeader::new(imp.clients(), imp.servers(), 0)
        .with("kind", "mp")
        .with("impl", imp.name())
        .with("init", init);
    let mut sim = Simulation::new(imp, header, true);
    for s in path {
        if sim.apply(s).is_err() {
            break;
        }
    }
    sim.into_trace()
}

/// Enumerates every schedule up to the depth bound.
pub fn explore_scenario(sc: &Scenario, out: Option<&Path>) -> Result<Report, HarnessError> {
    prepare_out(out)?;
    let cfg = ExploreConfig {
        max_states: sc.max_states as u64,
        ..ExploreConfig::new(sc.depth).with_parallelism(sc.parallelism)
    };
    let mut report = Report::new("explore", &sc.name);
    let crashed: Vec<usize> = sc.crashes.iter().map(|c| c.0).collect();
    let counterexample = match &sc.kind {
        Kind::Mp { inner, m, n, init } => with_imp!(AnyImp::new(*inner, *m, *n, *init), imp => {
            let mut model = MpModel::new(&imp, sc.workload.clone())
                .with_crashed(crashed.iter().map(|&p| ProcessId(p)));
            if sc.checks.contains(&Check::Linearizable) {
                model = model.checking(sc.spec.clone().expect("validated"));
            }
            let stats = explore_model(&model, &cfg);
            explore_verdicts(sc, &stats, &mut report, &[Check::Linearizable, Check::Completes]);
            stats.violation.map(|v| (v.message, mp_path_trace(&imp, &v.path, *init)))
        }),
        Kind::SafeAgreement { m } => {
            let sys = SaSystem::new(*m);
            let mut model = SmModel::new(&sys, sc.workload.clone());
            model.crashed = crashed;
            if !sc.history_in_state {
                model = model.without_history();
            }
            let stats = explore_model(&model, &cfg);
            explore_verdicts(sc, &stats, &mut report, &[Check::Agreement, Check::Completes]);
            stats
                .violation
                .and_then(|v| sm_path_trace(&sys, &sc.workload, &v.path).map(|t| (v.message, t)))
        }
        Kind::Bg { inner, m, n, init } => with_imp!(AnyImp::new(*inner, *m, *n, *init), imp => {
            let sys = BgSystem::new(imp);
            let mut model = SmModel::new(&sys, sc.workload.clone());
            model.crashed = crashed;
            if !sc.history_in_state {
                model = model.without_history();
            }
            let stats = explore_model(&model, &cfg);
            explore_verdicts(sc, &stats, &mut report, &[Check::Completes]);
            stats
                .violation
                .and_then(|v| sm_path_trace(&sys, &sc.workload, &v.path).map(|t| (v.message, t)))
        }),
    };
    if let (Some(dir), Some((msg, trace))) = (out, counterexample) {
        let mut text = format!("# {msg}\n");
        text.push_str(&trace.history().to_text());
        report.files.push(write_file(dir, "counterexample.txt", &text)?);
        report.files.push(write_file(dir, "counterexample-trace.txt", &trace.to_text())?);
    }
    finish_report(&mut report, out)?;
    Ok(report)
}

/// Specification a history's methods belong to.
pub fn infer_spec(h: &History, init: i64) -> Option<SeqSpec> {
    let methods: Vec<Method> = h
        .actions()
        .iter()
        .filter_map(|a| match a {
            crate::history::Action::Call { method, .. } => Some(*method),
            _ => None,
        })
        .collect();
    let all = |ok: &[Method]| methods.iter().all(|m| ok.contains(m));
    if all(&[Method::Read, Method::Write]) {
        Some(SeqSpec::mw_register(init))
    } else if all(&[Method::Read, Method::Increment]) {
        Some(SeqSpec::counter())
    } else if all(&[Method::ReadMax, Method::WriteMax]) {
        Some(SeqSpec::max_register(init))
    } else {
        None
    }
}

fn is_sa_history(h: &History) -> bool {
    h.actions().iter().any(|a| {
        matches!(
            a,
            crate::history::Action::Call {
                method: Method::Propose | Method::Resolve,
                ..
            }
        )
    })
}

fn history_verdicts(h: &History, init: i64, report: &mut Report) -> Option<String> {
    if is_sa_history(h) {
        let mut v = Verdict::new("agreement");
        v.runs = 1;
        let mut cx = None;
        if let Err(e) = check_sa_history(h) {
            v.outcome = Outcome::Fail;
            v.failed = 1;
            v.detail = e.clone();
            cx = Some(e);
        }
        report.verdicts.push(v);
        return cx;
    }
    let mut v = Verdict::new("linearizable");
    v.runs = 1;
    let mut cx = None;
    match infer_spec(h, init) {
        None => {
            v.outcome = Outcome::Skipped;
            v.detail = "no specification for these methods".into();
        }
        Some(spec) => {
            v.detail = spec.name();
            match check_linearizable(h, &spec) {
                Ok(l) if l.is_linearizable() => {}
                Ok(_) => {
                    v.outcome = Outcome::Fail;
                    v.failed = 1;
                    cx = Some(format!("not linearizable against {}", spec.name()));
                }
                Err(CheckError::BoundExceeded { .. }) => v.outcome = Outcome::Bound,
                Err(e) => {
                    v.outcome = Outcome::Fail;
                    v.failed = 1;
                    cx = Some(e.to_string());
                }
            }
        }
    }
    report.verdicts.push(v);
    cx
}

fn header_num(trace: &ExecutionTrace, key: &str, default: i64) -> Result<i64, HarnessError> {
    match trace.header.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| HarnessError::Input(format!("trace header: bad `{key}` value `{v}`"))),
    }
}

/// Re-executes a trace; for simulated runs also re-checks the refinement.
fn replay_verdicts(trace: &ExecutionTrace, report: &mut Report) -> Result<(), HarnessError> {
    let h = &trace.header;
    let init = header_num(trace, "init", 0)?;
    let kind = h.get("kind").unwrap_or("mp");
    let imp_name = h.get("impl").unwrap_or("");
    let mut replay = Verdict::new("replay");
    replay.runs = 1;
    let mut refinement = None;
    let result: Result<(), String> = match (kind, imp_name) {
        ("mp", name) => {
            let inner: Inner = name
                .parse()
                .map_err(|_| HarnessError::Input(format!("trace header: unknown implementation `{name}`")))?;
            with_imp!(AnyImp::new(inner, h.m, h.n, init), imp => mp::replay_mp(&imp, trace).map_err(|e| e.to_string()))
        }
        ("sm", "safe_agreement") => replay_sm(&SaSystem::new(h.m), trace).map_err(|e| e.to_string()),
        ("sm", "bg") => {
            let name = h.get("inner").unwrap_or("");
            let inner: Inner = name
                .parse()
                .map_err(|_| HarnessError::Input(format!("trace header: unknown inner implementation `{name}`")))?;
            with_imp!(AnyImp::new(inner, h.m, h.n, init), imp => {
                let sys = BgSystem::new(imp);
                let r = replay_sm(&sys, trace).map_err(|e| e.to_string());
                let mut v = Verdict::new("refinement");
                v.runs = 1;
                if r.is_ok() {
                    if let Err(e) = monitor_refinement(&sys, trace) {
                        v.outcome = Outcome::Fail;
                        v.failed = 1;
                        v.detail = e.to_string();
                    }
                } else {
                    v.outcome = Outcome::Skipped;
                    v.detail = "trace does not replay".into();
                }
                refinement = Some(v);
                r
            })
        }
        (k, i) => return Err(HarnessError::Input(format!("trace header: unsupported kind={k} impl={i}"))),
    };
    if let Err(e) = result {
        replay.outcome = Outcome::Fail;
        replay.failed = 1;
        replay.detail = e;
    }
    report.verdicts.push(replay);
    report.verdicts.extend(refinement);
    Ok(())
}

fn read(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn parse_trace(text: &str, path: &Path) -> Result<ExecutionTrace, HarnessError> {
    ExecutionTrace::parse(text).map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))
}

/// Re-executes a trace file and verifies its digests.
pub fn replay_file(path: &Path, out: Option<&Path>) -> Result<Report, HarnessError> {
    prepare_out(out)?;
    let trace = parse_trace(&read(path)?, path)?;
    let mut report = Report::new("replay", &file_name(path));
    replay_verdicts(&trace, &mut report)?;
    report.count("steps", trace.steps.len() as u64);
    finish_report(&mut report, out)?;
    Ok(report)
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// What a file handed to `check` contains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FileKind {
    Trace,
    History,
    Config,
}

pub fn sniff(text: &str) -> FileKind {
    let first = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .unwrap_or("");
    if first.starts_with("TRACE") {
        FileKind::Trace
    } else if first.starts_with("CALL") || first.starts_with("RET") {
        FileKind::History
    } else {
        FileKind::Config
    }
}

/// Checks a history or trace file; a configuration is run and checked.
pub fn check_file(path: &Path, out: Option<&Path>, seed: Option<u64>, budget: Option<usize>) -> Result<Report, HarnessError> {
    let text = read(path)?;
    match sniff(&text) {
        FileKind::Config => {
            let sc = scenario_with_overrides(&text, seed, budget, false)?;
            let mut report = run_scenario(&sc, out)?;
            report.command = "check".into();
            if let Some(dir) = out {
                write_file(dir, "report.txt", &report.to_text())?;
            }
            Ok(report)
        }
        kind => {
            prepare_out(out)?;
            let mut report = Report::new("check", &file_name(path));
            let (h, init) = if kind == FileKind::Trace {
                let trace = parse_trace(&text, path)?;
                replay_verdicts(&trace, &mut report)?;
                (trace.history(), header_num(&trace, "init", 0)?)
            } else {
                let h = History::parse(&text).map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))?;
                (h, 0)
            };
            report.count("actions", h.len() as u64);
            let cx = history_verdicts(&h, init, &mut report);
            if let (Some(dir), Some(msg)) = (out, cx) {
                let text = format!("# {msg}\n{}", h.to_text());
                report.files.push(write_file(dir, "counterexample.txt", &text)?);
            }
            finish_report(&mut report, out)?;
            Ok(report)
        }
    }
}

/// Parses a scenario and applies command-line overrides: `budget` is the
/// depth bound when exploring and the step budget otherwise.
pub fn scenario_with_overrides(
    text: &str,
    seed: Option<u64>,
    budget: Option<usize>,
    exploring: bool,
) -> Result<Scenario, ConfigError> {
    let mut cfg = Config::parse(text)?;
    if let Some(s) = seed {
        cfg.set("schedule", "seed", s);
    }
    if let Some(b) = budget {
        cfg.set("limits", if exploring { "depth" } else { "steps" }, b);
    }
    Scenario::from_config(&cfg)
}

#[cfg(test)]
mod tests;

//! Line-based execution traces.
//!
//! ```text
//! TRACE v1 m=<m> n=<n> seed=<seed> [key=value ...]
//! STEP <n> <rule> <pid> <label> <recv-uids|register> <digest>
//! ```
//!
//! Rules are `CALL`, `RET`, `INT` for message-passing runs and `CALL`, `RET`,
//! `SMR`, `SMW`, `SML` for shared-memory runs. Extra header keys (`kind`,
//! `impl`, `init`, `g0`, ...) carry what replay needs to rebuild the system.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::digest::hex;
use crate::history::{Action, History, InvId, Invocation, Value};
use crate::mp::MsgUid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Rule {
    Call,
    Ret,
    Int,
    SmRead,
    SmWrite,
    SmLocal,
}

impl Rule {
    pub fn tag(self) -> &'static str {
        match self {
            Rule::Call => "CALL",
            Rule::Ret => "RET",
            Rule::Int => "INT",
            Rule::SmRead => "SMR",
            Rule::SmWrite => "SMW",
            Rule::SmLocal => "SML",
        }
    }
}

impl FromStr for Rule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "CALL" => Rule::Call,
            "RET" => Rule::Ret,
            "INT" => Rule::Int,
            "SMR" => Rule::SmRead,
            "SMW" => Rule::SmWrite,
            "SML" => Rule::SmLocal,
            other => return Err(format!("unknown rule `{other}`")),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum StepDetail {
    None,
    Recv(Vec<MsgUid>),
    Register(String),
}

impl fmt::Display for StepDetail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepDetail::None => f.write_str("-"),
            StepDetail::Recv(uids) if uids.is_empty() => f.write_str("-"),
            StepDetail::Recv(uids) => {
                for (idx, uid) in uids.iter().enumerate() {
                    if idx > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{uid}")?;
                }
                Ok(())
            }
            StepDetail::Register(name) => f.write_str(name),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TraceStep {
    pub index: usize,
    pub rule: Rule,
    pub pid: usize,
    pub label: Option<Action>,
    pub detail: StepDetail,
    pub digest: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TraceHeader {
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    /// Additional `key=value` pairs, kept in insertion order.
    pub params: Vec<(String, String)>,
}

impl TraceHeader {
    pub fn new(m: usize, n: usize, seed: u64) -> Self {
        Self {
            m,
            n,
            seed,
            params: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.set(key, value);
        self
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.params.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.params.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.params
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ExecutionTrace {
    pub header: TraceHeader,
    pub initial_digest: u64,
    pub steps: Vec<TraceStep>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("trace line {line}: {message}")]
pub struct TraceParseError {
    pub line: usize,
    pub message: String,
}

fn label_token(label: &Option<Action>) -> String {
    match label {
        None => "-".to_string(),
        Some(Action::Call { inv, method, arg }) => {
            let invocation = Invocation {
                method: *method,
                arg: arg.clone(),
            };
            format!("{invocation}#{inv}")
        }
        Some(Action::Return { inv, value }) => format!("ret({value})#{inv}"),
    }
}

fn parse_label(tok: &str) -> Result<Option<Action>, String> {
    if tok == "-" {
        return Ok(None);
    }
    let (body, inv) = tok
        .rsplit_once('#')
        .ok_or_else(|| format!("label `{tok}` lacks an invocation id"))?;
    let inv = InvId(inv.parse().map_err(|_| format!("bad invocation id in `{tok}`"))?);
    if let Some(value) = body.strip_prefix("ret(").and_then(|b| b.strip_suffix(')')) {
        let value: Value = value.parse().map_err(|e| format!("{e}"))?;
        return Ok(Some(Action::Return { inv, value }));
    }
    let invocation: Invocation = body.parse().map_err(|e| format!("{e}"))?;
    Ok(Some(Action::call(inv, &invocation)))
}

fn parse_uids(tok: &str) -> Result<Vec<MsgUid>, String> {
    if tok == "-" {
        return Ok(Vec::new());
    }
    tok.split(',').map(|part| part.parse()).collect()
}

impl ExecutionTrace {
    pub fn new(header: TraceHeader, initial_digest: u64) -> Self {
        Self {
            header,
            initial_digest,
            steps: Vec::new(),
        }
    }

    pub fn history(&self) -> History {
        self.steps.iter().filter_map(|s| s.label.clone()).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "TRACE v1 m={} n={} seed={}",
            self.header.m, self.header.n, self.header.seed
        );
        for (k, v) in &self.header.params {
            out.push_str(&format!(" {k}={v}"));
        }
        out.push_str(&format!(" g0={}\n", hex(self.initial_digest)));
        for step in &self.steps {
            out.push_str(&format!(
                "STEP {} {} {} {} {} {}\n",
                step.index,
                step.rule.tag(),
                step.pid,
                label_token(&step.label),
                step.detail,
                hex(step.digest)
            ));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, TraceParseError> {
        let err = |line: usize, message: String| TraceParseError { line, message };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| err(1, "empty trace".into()))?;
        let mut fields = first.split_whitespace();
        if fields.next() != Some("TRACE") || fields.next() != Some("v1") {
            return Err(err(1, "expected `TRACE v1` header".into()));
        }
        let mut m = None;
        let mut n = None;
        let mut seed = None;
        let mut g0 = None;
        let mut params = Vec::new();
        for kv in fields {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| err(1, format!("header field `{kv}` is not key=value")))?;
            let num = |v: &str| v.parse::<u64>().map_err(|_| err(1, format!("bad number for `{k}`")));
            match k {
                "m" => m = Some(num(v)? as usize),
                "n" => n = Some(num(v)? as usize),
                "seed" => seed = Some(num(v)?),
                "g0" => {
                    g0 = Some(u64::from_str_radix(v, 16).map_err(|_| err(1, "bad g0 digest".into()))?)
                }
                _ => params.push((k.to_string(), v.to_string())),
            }
        }
        let header = TraceHeader {
            m: m.ok_or_else(|| err(1, "header lacks m".into()))?,
            n: n.ok_or_else(|| err(1, "header lacks n".into()))?,
            seed: seed.ok_or_else(|| err(1, "header lacks seed".into()))?,
            params,
        };
        let mut trace = ExecutionTrace::new(header, g0.ok_or_else(|| err(1, "header lacks g0".into()))?);
        for (idx, line) in lines {
            let line_no = idx + 1;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 7 || f[0] != "STEP" {
                return Err(err(line_no, format!("expected 7 fields `STEP <n> <rule> <pid> <label> <recv> <digest>`, got {}", f.len())));
            }
            let index: usize = f[1].parse().map_err(|_| err(line_no, "bad step index".into()))?;
            if index != trace.steps.len() {
                return Err(err(line_no, format!("step index {index} out of sequence")));
            }
            let rule: Rule = f[2].parse().map_err(|e| err(line_no, e))?;
            let pid: usize = f[3].parse().map_err(|_| err(line_no, "bad pid".into()))?;
            let label = parse_label(f[4]).map_err(|e| err(line_no, e))?;
            let detail = match rule {
                Rule::Int => StepDetail::Recv(parse_uids(f[5]).map_err(|e| err(line_no, e))?),
                Rule::SmRead | Rule::SmWrite => StepDetail::Register(f[5].to_string()),
                _ => StepDetail::None,
            };
            let digest = u64::from_str_radix(f[6], 16).map_err(|_| err(line_no, "bad digest".into()))?;
            trace.steps.push(TraceStep {
                index,
                rule,
                pid,
                label,
                detail,
                digest,
            });
        }
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::Method;

    fn sample() -> ExecutionTrace {
        let mut t = ExecutionTrace::new(TraceHeader::new(1, 3, 7).with("impl", "abd"), 0xfeed);
        t.steps.push(TraceStep {
            index: 0,
            rule: Rule::Call,
            pid: 0,
            label: Some(Action::call(InvId(0), &Invocation::new(Method::Write, 5))),
            detail: StepDetail::None,
            digest: 1,
        });
        t.steps.push(TraceStep {
            index: 1,
            rule: Rule::Int,
            pid: 1,
            label: None,
            detail: StepDetail::Recv(vec![MsgUid { sender: 0, seq: 0 }, MsgUid { sender: 0, seq: 2 }]),
            digest: 2,
        });
        t.steps.push(TraceStep {
            index: 2,
            rule: Rule::Ret,
            pid: 0,
            label: Some(Action::Return {
                inv: InvId(0),
                value: Value::Unit,
            }),
            detail: StepDetail::None,
            digest: 3,
        });
        t
    }

    #[test]
    fn text_form_parses_back() {
        let t = sample();
        let text = t.to_text();
        assert!(text.starts_with("TRACE v1 m=1 n=3 seed=7 impl=abd g0="));
        assert!(text.contains("STEP 0 CALL 0 write(5)#0 - 0000000000000001"));
        assert!(text.contains("STEP 1 INT 1 - 0.0,0.2 0000000000000002"));
        assert_eq!(ExecutionTrace::parse(&text).unwrap(), t);
        assert_eq!(t.history().len(), 2);
    }

    #[test]
    fn truncated_line_reports_line_number() {
        let text = sample().to_text();
        let mut lines: Vec<&str> = text.lines().collect();
        let cut = &lines[2][..10];
        lines[2] = cut;
        let err = ExecutionTrace::parse(&lines.join("\n")).unwrap_err();
        assert_eq!(err.line, 3);
    }
}

use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Outcome {
    Pass,
    Fail,
    /// A budget ran out before the check could decide.
    Bound,
    Skipped,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Pass => "PASS",
            Outcome::Fail => "FAIL",
            Outcome::Bound => "BOUND",
            Outcome::Skipped => "SKIPPED",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub check: String,
    pub outcome: Outcome,
    pub runs: u64,
    pub failed: u64,
    pub detail: String,
}

impl Verdict {
    pub fn new(check: &str) -> Self {
        Self {
            check: check.to_string(),
            outcome: Outcome::Pass,
            runs: 0,
            failed: 0,
            detail: String::new(),
        }
    }
}

/// Verdicts, counters and written files of one command. Holds nothing
/// time-dependent, so equal inputs give byte-identical reports.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Report {
    pub command: String,
    pub scenario: String,
    pub verdicts: Vec<Verdict>,
    pub counts: Vec<(String, u64)>,
    pub files: Vec<String>,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl Report {
    pub fn new(command: &str, scenario: &str) -> Self {
        Self {
            command: command.to_string(),
            scenario: scenario.to_string(),
            verdicts: Vec::new(),
            counts: Vec::new(),
            files: Vec::new(),
        }
    }

    pub fn count(&mut self, name: &str, value: u64) {
        self.counts.push((name.to_string(), value));
    }

    pub fn get_count(&self, name: &str) -> Option<u64> {
        self.counts.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }

    pub fn verdict(&self, check: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.check == check)
    }

    pub fn failed(&self) -> bool {
        self.verdicts.iter().any(|v| v.outcome == Outcome::Fail)
    }

    pub fn bounded(&self) -> bool {
        self.verdicts.iter().any(|v| v.outcome == Outcome::Bound)
    }

    /// 0 when every check holds, 2 when one is refuted, 3 when a bound was
    /// hit and nothing was refuted.
    pub fn exit_code(&self) -> i32 {
        if self.failed() {
            2
        } else if self.bounded() {
            3
        } else {
            0
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.command, self.scenario);
        for v in &self.verdicts {
            out.push_str(&format!("{} {} runs={} failed={}", v.outcome, v.check, v.runs, v.failed));
            if !v.detail.is_empty() {
                out.push_str(&format!(" : {}", v.detail));
            }
            out.push('\n');
        }
        for (k, v) in &self.counts {
            out.push_str(&format!("{k} = {v}\n"));
        }
        for f in &self.files {
            out.push_str(&format!("file {f}\n"));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("command,scenario,check,outcome,runs,failed,detail\n");
        for v in &self.verdicts {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                csv_field(&self.command),
                csv_field(&self.scenario),
                csv_field(&v.check),
                v.outcome,
                v.runs,
                v.failed,
                csv_field(&v.detail)
            ));
        }
        out
    }

    pub fn stats_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (k, v) in &self.counts {
            out.push_str(&format!("{},{v}\n", csv_field(k)));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let mut r = Report::new("run", "x");
        r.verdicts.push(Verdict::new("a"));
        assert_eq!(r.exit_code(), 0);
        r.verdicts[0].outcome = Outcome::Bound;
        assert_eq!(r.exit_code(), 3);
        let mut v = Verdict::new("b");
        v.outcome = Outcome::Fail;
        r.verdicts.push(v);
        assert_eq!(r.exit_code(), 2);
    }

    #[test]
    fn csv_quotes_details() {
        let mut r = Report::new("run", "x");
        let mut v = Verdict::new("a");
        v.detail = "seed 1: a, \"b\"".into();
        r.verdicts.push(v);
        assert!(r.to_csv().ends_with("PASS,0,0,\"seed 1: a, \"\"b\"\"\"\n"));
    }
}

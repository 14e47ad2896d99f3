use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::kernel::{Rational, Valuation};
use crate::solver::Stats;

pub const SCHEMA_VERSION: &str = "robustenv.report/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Proven,
    Counterexample,
    Unknown,
    Passed,
    Failed,
    Infeasible,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TuningSummary {
    pub target: Rational,
    pub total_error_bound: Rational,
    pub cost: Rational,
    pub uniform_width: u32,
    pub uniform_cost: Rational,
    pub max_width: u32,
    /// `sQ.P` per id.
    pub formats: Vec<String>,
    pub op_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Artifact {
    pub kind: String,
    pub sha256: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageReport {
    pub stage: String,
    pub subject: String,
    pub status: StageStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected: Option<StageStatus>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<Valuation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub concrete_violation: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub engine: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stats: Option<Stats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tuning: Option<TuningSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub artifact: Option<Artifact>,
    pub wall_time_ms: u128,
}

impl StageReport {
    pub fn new(stage: &str, subject: &str, status: StageStatus) -> StageReport {
        StageReport {
            stage: stage.to_string(),
            subject: subject.to_string(),
            status,
            expected: None,
            counterexample: None,
            concrete_violation: None,
            engine: None,
            note: None,
            stats: None,
            tuning: None,
            artifact: None,
            wall_time_ms: 0,
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn matches_expectation(&self) -> bool {
        self.expected.is_none_or(|e| e == self.status)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Environment {
    pub os: String,
    pub arch: String,
    pub parallel: bool,
    pub workers: Option<usize>,
    pub seed: u64,
}

impl Environment {
    pub fn current(workers: Option<usize>, seed: u64) -> Environment {
        Environment {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            parallel: cfg!(feature = "parallel"),
            workers,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub schema: String,
    pub tool_version: String,
    pub environment: Environment,
    pub inputs: Vec<InputHash>,
    pub stages: Vec<StageReport>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hashes a file; unreadable files hash as the empty string.
pub fn hash_file(path: &Path) -> InputHash {
    InputHash {
        path: path.display().to_string(),
        sha256: std::fs::read(path).map(|b| sha256_hex(&b)).unwrap_or_default(),
    }
}

impl Report {
    pub fn new(environment: Environment) -> Report {
        Report {
            schema: SCHEMA_VERSION.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            environment,
            inputs: Vec::new(),
            stages: Vec::new(),
        }
    }

    pub fn push(&mut self, s: StageReport) {
        self.stages.push(s);
    }

    pub fn stage(&self, name: &str) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == name)
    }

    /// 0 when nothing failed, 2 on a counterexample or failed check, 3 on
    /// unknown or infeasible stages.
    pub fn exit_code(&self) -> i32 {
        use StageStatus::*;
        if self.stages.iter().any(|s| !s.matches_expectation()) {
            return 2;
        }
        let unexpected = |s: &&StageReport| s.expected.is_none();
        if self.stages.iter().filter(unexpected).any(|s| matches!(s.status, Counterexample | Failed)) {
            2
        } else if self.stages.iter().filter(unexpected).any(|s| matches!(s.status, Unknown | Infeasible)) {
            3
        } else {
            0
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// JSON with every `wall_time_ms` field removed, for comparing runs.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        strip_times(&mut v);
        serde_json::to_string_pretty(&v).expect("value serializes")
    }
}

fn strip_times(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(m) => {
            m.remove("wall_time_ms");
            m.values_mut().for_each(strip_times);
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(strip_times),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashing_and_exit_codes() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let mut r = Report::new(Environment::current(None, 0));
        r.push(StageReport::new("robustness", "x", StageStatus::Proven));
        assert_eq!(r.exit_code(), 0);
        r.push(StageReport::new("tuning", "x", StageStatus::Infeasible));
        assert_eq!(r.exit_code(), 3);
        r.push(StageReport::new("safety", "x", StageStatus::Counterexample));
        assert_eq!(r.exit_code(), 2);
        let mut t = r.clone();
        t.stages[0].wall_time_ms = 99;
        assert_eq!(t.canonical_json(), r.canonical_json());
        assert!(!r.canonical_json().contains("wall_time_ms"));
    }

    #[test]
    fn expected_counterexamples_pass() {
        let mut r = Report::new(Environment::current(None, 0));
        let mut s = StageReport::new("robustness", "C11", StageStatus::Counterexample);
        s.expected = Some(StageStatus::Counterexample);
        r.push(s);
        assert_eq!(r.exit_code(), 0);
        r.stages[0].expected = Some(StageStatus::Proven);
        assert_eq!(r.exit_code(), 2);
    }
}

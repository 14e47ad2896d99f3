//! The pinned robot case-study expectations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use super::model::{parse_model, ModelError, ModelFile};
use super::pipeline::{decision_stage, lower_implementation, summary};
use super::report::{hash_file, Environment, Report, StageReport, StageStatus};
use crate::fixedpoint::{tune, TuneOptions};
use crate::hybrid::AngelicPerturbation;
use crate::kernel::{parse_formula, q, Formula, Rational};
use crate::monitor::synthesize_monitor;
use crate::obligations::{build_liveness, build_robustness, build_safety_under_perturbation, decide};
use crate::solver::{close_universally, qe_decide_formula, SolveOptions};

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{id}: {message}")]
    Stage { id: String, message: String },
    #[error("{} expectation(s) not met: {}", .mismatches.len(), .mismatches.join(", "))]
    MismatchedExpectation {
        mismatches: Vec<String>,
        report: Box<Report>,
    },
}

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub fixtures: PathBuf,
    /// Groups to run (`monitor`, `robustness`, `liveness`, `safety`,
    /// `tuning`, `network`); all when `None`.
    pub only: Option<Vec<String>>,
    pub solve: SolveOptions,
    pub workers: Option<usize>,
}

impl SuiteOptions {
    pub fn new(fixtures: impl Into<PathBuf>) -> SuiteOptions {
        SuiteOptions {
            fixtures: fixtures.into(),
            only: None,
            solve: SolveOptions::default(),
            workers: None,
        }
    }
}

pub const GROUPS: &[&str] = &["monitor", "robustness", "liveness", "safety", "tuning", "network"];

type RunFn = Box<dyn Fn(&ModelFile, &SolveOptions) -> Result<StageReport, String>>;

struct Case {
    group: &'static str,
    id: String,
    expected: StageStatus,
    note: Option<&'static str>,
    run: RunFn,
}

fn model_with(m: &ModelFile, params: &[(&str, &str)]) -> Result<ModelFile, String> {
    let mut m = m.clone();
    for (k, v) in params {
        m.set_param(k, q(v)).map_err(|e| e.to_string())?;
    }
    Ok(m)
}

fn robustness(ctl: &'static str, angel: &'static str, params: Vec<(&'static str, &'static str)>) -> impl Fn(&ModelFile, &SolveOptions) -> Result<StageReport, String> {
    move |m, opts| {
        let t0 = Instant::now();
        let m = model_with(m, &params)?;
        let env = m.envelope(ctl).map_err(|e| e.to_string())?;
        let ap = m.perturbation(angel).map_err(|e| e.to_string())?;
        let ob = build_robustness(&env, ap).map_err(|e| e.to_string())?;
        let d = decide(&ob, opts).map_err(|e| e.to_string())?;
        Ok(decision_stage("robustness", "", &d, t0))
    }
}

fn safety(
    model: &'static str,
    ctl: &'static str,
    angel: Option<&'static str>,
    imp: &'static str,
    params: Vec<(&'static str, &'static str)>,
) -> impl Fn(&ModelFile, &SolveOptions) -> Result<StageReport, String> {
    move |robot, opts| {
        let t0 = Instant::now();
        let loaded;
        let base = if model == "robot" {
            robot
        } else {
            loaded = parse_model(&robot.base_dir.join(model)).map_err(|e| e.to_string())?;
            &loaded
        };
        let m = model_with(base, &params)?;
        let env = m.envelope(ctl).map_err(|e| e.to_string())?;
        let ap = match angel {
            Some(a) => m.perturbation(a).map_err(|e| e.to_string())?.clone(),
            None => AngelicPerturbation::identity("skip"),
        };
        let imp = m.implementation(imp).map_err(|e| e.to_string())?;
        let ob = build_safety_under_perturbation(&env, &ap, &imp).map_err(|e| e.to_string())?;
        let mut o = opts.clone();
        o.domain = m.domain("D").map_err(|e| e.to_string())?.clone();
        let d = decide(&ob, &o).map_err(|e| e.to_string())?;
        Ok(decision_stage("safety", "", &d, t0))
    }
}

/// `0 <= v+ <= Vmax & 0 <= p - T*v+`, the hand-derived monitor of C11.
pub fn expected_c11_monitor() -> Formula {
    parse_formula("0 <= v+ & v+ <= Vmax & 0 <= p - T*v+").expect("static formula")
}

fn cases() -> Vec<Case> {
    let mut v: Vec<Case> = Vec::new();
    let mut add = |group, id: &str, expected, note, run: RunFn| {
        v.push(Case {
            group,
            id: id.to_string(),
            expected,
            note,
            run,
        })
    };
    use StageStatus::*;
    add(
        "monitor",
        "monitor/C11",
        Proven,
        None,
        Box::new(|m, opts| {
            let t0 = Instant::now();
            let mon = synthesize_monitor(m.ctl("C11").map_err(|e| e.to_string())?);
            let sub = m.envelope("C11").map_err(|e| e.to_string())?.parameter_substitution();
            let iff = Formula::iff(mon.formula.clone(), expected_c11_monitor()).map_terms(|t| t.substitute(&sub).fold_constants());
            let verdict = qe_decide_formula(&close_universally(&iff), opts.deadline()).map_err(|e| e.to_string())?;
            let d = crate::obligations::Decision {
                verdict,
                concrete_violation: None,
                engine: "qe",
            };
            Ok(decision_stage("monitor", "", &d, t0))
        }),
    );
    add("robustness", "robustness/C11/angel1", Counterexample, None, Box::new(robustness("C11", "angel1", vec![])));
    add("robustness", "robustness/C12/angel1/dv=5", Proven, None, Box::new(robustness("C12", "angel1", vec![("dv", "5")])));
    add("robustness", "robustness/C12/angel1/dv=6", Counterexample, None, Box::new(robustness("C12", "angel1", vec![("dv", "6")])));
    add("robustness", "robustness/C12/angel2", Proven, None, Box::new(robustness("C12", "angel2", vec![])));
    add("robustness", "robustness/C22/angel1/dv=5", Proven, None, Box::new(robustness("C22", "angel1", vec![("dv", "5")])));
    add(
        "robustness",
        "robustness/C22/angel1/dv=50",
        Counterexample,
        Some("dv*T = W/2 exceeds Vmax; at p = 0 no speed survives the noise"),
        Box::new(robustness("C22", "angel1", vec![("dv", "50")])),
    );
    for ctl in ["C11", "C12"] {
        add(
            "liveness",
            &format!("liveness/{ctl}"),
            Proven,
            None,
            Box::new(move |m, opts| {
                let t0 = Instant::now();
                let env = m.envelope(ctl).map_err(|e| e.to_string())?;
                let ob = build_liveness(&env).map_err(|e| e.to_string())?;
                let d = decide(&ob, opts).map_err(|e| e.to_string())?;
                Ok(decision_stage("liveness", "", &d, t0))
            }),
        );
    }
    for ctl in ["C12", "C22"] {
        for angel in ["angel1", "angel2"] {
            add(
                "safety",
                &format!("safety/{ctl}/{angel}/implR"),
                Proven,
                None,
                Box::new(safety("robot", ctl, Some(angel), "implR", vec![])),
            );
        }
    }
    add(
        "safety",
        "safety/C11/angel1/implR",
        Counterexample,
        None,
        Box::new(safety("robot", "C11", Some("angel1"), "implR", vec![])),
    );
    add(
        "safety",
        "safety/C11/skip/implR/M=10",
        Proven,
        None,
        Box::new(safety("robot", "C11", None, "implR", vec![("M", "10")])),
    );
    add(
        "tuning",
        "tuning/implR/target=1/4",
        Passed,
        None,
        Box::new(|m, opts| {
            let t0 = Instant::now();
            let env = m.envelope("C12").map_err(|e| e.to_string())?;
            let imp = m.implementation("implR").map_err(|e| e.to_string())?;
            let prog = lower_implementation(&env, &imp, m.domain("D").map_err(|e| e.to_string())?)?;
            let target = Rational::new(1, 4);
            let mut to = TuneOptions::new(target.clone());
            to.mode = opts.mode;
            let r = tune(&prog, &to).map_err(|e| e.to_string())?;
            let mut s = StageReport::new("tuning", "", StageStatus::Passed);
            s.tuning = Some(summary(&r, &target));
            s.wall_time_ms = t0.elapsed().as_millis();
            Ok(s)
        }),
    );
    for (ctl, imp, expected) in [
        ("C12", "regression", Proven),
        ("C11", "regression", Counterexample),
        ("C12", "classifier", Proven),
        ("C11", "classifier", Counterexample),
    ] {
        add(
            "network",
            &format!("network/{ctl}/noise/{imp}"),
            expected,
            None,
            Box::new(safety("nn.gdm", ctl, Some("noise"), imp, vec![])),
        );
    }
    v
}

/// Runs the pinned robot expectations against the bundled fixtures.
pub fn reproduce_robot_suite(opts: &SuiteOptions) -> Result<Report, SuiteError> {
    let robot_path = opts.fixtures.join("robot.gdm");
    let robot = parse_model(&robot_path)?;
    let mut report = Report::new(Environment::current(opts.workers, opts.solve.seed));
    let mut inputs: Vec<PathBuf> = vec![robot_path, opts.fixtures.join("nn.gdm")];
    if let Ok(nn) = parse_model(&opts.fixtures.join("nn.gdm")) {
        inputs.extend(nn.network_paths());
    }
    report.inputs = inputs.iter().map(|p| hash_file(p)).collect();
    let mut mismatches = Vec::new();
    for c in cases() {
        if let Some(only) = &opts.only {
            if !only.iter().any(|g| g == c.group) {
                continue;
            }
        }
        let mut s = (c.run)(&robot, &opts.solve).map_err(|message| SuiteError::Stage {
            id: c.id.clone(),
            message,
        })?;
        s.subject = c.id.clone();
        s.expected = Some(c.expected);
        if let Some(n) = c.note {
            s.note = Some(n.to_string());
        }
        if !s.matches_expectation() {
            mismatches.push(format!("{} (expected {:?}, got {:?})", c.id, c.expected, s.status));
        }
        report.push(s);
    }
    if mismatches.is_empty() {
        Ok(report)
    } else {
        Err(SuiteError::MismatchedExpectation {
            mismatches,
            report: Box::new(report),
        })
    }
}

/// Default location of the bundled fixtures relative to this crate.
pub fn default_fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

mod common;

use std::fs;

use robustenv::cli::model::ImplDecl;
use robustenv::cli::{
    parse_model_str, reproduce_robot_suite, run_pipeline, ModelError, PipelineOptions, StageStatus, SuiteError,
    SuiteOptions,
};
use robustenv::obligations::{build_robustness, decide};
use robustenv::solver::SolveOptions;

use common::{fixtures, r, robot};

#[test]
fn robot_model_declares_the_case_study() {
    let m = robot();
    let ctls: Vec<&str> = m.ctls.iter().map(|c| c.name.as_str()).collect();
    let angels: Vec<&str> = m.angels.iter().map(|a| a.name.as_str()).collect();
    assert_eq!(ctls, ["C11", "C12", "C22"]);
    assert_eq!(angels, ["angel1", "angel2"]);
    assert!(matches!(m.impls[0].value, ImplDecl::Closed(_)));
    assert_eq!(m.param("M"), Some(&r(19, 2)));
}

#[test]
fn empty_model_is_a_parse_error() {
    let e = parse_model_str("", &fixtures()).unwrap_err();
    assert!(matches!(e, ModelError::Parse(_)), "{e}");
}

#[test]
fn dangling_perturbation_is_unresolved() {
    let src = fs::read_to_string(fixtures().join("robot.gdm")).unwrap();
    let src = src.replace("pipeline full { ctl C12; angel angel2;", "pipeline full { ctl C12; angel angel9;");
    match parse_model_str(&src, &fixtures()) {
        Err(ModelError::UnresolvedName { kind, name, line, .. }) => {
            assert_eq!((kind, name.as_str()), ("perturbation", "angel9"));
            assert!(line > 0);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn full_pipeline_passes_and_emits() {
    let m = robot();
    let rep = run_pipeline(&m, m.pipeline("full").unwrap(), &PipelineOptions::default()).unwrap();
    let stages: Vec<(&str, StageStatus)> = rep.stages.iter().map(|s| (s.stage.as_str(), s.status)).collect();
    assert_eq!(
        stages,
        [
            ("monitor", StageStatus::Passed),
            ("robustness", StageStatus::Proven),
            ("safety", StageStatus::Proven),
            ("tuning", StageStatus::Passed),
            ("emit", StageStatus::Passed),
        ]
    );
    let art = rep.stage("emit").unwrap().artifact.as_ref().unwrap();
    assert!(art.text.starts_with("fxp 1\n"));
    assert_eq!(rep.exit_code(), 0);

    let again = run_pipeline(&m, m.pipeline("full").unwrap(), &PipelineOptions::default()).unwrap();
    assert_eq!(rep.canonical_json(), again.canonical_json());
}

#[test]
fn naive_pipeline_stops_at_robustness() {
    let m = robot();
    let rep = run_pipeline(&m, m.pipeline("naive").unwrap(), &PipelineOptions::default()).unwrap();
    let rob = rep.stage("robustness").unwrap();
    assert_eq!(rob.status, StageStatus::Counterexample);
    assert_eq!(rob.counterexample.as_ref().unwrap().get("p"), Some(&r(0, 1)));
    for later in ["safety", "tuning", "emit"] {
        assert_eq!(rep.stage(later).unwrap().status, StageStatus::Skipped, "{later}");
    }
    assert_eq!(rep.exit_code(), 2);
}

#[test]
fn zero_noise_reduces_to_liveness() {
    let mut m = robot();
    m.set_param("dv", r(0, 1)).unwrap();
    let mut sel = m.pipeline("naive").unwrap().clone();
    sel.implementation = None;
    let rep = run_pipeline(&m, &sel, &PipelineOptions::default()).unwrap();
    let rob = rep.stage("robustness").unwrap();
    assert_eq!(rob.status, StageStatus::Proven);
    assert!(rob.note.as_deref().unwrap().contains("liveness"));
}

#[test]
fn robustness_is_monotone_in_the_noise_bound() {
    let m = robot();
    let grid = [r(0, 1), r(1, 4), r(5, 1), r(6, 1), r(10, 1)];
    let mut verdicts = Vec::new();
    for dv in &grid {
        let mut m = m.clone();
        m.set_param("dv", dv.clone()).unwrap();
        let env = m.envelope("C12").unwrap();
        let ob = build_robustness(&env, m.perturbation("angel1").unwrap()).unwrap();
        verdicts.push(decide(&ob, &SolveOptions::default()).unwrap().verdict.is_proven());
    }
    assert_eq!(verdicts, [true, true, true, false, false]);
    assert!(verdicts.windows(2).all(|w| w[0] || !w[1]));
}

#[test]
fn suite_subset_runs_only_the_selected_group() {
    let mut opts = SuiteOptions::new(fixtures());
    opts.only = Some(vec!["robustness".into()]);
    let rep = reproduce_robot_suite(&opts).unwrap();
    assert_eq!(rep.stages.len(), 6);
    assert!(rep.stages.iter().all(|s| s.stage == "robustness"));
}

#[test]
fn tampered_fixture_is_a_mismatch() {
    let dir = std::env::temp_dir().join(format!("robustenv-tamper-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    let src = fs::read_to_string(fixtures().join("robot.gdm")).unwrap();
    let flipped = src.replace("ctl C11 { v := *; ?(0 <= v & v <= Vmax & T*v <= p) }", "ctl C11 { v := *; ?(0 <= v & v <= Vmax & 2*T*v <= p) }");
    assert_ne!(src, flipped);
    fs::write(dir.join("robot.gdm"), flipped).unwrap();
    let mut opts = SuiteOptions::new(&dir);
    opts.only = Some(vec!["monitor".into()]);
    let res = reproduce_robot_suite(&opts);
    fs::remove_dir_all(&dir).ok();
    match res {
        Err(SuiteError::MismatchedExpectation { mismatches, report }) => {
            assert_eq!(mismatches.len(), 1, "{mismatches:?}");
            assert!(mismatches[0].starts_with("monitor/C11"));
            assert_eq!(report.exit_code(), 2);
        }
        other => panic!("{other:?}"),
    }
}

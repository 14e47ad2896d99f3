use std::time::Instant;

use thiserror::Error;

use super::model::{ModelFile, Selections};
use super::report::{sha256_hex, Artifact, Environment, Report, StageReport, StageStatus, TuningSummary};
use crate::fixedpoint::{emit, lower_network, lower_term, tune, CostWeights, IntProgram, StraightLineProgram, TuneOptions};
use crate::hybrid::{AngelicPerturbation, EnvelopeModel};
use crate::kernel::{Rational, Term};
use crate::monitor::{check_monitor_soundness, synthesize_monitor, SoundnessOptions};
use crate::obligations::{
    build_liveness, build_robustness, build_safety_under_perturbation, decide, parameter_valuation, Decision,
    Implementation, Obligation,
};
use crate::solver::interval::{IBox, Interval};
use crate::solver::{SolveOptions, Status};

#[derive(Debug, Error)]
#[error("{stage}: {message}")]
pub struct PipelineError {
    pub stage: &'static str,
    pub message: String,
}

fn stage_err(stage: &'static str) -> impl Fn(&dyn std::fmt::Display) -> PipelineError {
    move |e| PipelineError {
        stage,
        message: e.to_string(),
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOptions {
    pub solve: SolveOptions,
    pub monitor_samples: usize,
    pub max_width: u32,
    pub weights: CostWeights,
    pub workers: Option<usize>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            solve: SolveOptions::default(),
            monitor_samples: 200,
            max_width: 64,
            weights: CostWeights::default(),
            workers: None,
        }
    }
}

/// True when every noise bound of a bounded perturbation is 0 under the
/// model's parameters (or the perturbation is skip/skip).
pub fn is_zero_perturbation(model: &EnvelopeModel, ap: &AngelicPerturbation) -> bool {
    if ap.pre == crate::hybrid::skip() && ap.post == crate::hybrid::skip() {
        return true;
    }
    let sub = model.parameter_substitution();
    match ap.bounded_template() {
        Some((ins, outs)) => ins
            .iter()
            .chain(&outs)
            .all(|(_, d)| d.substitute(&sub).fold_constants().as_const().is_some_and(Rational::is_zero)),
        None => false,
    }
}

/// Output noise bound on `var` under the model's parameters.
pub fn output_bound(model: &EnvelopeModel, ap: &AngelicPerturbation, var: &str) -> Option<Rational> {
    let (_, outs) = ap.bounded_template()?;
    let sub = model.parameter_substitution();
    outs.iter()
        .find(|(y, _)| y == var)
        .and_then(|(_, d)| d.substitute(&sub).fold_constants().as_const().cloned())
}

/// Converts a decision into a report entry.
pub fn decision_stage(stage: &str, subject: &str, d: &Decision, started: Instant) -> StageReport {
    let status = match &d.verdict.status {
        Status::Proven => StageStatus::Proven,
        Status::Counterexample(_) => StageStatus::Counterexample,
        Status::Unknown(_) => StageStatus::Unknown,
    };
    let mut s = StageReport::new(stage, subject, status);
    s.counterexample = d.verdict.counterexample().cloned();
    s.concrete_violation = d.concrete_violation;
    s.engine = Some(d.engine.to_string());
    if let Status::Unknown(why) = &d.verdict.status {
        s.note = Some(why.clone());
    }
    s.stats = Some(d.verdict.stats.clone());
    s.wall_time_ms = started.elapsed().as_millis();
    s
}

/// Lowers an implementation to straight-line code over a domain box.
pub fn lower_implementation(
    model: &EnvelopeModel,
    imp: &Implementation,
    domain: &IBox,
) -> Result<StraightLineProgram, String> {
    let interval = |x: &str| domain.get(x).cloned().ok_or_else(|| format!("domain does not bound `{x}`"));
    match imp {
        Implementation::ClosedForm { outputs, .. } => {
            let [(_, t)] = outputs.as_slice() else {
                return Err("tuning supports a single output".into());
            };
            let t = t.substitute(&model.parameter_substitution()).fold_constants();
            let fv = t.free_variables();
            let inputs: Vec<String> = model.state_vars.iter().filter(|x| fv.contains(*x)).cloned().collect();
            if let Some(x) = fv.iter().find(|x| !inputs.contains(x)) {
                return Err(format!("`{x}` is not a state variable"));
            }
            let dom: Vec<Interval> = inputs.iter().map(|x| interval(x)).collect::<Result<_, _>>()?;
            lower_term(&t, &inputs, &dom).map_err(|e| e.to_string())
        }
        Implementation::Network { network, .. } => {
            let dom: Vec<Interval> = network
                .inputs
                .iter()
                .map(|t| match t {
                    Term::Var(x) => interval(x),
                    _ => Err(format!("network input `{t}` is not a variable")),
                })
                .collect::<Result<_, _>>()?;
            lower_network(&network.net, &dom).map_err(|e| e.to_string())
        }
    }
}

fn skipped(report: &mut Report, stages: &[&str], subject: &str, why: &str) {
    for st in stages {
        report.push(StageReport::new(st, subject, StageStatus::Skipped).with_note(why));
    }
}

/// Runs monitor synthesis, robustness, implementation safety, tuning and
/// emission in order, stopping early when a verification stage is not
/// proven.
pub fn run_pipeline(model: &ModelFile, sel: &Selections, opts: &PipelineOptions) -> Result<Report, PipelineError> {
    let mut report = Report::new(Environment::current(opts.workers, opts.solve.seed));
    for p in model.network_paths() {
        report.inputs.push(super::report::hash_file(&p));
    }
    let env = model.envelope(&sel.ctl).map_err(|e| stage_err("monitor")(&e))?;
    let ap = model.perturbation(&sel.angel).map_err(|e| stage_err("robustness")(&e))?;
    let subject = format!("{}/{}", sel.ctl, sel.angel);

    let t0 = Instant::now();
    let mon = synthesize_monitor(&env.ctl);
    let sound = check_monitor_soundness(
        &mon,
        &SoundnessOptions {
            samples: opts.monitor_samples,
            seed: opts.solve.seed,
            fixed: parameter_valuation(&env),
            ..SoundnessOptions::default()
        },
    );
    let mut s = StageReport::new(
        "monitor",
        &sel.ctl,
        if sound.is_clean() { StageStatus::Passed } else { StageStatus::Failed },
    )
    .with_note(mon.formula.to_string());
    s.wall_time_ms = t0.elapsed().as_millis();
    report.push(s);

    let t0 = Instant::now();
    let (ob, note): (Obligation, Option<&str>) = if is_zero_perturbation(&env, ap) {
        (
            build_liveness(&env).map_err(|e| stage_err("robustness")(&e))?,
            Some("zero perturbation: reduces to liveness"),
        )
    } else {
        (build_robustness(&env, ap).map_err(|e| stage_err("robustness")(&e))?, None)
    };
    let d = decide(&ob, &opts.solve).map_err(|e| stage_err("robustness")(&e))?;
    let mut s = decision_stage("robustness", &subject, &d, t0);
    if let Some(n) = note {
        s.note = Some(n.to_string());
    }
    report.push(s);
    let later = ["safety", "tuning", "emit"];
    if !d.verdict.is_proven() {
        skipped(&mut report, &later, &subject, "robustness not proven");
        return Ok(report);
    }

    let Some(imp_name) = &sel.implementation else {
        skipped(&mut report, &later, &subject, "no implementation selected");
        return Ok(report);
    };
    let imp = model.implementation(imp_name).map_err(|e| stage_err("safety")(&e))?;
    let domain = match &sel.domain {
        Some(d) => Some(model.domain(d).map_err(|e| stage_err("safety")(&e))?.clone()),
        None => None,
    };
    let subject = format!("{subject}/{imp_name}");
    let t0 = Instant::now();
    let ob = build_safety_under_perturbation(&env, ap, &imp).map_err(|e| stage_err("safety")(&e))?;
    let mut solve = opts.solve.clone();
    if let Some(d) = &domain {
        solve.domain = d.clone();
    }
    let d = decide(&ob, &solve).map_err(|e| stage_err("safety")(&e))?;
    report.push(decision_stage("safety", &subject, &d, t0));
    if !d.verdict.is_proven() {
        skipped(&mut report, &later[1..], &subject, "safety not proven");
        return Ok(report);
    }

    let Some(domain) = domain else {
        skipped(&mut report, &later[1..], &subject, "no domain selected");
        return Ok(report);
    };
    let out_var = imp.output_vars().into_iter().next().unwrap_or_default();
    let target = sel
        .target
        .clone()
        .or_else(|| output_bound(&env, ap, &out_var))
        .ok_or_else(|| PipelineError {
            stage: "tuning",
            message: "no target error selected and no output noise bound".into(),
        })?;
    let t0 = Instant::now();
    let prog = lower_implementation(&env, &imp, &domain).map_err(|e| stage_err("tuning")(&e))?;
    let mut topts = TuneOptions::new(target.clone());
    topts.max_width = opts.max_width;
    topts.weights = opts.weights.clone();
    topts.mode = opts.solve.mode;
    let tuned = match tune(&prog, &topts) {
        Ok(r) => r,
        Err(crate::fixedpoint::FixedError::Infeasible { .. }) => {
            let mut s = StageReport::new("tuning", &subject, StageStatus::Infeasible);
            s.wall_time_ms = t0.elapsed().as_millis();
            report.push(s);
            skipped(&mut report, &later[2..], &subject, "tuning infeasible");
            return Ok(report);
        }
        Err(e) => return Err(stage_err("tuning")(&e)),
    };
    let mut s = StageReport::new("tuning", &subject, StageStatus::Passed);
    s.tuning = Some(summary(&tuned, &target));
    s.wall_time_ms = t0.elapsed().as_millis();
    report.push(s);

    let ip = IntProgram::from_program(&tuned.program).map_err(|e| stage_err("emit")(&e))?;
    let text = emit(&ip);
    let mut s = StageReport::new("emit", &subject, StageStatus::Passed);
    s.artifact = Some(Artifact {
        kind: "fxp".into(),
        sha256: sha256_hex(text.as_bytes()),
        text,
    });
    report.push(s);
    Ok(report)
}

pub fn summary(r: &crate::fixedpoint::TuningResult, target: &Rational) -> TuningSummary {
    TuningSummary {
        target: target.clone(),
        total_error_bound: r.total_error_bound().clone(),
        cost: r.cost.clone(),
        uniform_width: r.uniform_width,
        uniform_cost: r.uniform_cost.clone(),
        max_width: r.max_width(),
        formats: r.program.formats.iter().map(|f| f.to_string()).collect(),
        op_count: r.program.arithmetic_op_count(),
    }
}

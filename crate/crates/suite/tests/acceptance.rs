//! Case-study acceptance criteria. Each criterion runs at its stated
//! tolerance and time budget and prints one PASS/FAIL line; the process
//! exits nonzero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::Rng;
use robustenv::cli::pipeline::summary;
use robustenv::cli::suite::expected_c11_monitor;
use robustenv::cli::ModelFile;
use robustenv::fixedpoint::{emit, parse_emitted, simulate, tune, IntProgram, StraightLineProgram, TuneOptions};
use robustenv::hybrid::AngelicPerturbation;
use robustenv::kernel::{Formula, Rational, Term, Valuation};
use robustenv::monitor::{check_monitor_soundness, synthesize_monitor, SoundnessOptions};
use robustenv::obligations::{
    build_liveness, build_robustness, build_safety_under_perturbation, decide, parameter_valuation, Decision,
};
use robustenv::par::Mode;
use robustenv::solver::{close_universally, falsify, qe_decide_formula, Engine, Prepared, SolveOptions, Status};

use common::{
    fm_grid_agreement, network_program, nn_model, r, robot, robot_program, safety_obligation, sample, seeded, Instance,
    VARS,
};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn with_params(m: &ModelFile, params: &[(&str, Rational)]) -> ModelFile {
    let mut m = m.clone();
    for (k, v) in params {
        m.set_param(k, v.clone()).unwrap();
    }
    m
}

fn status_name(s: &Status) -> &'static str {
    match s {
        Status::Proven => "Proven",
        Status::Counterexample(_) => "Counterexample",
        Status::Unknown(_) => "Unknown",
    }
}

/// Runs `f` and fails it when it overruns `budget`.
fn timed(budget: Duration, f: impl FnOnce() -> Decision) -> Result<Decision, String> {
    let t0 = Instant::now();
    let d = f();
    let took = t0.elapsed();
    check(took < budget, format!("took {took:?}, budget {budget:?}"))?;
    Ok(d)
}

fn monitor_exactness() -> Outcome {
    let m = robot();
    let t0 = Instant::now();
    let mon = synthesize_monitor(m.ctl("C11").unwrap());
    let sub = m.envelope("C11").unwrap().parameter_substitution();
    let iff = Formula::iff(mon.formula.clone(), expected_c11_monitor()).map_terms(|t| t.substitute(&sub).fold_constants());
    let v = qe_decide_formula(&close_universally(&iff), None).map_err(|e| e.to_string())?;
    let took = t0.elapsed();
    check(v.is_proven(), format!("biconditional {:?}", v.status))?;
    check(took < Duration::from_secs(1), format!("took {took:?}"))?;
    Ok(format!("chi(C11) == {} in {took:?}", expected_c11_monitor()))
}

fn robustness_verdicts() -> Outcome {
    let m = robot();
    let mut lines = Vec::new();
    let mut failed = Vec::new();
    for (ctl, dv, want) in [("C11", r(1, 4), "Counterexample"), ("C12", r(5, 1), "Proven"), ("C12", r(6, 1), "Counterexample"), ("C22", r(50, 1), "Proven")] {
        let mm = with_params(&m, &[("dv", dv.clone())]);
        let env = mm.envelope(ctl).unwrap();
        let ob = build_robustness(&env, mm.perturbation("angel1").unwrap()).unwrap();
        let d = timed(Duration::from_secs(30), || decide(&ob, &SolveOptions::default()).unwrap())?;
        let got = status_name(&d.verdict.status);
        let mut ok = got == want;
        if ctl == "C11" {
            ok &= d.verdict.counterexample().and_then(|c| c.get("p").cloned()) == Some(r(0, 1));
        }
        let line = format!("{ctl}/dv={dv}: {got} (want {want})");
        if !ok {
            failed.push(line.clone());
        }
        lines.push(line);
    }
    if failed.is_empty() {
        Ok(lines.join("; "))
    } else {
        Err(format!("{}; all: {}", failed.join("; "), lines.join("; ")))
    }
}

fn liveness_special_case() -> Outcome {
    let m = robot();
    let mut lines = Vec::new();
    for ctl in ["C11", "C12"] {
        let env = m.envelope(ctl).unwrap();
        let ob = build_liveness(&env).unwrap();
        let d = timed(Duration::from_secs(10), || decide(&ob, &SolveOptions::default()).unwrap())?;
        check(d.verdict.is_proven(), format!("{ctl}: {:?}", d.verdict.status))?;
        lines.push(format!("{ctl} Proven"));
    }
    Ok(lines.join("; "))
}

fn bb_options(m: &ModelFile) -> SolveOptions {
    SolveOptions {
        engine: Engine::Bb,
        domain: m.domain("D").unwrap().clone(),
        ..SolveOptions::default()
    }
}

fn safety_under_perturbation() -> Outcome {
    let m = robot();
    let imp = m.implementation("implR").unwrap();
    let mut lines = Vec::new();
    for ctl in ["C12", "C22"] {
        for angel in ["angel1", "angel2"] {
            let env = m.envelope(ctl).unwrap();
            let ob = build_safety_under_perturbation(&env, m.perturbation(angel).unwrap(), &imp).unwrap();
            let d = timed(Duration::from_secs(300), || decide(&ob, &bb_options(&m)).unwrap())?;
            check(d.verdict.is_proven(), format!("{ctl}/{angel}: {:?}", d.verdict.status))?;
            lines.push(format!("{ctl}/{angel} Proven"));
        }
    }
    let env = m.envelope("C11").unwrap();
    let ob = build_safety_under_perturbation(&env, m.perturbation("angel1").unwrap(), &imp).unwrap();
    let d = timed(Duration::from_secs(300), || decide(&ob, &bb_options(&m)).unwrap())?;
    let Status::Counterexample(c) = &d.verdict.status else {
        return Err(format!("C11/angel1: {:?}", d.verdict.status));
    };
    let prep = Prepared::new(&ob.formula, None);
    let full = prep.complete(c).map_err(|e| e.to_string())?;
    check(prep.holds_at(&full) == Ok(false), format!("C11/angel1 counterexample {c} does not falsify"))?;
    lines.push(format!("C11/angel1 Counterexample {c} confirmed"));
    Ok(lines.join("; "))
}

fn real_valued_degenerate_check() -> Outcome {
    let m = with_params(&robot(), &[("M", r(10, 1))]);
    let env = m.envelope("C11").unwrap();
    let ob = build_safety_under_perturbation(&env, &AngelicPerturbation::identity("skip"), &m.implementation("implR").unwrap()).unwrap();
    let d = timed(Duration::from_secs(60), || decide(&ob, &bb_options(&m)).unwrap())?;
    check(d.verdict.is_proven(), format!("{:?}", d.verdict.status))?;
    Ok("C11/skip/implR M=Vmax=10 Proven".into())
}

fn max_realized_error(p: &StraightLineProgram, n: usize, seed: u64) -> Rational {
    let mut rng = seeded(seed);
    let mut worst = Rational::zero();
    for _ in 0..n {
        let x = sample(&mut rng, &p.domain);
        let e = simulate(p, &x).unwrap().realized_error;
        if e > worst {
            worst = e;
        }
    }
    worst
}

fn quantization_link() -> Outcome {
    let t0 = Instant::now();
    let target = r(1, 4);
    let t = tune(&robot_program(), &TuneOptions::new(target.clone())).map_err(|e| e.to_string())?;
    let bound = t.total_error_bound().clone();
    check(bound <= target, format!("bound {bound} > {target}"))?;
    let worst = max_realized_error(&t.program, 100_000, 60);
    check(worst <= bound, format!("realized {worst} > bound {bound}"))?;
    let ip = IntProgram::from_program(&t.program).map_err(|e| e.to_string())?;
    let back = parse_emitted(&emit(&ip)).map_err(|e| e.to_string())?;
    let mut rng = seeded(61);
    for _ in 0..1000 {
        let x = sample(&mut rng, &t.program.domain);
        check(back.run(&x) == ip.run(&x), format!("emitted program differs at {x:?}"))?;
    }
    let took = t0.elapsed();
    check(took < Duration::from_secs(600), format!("took {took:?}"))?;
    let width = summary(&t, &target).max_width;
    Ok(format!(
        "bound {:.3e} <= 1/4, realized max {:.3e} on 1e5 points, round trip on 1e3 points, max tuned width {width}",
        bound.to_f64(),
        worst.to_f64()
    ))
}

fn network_verification() -> Outcome {
    let m = nn_model();
    let mut lines = Vec::new();
    for imp in ["regression", "classifier"] {
        let t0 = Instant::now();
        for ctl in ["C12", "C11"] {
            let (ob, dom) = safety_obligation(&m, ctl, "noise", imp);
            let d = decide(&ob, &SolveOptions { domain: dom.clone(), ..SolveOptions::default() }).map_err(|e| e.to_string())?;
            match &d.verdict.status {
                Status::Proven => {
                    let hit = falsify(&ob.formula, ob.network.as_ref(), &dom, 1_000_000, 70, Mode::default())
                        .map_err(|e| e.to_string())?;
                    check(hit.is_none(), format!("{ctl}/{imp}: Proven but falsified at {hit:?}"))?;
                    lines.push(format!("{ctl}/{imp} Proven, 1e6 samples clean"));
                }
                Status::Counterexample(c) => {
                    let prep = Prepared::new(&ob.formula, ob.network.as_ref());
                    let full = prep.complete(c).map_err(|e| e.to_string())?;
                    check(prep.holds_at(&full) == Ok(false), format!("{ctl}/{imp}: {c} does not falsify"))?;
                    lines.push(format!("{ctl}/{imp} Counterexample confirmed"));
                }
                Status::Unknown(why) => return Err(format!("{ctl}/{imp}: unknown ({why})")),
            }
        }
        let took = t0.elapsed();
        check(took < Duration::from_secs(600), format!("{imp} took {took:?}"))?;
    }
    check(lines[0].contains("C12/regression Proven") && lines[2].contains("C12/classifier Proven"), lines.join("; "))?;
    Ok(lines.join("; "))
}

fn substitution_lemma_samples(n: usize) -> Result<(), String> {
    let mut rng = seeded(80);
    let mut done = 0;
    while done < n {
        let f = Instance::random(&mut rng).body_formula();
        let t = Term::int(rng.gen_range(-3..=3))
            .mul(Term::var("y"))
            .add(Term::Const(Rational::new(rng.gen_range(-8..=8), rng.gen_range(1..=4))));
        let s: Valuation = VARS
            .iter()
            .map(|v| (*v, Rational::new(rng.gen_range(-12..=12), rng.gen_range(1..=3))))
            .collect();
        let tv = t.evaluate(&s).unwrap();
        let mut m = BTreeMap::new();
        m.insert("x".to_string(), t);
        let lhs = f.substitute(&m).evaluate(&s);
        let rhs = f.evaluate(&s.clone().with("x", tv));
        check(lhs == rhs, format!("{f} at {s}"))?;
        done += 1;
    }
    Ok(())
}

fn property_suites() -> Outcome {
    let t0 = Instant::now();
    let g = fm_grid_agreement(1, 500, 20_000);
    check(g.decisive >= 500, format!("only {} decisive of {}", g.decisive, g.generated))?;
    check(g.disagreements.is_empty(), format!("{} FM/grid disagreements", g.disagreements.len()))?;

    substitution_lemma_samples(1000)?;

    let m = robot();
    for ctl in ["C11", "C12", "C22"] {
        let env = m.envelope(ctl).unwrap();
        let rep = check_monitor_soundness(
            &synthesize_monitor(&env.ctl),
            &SoundnessOptions {
                samples: 1000,
                seed: 81,
                fixed: parameter_valuation(&env),
                range: (-20, 120),
            },
        );
        check(rep.is_clean(), format!("monitor replay {ctl}: {rep:?}"))?;
    }

    let mut programs = vec![tune(&robot_program(), &TuneOptions::new(r(1, 4))).unwrap().program];
    for file in ["regression.nnet", "classifier.nnet"] {
        programs.push(tune(&network_program(file), &TuneOptions::new(r(1, 100))).unwrap().program);
    }
    for (k, p) in programs.iter().enumerate() {
        let bound = robustenv::fixedpoint::analyze(p, &p.formats).unwrap().output_error;
        let worst = max_realized_error(p, 100_000, 82 + k as u64);
        check(worst <= bound, format!("program {k}: realized {worst} > {bound}"))?;
    }

    let grid = [r(0, 1), r(1, 4), r(5, 1), r(6, 1), r(10, 1)];
    let mut proven = Vec::new();
    for dv in &grid {
        let mm = with_params(&m, &[("dv", dv.clone())]);
        let ob = build_robustness(&mm.envelope("C12").unwrap(), mm.perturbation("angel1").unwrap()).unwrap();
        proven.push(decide(&ob, &SolveOptions::default()).unwrap().verdict.is_proven());
    }
    check(proven.windows(2).all(|w| w[0] || !w[1]), format!("robustness not monotone in dv: {proven:?}"))?;

    let took = t0.elapsed();
    check(took < Duration::from_secs(1200), format!("took {took:?}"))?;
    Ok(format!(
        "FM/grid {} decisive of {} generated, 0 disagreements; 1000 substitutions; 3x1000 monitor replays; 3x1e5 fixed-point samples; dv-grid {proven:?}",
        g.decisive, g.generated
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("monitor exactness", monitor_exactness),
        ("robustness verdicts", robustness_verdicts),
        ("liveness special case", liveness_special_case),
        ("safety under perturbation", safety_under_perturbation),
        ("real-valued degenerate check", real_valued_degenerate_check),
        ("quantization link", quantization_link),
        ("network verification", network_verification),
        ("property suites", property_suites),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match res {
            Ok(detail) => println!("criterion {} {name}: PASS [{secs:.1} s] {detail}", i + 1),
            Err(why) => {
                failures += 1;
                println!("criterion {} {name}: FAIL [{secs:.1} s] {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}

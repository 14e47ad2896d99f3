mod common;

use robustenv::hybrid::{HybridProgram, RandomChooser, RunOutcome};
use robustenv::kernel::{pre_name, Formula, Valuation};
use robustenv::monitor::{check_monitor_soundness, synthesize_monitor, SoundnessOptions};
use robustenv::obligations::parameter_valuation;
use robustenv::solver::qe_decide_formula;

use common::{random_program, reach, robot, seeded};

#[test]
fn random_program_executions_satisfy_their_monitor() {
    let mut rng = seeded(10);
    for i in 0..1000 {
        let hp = random_program(&mut rng, 3);
        let m = synthesize_monitor(&hp);
        let rep = check_monitor_soundness(
            &m,
            &SoundnessOptions {
                samples: 2,
                seed: i,
                ..SoundnessOptions::default()
            },
        );
        assert!(rep.is_clean(), "{hp}\n{}\n{rep:?}", m.formula);
    }
}

#[test]
fn robot_monitors_replay_both_ways() {
    let m = robot();
    for ctl in ["C11", "C12", "C22"] {
        let env = m.envelope(ctl).unwrap();
        let mon = synthesize_monitor(&env.ctl);
        let rep = check_monitor_soundness(
            &mon,
            &SoundnessOptions {
                samples: 1000,
                seed: 1,
                fixed: parameter_valuation(&env),
                range: (-20, 120),
            },
        );
        assert!(rep.is_clean(), "{ctl}: {rep:?}");
        assert!(rep.executions > 0 && rep.replays > 0, "{ctl}: {rep:?}");
    }
}

/// The monitor is equivalent to reachability computed by naive path
/// enumeration with existential fresh symbols.
#[test]
fn robot_monitors_equal_path_reachability() {
    let m = robot();
    for ctl in ["C11", "C12", "C22"] {
        let env = m.envelope(ctl).unwrap();
        let sub = env.parameter_substitution();
        let mon = synthesize_monitor(&env.ctl);
        let iff = Formula::iff(mon.formula.clone(), reach(&env.ctl)).substitute(&sub);
        let iff = iff.map_terms(|t| t.fold_constants());
        let v = qe_decide_formula(&iff, None).unwrap();
        assert!(v.is_proven(), "{ctl}: {:?}", v.status);
    }
}

#[test]
fn only_bound_variables_are_primed() {
    let mut rng = seeded(11);
    for _ in 0..300 {
        let hp = random_program(&mut rng, 3);
        let bound = hp.bound_variables();
        let m = synthesize_monitor(&hp);
        for v in m.formula.free_variables() {
            if let Some(x) = pre_name(&v) {
                assert!(bound.iter().any(|b| b == x), "{hp}: {v}");
            }
        }
    }
}

#[test]
fn runs_are_deterministic_given_the_chooser() {
    let mut rng = seeded(12);
    for i in 0..200u64 {
        let hp: HybridProgram = random_program(&mut rng, 3);
        let s = Valuation::new().with("a", common::r(i as i64 % 5, 2)).with("b", common::r(1, 3));
        let run = |seed| {
            let mut ch = RandomChooser {
                rng: seeded(seed),
                lo: -5,
                hi: 5,
                den: 2,
            };
            hp.run(&s, &mut ch).unwrap()
        };
        let a: RunOutcome = run(i);
        assert_eq!(a, run(i));
    }
}

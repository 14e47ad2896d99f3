mod common;

use std::collections::BTreeMap;

use rand::Rng;
use robustenv::kernel::{parse_formula, Formula, Rational, Valuation};
use robustenv::par::Mode;
use robustenv::solver::{bb_decide, falsify, qe_decide_formula, IBox, Qe, SolveOptions, Status};

use common::{exists_1d, fm_grid_agreement, seeded, Instance, VARS};

#[test]
fn fm_agrees_with_grid_oracle() {
    let g = fm_grid_agreement(1, 500, 20_000);
    assert!(g.decisive >= 500, "only {} decisive of {}", g.decisive, g.generated);
    assert!(g.disagreements.is_empty(), "{:#?}", g.disagreements);
}

#[test]
fn elimination_matches_one_dimensional_analysis() {
    let mut rng = seeded(2);
    let mut instances = 0;
    while instances < 100 {
        let inst = Instance::random(&mut rng);
        if !inst.atoms.iter().any(|a| a.coef[0] != 0) {
            continue;
        }
        instances += 1;
        let residue = Qe::new()
            .eliminate(&Formula::exists("x", inst.body_formula()))
            .expect("linear");
        for _ in 0..100 {
            let others: BTreeMap<usize, Rational> = (1..inst.nvars)
                .map(|j| (j, Rational::new(rng.gen_range(-40..=40), rng.gen_range(1..=6))))
                .collect();
            let s: Valuation = others.iter().map(|(j, v)| (VARS[*j], v.clone())).collect();
            assert_eq!(
                residue.evaluate(&s),
                Some(exists_1d(&inst, 0, &others)),
                "{} at {s}",
                inst.body_formula()
            );
        }
    }
}

#[test]
fn qe_counterexamples_falsify_the_matrix() {
    let mut rng = seeded(3);
    let mut seen = 0;
    while seen < 200 {
        let inst = Instance::random(&mut rng);
        if !inst.quants.is_empty() {
            continue;
        }
        let f = inst.body_formula();
        if let Status::Counterexample(c) = qe_decide_formula(&f, None).unwrap().status {
            let mut s = c.clone();
            for x in &VARS[..inst.nvars] {
                if !s.contains(x) {
                    s.insert(*x, Rational::zero());
                }
            }
            assert_eq!(f.evaluate(&s), Ok(false), "{f} at {s}");
            seen += 1;
        }
    }
}

#[test]
fn bb_verdicts_are_sound() {
    let mut rng = seeded(4);
    let mut decided = 0;
    for _ in 0..20 {
        let a = rng.gen_range(-3..=3);
        let b = rng.gen_range(-3..=3);
        let d = rng.gen_range(-4..=8);
        let src = format!(
            "\\forall x \\forall y (-2 <= x & x <= 2 & -1 <= y & y <= 1 -> {a}*x*y + {b}*x^2 <= {d} + 1/3)"
        );
        let f = parse_formula(&src).unwrap();
        let v = bb_decide(&f, &SolveOptions::default()).unwrap();
        match &v.status {
            Status::Proven => {
                decided += 1;
                let hit = falsify(&f, None, &IBox::new(), 100_000, 9, Mode::default()).unwrap();
                assert!(hit.is_none(), "{src}: proven but falsified at {hit:?}");
            }
            Status::Counterexample(c) => {
                decided += 1;
                let x = c.get("x").unwrap().clone();
                let y = c.get("y").unwrap().clone();
                let lhs = Rational::from(a) * x.clone() * y + Rational::from(b) * x.clone() * x;
                assert!(lhs > Rational::from(d) + Rational::new(1, 3), "{src}: {c}");
            }
            Status::Unknown(_) => {}
        }
    }
    assert!(decided >= 15, "only {decided} of 20 decided");
}

mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use robustenv::kernel::{parse_formula, Formula, Rational, Rel, Term, Valuation};
use robustenv::solver::qe_decide_formula;

fn rational() -> impl Strategy<Value = Rational> {
    (-20i64..=20, 1i64..=4).prop_map(|(n, d)| Rational::new(n, d))
}

fn var() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["x", "y", "z"]).prop_map(String::from)
}

fn term() -> impl Strategy<Value = Term> {
    let leaf = prop_oneof![rational().prop_map(Term::Const), var().prop_map(Term::Var)];
    leaf.prop_recursive(4, 24, 2, |t| {
        prop_oneof![
            t.clone().prop_map(Term::neg),
            (t.clone(), t.clone()).prop_map(|(a, b)| a.add(b)),
            (t.clone(), t.clone()).prop_map(|(a, b)| a.sub(b)),
            (t.clone(), t.clone()).prop_map(|(a, b)| a.mul(b)),
            (t.clone(), t.clone()).prop_map(|(a, b)| a.div(b)),
            (t, 1u32..=3).prop_map(|(a, n)| a.pow(n)),
        ]
    })
}

fn rel() -> impl Strategy<Value = Rel> {
    prop::sample::select(vec![Rel::Lt, Rel::Le, Rel::Eq, Rel::Ne, Rel::Ge, Rel::Gt])
}

fn atom() -> impl Strategy<Value = Formula> {
    (term(), rel(), term()).prop_map(|(a, r, b)| Formula::cmp(a, r, b))
}

fn qf_formula() -> impl Strategy<Value = Formula> {
    atom().prop_recursive(3, 12, 3, |f| {
        prop_oneof![
            f.clone().prop_map(Formula::not),
            prop::collection::vec(f.clone(), 2..=3).prop_map(Formula::And),
            prop::collection::vec(f.clone(), 2..=3).prop_map(Formula::Or),
            (f.clone(), f).prop_map(|(a, b)| Formula::implies(a, b)),
        ]
    })
}

fn formula() -> impl Strategy<Value = Formula> {
    let leaf = prop_oneof![Just(Formula::True), Just(Formula::False), atom()];
    leaf.prop_recursive(8, 48, 3, |f| {
        prop_oneof![
            f.clone().prop_map(Formula::not),
            prop::collection::vec(f.clone(), 2..=3).prop_map(Formula::And),
            prop::collection::vec(f.clone(), 2..=3).prop_map(Formula::Or),
            (f.clone(), f.clone()).prop_map(|(a, b)| Formula::implies(a, b)),
            (f.clone(), f.clone()).prop_map(|(a, b)| Formula::iff(a, b)),
            (var(), f.clone()).prop_map(|(x, b)| Formula::forall(x, b)),
            (var(), f).prop_map(|(x, b)| Formula::exists(x, b)),
        ]
    })
}

fn valuation() -> impl Strategy<Value = Valuation> {
    (rational(), rational(), rational()).prop_map(|(a, b, c)| {
        Valuation::new().with("x", a).with("y", b).with("z", c)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn print_parse_round_trip(f in formula()) {
        let again = parse_formula(&f.to_string()).map_err(|e| TestCaseError::fail(format!("{f}: {e}")))?;
        prop_assert_eq!(again.normalize(), f.normalize());
    }

    #[test]
    fn substitution_lemma(f in qf_formula(), x in var(), t in term(), s in valuation()) {
        let Ok(tv) = t.evaluate(&s) else { return Ok(()) };
        let mut m = BTreeMap::new();
        m.insert(x.clone(), t);
        let lhs = f.substitute(&m).evaluate(&s).ok();
        let rhs = f.evaluate(&s.clone().with(x, tv)).ok();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn rearranged_terms_evaluate_identically(a in term(), b in term(), c in term(), s in valuation()) {
        let left = a.clone().add(b.clone()).mul(c.clone());
        let right = a.mul(c.clone()).add(b.mul(c));
        match (left.evaluate(&s), right.evaluate(&s)) {
            (Ok(l), Ok(r)) => {
                prop_assert_eq!(l.numer() * r.denom(), r.numer() * l.denom());
                prop_assert_eq!(left.evaluate(&s).unwrap(), l);
            }
            (Err(_), Err(_)) => {}
            (l, r) => prop_assert!(false, "one side failed: {l:?} vs {r:?}"),
        }
    }
}

/// Substituting under a binder that captures the substituted variable must
/// rename the binder: `∀y. φ[z := y + c]` and `∀w. φ[z := w]` agree.
#[test]
fn substitution_respects_binders() {
    let mut rng = common::seeded(5);
    let mut checked = 0;
    while checked < 200 {
        let inst = common::Instance::random(&mut rng);
        let f = inst.formula();
        if !f.free_variables().contains("z") || f.free_variables().contains("y") {
            continue;
        }
        let c = Term::Const(Rational::new(checked as i64 % 7 - 3, 2));
        let capt = Formula::forall("y", f.substitute_one("z", Term::var("y").add(c.clone())));
        let fresh = Formula::forall("w", f.substitute_one("z", Term::var("w")));
        let a = qe_decide_formula(&capt, None).unwrap().is_proven();
        let b = qe_decide_formula(&fresh, None).unwrap().is_proven();
        assert_eq!(a, b, "{f}");
        let ecapt = Formula::exists("y", f.substitute_one("z", Term::var("y").add(c)));
        let efresh = Formula::exists("w", f.substitute_one("z", Term::var("w")));
        assert_eq!(
            qe_decide_formula(&ecapt, None).unwrap().is_proven(),
            qe_decide_formula(&efresh, None).unwrap().is_proven(),
            "{f}"
        );
        checked += 1;
    }
}

/// Substituting for a bound variable of a closed formula changes nothing.
#[test]
fn closed_formulas_ignore_substitution() {
    let mut rng = common::seeded(6);
    let mut checked = 0;
    while checked < 200 {
        let inst = common::Instance::random(&mut rng);
        let f = inst.formula();
        if !f.free_variables().is_empty() {
            continue;
        }
        let mut m = BTreeMap::new();
        m.insert("x".to_string(), Term::var("y").add(Term::int(1)));
        let g = f.substitute(&m);
        assert_eq!(
            qe_decide_formula(&f, None).unwrap().is_proven(),
            qe_decide_formula(&g, None).unwrap().is_proven(),
            "{f}"
        );
        checked += 1;
    }
}

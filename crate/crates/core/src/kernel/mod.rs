//! Exact symbolic real arithmetic: rationals, terms, formulas, valuations.

mod formula;
pub mod parse;
mod rational;
mod term;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use formula::{fresh_name, structural_hash, Formula, NormalAtom, Rel};
pub use parse::{parse_formula, parse_term, ParseError};
pub use rational::{q, ParseRationalError, Rational};
pub use term::{post_name, pre_name, Term};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("division by zero in `{0}`")]
    DivisionByZero(String),
    #[error("formula contains a quantifier")]
    QuantifierPresent,
}

/// Assignment of exact values to variable names.
#[derive(Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Valuation(BTreeMap<String, Rational>);

impl Valuation {
    pub fn new() -> Valuation {
        Valuation::default()
    }

    pub fn get(&self, name: &str) -> Option<&Rational> {
        self.0.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Rational) -> Option<Rational> {
        self.0.insert(name.into(), value)
    }

    pub fn remove(&mut self, name: &str) -> Option<Rational> {
        self.0.remove(name)
    }

    pub fn with(mut self, name: impl Into<String>, value: Rational) -> Valuation {
        self.insert(name, value);
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Rational)> {
        self.0.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    pub fn extend(&mut self, other: &Valuation) {
        for (k, v) in other.iter() {
            self.0.insert(k.clone(), v.clone());
        }
    }

    pub fn as_map(&self) -> &BTreeMap<String, Rational> {
        &self.0
    }

    /// The valuation as a substitution of constants.
    pub fn to_substitution(&self) -> BTreeMap<String, Term> {
        self.0.iter().map(|(k, v)| (k.clone(), Term::Const(v.clone()))).collect()
    }
}

impl FromIterator<(String, Rational)> for Valuation {
    fn from_iter<I: IntoIterator<Item = (String, Rational)>>(iter: I) -> Self {
        Valuation(iter.into_iter().collect())
    }
}

impl<'a> FromIterator<(&'a str, Rational)> for Valuation {
    fn from_iter<I: IntoIterator<Item = (&'a str, Rational)>>(iter: I) -> Self {
        Valuation(iter.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
    }
}

impl From<BTreeMap<String, Rational>> for Valuation {
    fn from(m: BTreeMap<String, Rational>) -> Self {
        Valuation(m)
    }
}

impl fmt::Display for Valuation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{k}: {v}")?;
        }
        write!(f, "}}")
    }
}

impl fmt::Debug for Valuation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn val(pairs: &[(&str, &str)]) -> Valuation {
        pairs.iter().map(|(k, v)| (*k, q(v))).collect()
    }

    #[test]
    fn cancellation() {
        let t = parse_term("p - T*v").unwrap();
        assert_eq!(t.evaluate(&val(&[("p", "1"), ("T", "1"), ("v", "1")])).unwrap(), q("0"));
    }

    #[test]
    fn rational_implementation_at_zero() {
        let t = parse_term("-1/(1/100*(p + 10)) + M").unwrap();
        let r = t.evaluate(&val(&[("p", "0"), ("M", "19/2")])).unwrap();
        assert_eq!(r, q("-1/2"));
    }

    #[test]
    fn division_by_zero_is_reported() {
        let t = parse_term("x/y").unwrap();
        let e = t.evaluate(&val(&[("x", "1"), ("y", "0")])).unwrap_err();
        assert!(matches!(e, KernelError::DivisionByZero(_)));
    }

    #[test]
    fn unbound_variable() {
        let t = parse_term("x + 1").unwrap();
        assert_eq!(t.evaluate(&Valuation::new()), Err(KernelError::UnboundVariable("x".into())));
    }

    #[test]
    fn monitor_formula_holds() {
        let f = parse_formula("0 <= v+ & v+ <= Vmax & 0 <= p - T*v+").unwrap();
        let s = val(&[("p", "10"), ("T", "1"), ("Vmax", "10"), ("v+", "10")]);
        assert!(f.evaluate(&s).unwrap());
    }

    #[test]
    fn trivial_formulas() {
        let f = parse_formula("x != x").unwrap();
        assert!(!f.evaluate(&val(&[("x", "3/7")])).unwrap());
        assert!(Formula::True.evaluate(&Valuation::new()).unwrap());
        let g = parse_formula("\\forall x x <= 1").unwrap();
        assert_eq!(g.evaluate(&Valuation::new()), Err(KernelError::QuantifierPresent));
    }

    #[test]
    fn substitution_into_perturbed_state() {
        let f = parse_formula("0 <= p - T*v+").unwrap();
        let g = f.substitute_one("p", parse_term("p + eps_p").unwrap());
        assert_eq!(g, parse_formula("0 <= (p + eps_p) - T*v+").unwrap());
    }

    #[test]
    fn empty_substitution_is_identity() {
        let f = parse_formula("x = y").unwrap();
        assert_eq!(f.substitute(&BTreeMap::new()), f);
    }

    #[test]
    fn substitution_avoids_capture() {
        let f = parse_formula("\\forall x x <= y").unwrap();
        let g = f.substitute_one("y", Term::var("x"));
        assert_eq!(g, parse_formula("\\forall x' x' <= x").unwrap());
        assert_eq!(g.free_variables().into_iter().collect::<Vec<_>>(), vec!["x".to_string()]);
    }

    #[test]
    fn free_variables_of_binder() {
        let f = parse_formula("\\forall x x <= y").unwrap();
        assert_eq!(f.free_variables().into_iter().collect::<Vec<_>>(), vec!["y".to_string()]);
        assert!(Formula::True.free_variables().is_empty());
    }

    #[test]
    fn normalization_renames_shadowed_binders() {
        let f = parse_formula("(\\exists x x > 0) & (\\exists x x < 0) & x = 1").unwrap();
        let n = f.normalize();
        let mut binders = Vec::new();
        fn walk(f: &Formula, out: &mut Vec<String>) {
            match f {
                Formula::Exists(x, b) | Formula::Forall(x, b) => {
                    out.push(x.clone());
                    walk(b, out);
                }
                Formula::And(cs) | Formula::Or(cs) => cs.iter().for_each(|c| walk(c, out)),
                Formula::Not(a) => walk(a, out),
                Formula::Implies(a, b) | Formula::Iff(a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
                _ => {}
            }
        }
        walk(&n, &mut binders);
        assert_eq!(binders.len(), 2);
        assert_ne!(binders[0], binders[1]);
        assert!(!binders.contains(&"x".to_string()));
    }
}

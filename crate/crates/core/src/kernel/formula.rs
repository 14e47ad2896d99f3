use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::hash::{Hash, Hasher};

use super::{KernelError, Rational, Term, Valuation};

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum Rel {
    Lt,
    Le,
    Eq,
    Ne,
    Ge,
    Gt,
}

impl Rel {
    pub fn holds(self, lhs: &Rational, rhs: &Rational) -> bool {
        match self {
            Rel::Lt => lhs < rhs,
            Rel::Le => lhs <= rhs,
            Rel::Eq => lhs == rhs,
            Rel::Ne => lhs != rhs,
            Rel::Ge => lhs >= rhs,
            Rel::Gt => lhs > rhs,
        }
    }

    pub fn negate(self) -> Rel {
        match self {
            Rel::Lt => Rel::Ge,
            Rel::Le => Rel::Gt,
            Rel::Eq => Rel::Ne,
            Rel::Ne => Rel::Eq,
            Rel::Ge => Rel::Lt,
            Rel::Gt => Rel::Le,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Rel::Lt => "<",
            Rel::Le => "<=",
            Rel::Eq => "=",
            Rel::Ne => "!=",
            Rel::Ge => ">=",
            Rel::Gt => ">",
        }
    }
}

/// First-order formula over real-arithmetic comparisons.
#[derive(Clone, PartialEq, Eq, Hash)]
pub enum Formula {
    True,
    False,
    Cmp(Term, Rel, Term),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Iff(Box<Formula>, Box<Formula>),
    Forall(String, Box<Formula>),
    Exists(String, Box<Formula>),
}

/// Canonical atom shape `t ⋈ 0` with `⋈ ∈ {≥, >, =, ≠}`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct NormalAtom {
    pub term: Term,
    pub rel: Rel,
}

impl NormalAtom {
    pub fn from_cmp(lhs: &Term, rel: Rel, rhs: &Term) -> NormalAtom {
        let diff = |a: &Term, b: &Term| a.clone().sub(b.clone()).fold_constants();
        match rel {
            Rel::Ge | Rel::Gt | Rel::Eq | Rel::Ne => NormalAtom { term: diff(lhs, rhs), rel },
            Rel::Le => NormalAtom { term: diff(rhs, lhs), rel: Rel::Ge },
            Rel::Lt => NormalAtom { term: diff(rhs, lhs), rel: Rel::Gt },
        }
    }

    pub fn to_formula(&self) -> Formula {
        Formula::Cmp(self.term.clone(), self.rel, Term::zero())
    }
}

impl Formula {
    pub fn cmp(lhs: Term, rel: Rel, rhs: Term) -> Formula {
        Formula::Cmp(lhs, rel, rhs)
    }

    pub fn le(lhs: Term, rhs: Term) -> Formula {
        Formula::Cmp(lhs, Rel::Le, rhs)
    }

    pub fn lt(lhs: Term, rhs: Term) -> Formula {
        Formula::Cmp(lhs, Rel::Lt, rhs)
    }

    pub fn ge(lhs: Term, rhs: Term) -> Formula {
        Formula::Cmp(lhs, Rel::Ge, rhs)
    }

    pub fn gt(lhs: Term, rhs: Term) -> Formula {
        Formula::Cmp(lhs, Rel::Gt, rhs)
    }

    pub fn eq(lhs: Term, rhs: Term) -> Formula {
        Formula::Cmp(lhs, Rel::Eq, rhs)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Formula {
        Formula::Not(Box::new(f))
    }

    pub fn implies(a: Formula, b: Formula) -> Formula {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    pub fn iff(a: Formula, b: Formula) -> Formula {
        Formula::Iff(Box::new(a), Box::new(b))
    }

    pub fn forall(x: impl Into<String>, body: Formula) -> Formula {
        Formula::Forall(x.into(), Box::new(body))
    }

    pub fn exists(x: impl Into<String>, body: Formula) -> Formula {
        Formula::Exists(x.into(), Box::new(body))
    }

    pub fn forall_all<I: IntoIterator<Item = String>>(vars: I, body: Formula) -> Formula
    where
        I::IntoIter: DoubleEndedIterator,
    {
        vars.into_iter().rev().fold(body, |acc, v| Formula::forall(v, acc))
    }

    pub fn exists_all<I: IntoIterator<Item = String>>(vars: I, body: Formula) -> Formula
    where
        I::IntoIter: DoubleEndedIterator,
    {
        vars.into_iter().rev().fold(body, |acc, v| Formula::exists(v, acc))
    }

    /// Conjunction with trivial simplification of ⊤/⊥ and flattening.
    pub fn and_all<I: IntoIterator<Item = Formula>>(parts: I) -> Formula {
        let mut out = Vec::new();
        for p in parts {
            match p {
                Formula::True => {}
                Formula::False => return Formula::False,
                Formula::And(inner) => out.extend(inner),
                p => out.push(p),
            }
        }
        match out.len() {
            0 => Formula::True,
            1 => out.pop().unwrap(),
            _ => Formula::And(out),
        }
    }

    /// Disjunction with trivial simplification of ⊤/⊥ and flattening.
    pub fn or_all<I: IntoIterator<Item = Formula>>(parts: I) -> Formula {
        let mut out = Vec::new();
        for p in parts {
            match p {
                Formula::False => {}
                Formula::True => return Formula::True,
                Formula::Or(inner) => out.extend(inner),
                p => out.push(p),
            }
        }
        match out.len() {
            0 => Formula::False,
            1 => out.pop().unwrap(),
            _ => Formula::Or(out),
        }
    }

    pub fn is_quantifier_free(&self) -> bool {
        match self {
            Formula::True | Formula::False | Formula::Cmp(..) => true,
            Formula::Not(a) => a.is_quantifier_free(),
            Formula::And(cs) | Formula::Or(cs) => cs.iter().all(|c| c.is_quantifier_free()),
            Formula::Implies(a, b) | Formula::Iff(a, b) => {
                a.is_quantifier_free() && b.is_quantifier_free()
            }
            Formula::Forall(..) | Formula::Exists(..) => false,
        }
    }

    /// Two-valued evaluation of a quantifier-free formula.
    pub fn evaluate(&self, s: &Valuation) -> Result<bool, KernelError> {
        Ok(match self {
            Formula::True => true,
            Formula::False => false,
            Formula::Cmp(a, r, b) => r.holds(&a.evaluate(s)?, &b.evaluate(s)?),
            Formula::Not(a) => !a.evaluate(s)?,
            Formula::And(cs) => {
                for c in cs {
                    if !c.evaluate(s)? {
                        return Ok(false);
                    }
                }
                true
            }
            Formula::Or(cs) => {
                for c in cs {
                    if c.evaluate(s)? {
                        return Ok(true);
                    }
                }
                false
            }
            Formula::Implies(a, b) => !a.evaluate(s)? || b.evaluate(s)?,
            Formula::Iff(a, b) => a.evaluate(s)? == b.evaluate(s)?,
            Formula::Forall(..) | Formula::Exists(..) => return Err(KernelError::QuantifierPresent),
        })
    }

    pub fn free_variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_free(&mut BTreeSet::new(), &mut out);
        out
    }

    fn collect_free(&self, bound: &mut BTreeSet<String>, out: &mut BTreeSet<String>) {
        match self {
            Formula::True | Formula::False => {}
            Formula::Cmp(a, _, b) => {
                for v in a.free_variables().into_iter().chain(b.free_variables()) {
                    if !bound.contains(&v) {
                        out.insert(v);
                    }
                }
            }
            Formula::Not(a) => a.collect_free(bound, out),
            Formula::And(cs) | Formula::Or(cs) => {
                cs.iter().for_each(|c| c.collect_free(bound, out))
            }
            Formula::Implies(a, b) | Formula::Iff(a, b) => {
                a.collect_free(bound, out);
                b.collect_free(bound, out);
            }
            Formula::Forall(x, body) | Formula::Exists(x, body) => {
                let fresh = bound.insert(x.clone());
                body.collect_free(bound, out);
                if fresh {
                    bound.remove(x);
                }
            }
        }
    }

    /// Every variable name occurring anywhere, bound or free.
    pub fn all_variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit_atoms(&mut |a, b| {
            a.collect_vars(&mut out);
            b.collect_vars(&mut out);
        });
        self.visit_binders(&mut |x| {
            out.insert(x.to_string());
        });
        out
    }

    pub fn visit_atoms<F: FnMut(&Term, &Term)>(&self, f: &mut F) {
        match self {
            Formula::True | Formula::False => {}
            Formula::Cmp(a, _, b) => f(a, b),
            Formula::Not(a) | Formula::Forall(_, a) | Formula::Exists(_, a) => a.visit_atoms(f),
            Formula::And(cs) | Formula::Or(cs) => cs.iter().for_each(|c| c.visit_atoms(f)),
            Formula::Implies(a, b) | Formula::Iff(a, b) => {
                a.visit_atoms(f);
                b.visit_atoms(f);
            }
        }
    }

    fn visit_binders<F: FnMut(&str)>(&self, f: &mut F) {
        match self {
            Formula::True | Formula::False | Formula::Cmp(..) => {}
            Formula::Not(a) => a.visit_binders(f),
            Formula::Forall(x, a) | Formula::Exists(x, a) => {
                f(x);
                a.visit_binders(f);
            }
            Formula::And(cs) | Formula::Or(cs) => cs.iter().for_each(|c| c.visit_binders(f)),
            Formula::Implies(a, b) | Formula::Iff(a, b) => {
                a.visit_binders(f);
                b.visit_binders(f);
            }
        }
    }

    pub fn mentions(&self, x: &str) -> bool {
        self.free_variables().contains(x)
    }

    /// Capture-avoiding simultaneous substitution.
    pub fn substitute(&self, map: &BTreeMap<String, Term>) -> Formula {
        if map.is_empty() {
            return self.clone();
        }
        match self {
            Formula::True | Formula::False => self.clone(),
            Formula::Cmp(a, r, b) => Formula::Cmp(a.substitute(map), *r, b.substitute(map)),
            Formula::Not(a) => Formula::not(a.substitute(map)),
            Formula::And(cs) => Formula::And(cs.iter().map(|c| c.substitute(map)).collect()),
            Formula::Or(cs) => Formula::Or(cs.iter().map(|c| c.substitute(map)).collect()),
            Formula::Implies(a, b) => Formula::implies(a.substitute(map), b.substitute(map)),
            Formula::Iff(a, b) => Formula::iff(a.substitute(map), b.substitute(map)),
            Formula::Forall(x, body) | Formula::Exists(x, body) => {
                let body_free = body.free_variables();
                let mut inner: BTreeMap<String, Term> = map
                    .iter()
                    .filter(|(k, _)| *k != x && body_free.contains(*k))
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect();
                let captures = inner.values().any(|t| t.mentions(x));
                let (name, new_body) = if captures {
                    let mut avoid = body.all_variables();
                    for t in inner.values() {
                        avoid.extend(t.free_variables());
                    }
                    avoid.extend(inner.keys().cloned());
                    let fresh = fresh_name(x, &avoid);
                    inner.insert(x.clone(), Term::var(fresh.clone()));
                    (fresh, body.substitute(&inner))
                } else {
                    (x.clone(), body.substitute(&inner))
                };
                match self {
                    Formula::Forall(..) => Formula::forall(name, new_body),
                    _ => Formula::exists(name, new_body),
                }
            }
        }
    }

    pub fn substitute_one(&self, x: &str, t: Term) -> Formula {
        let mut m = BTreeMap::new();
        m.insert(x.to_string(), t);
        self.substitute(&m)
    }

    pub fn map_terms<F: Fn(&Term) -> Term + Copy>(&self, f: F) -> Formula {
        match self {
            Formula::True | Formula::False => self.clone(),
            Formula::Cmp(a, r, b) => Formula::Cmp(f(a), *r, f(b)),
            Formula::Not(a) => Formula::not(a.map_terms(f)),
            Formula::And(cs) => Formula::And(cs.iter().map(|c| c.map_terms(f)).collect()),
            Formula::Or(cs) => Formula::Or(cs.iter().map(|c| c.map_terms(f)).collect()),
            Formula::Implies(a, b) => Formula::implies(a.map_terms(f), b.map_terms(f)),
            Formula::Iff(a, b) => Formula::iff(a.map_terms(f), b.map_terms(f)),
            Formula::Forall(x, a) => Formula::forall(x.clone(), a.map_terms(f)),
            Formula::Exists(x, a) => Formula::exists(x.clone(), a.map_terms(f)),
        }
    }

    /// Constant-folds terms, decides ground atoms and simplifies ⊤/⊥.
    pub fn simplify(&self) -> Formula {
        match self {
            Formula::True | Formula::False => self.clone(),
            Formula::Cmp(a, r, b) => {
                let (a, b) = (a.fold_constants(), b.fold_constants());
                match (a.as_const(), b.as_const()) {
                    (Some(x), Some(y)) => {
                        if r.holds(x, y) {
                            Formula::True
                        } else {
                            Formula::False
                        }
                    }
                    _ => Formula::Cmp(a, *r, b),
                }
            }
            Formula::Not(a) => match a.simplify() {
                Formula::True => Formula::False,
                Formula::False => Formula::True,
                Formula::Not(inner) => *inner,
                a => Formula::not(a),
            },
            Formula::And(cs) => Formula::and_all(cs.iter().map(|c| c.simplify())),
            Formula::Or(cs) => Formula::or_all(cs.iter().map(|c| c.simplify())),
            Formula::Implies(a, b) => match (a.simplify(), b.simplify()) {
                (Formula::False, _) | (_, Formula::True) => Formula::True,
                (Formula::True, b) => b,
                (a, Formula::False) => Formula::not(a).simplify(),
                (a, b) => Formula::implies(a, b),
            },
            Formula::Iff(a, b) => match (a.simplify(), b.simplify()) {
                (Formula::True, x) | (x, Formula::True) => x,
                (Formula::False, x) | (x, Formula::False) => Formula::not(x).simplify(),
                (a, b) => Formula::iff(a, b),
            },
            Formula::Forall(x, a) => match a.simplify() {
                f @ (Formula::True | Formula::False) => f,
                a if !a.mentions(x) => a,
                a => Formula::forall(x.clone(), a),
            },
            Formula::Exists(x, a) => match a.simplify() {
                f @ (Formula::True | Formula::False) => f,
                a if !a.mentions(x) => a,
                a => Formula::exists(x.clone(), a),
            },
        }
    }

    /// Normal form used for structural comparison: constants folded,
    /// ∧/∨ flattened and ordered by a stable structural hash, and every
    /// binder renamed apart from all other binders and free variables.
    pub fn normalize(&self) -> Formula {
        let folded = self.map_terms(|t| t.fold_constants());
        let mut used = folded.free_variables();
        folded.rename_binders(&mut used).sort_flatten()
    }

    fn rename_binders(&self, used: &mut BTreeSet<String>) -> Formula {
        match self {
            Formula::True | Formula::False | Formula::Cmp(..) => self.clone(),
            Formula::Not(a) => Formula::not(a.rename_binders(used)),
            Formula::And(cs) => Formula::And(cs.iter().map(|c| c.rename_binders(used)).collect()),
            Formula::Or(cs) => Formula::Or(cs.iter().map(|c| c.rename_binders(used)).collect()),
            Formula::Implies(a, b) => {
                Formula::implies(a.rename_binders(used), b.rename_binders(used))
            }
            Formula::Iff(a, b) => Formula::iff(a.rename_binders(used), b.rename_binders(used)),
            Formula::Forall(x, body) | Formula::Exists(x, body) => {
                let name = if used.contains(x) { fresh_name(x, used) } else { x.clone() };
                used.insert(name.clone());
                let body = if &name != x {
                    rename_free(body, x, &name)
                } else {
                    (**body).clone()
                };
                let body = body.rename_binders(used);
                match self {
                    Formula::Forall(..) => Formula::forall(name, body),
                    _ => Formula::exists(name, body),
                }
            }
        }
    }

    fn sort_flatten(&self) -> Formula {
        match self {
            Formula::And(cs) | Formula::Or(cs) => {
                let is_and = matches!(self, Formula::And(_));
                let mut flat = Vec::new();
                for c in cs {
                    match (c.sort_flatten(), is_and) {
                        (Formula::And(inner), true) | (Formula::Or(inner), false) => {
                            flat.extend(inner)
                        }
                        (c, _) => flat.push(c),
                    }
                }
                flat.sort_by_key(|c| (structural_hash(c), c.to_string()));
                if is_and {
                    Formula::And(flat)
                } else {
                    Formula::Or(flat)
                }
            }
            Formula::Not(a) => Formula::not(a.sort_flatten()),
            Formula::Implies(a, b) => Formula::implies(a.sort_flatten(), b.sort_flatten()),
            Formula::Iff(a, b) => Formula::iff(a.sort_flatten(), b.sort_flatten()),
            Formula::Forall(x, a) => Formula::forall(x.clone(), a.sort_flatten()),
            Formula::Exists(x, a) => Formula::exists(x.clone(), a.sort_flatten()),
            _ => self.clone(),
        }
    }

    /// Top-level conjuncts (a non-conjunction is its own single conjunct).
    pub fn conjuncts(&self) -> Vec<Formula> {
        match self {
            Formula::And(cs) => cs.iter().flat_map(|c| c.conjuncts()).collect(),
            Formula::True => vec![],
            f => vec![f.clone()],
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Formula::Iff(..) => 1,
            Formula::Implies(..) => 2,
            Formula::Or(..) => 3,
            Formula::And(..) => 4,
            Formula::Not(_) | Formula::Forall(..) | Formula::Exists(..) => 5,
            Formula::True | Formula::False | Formula::Cmp(..) => 6,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        if self.precedence() < min {
            write!(f, "(")?;
            self.fmt_prec(f, 0)?;
            return write!(f, ")");
        }
        match self {
            Formula::True => write!(f, "true"),
            Formula::False => write!(f, "false"),
            Formula::Cmp(a, r, b) => write!(f, "{a} {} {b}", r.symbol()),
            Formula::Not(a) => {
                write!(f, "!")?;
                a.fmt_prec(f, 5)
            }
            Formula::And(cs) | Formula::Or(cs) => {
                let (sep, lvl) = match self {
                    Formula::And(_) => (" & ", 5),
                    _ => (" | ", 4),
                };
                if cs.is_empty() {
                    return write!(f, "{}", if lvl == 5 { "true" } else { "false" });
                }
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        write!(f, "{sep}")?;
                    }
                    c.fmt_prec(f, lvl)?;
                }
                Ok(())
            }
            Formula::Implies(a, b) => {
                a.fmt_prec(f, 3)?;
                write!(f, " -> ")?;
                b.fmt_prec(f, 2)
            }
            Formula::Iff(a, b) => {
                a.fmt_prec(f, 2)?;
                write!(f, " <-> ")?;
                b.fmt_prec(f, 2)
            }
            Formula::Forall(x, a) => {
                write!(f, "\\forall {x} ")?;
                a.fmt_prec(f, 5)
            }
            Formula::Exists(x, a) => {
                write!(f, "\\exists {x} ")?;
                a.fmt_prec(f, 5)
            }
        }
    }
}

fn rename_free(f: &Formula, from: &str, to: &str) -> Formula {
    f.substitute_one(from, Term::var(to))
}

/// `x'`, `x''`, ...: the first primed variant not in `avoid`.
pub fn fresh_name(base: &str, avoid: &BTreeSet<String>) -> String {
    let mut candidate = format!("{base}'");
    while avoid.contains(&candidate) {
        candidate.push('\'');
    }
    candidate
}

pub fn structural_hash(f: &Formula) -> u64 {
    let mut h = DefaultHasher::new();
    f.hash(&mut h);
    h.finish()
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

impl fmt::Debug for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "`{self}`")
    }
}

//! Deciding obligations: Fourier–Motzkin QE for linear formulas, interval
//! branch-and-bound for nonlinear universal ones, and sampling.

pub mod bb;
pub mod falsify;
pub mod fm;
pub mod interval;
pub mod linear;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::kernel::{Formula, KernelError, Rational, Rel, Term, Valuation};
use crate::nnet::NetworkImpl;
use crate::obligations::Obligation;
use crate::par::Mode;

pub use bb::bb_decide;
pub use falsify::falsify;
pub use fm::{find_model, Pick, Qe, Qf};
pub use interval::{IBox, Interval};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SolverError {
    #[error("nonlinear atom `{0}`")]
    NonlinearAtom(Term),
    #[error("resource limit: {0} atoms")]
    ResourceLimit(usize),
    #[error("obligation is not universally quantified")]
    NotUniversal,
    #[error("variable `{0}` has no bounds")]
    UnboundedVariable(String),
    #[error("denominator `{0}` may vanish on the box")]
    IntervalDivisionByZero(String),
    #[error("timeout")]
    Timeout,
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("internal solver error: {0}")]
    Internal(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum Status {
    Proven,
    Counterexample(Valuation),
    Unknown(String),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Stats {
    pub eliminations: usize,
    pub atoms_peak: usize,
    pub boxes_explored: usize,
    pub depth_max: usize,
    pub samples: usize,
    pub wall_time_ms: u128,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub status: Status,
    pub stats: Stats,
}

impl Verdict {
    pub fn proven(stats: Stats) -> Verdict {
        Verdict {
            status: Status::Proven,
            stats,
        }
    }

    pub fn is_proven(&self) -> bool {
        self.status == Status::Proven
    }

    pub fn counterexample(&self) -> Option<&Valuation> {
        match &self.status {
            Status::Counterexample(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_unknown(&self) -> bool {
        matches!(self.status, Status::Unknown(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Qe,
    Bb,
    #[default]
    Auto,
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub engine: Engine,
    pub domain: IBox,
    pub depth_cap: usize,
    /// Boxes narrower than this in every dimension are not split further.
    pub eps_split: Rational,
    pub samples: usize,
    pub seed: u64,
    pub timeout: Option<Duration>,
    pub mode: Mode,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            engine: Engine::Auto,
            domain: IBox::new(),
            depth_cap: 64,
            eps_split: Rational::pow2(-40),
            samples: 2_000,
            seed: 0,
            timeout: None,
            mode: Mode::default(),
        }
    }
}

impl SolveOptions {
    pub fn deadline(&self) -> Option<Instant> {
        self.timeout.map(|t| Instant::now() + t)
    }
}

/// Universally closes the free variables (sorted by name, outermost).
pub fn close_universally(f: &Formula) -> Formula {
    Formula::forall_all(f.free_variables(), f.clone())
}

/// Splits the leading block of universal quantifiers.
pub fn universal_prefix(f: &Formula) -> (Vec<String>, &Formula) {
    let mut vars = Vec::new();
    let mut cur = f;
    while let Formula::Forall(x, b) = cur {
        vars.push(x.clone());
        cur = b;
    }
    (vars, cur)
}

/// QE decision for a closed linear formula; free variables are read
/// universally. Counterexamples cover the outermost universal block.
pub fn qe_decide_formula(f: &Formula, deadline: Option<Instant>) -> Result<Verdict, SolverError> {
    let start = Instant::now();
    let closed = close_universally(f);
    let (outer, body) = universal_prefix(&closed);
    let mut qe = Qe::new();
    qe.deadline = deadline;
    let neg = qe.eliminate(&Formula::not(body.clone()))?;
    let status = match find_model(&mut qe, &neg, &outer, &mut Pick::Canonical)? {
        None => Status::Proven,
        Some(mut m) => {
            for x in &outer {
                if !m.contains(x) {
                    m.insert(x.clone(), Rational::zero());
                }
            }
            m = Valuation::from_iter(m.iter().filter(|(k, _)| outer.contains(k)).map(|(k, v)| (k.clone(), v.clone())));
            confirm_counterexample(&mut qe, body, &m)?;
            Status::Counterexample(m)
        }
    };
    Ok(Verdict {
        status,
        stats: Stats {
            eliminations: qe.stats.eliminations,
            atoms_peak: qe.stats.atoms_peak,
            wall_time_ms: start.elapsed().as_millis(),
            ..Stats::default()
        },
    })
}

/// Checks that `body` instantiated at `m` is false, deciding any inner
/// quantifiers by QE.
fn confirm_counterexample(qe: &mut Qe, body: &Formula, m: &Valuation) -> Result<(), SolverError> {
    let inst = body.substitute(&m.to_substitution());
    let r = qe.eliminate(&inst)?;
    match r.evaluate(&Valuation::new()) {
        Some(false) => Ok(()),
        _ => Err(SolverError::Internal(format!(
            "extracted point {m} does not falsify the obligation"
        ))),
    }
}

/// Decides `f` by QE (the obligation must not carry a network).
pub fn qe_decide(ob: &Obligation) -> Result<Verdict, SolverError> {
    if ob.network.is_some() {
        return Err(SolverError::NonlinearAtom(Term::var("network")));
    }
    qe_decide_formula(&ob.formula, None)
}

/// A universal obligation with top-level premise equalities `x = t`
/// substituted away. The eliminated variables are recomputed from `defs`
/// (applied in reverse) after the network outputs.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub vars: Vec<String>,
    pub matrix: Formula,
    pub defs: Vec<(String, Term)>,
    pub network: Option<NetworkImpl>,
    pub original_matrix: Formula,
    pub original_vars: Vec<String>,
}

impl Prepared {
    pub fn new(f: &Formula, network: Option<&NetworkImpl>) -> Prepared {
        let closed = close_universally(f);
        let (vars, body) = universal_prefix(&closed);
        let mut network = network.cloned();
        let protected: Vec<String> = network.as_ref().map(|n| n.output_vars()).unwrap_or_default();
        let mut matrix = body.clone();
        let mut remaining = vars.clone();
        let mut defs = Vec::new();
        while let Some((x, t)) = find_definition(&matrix, &remaining, &protected) {
            let mut m = BTreeMap::new();
            m.insert(x.clone(), t.clone());
            matrix = drop_definition(&matrix, &x, &t).substitute(&m);
            if let Some(n) = network.as_mut() {
                n.substitute_inputs(&m);
            }
            remaining.retain(|v| *v != x);
            defs.push((x, t));
        }
        Prepared {
            vars: remaining,
            matrix,
            defs,
            network,
            original_matrix: body.clone(),
            original_vars: vars,
        }
    }

    /// Extends a valuation of `vars` with network outputs and defined
    /// variables.
    pub fn complete(&self, s: &Valuation) -> Result<Valuation, SolverError> {
        let mut full = s.clone();
        if let Some(n) = &self.network {
            let out = n.evaluate(&full).map_err(|e| SolverError::Internal(e.to_string()))?;
            full.extend(&out);
        }
        for (x, t) in self.defs.iter().rev() {
            let v = t.evaluate(&full)?;
            full.insert(x.clone(), v);
        }
        Ok(full)
    }

    /// Variables that are sampled or boxed: `vars` minus network outputs.
    pub fn free_inputs(&self) -> Vec<String> {
        let outs = self.network.as_ref().map(|n| n.output_vars()).unwrap_or_default();
        self.vars.iter().filter(|v| !outs.contains(v)).cloned().collect()
    }

    /// Exact truth of the original matrix at a completed valuation.
    pub fn holds_at(&self, full: &Valuation) -> Result<bool, SolverError> {
        if self.original_matrix.is_quantifier_free() {
            return Ok(self.original_matrix.evaluate(full)?);
        }
        let inst = self.original_matrix.substitute(&full.to_substitution());
        let r = Qe::new().eliminate(&inst)?;
        r.evaluate(&Valuation::new())
            .ok_or_else(|| SolverError::Internal("residue not ground".into()))
    }

    /// Premise conjuncts of the matrix (`A` in `A → B`).
    pub fn premise(&self) -> Vec<Formula> {
        match &self.matrix {
            Formula::Implies(a, _) => a.conjuncts(),
            _ => Vec::new(),
        }
    }

    /// Domain box extended by single-variable bounds found in the premise.
    pub fn search_box(&self, domain: &IBox) -> Result<IBox, SolverError> {
        let mut lo: BTreeMap<String, Rational> = BTreeMap::new();
        let mut hi: BTreeMap<String, Rational> = BTreeMap::new();
        for c in self.premise() {
            if let Formula::Cmp(a, r, b) = &c {
                if let Some((x, rel, k)) = single_var_bound(a, *r, b) {
                    match rel {
                        Rel::Ge | Rel::Gt => tighten(&mut lo, x, k, true),
                        Rel::Le | Rel::Lt => tighten(&mut hi, x, k, false),
                        Rel::Eq => {
                            tighten(&mut lo, x.clone(), k.clone(), true);
                            tighten(&mut hi, x, k, false);
                        }
                        Rel::Ne => {}
                    }
                }
            }
        }
        let mut bx = IBox::new();
        for x in self.free_inputs() {
            let dom = domain.get(&x);
            let l = match (dom, lo.get(&x)) {
                (Some(d), Some(l)) => d.lo.clone().max(l.clone()),
                (Some(d), None) => d.lo.clone(),
                (None, Some(l)) => l.clone(),
                (None, None) => return Err(SolverError::UnboundedVariable(x)),
            };
            let h = match (dom, hi.get(&x)) {
                (Some(d), Some(h)) => d.hi.clone().min(h.clone()),
                (Some(d), None) => d.hi.clone(),
                (None, Some(h)) => h.clone(),
                (None, None) => return Err(SolverError::UnboundedVariable(x)),
            };
            if l > h {
                // Empty search space: the premise is unsatisfiable on the domain.
                return Ok(IBox::new().with("__empty", Rational::one(), Rational::one()));
            }
            bx.insert(x, Interval::new(l, h));
        }
        Ok(bx)
    }
}

fn tighten(m: &mut BTreeMap<String, Rational>, x: String, k: Rational, lower: bool) {
    let e = m.entry(x).or_insert_with(|| k.clone());
    if (lower && k > *e) || (!lower && k < *e) {
        *e = k;
    }
}

/// `c·x + d ⋈ 0` with a single variable, as `x ⋈' k`.
fn single_var_bound(a: &Term, r: Rel, b: &Term) -> Option<(String, Rel, Rational)> {
    let atoms = linear::atoms_of_cmp(a, r, b).ok()?;
    if atoms.len() != 1 || atoms[0].expr.coeffs.len() != 1 {
        return None;
    }
    let at = &atoms[0];
    let (x, c) = at.expr.coeffs.iter().next()?;
    let k = -at.expr.constant.clone() / c.clone();
    let rel = match (at.rel, c.is_positive()) {
        (linear::LinRel::Eq, _) => Rel::Eq,
        (linear::LinRel::Ge, true) => Rel::Ge,
        (linear::LinRel::Gt, true) => Rel::Gt,
        (linear::LinRel::Ge, false) => Rel::Le,
        (linear::LinRel::Gt, false) => Rel::Lt,
    };
    Some((x.clone(), rel, k))
}

fn find_definition(
    matrix: &Formula,
    vars: &[String],
    protected: &[String],
) -> Option<(String, Term)> {
    let Formula::Implies(premise, _) = matrix else {
        return None;
    };
    for c in premise.conjuncts() {
        if let Formula::Cmp(a, Rel::Eq, b) = &c {
            for (lhs, rhs) in [(a, b), (b, a)] {
                if let Term::Var(x) = lhs {
                    if vars.contains(x) && !protected.contains(x) && !rhs.mentions(x) {
                        return Some((x.clone(), rhs.clone()));
                    }
                }
            }
        }
    }
    None
}

fn drop_definition(matrix: &Formula, x: &str, t: &Term) -> Formula {
    let Formula::Implies(premise, concl) = matrix else {
        return matrix.clone();
    };
    let mut dropped = false;
    let kept: Vec<Formula> = premise
        .conjuncts()
        .into_iter()
        .filter(|c| {
            if dropped {
                return true;
            }
            let is_def = matches!(c, Formula::Cmp(a, Rel::Eq, b)
                if (a.as_var() == Some(x) && b == t) || (b.as_var() == Some(x) && a == t));
            if is_def {
                dropped = true;
            }
            !is_def
        })
        .collect();
    Formula::implies(Formula::and_all(kept), (**concl).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{parse_formula, q};

    #[test]
    fn decides_and_extracts() {
        let v = qe_decide_formula(&parse_formula("\\forall x \\exists y (y > x)").unwrap(), None)
            .unwrap();
        assert!(v.is_proven());
        let f = parse_formula("\\forall p (p >= 0 -> \\exists v (0 <= v & v <= 10 & v <= p - 2))")
            .unwrap();
        let v = qe_decide_formula(&f, None).unwrap();
        assert_eq!(v.counterexample().unwrap().get("p"), Some(&q("0")));
    }

    #[test]
    fn premise_equalities_are_substituted() {
        let f = parse_formula("\\forall x \\forall y (y = x + 1 & 0 <= x & x <= 1 -> y >= 1)")
            .unwrap();
        let p = Prepared::new(&f, None);
        assert_eq!(p.vars, vec!["x".to_string()]);
        let bx = p.search_box(&IBox::new()).unwrap();
        assert_eq!(bx.get("x").unwrap(), &Interval::new(q("0"), q("1")));
        let full = p.complete(&Valuation::new().with("x", q("1/2"))).unwrap();
        assert_eq!(full.get("y"), Some(&q("3/2")));
    }
}

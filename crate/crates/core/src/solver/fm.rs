//! Fourier–Motzkin quantifier elimination over linear real arithmetic.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::Rng;

use super::linear::{atoms_of_cmp, LinRel, LinearAtom, LinearExpr};
use super::SolverError;
use crate::kernel::{Formula, Rational, Valuation};

/// Quantifier-free formula in negation normal form over canonical atoms.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum Qf {
    True,
    False,
    Atom(LinearAtom),
    And(Vec<Qf>),
    Or(Vec<Qf>),
}

impl Qf {
    pub fn atom(a: LinearAtom) -> Qf {
        match a.ground_value() {
            Some(true) => Qf::True,
            Some(false) => Qf::False,
            None => Qf::Atom(a),
        }
    }

    pub fn and(parts: Vec<Qf>) -> Qf {
        let mut out: Vec<Qf> = Vec::new();
        for p in parts {
            match p {
                Qf::True => {}
                Qf::False => return Qf::False,
                Qf::And(inner) => {
                    for q in inner {
                        if !out.contains(&q) {
                            out.push(q);
                        }
                    }
                }
                p => {
                    if !out.contains(&p) {
                        out.push(p)
                    }
                }
            }
        }
        match out.len() {
            0 => Qf::True,
            1 => out.pop().unwrap(),
            _ => Qf::And(out),
        }
    }

    pub fn or(parts: Vec<Qf>) -> Qf {
        let mut out: Vec<Qf> = Vec::new();
        for p in parts {
            match p {
                Qf::False => {}
                Qf::True => return Qf::True,
                Qf::Or(inner) => {
                    for q in inner {
                        if !out.contains(&q) {
                            out.push(q);
                        }
                    }
                }
                p => {
                    if !out.contains(&p) {
                        out.push(p)
                    }
                }
            }
        }
        match out.len() {
            0 => Qf::False,
            1 => out.pop().unwrap(),
            _ => Qf::Or(out),
        }
    }

    pub fn negate(&self) -> Qf {
        match self {
            Qf::True => Qf::False,
            Qf::False => Qf::True,
            Qf::Atom(a) => Qf::or(a.negate().into_iter().map(Qf::atom).collect()),
            Qf::And(cs) => Qf::or(cs.iter().map(|c| c.negate()).collect()),
            Qf::Or(cs) => Qf::and(cs.iter().map(|c| c.negate()).collect()),
        }
    }

    pub fn mentions(&self, x: &str) -> bool {
        match self {
            Qf::True | Qf::False => false,
            Qf::Atom(a) => a.mentions(x),
            Qf::And(cs) | Qf::Or(cs) => cs.iter().any(|c| c.mentions(x)),
        }
    }

    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit_atoms(&mut |a| out.extend(a.variables()));
        out
    }

    pub fn visit_atoms<F: FnMut(&LinearAtom)>(&self, f: &mut F) {
        match self {
            Qf::True | Qf::False => {}
            Qf::Atom(a) => f(a),
            Qf::And(cs) | Qf::Or(cs) => cs.iter().for_each(|c| c.visit_atoms(f)),
        }
    }

    pub fn atom_count(&self) -> usize {
        let mut n = 0;
        self.visit_atoms(&mut |_| n += 1);
        n
    }

    /// Exact truth value; `None` if a variable is unbound.
    pub fn evaluate(&self, s: &Valuation) -> Option<bool> {
        Some(match self {
            Qf::True => true,
            Qf::False => false,
            Qf::Atom(a) => a.evaluate(s)?,
            Qf::And(cs) => {
                for c in cs {
                    if !c.evaluate(s)? {
                        return Some(false);
                    }
                }
                true
            }
            Qf::Or(cs) => {
                for c in cs {
                    if c.evaluate(s)? {
                        return Some(true);
                    }
                }
                false
            }
        })
    }

    pub fn partial_evaluate(&self, s: &Valuation) -> Qf {
        match self {
            Qf::True | Qf::False => self.clone(),
            Qf::Atom(a) => Qf::atom(a.partial_evaluate(s)),
            Qf::And(cs) => Qf::and(cs.iter().map(|c| c.partial_evaluate(s)).collect()),
            Qf::Or(cs) => Qf::or(cs.iter().map(|c| c.partial_evaluate(s)).collect()),
        }
    }

    pub fn substitute(&self, x: &str, e: &LinearExpr) -> Qf {
        match self {
            Qf::True | Qf::False => self.clone(),
            Qf::Atom(a) => Qf::atom(a.substitute(x, e)),
            Qf::And(cs) => Qf::and(cs.iter().map(|c| c.substitute(x, e)).collect()),
            Qf::Or(cs) => Qf::or(cs.iter().map(|c| c.substitute(x, e)).collect()),
        }
    }

    pub fn to_formula(&self) -> Formula {
        match self {
            Qf::True => Formula::True,
            Qf::False => Formula::False,
            Qf::Atom(a) => a.to_formula(),
            Qf::And(cs) => Formula::and_all(cs.iter().map(|c| c.to_formula())),
            Qf::Or(cs) => Formula::or_all(cs.iter().map(|c| c.to_formula())),
        }
    }
}

/// Counters reported with every verdict.
#[derive(Clone, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct QeStats {
    pub eliminations: usize,
    pub atoms_peak: usize,
}

/// How a model point is chosen inside a satisfying set.
pub enum Pick<'a> {
    /// 0 if possible, then the integer nearest 0, then an endpoint, then a
    /// midpoint.
    Canonical,
    Random(&'a mut dyn rand::RngCore),
}

pub const DEFAULT_ATOM_CAP: usize = 100_000;

/// Quantifier-elimination engine with resource accounting.
pub struct Qe {
    pub stats: QeStats,
    pub atom_cap: usize,
    pub deadline: Option<Instant>,
}

impl Default for Qe {
    fn default() -> Self {
        Qe {
            stats: QeStats::default(),
            atom_cap: DEFAULT_ATOM_CAP,
            deadline: None,
        }
    }
}

impl Qe {
    pub fn new() -> Qe {
        Qe::default()
    }

    fn note_atoms(&mut self, n: usize) -> Result<(), SolverError> {
        self.stats.atoms_peak = self.stats.atoms_peak.max(n);
        if n > self.atom_cap {
            return Err(SolverError::ResourceLimit(n));
        }
        Ok(())
    }

    /// Quantifier-free equivalent of `f` (free variables stay free).
    pub fn eliminate(&mut self, f: &Formula) -> Result<Qf, SolverError> {
        self.to_qf(f, true)
    }

    fn to_qf(&mut self, f: &Formula, positive: bool) -> Result<Qf, SolverError> {
        Ok(match f {
            Formula::True => bool_qf(positive),
            Formula::False => bool_qf(!positive),
            Formula::Cmp(a, r, b) => {
                let atoms = atoms_of_cmp(a, *r, b).map_err(SolverError::NonlinearAtom)?;
                let q = Qf::or(atoms.into_iter().map(Qf::atom).collect());
                if positive {
                    q
                } else {
                    q.negate()
                }
            }
            Formula::Not(a) => self.to_qf(a, !positive)?,
            Formula::And(cs) | Formula::Or(cs) => {
                let parts = cs
                    .iter()
                    .map(|c| self.to_qf(c, positive))
                    .collect::<Result<Vec<_>, _>>()?;
                if matches!(f, Formula::And(_)) == positive {
                    Qf::and(parts)
                } else {
                    Qf::or(parts)
                }
            }
            Formula::Implies(a, b) => {
                if positive {
                    Qf::or(vec![self.to_qf(a, false)?, self.to_qf(b, true)?])
                } else {
                    Qf::and(vec![self.to_qf(a, true)?, self.to_qf(b, false)?])
                }
            }
            Formula::Iff(a, b) => {
                let (ap, an) = (self.to_qf(a, true)?, self.to_qf(a, false)?);
                let (bp, bn) = (self.to_qf(b, true)?, self.to_qf(b, false)?);
                if positive {
                    Qf::or(vec![Qf::and(vec![ap, bp]), Qf::and(vec![an, bn])])
                } else {
                    Qf::or(vec![Qf::and(vec![ap, bn]), Qf::and(vec![an, bp])])
                }
            }
            Formula::Exists(..) | Formula::Forall(..) => {
                let universal = matches!(f, Formula::Forall(..));
                let (vars, body) = quantifier_block(f);
                // ∃x̄ φ directly; ∀x̄ φ as ¬∃x̄ ¬φ.
                let inner = self.to_qf(body, !universal)?;
                let inner = self.to_qf_block(&vars, inner)?;
                if universal == positive {
                    inner.negate()
                } else {
                    inner
                }
            }
        })
    }

    fn to_qf_block(&mut self, vars: &[String], mut phi: Qf) -> Result<Qf, SolverError> {
        let mut remaining: Vec<String> = vars.to_vec();
        while !remaining.is_empty() {
            let idx = (0..remaining.len())
                .min_by_key(|&i| (elimination_cost(&phi, &remaining[i]), i))
                .unwrap();
            let x = remaining.remove(idx);
            phi = self.eliminate_exists(&x, &phi)?;
        }
        Ok(phi)
    }

    /// Quantifier-free equivalent of `∃x φ`.
    pub fn eliminate_exists(&mut self, x: &str, phi: &Qf) -> Result<Qf, SolverError> {
        if !phi.mentions(x) {
            return Ok(phi.clone());
        }
        self.stats.eliminations += 1;
        if self.deadline.is_some_and(|d| Instant::now() > d) {
            return Err(SolverError::Timeout);
        }
        let out = match phi {
            Qf::Or(cs) => {
                let parts = cs
                    .iter()
                    .map(|c| self.eliminate_exists(x, c))
                    .collect::<Result<Vec<_>, _>>()?;
                Qf::or(parts)
            }
            Qf::And(cs) => {
                let (dep, indep): (Vec<&Qf>, Vec<&Qf>) = cs.iter().partition(|c| c.mentions(x));
                let disjuncts = self.dnf(&dep)?;
                let mut results = Vec::new();
                for conj in disjuncts {
                    if let Some(r) = self.fm_conjunction(x, conj)? {
                        results.push(r);
                    }
                }
                let mut parts: Vec<Qf> = indep.into_iter().cloned().collect();
                parts.push(disjunction_of(prune_subsumed(results)));
                Qf::and(parts)
            }
            Qf::Atom(a) => disjunction_of(
                self.fm_conjunction(x, vec![a.clone()])?.into_iter().collect(),
            ),
            Qf::True | Qf::False => phi.clone(),
        };
        self.note_atoms(out.atom_count())?;
        Ok(out)
    }

    /// DNF of a conjunction of NNF parts, as atom lists.
    fn dnf(&mut self, parts: &[&Qf]) -> Result<Vec<Vec<LinearAtom>>, SolverError> {
        let mut acc: Vec<Vec<LinearAtom>> = vec![vec![]];
        for p in parts {
            let alts = self.dnf_of(p)?;
            let mut next = Vec::with_capacity(acc.len() * alts.len());
            let mut size = 0usize;
            for a in &acc {
                for b in &alts {
                    let mut c = a.clone();
                    for atom in b {
                        if !c.contains(atom) {
                            c.push(atom.clone());
                        }
                    }
                    if let Some(c) = simplify_conjunction(c) {
                        size += c.len();
                        next.push(c);
                    }
                }
                self.note_atoms(size)?;
            }
            acc = prune_subsumed(next);
            if acc.is_empty() {
                break;
            }
        }
        Ok(acc)
    }

    fn dnf_of(&mut self, q: &Qf) -> Result<Vec<Vec<LinearAtom>>, SolverError> {
        Ok(match q {
            Qf::True => vec![vec![]],
            Qf::False => vec![],
            Qf::Atom(a) => vec![vec![a.clone()]],
            Qf::Or(cs) => {
                let mut out = Vec::new();
                for c in cs {
                    out.extend(self.dnf_of(c)?);
                }
                self.note_atoms(out.iter().map(Vec::len).sum())?;
                out
            }
            Qf::And(cs) => {
                let refs: Vec<&Qf> = cs.iter().collect();
                self.dnf(&refs)?
            }
        })
    }

    /// Eliminates `x` from a conjunction. `None` means unsatisfiable.
    fn fm_conjunction(
        &mut self,
        x: &str,
        atoms: Vec<LinearAtom>,
    ) -> Result<Option<Vec<LinearAtom>>, SolverError> {
        // Equalities first: pivot on the one with the fewest variables.
        if let Some(eq) = atoms
            .iter()
            .filter(|a| a.rel == LinRel::Eq && a.mentions(x))
            .min_by_key(|a| a.expr.coeffs.len())
            .cloned()
        {
            let c = eq.expr.coeff(x);
            let mut rest = eq.expr.clone();
            rest.coeffs.remove(x);
            let solution = rest.scale(&(-Rational::one() / c));
            let out: Vec<LinearAtom> = atoms
                .iter()
                .filter(|a| **a != eq)
                .map(|a| a.substitute(x, &solution))
                .collect();
            return Ok(simplify_conjunction(out));
        }
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        let mut out = Vec::new();
        for a in atoms {
            let c = a.expr.coeff(x);
            if c.is_zero() {
                out.push(a);
            } else if c.is_positive() {
                lower.push(a);
            } else {
                upper.push(a);
            }
        }
        for l in &lower {
            let a = l.expr.coeff(x);
            for u in &upper {
                let b = -u.expr.coeff(x);
                let combined = l.expr.scale(&b).add(&u.expr.scale(&a));
                let rel = if l.rel == LinRel::Gt || u.rel == LinRel::Gt {
                    LinRel::Gt
                } else {
                    LinRel::Ge
                };
                out.push(LinearAtom::new(combined, rel));
            }
        }
        self.note_atoms(out.len())?;
        Ok(simplify_conjunction(out))
    }
}

fn bool_qf(b: bool) -> Qf {
    if b {
        Qf::True
    } else {
        Qf::False
    }
}

fn quantifier_block(f: &Formula) -> (Vec<String>, &Formula) {
    let universal = matches!(f, Formula::Forall(..));
    let mut vars = Vec::new();
    let mut cur = f;
    loop {
        match cur {
            Formula::Forall(x, b) if universal => {
                vars.push(x.clone());
                cur = b;
            }
            Formula::Exists(x, b) if !universal => {
                vars.push(x.clone());
                cur = b;
            }
            _ => return (vars, cur),
        }
    }
}

/// Estimated FM blow-up: 0 if an equality can pivot, else lower × upper.
fn elimination_cost(phi: &Qf, x: &str) -> usize {
    let (mut pos, mut neg, mut eq) = (0usize, 0usize, false);
    phi.visit_atoms(&mut |a| {
        let c = a.expr.coeff(x);
        if c.is_zero() {
            return;
        }
        if a.rel == LinRel::Eq {
            eq = true;
        } else if c.is_positive() {
            pos += 1;
        } else {
            neg += 1;
        }
    });
    if eq {
        0
    } else {
        pos * neg
    }
}

fn disjunction_of(conjs: Vec<Vec<LinearAtom>>) -> Qf {
    Qf::or(
        conjs
            .into_iter()
            .map(|c| Qf::and(c.into_iter().map(Qf::atom).collect()))
            .collect(),
    )
}

/// Removes duplicates, decides ground atoms, keeps the tightest of parallel
/// inequalities and detects directly opposed pairs. `None` if unsatisfiable.
pub fn simplify_conjunction(atoms: Vec<LinearAtom>) -> Option<Vec<LinearAtom>> {
    let mut ineq: BTreeMap<BTreeMap<String, Rational>, LinearAtom> = BTreeMap::new();
    let mut eqs: BTreeMap<BTreeMap<String, Rational>, LinearAtom> = BTreeMap::new();
    for a in atoms {
        match a.ground_value() {
            Some(true) => continue,
            Some(false) => return None,
            None => {}
        }
        let key = a.direction().clone();
        if a.rel == LinRel::Eq {
            match eqs.get(&key) {
                Some(e) if e.expr.constant != a.expr.constant => return None,
                Some(_) => {}
                None => {
                    eqs.insert(key, a);
                }
            }
            continue;
        }
        match ineq.get(&key) {
            Some(old) => {
                // e + k ⋈ 0: a smaller k is tighter; on ties strict wins.
                let tighter = a.expr.constant < old.expr.constant
                    || (a.expr.constant == old.expr.constant && a.rel == LinRel::Gt);
                if tighter {
                    ineq.insert(key, a);
                }
            }
            None => {
                ineq.insert(key, a);
            }
        }
    }
    // Opposed pairs e + k1 ⋈ 0 and −e + k2 ⋈ 0 require k1 + k2 ⋈ 0.
    for (key, a) in &ineq {
        let neg: BTreeMap<String, Rational> = key.iter().map(|(x, c)| (x.clone(), -c)).collect();
        if let Some(b) = ineq.get(&neg) {
            let sum = &a.expr.constant + &b.expr.constant;
            let strict = a.rel == LinRel::Gt || b.rel == LinRel::Gt;
            if sum.is_negative() || (strict && sum.is_zero()) {
                return None;
            }
        }
        if let Some(e) = eqs.get(key) {
            // On the hyperplane e = −k_e, so a becomes k_a − k_e ⋈ 0.
            let v = &a.expr.constant - &e.expr.constant;
            if !a.rel.holds(&v) {
                return None;
            }
        }
    }
    let mut out: Vec<LinearAtom> = eqs.into_values().collect();
    out.extend(ineq.into_values());
    Some(out)
}

/// Drops conjunctions implied redundant by a subset conjunction.
pub fn prune_subsumed(mut conjs: Vec<Vec<LinearAtom>>) -> Vec<Vec<LinearAtom>> {
    for c in conjs.iter_mut() {
        c.sort();
    }
    conjs.sort_by_key(|c| c.len());
    conjs.dedup();
    let mut kept: Vec<Vec<LinearAtom>> = Vec::new();
    'outer: for c in conjs {
        for k in &kept {
            if k.iter().all(|a| c.binary_search(a).is_ok()) {
                continue 'outer;
            }
        }
        kept.push(c);
    }
    kept
}

/// Finds a point satisfying `phi` by eliminating `order` back to front and
/// back-substituting front to back; variables of `phi` not listed are
/// chosen first. Returns `None` iff `phi` is unsatisfiable.
pub fn find_model(
    qe: &mut Qe,
    phi: &Qf,
    order: &[String],
    pick: &mut Pick<'_>,
) -> Result<Option<Valuation>, SolverError> {
    let mut vars: Vec<String> = order.to_vec();
    for v in phi.variables() {
        if !vars.contains(&v) {
            vars.push(v);
        }
    }
    let mut stages = vec![phi.clone()];
    for x in vars.iter().rev() {
        let next = qe.eliminate_exists(x, stages.last().unwrap())?;
        stages.push(next);
    }
    if stages.last().unwrap().evaluate(&Valuation::new()) != Some(true) {
        return Ok(None);
    }
    let n = vars.len();
    let mut val = Valuation::new();
    for (i, x) in vars.iter().enumerate() {
        // stages[n - i - 1] still mentions x and the already-fixed prefix.
        let psi = stages[n - i - 1].partial_evaluate(&val);
        let v = pick_value(&psi, x, pick).ok_or_else(|| {
            SolverError::Internal(format!("back-substitution found no value for `{x}`"))
        })?;
        val.insert(x.clone(), v);
    }
    Ok(Some(val))
}

/// A satisfying value of a univariate formula in `x`.
pub fn pick_value(psi: &Qf, x: &str, pick: &mut Pick<'_>) -> Option<Rational> {
    let mut roots: Vec<Rational> = Vec::new();
    psi.visit_atoms(&mut |a| {
        let c = a.expr.coeff(x);
        if !c.is_zero() {
            roots.push(-a.expr.constant.clone() / c);
        }
    });
    roots.sort();
    roots.dedup();
    let holds = |v: &Rational| psi.evaluate(&Valuation::new().with(x, v.clone())) == Some(true);
    // Pieces: (−∞, r₀), {r₀}, (r₀, r₁), …, {r_m}, (r_m, ∞).
    let mut pieces: Vec<(Option<Rational>, Option<Rational>)> = Vec::new();
    if roots.is_empty() {
        pieces.push((None, None));
    } else {
        pieces.push((None, Some(roots[0].clone())));
        for (i, r) in roots.iter().enumerate() {
            pieces.push((Some(r.clone()), Some(r.clone())));
            pieces.push((Some(r.clone()), roots.get(i + 1).cloned()));
        }
    }
    let one = Rational::one();
    let representative = |p: &(Option<Rational>, Option<Rational>)| -> Rational {
        match p {
            (None, None) => Rational::zero(),
            (None, Some(b)) => b - &one,
            (Some(a), None) => a + &one,
            (Some(a), Some(b)) if a == b => a.clone(),
            (Some(a), Some(b)) => (a + b) / Rational::from(2),
        }
    };
    let sat: Vec<_> = pieces.into_iter().filter(|p| holds(&representative(p))).collect();
    if sat.is_empty() {
        return None;
    }
    match pick {
        Pick::Random(rng) => {
            let p = &sat[rng.gen_range(0..sat.len())];
            let r = match p {
                (Some(a), Some(b)) if a == b => a.clone(),
                (a, b) => {
                    let lo = a.clone().unwrap_or_else(|| {
                        b.as_ref().map(|b| b - Rational::from(10)).unwrap_or(Rational::from(-10))
                    });
                    let hi = b.clone().unwrap_or_else(|| &lo + Rational::from(20));
                    let t = Rational::new(rng.gen_range(1..1024), 1024);
                    &lo + &(&(&hi - &lo) * &t)
                }
            };
            debug_assert!(holds(&r));
            Some(r)
        }
        Pick::Canonical => {
            let zero = Rational::zero();
            if holds(&zero) {
                return Some(zero);
            }
            let mut best_int: Option<Rational> = None;
            for p in &sat {
                let cand = nearest_integer_in(p);
                if let Some(c) = cand {
                    if best_int.as_ref().map_or(true, |b| c.abs() < b.abs()) {
                        best_int = Some(c);
                    }
                }
            }
            if best_int.is_some() {
                return best_int;
            }
            let endpoint = sat
                .iter()
                .filter_map(|p| match p {
                    (Some(a), Some(b)) if a == b => Some(a.clone()),
                    _ => None,
                })
                .min_by(|a, b| a.abs().cmp(&b.abs()));
            if endpoint.is_some() {
                return endpoint;
            }
            sat.iter()
                .map(representative)
                .min_by(|a, b| a.abs().cmp(&b.abs()))
        }
    }
}

fn nearest_integer_in(p: &(Option<Rational>, Option<Rational>)) -> Option<Rational> {
    let int = |n: num_bigint::BigInt| Rational::from(n);
    match p {
        (None, None) => Some(Rational::zero()),
        (Some(a), Some(b)) if a == b => a.is_integer().then(|| a.clone()),
        (None, Some(b)) => {
            // Open interval (−∞, b).
            let c = if b.is_positive() { Rational::zero() } else { int(b.ceil()) - Rational::one() };
            Some(c)
        }
        (Some(a), None) => {
            let c = if a.is_negative() { Rational::zero() } else { int(a.floor()) + Rational::one() };
            Some(c)
        }
        (Some(a), Some(b)) => {
            let lo = int(a.floor()) + Rational::one();
            let hi = int(b.ceil()) - Rational::one();
            if lo > hi {
                return None;
            }
            let zero = Rational::zero();
            Some(if lo > zero {
                lo
            } else if hi < zero {
                hi
            } else {
                zero
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{parse_formula, q};

    fn qe_str(s: &str) -> Qf {
        Qe::new().eliminate(&parse_formula(s).unwrap()).unwrap()
    }

    #[test]
    fn textbook_projection() {
        let r = qe_str("\\exists x (x >= a & b >= x)");
        let expect = Qe::new().eliminate(&parse_formula("b >= a").unwrap()).unwrap();
        assert_eq!(r, expect);
    }

    #[test]
    fn strictness_is_kept() {
        let r = qe_str("\\exists x (x > 1 & x <= 1)");
        assert_eq!(r, Qf::False);
        let r = qe_str("\\exists x (x >= 1 & x <= 1)");
        assert_eq!(r, Qf::True);
    }

    #[test]
    fn universal_via_negation() {
        assert_eq!(qe_str("\\forall x (x > 0 | x <= 0)"), Qf::True);
        assert_eq!(qe_str("\\forall x \\exists y y > x"), Qf::True);
        assert_eq!(qe_str("\\exists y \\forall x y > x"), Qf::False);
    }

    #[test]
    fn equality_pivot() {
        let r = qe_str("\\exists x (x = 2*y + 1 & x <= 3)");
        let s = Valuation::new().with("y", q("1"));
        assert_eq!(r.evaluate(&s), Some(true));
        let s = Valuation::new().with("y", q("3/2"));
        assert_eq!(r.evaluate(&s), Some(false));
    }

    #[test]
    fn canonical_model_prefers_zero_then_integers() {
        let phi = qe_str("x > 1/2 & x < 7/2 & y >= x");
        let mut qe = Qe::new();
        let m = find_model(&mut qe, &phi, &["x".into(), "y".into()], &mut Pick::Canonical)
            .unwrap()
            .unwrap();
        assert_eq!(m.get("x"), Some(&q("1")));
        assert_eq!(m.get("y"), Some(&q("1")));
        let phi = qe_str("x > 1/3 & x < 2/3");
        let m = find_model(&mut qe, &phi, &["x".into()], &mut Pick::Canonical).unwrap().unwrap();
        assert_eq!(m.get("x"), Some(&q("1/2")));
        let unsat = qe_str("x > 1 & x < 1");
        assert!(find_model(&mut qe, &unsat, &["x".into()], &mut Pick::Canonical).unwrap().is_none());
    }

    #[test]
    fn nonlinear_atoms_are_rejected() {
        let e = Qe::new().eliminate(&parse_formula("\\exists x x*y > 0").unwrap());
        assert!(matches!(e, Err(SolverError::NonlinearAtom(_))));
    }
}

//! Linear expressions and canonical linear atoms.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_integer::Integer;
use num_traits::{One, Signed, Zero};

use num_bigint::BigInt;

use crate::kernel::{Formula, Rational, Rel, Term, Valuation};

/// `Σ cᵢ·xᵢ + k` with nonzero coefficients only.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct LinearExpr {
    pub coeffs: BTreeMap<String, Rational>,
    pub constant: Rational,
}

impl LinearExpr {
    pub fn constant(c: Rational) -> Self {
        LinearExpr {
            coeffs: BTreeMap::new(),
            constant: c,
        }
    }

    pub fn var(x: &str) -> Self {
        let mut coeffs = BTreeMap::new();
        coeffs.insert(x.to_string(), Rational::one());
        LinearExpr {
            coeffs,
            constant: Rational::zero(),
        }
    }

    /// Linearizes a term; returns the offending subterm if it is not affine.
    pub fn from_term(t: &Term) -> Result<LinearExpr, Term> {
        Ok(match t {
            Term::Const(c) => LinearExpr::constant(c.clone()),
            Term::Var(x) => LinearExpr::var(x),
            Term::Neg(a) => LinearExpr::from_term(a)?.scale(&-Rational::one()),
            Term::Add(a, b) => LinearExpr::from_term(a)?.add(&LinearExpr::from_term(b)?),
            Term::Sub(a, b) => LinearExpr::from_term(a)?.sub(&LinearExpr::from_term(b)?),
            Term::Mul(a, b) => {
                let (la, lb) = (LinearExpr::from_term(a)?, LinearExpr::from_term(b)?);
                if la.is_constant() {
                    lb.scale(&la.constant)
                } else if lb.is_constant() {
                    la.scale(&lb.constant)
                } else {
                    return Err(t.clone());
                }
            }
            Term::Div(a, b) => {
                let lb = LinearExpr::from_term(b)?;
                if !lb.is_constant() || lb.constant.is_zero() {
                    return Err(t.clone());
                }
                LinearExpr::from_term(a)?.scale(&lb.constant.recip().unwrap())
            }
            Term::Pow(a, n) => {
                let la = LinearExpr::from_term(a)?;
                match n {
                    0 => LinearExpr::constant(Rational::one()),
                    1 => la,
                    _ if la.is_constant() => LinearExpr::constant(la.constant.pow(*n)),
                    _ => return Err(t.clone()),
                }
            }
        })
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeff(&self, x: &str) -> Rational {
        self.coeffs.get(x).cloned().unwrap_or_default()
    }

    pub fn mentions(&self, x: &str) -> bool {
        self.coeffs.contains_key(x)
    }

    pub fn variables(&self) -> impl Iterator<Item = &String> {
        self.coeffs.keys()
    }

    pub fn scale(&self, k: &Rational) -> LinearExpr {
        if k.is_zero() {
            return LinearExpr::default();
        }
        LinearExpr {
            coeffs: self.coeffs.iter().map(|(x, c)| (x.clone(), c * k)).collect(),
            constant: &self.constant * k,
        }
    }

    pub fn add(&self, other: &LinearExpr) -> LinearExpr {
        let mut coeffs = self.coeffs.clone();
        for (x, c) in &other.coeffs {
            let entry = coeffs.entry(x.clone()).or_default();
            *entry += c;
            if entry.is_zero() {
                coeffs.remove(x);
            }
        }
        LinearExpr {
            coeffs,
            constant: &self.constant + &other.constant,
        }
    }

    pub fn sub(&self, other: &LinearExpr) -> LinearExpr {
        self.add(&other.scale(&-Rational::one()))
    }

    /// Replaces `x` by `e`.
    pub fn substitute(&self, x: &str, e: &LinearExpr) -> LinearExpr {
        match self.coeffs.get(x) {
            None => self.clone(),
            Some(c) => {
                let mut rest = self.clone();
                rest.coeffs.remove(x);
                rest.add(&e.scale(c))
            }
        }
    }

    pub fn evaluate(&self, s: &Valuation) -> Option<Rational> {
        let mut acc = self.constant.clone();
        for (x, c) in &self.coeffs {
            acc += c * s.get(x)?;
        }
        Some(acc)
    }

    /// Evaluates with every variable of `s` substituted, leaving the rest.
    pub fn partial_evaluate(&self, s: &Valuation) -> LinearExpr {
        let mut out = LinearExpr::constant(self.constant.clone());
        for (x, c) in &self.coeffs {
            match s.get(x) {
                Some(v) => out.constant += c * v,
                None => {
                    out.coeffs.insert(x.clone(), c.clone());
                }
            }
        }
        out
    }

    pub fn to_term(&self) -> Term {
        let mut t: Option<Term> = None;
        for (x, c) in &self.coeffs {
            let mono = if c.is_one() {
                Term::var(x)
            } else if (-c).is_one() {
                Term::var(x).neg()
            } else {
                Term::Const(c.clone()).mul(Term::var(x))
            };
            t = Some(match t {
                None => mono,
                Some(acc) => acc.add(mono),
            });
        }
        match t {
            None => Term::Const(self.constant.clone()),
            Some(acc) if self.constant.is_zero() => acc,
            Some(acc) => acc.add(Term::Const(self.constant.clone())),
        }
    }
}

impl fmt::Display for LinearExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_term())
    }
}

impl fmt::Debug for LinearExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum LinRel {
    Ge,
    Gt,
    Eq,
}

impl LinRel {
    pub fn holds(self, v: &Rational) -> bool {
        match self {
            LinRel::Ge => !v.is_negative(),
            LinRel::Gt => v.is_positive(),
            LinRel::Eq => v.is_zero(),
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            LinRel::Ge => ">=",
            LinRel::Gt => ">",
            LinRel::Eq => "=",
        }
    }
}

/// `expr ⋈ 0`, scaled so the coefficients are coprime integers. Equalities
/// additionally have a positive leading coefficient.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LinearAtom {
    pub expr: LinearExpr,
    pub rel: LinRel,
}

impl LinearAtom {
    pub fn new(expr: LinearExpr, rel: LinRel) -> LinearAtom {
        let mut atom = LinearAtom { expr, rel };
        atom.normalize();
        atom
    }

    fn normalize(&mut self) {
        if self.expr.coeffs.is_empty() {
            // Ground atoms keep only the sign of the constant.
            let s = self.expr.constant.signum();
            self.expr.constant = Rational::from(s as i64);
            return;
        }
        let mut lcm = BigInt::one();
        for c in self.expr.coeffs.values() {
            lcm = lcm.lcm(c.denom());
        }
        let mut gcd = BigInt::zero();
        for c in self.expr.coeffs.values() {
            let n = c.numer() * (&lcm / c.denom());
            gcd = gcd.gcd(&n);
        }
        let mut factor = Rational::from_big(num_rational::BigRational::new(lcm, gcd.abs()));
        if self.rel == LinRel::Eq {
            let lead = self.expr.coeffs.values().next().unwrap();
            if lead.is_negative() {
                factor = -factor;
            }
        }
        if !factor.is_one() {
            self.expr = self.expr.scale(&factor);
        }
    }

    pub fn is_ground(&self) -> bool {
        self.expr.is_constant()
    }

    /// Truth value of a ground atom.
    pub fn ground_value(&self) -> Option<bool> {
        self.is_ground().then(|| self.rel.holds(&self.expr.constant))
    }

    pub fn evaluate(&self, s: &Valuation) -> Option<bool> {
        self.expr.evaluate(s).map(|v| self.rel.holds(&v))
    }

    pub fn mentions(&self, x: &str) -> bool {
        self.expr.mentions(x)
    }

    pub fn substitute(&self, x: &str, e: &LinearExpr) -> LinearAtom {
        if !self.mentions(x) {
            return self.clone();
        }
        LinearAtom::new(self.expr.substitute(x, e), self.rel)
    }

    pub fn partial_evaluate(&self, s: &Valuation) -> LinearAtom {
        LinearAtom::new(self.expr.partial_evaluate(s), self.rel)
    }

    /// Negation as a disjunction of atoms.
    pub fn negate(&self) -> Vec<LinearAtom> {
        let neg = self.expr.scale(&-Rational::one());
        match self.rel {
            LinRel::Ge => vec![LinearAtom::new(neg, LinRel::Gt)],
            LinRel::Gt => vec![LinearAtom::new(neg, LinRel::Ge)],
            LinRel::Eq => vec![
                LinearAtom::new(self.expr.clone(), LinRel::Gt),
                LinearAtom::new(neg, LinRel::Gt),
            ],
        }
    }

    pub fn to_formula(&self) -> Formula {
        let rel = match self.rel {
            LinRel::Ge => Rel::Ge,
            LinRel::Gt => Rel::Gt,
            LinRel::Eq => Rel::Eq,
        };
        Formula::Cmp(self.expr.to_term(), rel, Term::zero())
    }

    /// Coefficient vector without the constant, used to detect parallel
    /// constraints.
    pub fn direction(&self) -> &BTreeMap<String, Rational> {
        &self.expr.coeffs
    }

    pub fn variables(&self) -> BTreeSet<String> {
        self.expr.variables().cloned().collect()
    }
}

impl fmt::Display for LinearAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} 0", self.expr, self.rel.symbol())
    }
}

impl fmt::Debug for LinearAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

/// Translates a comparison into a disjunction of canonical atoms
/// (`≠` becomes two strict atoms).
pub fn atoms_of_cmp(lhs: &Term, rel: Rel, rhs: &Term) -> Result<Vec<LinearAtom>, Term> {
    let d = LinearExpr::from_term(lhs)?.sub(&LinearExpr::from_term(rhs)?);
    let neg = d.scale(&-Rational::one());
    Ok(match rel {
        Rel::Ge => vec![LinearAtom::new(d, LinRel::Ge)],
        Rel::Gt => vec![LinearAtom::new(d, LinRel::Gt)],
        Rel::Le => vec![LinearAtom::new(neg, LinRel::Ge)],
        Rel::Lt => vec![LinearAtom::new(neg, LinRel::Gt)],
        Rel::Eq => vec![LinearAtom::new(d, LinRel::Eq)],
        Rel::Ne => vec![LinearAtom::new(d, LinRel::Gt), LinearAtom::new(neg, LinRel::Gt)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{parse_term, q};

    fn lin(s: &str) -> LinearExpr {
        LinearExpr::from_term(&parse_term(s).unwrap()).unwrap()
    }

    #[test]
    fn linearization() {
        let e = lin("2*(x - y)/4 + 3 - x*1/2");
        assert_eq!(e.coeff("x"), q("0"));
        assert_eq!(e.coeff("y"), q("-1/2"));
        assert_eq!(e.constant, q("3"));
        assert!(LinearExpr::from_term(&parse_term("x*y").unwrap()).is_err());
        assert!(LinearExpr::from_term(&parse_term("1/x").unwrap()).is_err());
    }

    #[test]
    fn canonical_scaling() {
        let a = LinearAtom::new(lin("x/2 - y/3 + 1/5"), LinRel::Ge);
        assert_eq!(a.expr.coeff("x"), q("3"));
        assert_eq!(a.expr.coeff("y"), q("-2"));
        assert_eq!(a.expr.constant, q("6/5"));
        let e = LinearAtom::new(lin("-2*x + 4*y - 2"), LinRel::Eq);
        assert_eq!(e.expr, lin("x - 2*y + 1"));
        let g = LinearAtom::new(lin("-7"), LinRel::Ge);
        assert_eq!(g.ground_value(), Some(false));
    }
}

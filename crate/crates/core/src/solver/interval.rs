//! Exact rational interval arithmetic and three-valued formula evaluation.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use super::SolverError;
use crate::kernel::{Formula, Rational, Rel, Term, Valuation};

#[derive(Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Interval {
    pub lo: Rational,
    pub hi: Rational,
}

impl Interval {
    pub fn new(lo: Rational, hi: Rational) -> Interval {
        assert!(lo <= hi, "empty interval [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn point(v: Rational) -> Interval {
        Interval {
            lo: v.clone(),
            hi: v,
        }
    }

    pub fn width(&self) -> Rational {
        &self.hi - &self.lo
    }

    pub fn mid(&self) -> Rational {
        (&self.lo + &self.hi) / Rational::from(2)
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(&self, v: &Rational) -> bool {
        &self.lo <= v && v <= &self.hi
    }

    pub fn contains_zero(&self) -> bool {
        !self.lo.is_positive() && !self.hi.is_negative()
    }

    pub fn mag(&self) -> Rational {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn neg(&self) -> Interval {
        Interval {
            lo: -&self.hi,
            hi: -&self.lo,
        }
    }

    pub fn add(&self, o: &Interval) -> Interval {
        Interval {
            lo: &self.lo + &o.lo,
            hi: &self.hi + &o.hi,
        }
    }

    pub fn sub(&self, o: &Interval) -> Interval {
        Interval {
            lo: &self.lo - &o.hi,
            hi: &self.hi - &o.lo,
        }
    }

    pub fn mul(&self, o: &Interval) -> Interval {
        let c = [&self.lo * &o.lo, &self.lo * &o.hi, &self.hi * &o.lo, &self.hi * &o.hi];
        let lo = c.iter().min().unwrap().clone();
        let hi = c.iter().max().unwrap().clone();
        Interval { lo, hi }
    }

    pub fn scale(&self, k: &Rational) -> Interval {
        self.mul(&Interval::point(k.clone()))
    }

    /// `None` if the interval contains zero.
    pub fn recip(&self) -> Option<Interval> {
        if self.contains_zero() {
            return None;
        }
        Some(Interval {
            lo: self.hi.recip().unwrap(),
            hi: self.lo.recip().unwrap(),
        })
    }

    pub fn pow(&self, n: u32) -> Interval {
        if n == 0 {
            return Interval::point(Rational::one());
        }
        let (a, b) = (self.lo.pow(n), self.hi.pow(n));
        if n % 2 == 1 {
            Interval { lo: a, hi: b }
        } else if self.contains_zero() {
            Interval {
                lo: Rational::zero(),
                hi: a.max(b),
            }
        } else {
            Interval {
                lo: a.clone().min(b.clone()),
                hi: a.max(b),
            }
        }
    }

    pub fn hull(&self, o: &Interval) -> Interval {
        Interval {
            lo: self.lo.clone().min(o.lo.clone()),
            hi: self.hi.clone().max(o.hi.clone()),
        }
    }

    pub fn intersect(&self, o: &Interval) -> Option<Interval> {
        let lo = self.lo.clone().max(o.lo.clone());
        let hi = self.hi.clone().min(o.hi.clone());
        (lo <= hi).then_some(Interval { lo, hi })
    }

    pub fn relu(&self) -> Interval {
        Interval {
            lo: self.lo.clone().max(Rational::zero()),
            hi: self.hi.clone().max(Rational::zero()),
        }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

impl fmt::Debug for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

/// Per-variable closed intervals.
#[derive(Clone, PartialEq, Eq, Hash, Default, Serialize)]
pub struct IBox(pub BTreeMap<String, Interval>);

impl IBox {
    pub fn new() -> IBox {
        IBox::default()
    }

    pub fn with(mut self, x: impl Into<String>, lo: Rational, hi: Rational) -> IBox {
        self.0.insert(x.into(), Interval::new(lo, hi));
        self
    }

    pub fn get(&self, x: &str) -> Option<&Interval> {
        self.0.get(x)
    }

    pub fn insert(&mut self, x: impl Into<String>, i: Interval) {
        self.0.insert(x.into(), i);
    }

    pub fn vars(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    pub fn center(&self) -> Valuation {
        self.0.iter().map(|(k, i)| (k.clone(), i.mid())).collect()
    }

    pub fn lower_corner(&self) -> Valuation {
        self.0.iter().map(|(k, i)| (k.clone(), i.lo.clone())).collect()
    }

    /// Dimension with the largest width (ties: first name).
    pub fn widest(&self) -> Option<(&String, Rational)> {
        let mut best: Option<(&String, Rational)> = None;
        for (k, i) in &self.0 {
            let w = i.width();
            if best.as_ref().map_or(true, |(_, bw)| w > *bw) {
                best = Some((k, w));
            }
        }
        best
    }

    pub fn split(&self, x: &str) -> (IBox, IBox) {
        let i = &self.0[x];
        let m = i.mid();
        let mut a = self.clone();
        let mut b = self.clone();
        a.0.insert(x.to_string(), Interval::new(i.lo.clone(), m.clone()));
        b.0.insert(x.to_string(), Interval::new(m, i.hi.clone()));
        (a, b)
    }

    /// Up to `limit` corner points in a fixed order.
    pub fn corners(&self, limit: usize) -> Vec<Valuation> {
        let keys: Vec<&String> = self.0.keys().collect();
        let n = keys.len().min(20);
        let total = 1usize << n;
        (0..total.min(limit))
            .map(|mask| {
                keys.iter()
                    .enumerate()
                    .map(|(j, k)| {
                        let i = &self.0[*k];
                        let v = if j < n && mask & (1 << j) != 0 { &i.hi } else { &i.lo };
                        ((*k).clone(), v.clone())
                    })
                    .collect()
            })
            .collect()
    }

    pub fn contains(&self, s: &Valuation) -> bool {
        self.0.iter().all(|(k, i)| s.get(k).is_some_and(|v| i.contains(v)))
    }
}

impl fmt::Display for IBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{k} in {v}")?;
        }
        write!(f, "}}")
    }
}

impl fmt::Debug for IBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

/// Natural interval extension of a term.
pub fn eval_term(t: &Term, b: &IBox) -> Result<Interval, SolverError> {
    Ok(match t {
        Term::Const(c) => Interval::point(c.clone()),
        Term::Var(x) => b
            .get(x)
            .cloned()
            .ok_or_else(|| SolverError::UnboundedVariable(x.clone()))?,
        Term::Neg(a) => eval_term(a, b)?.neg(),
        Term::Add(x, y) => eval_term(x, b)?.add(&eval_term(y, b)?),
        Term::Sub(x, y) => eval_term(x, b)?.sub(&eval_term(y, b)?),
        Term::Mul(x, y) => eval_term(x, b)?.mul(&eval_term(y, b)?),
        Term::Div(x, y) => {
            let d = eval_term(y, b)?;
            let r = d
                .recip()
                .ok_or_else(|| SolverError::IntervalDivisionByZero(y.to_string()))?;
            eval_term(x, b)?.mul(&r)
        }
        Term::Pow(a, n) => eval_term(a, b)?.pow(*n),
    })
}

/// Bounds for one term: natural extension intersected with a mean-value
/// form whose expansion point is the minimizing (resp. maximizing) corner
/// in every coordinate where the partial derivative has constant sign.
#[derive(Clone, Debug)]
pub struct TermBounder {
    pub term: Term,
    grads: Vec<(String, Term)>,
}

impl TermBounder {
    pub fn new(term: Term) -> TermBounder {
        let term = term.fold_constants();
        let grads = if term.is_nonlinear() {
            term.free_variables()
                .into_iter()
                .map(|x| {
                    let d = term.derivative(&x);
                    (x, d)
                })
                .collect()
        } else {
            Vec::new()
        };
        TermBounder { term, grads }
    }

    pub fn bounds(&self, b: &IBox) -> Result<Interval, SolverError> {
        let natural = eval_term(&self.term, b)?;
        if self.grads.is_empty() || natural.is_point() {
            return Ok(natural);
        }
        let Ok(gs) = self
            .grads
            .iter()
            .map(|(x, d)| eval_term(d, b).map(|g| (x, g)))
            .collect::<Result<Vec<_>, _>>()
        else {
            return Ok(natural);
        };
        let side = |lower: bool| -> Option<Rational> {
            let mut c = b.clone();
            for (x, g) in &gs {
                let i = &b.0[*x];
                let v = if !g.lo.is_negative() {
                    if lower { i.lo.clone() } else { i.hi.clone() }
                } else if !g.hi.is_positive() {
                    if lower { i.hi.clone() } else { i.lo.clone() }
                } else {
                    i.mid()
                };
                c.insert((*x).clone(), Interval::point(v));
            }
            let fc = eval_term(&self.term, &c).ok()?.lo;
            let mut acc = fc;
            for (x, g) in &gs {
                let dx = b.0[*x].sub(&c.0[*x]);
                let term = g.mul(&dx);
                acc += if lower { term.lo } else { term.hi };
            }
            Some(acc)
        };
        let lo = side(true).map_or(natural.lo.clone(), |l| l.max(natural.lo.clone()));
        let hi = side(false).map_or(natural.hi.clone(), |h| h.min(natural.hi.clone()));
        Ok(if lo <= hi { Interval { lo, hi } } else { natural })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Tri {
    True,
    False,
    Unknown,
}

impl Tri {
    fn not(self) -> Tri {
        match self {
            Tri::True => Tri::False,
            Tri::False => Tri::True,
            Tri::Unknown => Tri::Unknown,
        }
    }
}

/// Quantifier-free formula with each atom prepared for interval bounding.
#[derive(Clone, Debug)]
pub enum Compiled {
    Const(bool),
    Atom(TermBounder, Rel),
    Not(Box<Compiled>),
    And(Vec<Compiled>),
    Or(Vec<Compiled>),
    Implies(Box<Compiled>, Box<Compiled>),
    Iff(Box<Compiled>, Box<Compiled>),
}

impl Compiled {
    pub fn new(f: &Formula) -> Result<Compiled, SolverError> {
        Ok(match f {
            Formula::True => Compiled::Const(true),
            Formula::False => Compiled::Const(false),
            Formula::Cmp(a, r, b) => {
                Compiled::Atom(TermBounder::new(a.clone().sub(b.clone())), *r)
            }
            Formula::Not(a) => Compiled::Not(Box::new(Compiled::new(a)?)),
            Formula::And(cs) => Compiled::And(cs.iter().map(Compiled::new).collect::<Result<_, _>>()?),
            Formula::Or(cs) => Compiled::Or(cs.iter().map(Compiled::new).collect::<Result<_, _>>()?),
            Formula::Implies(a, b) => {
                Compiled::Implies(Box::new(Compiled::new(a)?), Box::new(Compiled::new(b)?))
            }
            Formula::Iff(a, b) => {
                Compiled::Iff(Box::new(Compiled::new(a)?), Box::new(Compiled::new(b)?))
            }
            Formula::Forall(..) | Formula::Exists(..) => return Err(SolverError::NotUniversal),
        })
    }

    /// Sound three-valued truth over every point of the box. Atoms whose
    /// bounds cannot be computed (a denominator straddling 0) are Unknown.
    pub fn eval(&self, b: &IBox) -> Tri {
        match self {
            Compiled::Const(true) => Tri::True,
            Compiled::Const(false) => Tri::False,
            Compiled::Atom(t, r) => match t.bounds(b) {
                Err(_) => Tri::Unknown,
                Ok(i) => atom_tri(&i, *r),
            },
            Compiled::Not(a) => a.eval(b).not(),
            Compiled::And(cs) => {
                let mut all = true;
                for c in cs {
                    match c.eval(b) {
                        Tri::False => return Tri::False,
                        Tri::Unknown => all = false,
                        Tri::True => {}
                    }
                }
                if all {
                    Tri::True
                } else {
                    Tri::Unknown
                }
            }
            Compiled::Or(cs) => {
                let mut none = true;
                for c in cs {
                    match c.eval(b) {
                        Tri::True => return Tri::True,
                        Tri::Unknown => none = false,
                        Tri::False => {}
                    }
                }
                if none {
                    Tri::False
                } else {
                    Tri::Unknown
                }
            }
            Compiled::Implies(a, c) => match a.eval(b) {
                Tri::False => Tri::True,
                ta => match (ta, c.eval(b)) {
                    (_, Tri::True) => Tri::True,
                    (Tri::True, Tri::False) => Tri::False,
                    _ => Tri::Unknown,
                },
            },
            Compiled::Iff(a, c) => match (a.eval(b), c.eval(b)) {
                (Tri::Unknown, _) | (_, Tri::Unknown) => Tri::Unknown,
                (x, y) if x == y => Tri::True,
                _ => Tri::False,
            },
        }
    }
}

fn atom_tri(i: &Interval, r: Rel) -> Tri {
    let (lo, hi) = (&i.lo, &i.hi);
    let yes_no = |yes: bool, no: bool| {
        if yes {
            Tri::True
        } else if no {
            Tri::False
        } else {
            Tri::Unknown
        }
    };
    match r {
        Rel::Ge => yes_no(!lo.is_negative(), hi.is_negative()),
        Rel::Gt => yes_no(lo.is_positive(), !hi.is_positive()),
        Rel::Le => yes_no(!hi.is_positive(), lo.is_positive()),
        Rel::Lt => yes_no(hi.is_negative(), !lo.is_negative()),
        Rel::Eq => yes_no(lo.is_zero() && hi.is_zero(), !i.contains_zero()),
        Rel::Ne => yes_no(!i.contains_zero(), lo.is_zero() && hi.is_zero()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{parse_formula, parse_term, q};

    #[test]
    fn arithmetic() {
        let a = Interval::new(q("-1"), q("2"));
        let b = Interval::new(q("3"), q("4"));
        assert_eq!(a.mul(&b), Interval::new(q("-4"), q("8")));
        assert_eq!(a.pow(2), Interval::new(q("0"), q("4")));
        assert!(a.recip().is_none());
        assert_eq!(b.recip().unwrap(), Interval::new(q("1/4"), q("1/3")));
    }

    #[test]
    fn monotone_corner_gives_exact_minimum() {
        // p - (-1/(0.01*(p + 10)) + 10) = p²/(p + 10), zero at p = 0.
        let t = parse_term("p - (-1/(0.01*(p + 10)) + 10)").unwrap();
        let bx = IBox::new().with("p", q("0"), q("1/8"));
        let b = TermBounder::new(t).bounds(&bx).unwrap();
        assert_eq!(b.lo, q("0"));
    }

    #[test]
    fn three_valued() {
        let f = parse_formula("x >= 0 -> x + y > -1").unwrap();
        let c = Compiled::new(&f).unwrap();
        let bx = IBox::new().with("x", q("0"), q("1")).with("y", q("0"), q("1"));
        assert_eq!(c.eval(&bx), Tri::True);
        let bx = IBox::new().with("x", q("0"), q("1")).with("y", q("-3"), q("-1/2"));
        assert_eq!(c.eval(&bx), Tri::Unknown);
        let bx = IBox::new().with("x", q("0"), q("0")).with("y", q("-3"), q("-2"));
        assert_eq!(c.eval(&bx), Tri::False);
    }
}

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::{KernelError, Rational, Valuation};

/// Real-arithmetic term over exact rational constants.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Const(Rational),
    Var(String),
    Neg(Box<Term>),
    Add(Box<Term>, Box<Term>),
    Sub(Box<Term>, Box<Term>),
    Mul(Box<Term>, Box<Term>),
    Div(Box<Term>, Box<Term>),
    Pow(Box<Term>, u32),
}

/// Name of the post-state copy `x⁺` of a variable.
pub fn post_name(x: &str) -> String {
    format!("{x}+")
}

/// Inverse of [`post_name`].
pub fn pre_name(x: &str) -> Option<&str> {
    x.strip_suffix('+')
}

impl Term {
    pub fn var(name: impl Into<String>) -> Term {
        Term::Var(name.into())
    }

    pub fn constant(r: Rational) -> Term {
        Term::Const(r)
    }

    pub fn int(n: i64) -> Term {
        Term::Const(Rational::from(n))
    }

    pub fn zero() -> Term {
        Term::int(0)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, rhs: Term) -> Term {
        Term::Add(Box::new(self), Box::new(rhs))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, rhs: Term) -> Term {
        Term::Sub(Box::new(self), Box::new(rhs))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, rhs: Term) -> Term {
        Term::Mul(Box::new(self), Box::new(rhs))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn div(self, rhs: Term) -> Term {
        Term::Div(Box::new(self), Box::new(rhs))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn neg(self) -> Term {
        Term::Neg(Box::new(self))
    }

    pub fn pow(self, n: u32) -> Term {
        Term::Pow(Box::new(self), n)
    }

    pub fn as_const(&self) -> Option<&Rational> {
        match self {
            Term::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn as_var(&self) -> Option<&str> {
        match self {
            Term::Var(v) => Some(v),
            _ => None,
        }
    }

    pub fn evaluate(&self, s: &Valuation) -> Result<Rational, KernelError> {
        Ok(match self {
            Term::Const(c) => c.clone(),
            Term::Var(v) => s
                .get(v)
                .cloned()
                .ok_or_else(|| KernelError::UnboundVariable(v.clone()))?,
            Term::Neg(a) => -a.evaluate(s)?,
            Term::Add(a, b) => a.evaluate(s)? + b.evaluate(s)?,
            Term::Sub(a, b) => a.evaluate(s)? - b.evaluate(s)?,
            Term::Mul(a, b) => a.evaluate(s)? * b.evaluate(s)?,
            Term::Div(a, b) => {
                let d = b.evaluate(s)?;
                if d.is_zero() {
                    return Err(KernelError::DivisionByZero(self.to_string()));
                }
                a.evaluate(s)? / d
            }
            Term::Pow(a, n) => a.evaluate(s)?.pow(*n),
        })
    }

    pub fn free_variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    pub(crate) fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Term::Const(_) => {}
            Term::Var(v) => {
                out.insert(v.clone());
            }
            Term::Neg(a) | Term::Pow(a, _) => a.collect_vars(out),
            Term::Add(a, b) | Term::Sub(a, b) | Term::Mul(a, b) | Term::Div(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    pub fn mentions(&self, x: &str) -> bool {
        match self {
            Term::Const(_) => false,
            Term::Var(v) => v == x,
            Term::Neg(a) | Term::Pow(a, _) => a.mentions(x),
            Term::Add(a, b) | Term::Sub(a, b) | Term::Mul(a, b) | Term::Div(a, b) => {
                a.mentions(x) || b.mentions(x)
            }
        }
    }

    /// Simultaneous substitution of variables by terms.
    pub fn substitute(&self, map: &BTreeMap<String, Term>) -> Term {
        match self {
            Term::Const(_) => self.clone(),
            Term::Var(v) => map.get(v).cloned().unwrap_or_else(|| self.clone()),
            Term::Neg(a) => Term::Neg(Box::new(a.substitute(map))),
            Term::Pow(a, n) => Term::Pow(Box::new(a.substitute(map)), *n),
            Term::Add(a, b) => a.substitute(map).add(b.substitute(map)),
            Term::Sub(a, b) => a.substitute(map).sub(b.substitute(map)),
            Term::Mul(a, b) => a.substitute(map).mul(b.substitute(map)),
            Term::Div(a, b) => a.substitute(map).div(b.substitute(map)),
        }
    }

    pub fn rename(&self, from: &str, to: &str) -> Term {
        let mut m = BTreeMap::new();
        m.insert(from.to_string(), Term::var(to));
        self.substitute(&m)
    }

    /// Folds constant subterms and removes neutral elements. Division by a
    /// constant zero is left in place so evaluation still reports it.
    pub fn fold_constants(&self) -> Term {
        match self {
            Term::Const(_) | Term::Var(_) => self.clone(),
            Term::Neg(a) => match a.fold_constants() {
                Term::Const(c) => Term::Const(-c),
                Term::Neg(inner) => *inner,
                a => a.neg(),
            },
            Term::Add(a, b) => match (a.fold_constants(), b.fold_constants()) {
                (Term::Const(x), Term::Const(y)) => Term::Const(x + y),
                (Term::Const(x), b) if x.is_zero() => b,
                (a, Term::Const(y)) if y.is_zero() => a,
                (a, b) => a.add(b),
            },
            Term::Sub(a, b) => match (a.fold_constants(), b.fold_constants()) {
                (Term::Const(x), Term::Const(y)) => Term::Const(x - y),
                (a, Term::Const(y)) if y.is_zero() => a,
                (Term::Const(x), b) if x.is_zero() => match b {
                    Term::Neg(inner) => *inner,
                    b => b.neg(),
                },
                (a, b) => a.sub(b),
            },
            Term::Mul(a, b) => match (a.fold_constants(), b.fold_constants()) {
                (Term::Const(x), Term::Const(y)) => Term::Const(x * y),
                (Term::Const(x), _) | (_, Term::Const(x)) if x.is_zero() => Term::zero(),
                (Term::Const(x), b) if x.is_one() => b,
                (a, Term::Const(y)) if y.is_one() => a,
                (a, b) => a.mul(b),
            },
            Term::Div(a, b) => match (a.fold_constants(), b.fold_constants()) {
                (Term::Const(x), Term::Const(y)) if !y.is_zero() => Term::Const(x / y),
                (a, Term::Const(y)) if y.is_one() => a,
                (a, b) => a.div(b),
            },
            Term::Pow(a, n) => match (a.fold_constants(), n) {
                (_, 0) => Term::int(1),
                (a, 1) => a,
                (Term::Const(x), n) => Term::Const(x.pow(*n)),
                (a, n) => a.pow(*n),
            },
        }
    }

    /// Symbolic partial derivative, constant-folded.
    pub fn derivative(&self, x: &str) -> Term {
        let d = match self {
            Term::Const(_) => Term::zero(),
            Term::Var(v) => Term::int(if v == x { 1 } else { 0 }),
            Term::Neg(a) => a.derivative(x).neg(),
            Term::Add(a, b) => a.derivative(x).add(b.derivative(x)),
            Term::Sub(a, b) => a.derivative(x).sub(b.derivative(x)),
            Term::Mul(a, b) => a
                .derivative(x)
                .mul((**b).clone())
                .add((**a).clone().mul(b.derivative(x))),
            Term::Div(a, b) => a
                .derivative(x)
                .mul((**b).clone())
                .sub((**a).clone().mul(b.derivative(x)))
                .div((**b).clone().pow(2)),
            Term::Pow(a, n) => match n {
                0 => Term::zero(),
                n => Term::Const(Rational::from(*n as i64))
                    .mul((**a).clone().pow(n - 1))
                    .mul(a.derivative(x)),
            },
        };
        d.fold_constants()
    }

    /// True when the term contains a quotient whose denominator mentions a
    /// variable, or a product/power of two variable-dependent factors.
    pub fn is_nonlinear(&self) -> bool {
        match self {
            Term::Const(_) | Term::Var(_) => false,
            Term::Neg(a) => a.is_nonlinear(),
            Term::Add(a, b) | Term::Sub(a, b) => a.is_nonlinear() || b.is_nonlinear(),
            Term::Mul(a, b) => {
                a.is_nonlinear()
                    || b.is_nonlinear()
                    || (!a.free_variables().is_empty() && !b.free_variables().is_empty())
            }
            Term::Div(a, b) => a.is_nonlinear() || !b.free_variables().is_empty(),
            Term::Pow(a, n) => *n > 1 && !a.free_variables().is_empty() || a.is_nonlinear(),
        }
    }

    pub fn contains_division(&self) -> bool {
        match self {
            Term::Const(_) | Term::Var(_) => false,
            Term::Div(_, _) => true,
            Term::Neg(a) | Term::Pow(a, _) => a.contains_division(),
            Term::Add(a, b) | Term::Sub(a, b) | Term::Mul(a, b) => {
                a.contains_division() || b.contains_division()
            }
        }
    }

    pub fn size(&self) -> usize {
        match self {
            Term::Const(_) | Term::Var(_) => 1,
            Term::Neg(a) | Term::Pow(a, _) => 1 + a.size(),
            Term::Add(a, b) | Term::Sub(a, b) | Term::Mul(a, b) | Term::Div(a, b) => {
                1 + a.size() + b.size()
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Term::Add(..) | Term::Sub(..) => 1,
            Term::Mul(..) | Term::Div(..) => 2,
            Term::Neg(_) => 3,
            Term::Const(c) if c.is_negative() => 3,
            Term::Const(c) if c.to_finite_decimal().is_none() => 5,
            Term::Pow(..) => 4,
            Term::Const(_) | Term::Var(_) => 5,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        if self.precedence() < min {
            write!(f, "(")?;
            self.fmt_prec(f, 0)?;
            return write!(f, ")");
        }
        match self {
            Term::Const(c) => match c.to_finite_decimal() {
                Some(d) => write!(f, "{d}"),
                None => write!(f, "({}/{})", c.numer(), c.denom()),
            },
            Term::Var(v) => write!(f, "{v}"),
            Term::Neg(a) => {
                write!(f, "-")?;
                a.fmt_prec(f, 3)
            }
            Term::Add(a, b) => {
                a.fmt_prec(f, 1)?;
                write!(f, " + ")?;
                b.fmt_prec(f, 2)
            }
            Term::Sub(a, b) => {
                a.fmt_prec(f, 1)?;
                write!(f, " - ")?;
                b.fmt_prec(f, 2)
            }
            Term::Mul(a, b) => {
                a.fmt_prec(f, 2)?;
                write!(f, "*")?;
                b.fmt_prec(f, 3)
            }
            Term::Div(a, b) => {
                a.fmt_prec(f, 2)?;
                write!(f, "/")?;
                b.fmt_prec(f, 3)
            }
            Term::Pow(a, n) => {
                a.fmt_prec(f, 5)?;
                write!(f, "^{n}")
            }
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

impl fmt::Debug for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "`{self}`")
    }
}

impl From<Rational> for Term {
    fn from(r: Rational) -> Self {
        Term::Const(r)
    }
}

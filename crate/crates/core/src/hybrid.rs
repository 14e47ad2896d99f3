//! Discrete, loop-free hybrid programs and angelic perturbations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::kernel::parse::{ParseError, Parser};
use crate::kernel::{Formula, KernelError, Rational, Term, Valuation};

#[derive(Clone, PartialEq, Eq, Hash)]
pub enum HybridProgram {
    Assign(String, Term),
    AssignAny(String),
    Test(Formula),
    Seq(Box<HybridProgram>, Box<HybridProgram>),
    Choice(Box<HybridProgram>, Box<HybridProgram>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HybridError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("test `{0}` contains a quantifier")]
    QuantifiedTest(String),
    #[error("`{0}` is not a valid program variable")]
    BadVariable(String),
    #[error("bound variable `{0}` is not a declared state variable")]
    UndeclaredBoundVariable(String),
    #[error("invariant mentions `{0}`, which is neither a state variable nor a parameter")]
    UndeclaredInvariantVariable(String),
}

/// Outcome of one concrete execution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunOutcome {
    Done(Valuation),
    Blocked,
}

/// Resolves the nondeterminism of one execution.
pub trait Chooser {
    fn value(&mut self, var: &str) -> Rational;
    /// `false` takes the left branch of a choice, `true` the right one.
    fn branch(&mut self) -> bool;
}

/// Replays fixed values and branch bits in program order. Once exhausted it
/// answers 0 and left.
#[derive(Debug, Clone, Default)]
pub struct ScriptedChooser {
    pub values: Vec<Rational>,
    pub branches: Vec<bool>,
    next_value: usize,
    next_branch: usize,
}

impl ScriptedChooser {
    pub fn new(values: Vec<Rational>, branches: Vec<bool>) -> Self {
        ScriptedChooser {
            values,
            branches,
            next_value: 0,
            next_branch: 0,
        }
    }
}

impl Chooser for ScriptedChooser {
    fn value(&mut self, _var: &str) -> Rational {
        let v = self.values.get(self.next_value).cloned().unwrap_or_default();
        self.next_value += 1;
        v
    }

    fn branch(&mut self) -> bool {
        let b = self.branches.get(self.next_branch).copied().unwrap_or(false);
        self.next_branch += 1;
        b
    }
}

/// Draws values uniformly from a grid `{lo, lo + 1/den, ..., hi}`.
pub struct RandomChooser<R: rand::Rng> {
    pub rng: R,
    pub lo: i64,
    pub hi: i64,
    pub den: i64,
}

impl<R: rand::Rng> Chooser for RandomChooser<R> {
    fn value(&mut self, _var: &str) -> Rational {
        let n = self.rng.gen_range(self.lo * self.den..=self.hi * self.den);
        Rational::new(n, self.den)
    }

    fn branch(&mut self) -> bool {
        self.rng.gen_bool(0.5)
    }
}

impl HybridProgram {
    pub fn assign(x: impl Into<String>, t: Term) -> Self {
        HybridProgram::Assign(x.into(), t)
    }

    pub fn assign_any(x: impl Into<String>) -> Self {
        HybridProgram::AssignAny(x.into())
    }

    pub fn test(f: Formula) -> Self {
        HybridProgram::Test(f)
    }

    pub fn seq(a: HybridProgram, b: HybridProgram) -> Self {
        HybridProgram::Seq(Box::new(a), Box::new(b))
    }

    pub fn choice(a: HybridProgram, b: HybridProgram) -> Self {
        HybridProgram::Choice(Box::new(a), Box::new(b))
    }

    /// Right-nested sequential composition; the empty list is `skip`.
    pub fn seq_all(parts: Vec<HybridProgram>) -> Self {
        let mut it = parts.into_iter().rev();
        match it.next() {
            None => skip(),
            Some(last) => it.fold(last, |acc, p| HybridProgram::seq(p, acc)),
        }
    }

    /// Variables written on some path, in order of first occurrence.
    pub fn bound_variables(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_bound(&mut out);
        out
    }

    fn collect_bound(&self, out: &mut Vec<String>) {
        match self {
            HybridProgram::Assign(x, _) | HybridProgram::AssignAny(x) => {
                if !out.contains(x) {
                    out.push(x.clone());
                }
            }
            HybridProgram::Test(_) => {}
            HybridProgram::Seq(a, b) | HybridProgram::Choice(a, b) => {
                a.collect_bound(out);
                b.collect_bound(out);
            }
        }
    }

    /// Variables written on every path.
    pub fn must_bound_variables(&self) -> BTreeSet<String> {
        match self {
            HybridProgram::Assign(x, _) | HybridProgram::AssignAny(x) => {
                BTreeSet::from([x.clone()])
            }
            HybridProgram::Test(_) => BTreeSet::new(),
            HybridProgram::Seq(a, b) => {
                let mut s = a.must_bound_variables();
                s.extend(b.must_bound_variables());
                s
            }
            HybridProgram::Choice(a, b) => a
                .must_bound_variables()
                .intersection(&b.must_bound_variables())
                .cloned()
                .collect(),
        }
    }

    /// Variables that may be read before they are written.
    pub fn free_variables(&self) -> BTreeSet<String> {
        match self {
            HybridProgram::Assign(_, t) => t.free_variables(),
            HybridProgram::AssignAny(_) => BTreeSet::new(),
            HybridProgram::Test(f) => f.free_variables(),
            HybridProgram::Seq(a, b) => {
                let written = a.must_bound_variables();
                let mut s = a.free_variables();
                s.extend(b.free_variables().into_iter().filter(|v| !written.contains(v)));
                s
            }
            HybridProgram::Choice(a, b) => {
                let mut s = a.free_variables();
                s.extend(b.free_variables());
                s
            }
        }
    }

    /// Every variable mentioned anywhere in the program.
    pub fn all_variables(&self) -> BTreeSet<String> {
        let mut s = self.free_variables();
        s.extend(self.bound_variables());
        self.visit(&mut |p| match p {
            HybridProgram::Assign(_, t) => s.extend(t.free_variables()),
            HybridProgram::Test(f) => s.extend(f.all_variables()),
            _ => {}
        });
        s
    }

    fn visit<F: FnMut(&HybridProgram)>(&self, f: &mut F) {
        f(self);
        if let HybridProgram::Seq(a, b) | HybridProgram::Choice(a, b) = self {
            a.visit(f);
            b.visit(f);
        }
    }

    /// Checks the fragment's side conditions: quantifier-free tests and
    /// plain (non post-state) variable names.
    pub fn validate(&self) -> Result<(), HybridError> {
        let mut result = Ok(());
        self.visit(&mut |p| {
            if result.is_err() {
                return;
            }
            match p {
                HybridProgram::Assign(x, _) | HybridProgram::AssignAny(x) => {
                    if x.is_empty() || x.ends_with('+') {
                        result = Err(HybridError::BadVariable(x.clone()));
                    }
                }
                HybridProgram::Test(f) if !f.is_quantifier_free() => {
                    result = Err(HybridError::QuantifiedTest(f.to_string()));
                }
                _ => {}
            }
        });
        result
    }

    /// One execution; deterministic given `s` and the chooser's answers.
    pub fn run(&self, s: &Valuation, chooser: &mut dyn Chooser) -> Result<RunOutcome, HybridError> {
        let mut state = s.clone();
        Ok(if self.exec(&mut state, chooser)? {
            RunOutcome::Done(state)
        } else {
            RunOutcome::Blocked
        })
    }

    fn exec(&self, s: &mut Valuation, chooser: &mut dyn Chooser) -> Result<bool, HybridError> {
        match self {
            HybridProgram::Assign(x, t) => {
                let v = t.evaluate(s)?;
                s.insert(x.clone(), v);
                Ok(true)
            }
            HybridProgram::AssignAny(x) => {
                let v = chooser.value(x);
                s.insert(x.clone(), v);
                Ok(true)
            }
            HybridProgram::Test(f) => Ok(f.evaluate(s)?),
            HybridProgram::Seq(a, b) => Ok(a.exec(s, chooser)? && b.exec(s, chooser)?),
            HybridProgram::Choice(a, b) => {
                if chooser.branch() {
                    b.exec(s, chooser)
                } else {
                    a.exec(s, chooser)
                }
            }
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let prec = match self {
            HybridProgram::Choice(..) => 0,
            HybridProgram::Seq(..) => 1,
            _ => 2,
        };
        if prec < min {
            write!(f, "{{")?;
            self.fmt_prec(f, 0)?;
            return write!(f, "}}");
        }
        match self {
            HybridProgram::Assign(x, t) => write!(f, "{x} := {t}"),
            HybridProgram::AssignAny(x) => write!(f, "{x} := *"),
            HybridProgram::Test(q) => write!(f, "?({q})"),
            HybridProgram::Seq(a, b) => {
                a.fmt_prec(f, 2)?;
                write!(f, "; ")?;
                b.fmt_prec(f, 1)
            }
            HybridProgram::Choice(a, b) => {
                a.fmt_prec(f, 1)?;
                write!(f, " ++ ")?;
                b.fmt_prec(f, 0)
            }
        }
    }

    pub fn parse(src: &str) -> Result<HybridProgram, ParseError> {
        let mut p = Parser::new(src)?;
        let hp = parse_program(&mut p)?;
        p.expect_eof()?;
        Ok(hp)
    }
}

/// `choice := seq ("++" seq)*`, `seq := atomic (";" atomic)* ";"?`,
/// `atomic := x ":=" ("*" | term) | "?" "(" formula ")" | "skip" | "{" choice "}"`.
pub fn parse_program(p: &mut Parser) -> Result<HybridProgram, ParseError> {
    let mut branches = vec![parse_seq(p)?];
    while p.eat_sym("++") {
        branches.push(parse_seq(p)?);
    }
    let mut it = branches.into_iter().rev();
    let last = it.next().unwrap();
    Ok(it.fold(last, |acc, b| HybridProgram::choice(b, acc)))
}

fn parse_seq(p: &mut Parser) -> Result<HybridProgram, ParseError> {
    let mut parts = vec![parse_atomic(p)?];
    while p.eat_sym(";") {
        if p.at_sym("}") || p.at_sym("++") || p.at_eof() {
            break;
        }
        parts.push(parse_atomic(p)?);
    }
    Ok(HybridProgram::seq_all(parts))
}

fn parse_atomic(p: &mut Parser) -> Result<HybridProgram, ParseError> {
    if p.eat_sym("{") {
        let inner = parse_program(p)?;
        p.expect_sym("}")?;
        return Ok(inner);
    }
    if p.eat_sym("?") {
        p.expect_sym("(")?;
        let f = p.formula()?;
        p.expect_sym(")")?;
        return Ok(HybridProgram::test(f));
    }
    if p.eat_keyword("skip") {
        return Ok(skip());
    }
    let x = p.expect_ident()?;
    if x.ends_with('+') {
        return Err(p.error("program variable without `+`"));
    }
    p.expect_sym(":=")?;
    if p.eat_sym("*") {
        return Ok(HybridProgram::assign_any(x));
    }
    Ok(HybridProgram::assign(x, p.term()?))
}

impl fmt::Display for HybridProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

impl fmt::Debug for HybridProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "`{self}`")
    }
}

/// The identity program `?(true)`.
pub fn skip() -> HybridProgram {
    HybridProgram::Test(Formula::True)
}

/// A pair of programs run before and after the controller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AngelicPerturbation {
    pub name: String,
    pub pre: HybridProgram,
    pub post: HybridProgram,
}

/// Perturbation variable name for `x`.
pub fn eps_name(x: &str) -> String {
    format!("eps_{x}")
}

/// Saved pre-perturbation copy of `x`.
pub fn saved_name(x: &str) -> String {
    format!("{x}_prev")
}

fn bounded_noise(x: &str, delta: &Term) -> Vec<HybridProgram> {
    let e = eps_name(x);
    vec![
        HybridProgram::assign_any(e.clone()),
        HybridProgram::test(Formula::And(vec![
            Formula::le(delta.clone().neg(), Term::var(e.clone())),
            Formula::le(Term::var(e.clone()), delta.clone()),
        ])),
        HybridProgram::assign(x, Term::var(x).add(Term::var(e))),
    ]
}

impl AngelicPerturbation {
    pub fn identity(name: impl Into<String>) -> Self {
        AngelicPerturbation {
            name: name.into(),
            pre: skip(),
            post: skip(),
        }
    }

    /// Bounded input noise on `inputs` (saved and restored around the
    /// controller) and bounded output noise on `outputs`.
    pub fn bounded(
        name: impl Into<String>,
        inputs: &[(String, Term)],
        outputs: &[(String, Term)],
    ) -> Self {
        let mut pre = Vec::new();
        let mut restore = Vec::new();
        for (x, d) in inputs {
            pre.push(HybridProgram::assign(saved_name(x), Term::var(x)));
            pre.extend(bounded_noise(x, d));
            restore.push(HybridProgram::assign(x, Term::var(saved_name(x))));
        }
        let mut post = restore;
        for (y, d) in outputs {
            post.extend(bounded_noise(y, d));
        }
        AngelicPerturbation {
            name: name.into(),
            pre: HybridProgram::seq_all(pre),
            post: HybridProgram::seq_all(post),
        }
    }

    /// Output-only noise `eps_v := *; ?(|eps_v| <= delta); v := v + eps_v`.
    pub fn output_noise(name: impl Into<String>, v: &str, delta: Term) -> Self {
        Self::bounded(name, &[], &[(v.to_string(), delta)])
    }

    /// Input noise on `p` with restoration, followed by output noise on `v`.
    pub fn input_output_noise(
        name: impl Into<String>,
        p: &str,
        delta_p: Term,
        v: &str,
        delta_v: Term,
    ) -> Self {
        Self::bounded(name, &[(p.to_string(), delta_p)], &[(v.to_string(), delta_v)])
    }

    /// Recovers the `(inputs, outputs)` noise bounds if this perturbation is
    /// exactly an instance of [`AngelicPerturbation::bounded`].
    pub fn bounded_template(&self) -> Option<(Vec<(String, Term)>, Vec<(String, Term)>)> {
        let pre_parts = flatten_seq(&self.pre);
        let post_parts = flatten_seq(&self.post);
        let mut inputs = Vec::new();
        let mut i = 0;
        while i + 4 <= pre_parts.len() {
            match &pre_parts[i] {
                HybridProgram::Assign(s, Term::Var(x)) if *s == saved_name(x) => {
                    let d = noise_delta(&pre_parts[i + 1..i + 4], x)?;
                    inputs.push((x.clone(), d));
                    i += 4;
                }
                _ => return None,
            }
        }
        if i != pre_parts.len() {
            return None;
        }
        let mut outputs = Vec::new();
        let restored = inputs.len();
        if post_parts.len() < restored || (post_parts.len() - restored) % 3 != 0 {
            return None;
        }
        let mut j = restored;
        while j < post_parts.len() {
            let x = match &post_parts[j + 2] {
                HybridProgram::Assign(x, _) => x.clone(),
                _ => return None,
            };
            outputs.push((x.clone(), noise_delta(&post_parts[j..j + 3], &x)?));
            j += 3;
        }
        let candidate = AngelicPerturbation::bounded(self.name.clone(), &inputs, &outputs);
        (candidate == *self).then_some((inputs, outputs))
    }
}

fn flatten_seq(hp: &HybridProgram) -> Vec<HybridProgram> {
    match hp {
        HybridProgram::Test(Formula::True) => vec![],
        HybridProgram::Seq(a, b) => {
            let mut v = flatten_seq(a);
            v.extend(flatten_seq(b));
            v
        }
        p => vec![p.clone()],
    }
}

fn noise_delta(parts: &[HybridProgram], x: &str) -> Option<Term> {
    match parts {
        [HybridProgram::AssignAny(e), HybridProgram::Test(Formula::And(cs)), HybridProgram::Assign(y, _)]
            if *e == eps_name(x) && y == x && cs.len() == 2 =>
        {
            match &cs[1] {
                Formula::Cmp(_, _, d) => Some(d.clone()),
                _ => None,
            }
        }
        _ => None,
    }
}

/// A control envelope with its trusted loop invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeModel {
    pub name: String,
    pub pre: Formula,
    pub post: Formula,
    pub inv: Formula,
    pub ctl: HybridProgram,
    /// Declared parameters; `None` leaves the parameter symbolic.
    pub parameters: BTreeMap<String, Option<Rational>>,
    pub state_vars: Vec<String>,
    pub notes: String,
}

impl EnvelopeModel {
    pub fn validate(&self) -> Result<(), HybridError> {
        self.ctl.validate()?;
        for x in self.ctl.bound_variables() {
            if !self.state_vars.contains(&x) {
                return Err(HybridError::UndeclaredBoundVariable(x));
            }
        }
        for x in self.inv.free_variables() {
            if !self.state_vars.contains(&x) && !self.parameters.contains_key(&x) {
                return Err(HybridError::UndeclaredInvariantVariable(x));
            }
        }
        Ok(())
    }

    /// Concrete parameter values as a substitution.
    pub fn parameter_substitution(&self) -> BTreeMap<String, Term> {
        self.parameters
            .iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.clone(), Term::Const(v.clone()))))
            .collect()
    }

    pub fn with_parameter(mut self, name: &str, value: Rational) -> Self {
        self.parameters.insert(name.to_string(), Some(value));
        self
    }
}

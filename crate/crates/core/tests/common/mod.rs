//! Shared fixtures, generators and independent oracles for the integration
//! tests and the acceptance target.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robustenv::cli::{parse_model, ModelFile};
use robustenv::hybrid::HybridProgram;
use robustenv::cli::pipeline::lower_implementation;
use robustenv::fixedpoint::{lower_network, StraightLineProgram};
use robustenv::kernel::{post_name, Formula, Rational, Rel, Term, Valuation};
use robustenv::nnet::load_network;
use robustenv::obligations::Implementation;
use robustenv::solver::interval::Interval;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn robot() -> ModelFile {
    parse_model(&fixtures().join("robot.gdm")).expect("robot.gdm parses")
}

pub fn nn_model() -> ModelFile {
    parse_model(&fixtures().join("nn.gdm")).expect("nn.gdm parses")
}

pub fn r(n: i64, d: i64) -> Rational {
    Rational::new(n, d)
}

// ---------------------------------------------------------------------------
// Random linear formulas and the grid oracle.

pub const VARS: [&str; 3] = ["x", "y", "z"];

#[derive(Clone, Debug)]
pub struct LinAtom {
    pub coef: [i64; 3],
    pub c: i64,
    pub rel: Rel,
}

#[derive(Clone, Debug)]
pub enum Bool {
    Atom(usize),
    Not(Box<Bool>),
    And(Vec<Bool>),
    Or(Vec<Bool>),
}

/// `Q_1 v_1 ... Q_k v_k. body` with the first `nvars - k` variables free.
#[derive(Clone, Debug)]
pub struct Instance {
    pub nvars: usize,
    /// `true` for a universal quantifier, innermost last.
    pub quants: Vec<bool>,
    pub atoms: Vec<LinAtom>,
    pub body: Bool,
}

pub const RELS: [Rel; 6] = [Rel::Lt, Rel::Le, Rel::Eq, Rel::Ne, Rel::Ge, Rel::Gt];
pub const INEQUALITIES: [Rel; 4] = [Rel::Lt, Rel::Le, Rel::Ge, Rel::Gt];

/// Every variable of a grid instance ranges over `[-RANGE, RANGE]`.
pub const RANGE: i64 = 4;

fn random_bool(rng: &mut ChaCha8Rng, atoms: &[usize]) -> Bool {
    let b = if atoms.len() == 1 {
        Bool::Atom(atoms[0])
    } else {
        let cut = rng.gen_range(1..atoms.len());
        let (l, r) = atoms.split_at(cut);
        let parts = vec![random_bool(rng, l), random_bool(rng, r)];
        if rng.gen_bool(0.5) {
            Bool::And(parts)
        } else {
            Bool::Or(parts)
        }
    };
    if rng.gen_bool(0.2) {
        Bool::Not(Box::new(b))
    } else {
        b
    }
}

impl Instance {
    pub fn random(rng: &mut ChaCha8Rng) -> Instance {
        Self::random_with(rng, &RELS)
    }

    pub fn random_with(rng: &mut ChaCha8Rng, rels: &[Rel]) -> Instance {
        let nvars = rng.gen_range(1..=3);
        let nq = rng.gen_range(0..=nvars);
        let quants = (0..nq).map(|_| rng.gen_bool(0.5)).collect();
        let natoms = rng.gen_range(1..=6);
        let atoms = (0..natoms)
            .map(|_| {
                let mut coef = [0i64; 3];
                for c in coef.iter_mut().take(nvars) {
                    *c = rng.gen_range(-3..=3);
                }
                LinAtom {
                    coef,
                    c: rng.gen_range(-3..=3),
                    rel: *rels.choose(rng).unwrap(),
                }
            })
            .collect();
        let idx: Vec<usize> = (0..natoms).collect();
        let body = random_bool(rng, &idx);
        Instance { nvars, quants, atoms, body }
    }

    pub fn atom_term(&self, a: &LinAtom) -> Term {
        let mut t = Term::Const(Rational::from(a.c));
        for (i, k) in a.coef.iter().enumerate().take(self.nvars) {
            if *k != 0 {
                t = t.add(Term::Const(Rational::from(*k)).mul(Term::var(VARS[i])));
            }
        }
        t
    }

    fn bool_formula(&self, b: &Bool) -> Formula {
        match b {
            Bool::Atom(i) => {
                let a = &self.atoms[*i];
                Formula::cmp(self.atom_term(a), a.rel, Term::zero())
            }
            Bool::Not(x) => Formula::not(self.bool_formula(x)),
            Bool::And(xs) => Formula::And(xs.iter().map(|x| self.bool_formula(x)).collect()),
            Bool::Or(xs) => Formula::Or(xs.iter().map(|x| self.bool_formula(x)).collect()),
        }
    }

    pub fn body_formula(&self) -> Formula {
        self.bool_formula(&self.body)
    }

    pub fn first_bound(&self) -> usize {
        self.nvars - self.quants.len()
    }

    pub fn formula(&self) -> Formula {
        let mut f = self.body_formula();
        for (k, forall) in self.quants.iter().enumerate().rev() {
            let x = VARS[self.first_bound() + k];
            f = if *forall { Formula::forall(x, f) } else { Formula::exists(x, f) };
        }
        f
    }

    /// Like [`Instance::formula`] with every variable confined to
    /// `[-RANGE, RANGE]`: guards on the free variables form a premise,
    /// universals guard by implication and existentials by conjunction.
    pub fn bounded_formula(&self) -> Formula {
        let guard = |x: &str| {
            Formula::And(vec![
                Formula::le(Term::int(-RANGE), Term::var(x)),
                Formula::le(Term::var(x), Term::int(RANGE)),
            ])
        };
        let mut f = self.body_formula();
        for (k, forall) in self.quants.iter().enumerate().rev() {
            let x = VARS[self.first_bound() + k];
            f = if *forall {
                Formula::forall(x, Formula::implies(guard(x), f))
            } else {
                Formula::exists(x, Formula::And(vec![guard(x), f]))
            };
        }
        let free: Vec<Formula> = VARS[..self.first_bound()].iter().map(|x| guard(x)).collect();
        if free.is_empty() {
            f
        } else {
            Formula::implies(Formula::and_all(free), f)
        }
    }

    /// Body truth with values in units of `1/UNIT`.
    fn eval_body(&self, b: &Bool, vals: &[i64; 3]) -> bool {
        match b {
            Bool::Atom(i) => {
                let a = &self.atoms[*i];
                let lhs: i64 = a.c * UNIT + (0..3).map(|j| a.coef[j] * vals[j]).sum::<i64>();
                match a.rel {
                    Rel::Lt => lhs < 0,
                    Rel::Le => lhs <= 0,
                    Rel::Eq => lhs == 0,
                    Rel::Ne => lhs != 0,
                    Rel::Ge => lhs >= 0,
                    Rel::Gt => lhs > 0,
                }
            }
            Bool::Not(x) => !self.eval_body(x, vals),
            Bool::And(xs) => xs.iter().all(|x| self.eval_body(x, vals)),
            Bool::Or(xs) => xs.iter().any(|x| self.eval_body(x, vals)),
        }
    }

    fn eval_quant(&self, k: usize, vals: &mut [i64; 3], g: &Grid) -> bool {
        if k == self.quants.len() {
            return self.eval_body(&self.body, vals);
        }
        let var = self.first_bound() + k;
        let pts = g.bound_points();
        let test = |v: i64, vals: &mut [i64; 3]| {
            vals[var] = v;
            self.eval_quant(k + 1, vals, g)
        };
        if self.quants[k] {
            pts.into_iter().all(|v| test(v, vals))
        } else {
            pts.into_iter().any(|v| test(v, vals))
        }
    }

    /// Validity on the grid: every free grid point satisfies the formula.
    pub fn grid_valid(&self, g: &Grid) -> bool {
        let free = self.first_bound();
        let pts = g.free_points();
        let mut vals = [0i64; 3];
        let mut idx = vec![0usize; free];
        loop {
            for (j, i) in idx.iter().enumerate() {
                vals[j] = pts[*i];
            }
            if !self.eval_quant(0, &mut vals, g) {
                return false;
            }
            let mut j = 0;
            loop {
                if j == free {
                    return true;
                }
                idx[j] += 1;
                if idx[j] < pts.len() {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
        }
    }
}

/// All grid values are integers in units of `1/UNIT`.
pub const UNIT: i64 = 24;

/// Steps `1/free_den` for free variables and `1/bound_den` for quantified
/// ones, both on `[-RANGE, RANGE]`.
#[derive(Clone, Copy, Debug)]
pub struct Grid {
    pub free_den: i64,
    pub bound_den: i64,
}

impl Grid {
    /// `{-4, -7/2, ..., 4}` for free variables; quantified variables on the
    /// same range refined twice (step 1/8).
    pub const COARSE: Grid = Grid { free_den: 2, bound_den: 8 };
    /// A second grid on thirds, so that agreement is not an artefact of one
    /// step size.
    pub const THIRDS: Grid = Grid { free_den: 3, bound_den: 12 };

    fn points(den: i64) -> Vec<i64> {
        let step = UNIT / den;
        (-RANGE * den..=RANGE * den).map(|k| k * step).collect()
    }

    fn free_points(&self) -> Vec<i64> {
        Self::points(self.free_den)
    }

    fn bound_points(&self) -> Vec<i64> {
        Self::points(self.bound_den)
    }
}

/// Grid verdict for [`Instance::bounded_formula`] when both grids agree,
/// else `None` (indecisive).
pub fn grid_oracle(inst: &Instance) -> Option<bool> {
    let a = inst.grid_valid(&Grid::COARSE);
    let b = inst.grid_valid(&Grid::THIRDS);
    (a == b).then_some(a)
}

/// Truth of `∃x. body` at fixed values of the other variables by checking
/// every atom root in `x`, the midpoints between them and one point beyond
/// each end.
pub fn exists_1d(inst: &Instance, x: usize, others: &BTreeMap<usize, Rational>) -> bool {
    let mut roots: Vec<Rational> = Vec::new();
    for a in &inst.atoms {
        let k = a.coef[x];
        if k == 0 {
            continue;
        }
        let mut rest = Rational::from(a.c);
        for (j, v) in others {
            rest = rest + Rational::from(a.coef[*j]) * v.clone();
        }
        roots.push(-rest / Rational::from(k));
    }
    roots.sort();
    roots.dedup();
    let mut cands = roots.clone();
    for w in roots.windows(2) {
        cands.push((w[0].clone() + w[1].clone()) / Rational::from(2));
    }
    match (roots.first(), roots.last()) {
        (Some(lo), Some(hi)) => {
            cands.push(lo.clone() - Rational::one());
            cands.push(hi.clone() + Rational::one());
        }
        _ => cands.push(Rational::zero()),
    }
    let body = inst.body_formula();
    cands.into_iter().any(|c| {
        let mut s = Valuation::new();
        for (j, v) in others {
            s.insert(VARS[*j], v.clone());
        }
        s.insert(VARS[x], c);
        body.evaluate(&s).expect("linear body evaluates")
    })
}

// ---------------------------------------------------------------------------
// Reachability of loop-free programs by naive path enumeration.

struct Path {
    state: BTreeMap<String, Term>,
    conds: Vec<Formula>,
    fresh: Vec<String>,
}

fn enumerate(hp: &HybridProgram, p: Path, counter: &mut usize) -> Vec<Path> {
    match hp {
        HybridProgram::Assign(x, t) => {
            let mut p = p;
            let v = t.substitute(&p.state);
            p.state.insert(x.clone(), v);
            vec![p]
        }
        HybridProgram::AssignAny(x) => {
            let mut p = p;
            *counter += 1;
            let k = format!("k__{counter}");
            p.state.insert(x.clone(), Term::var(k.clone()));
            p.fresh.push(k);
            vec![p]
        }
        HybridProgram::Test(f) => {
            let mut p = p;
            p.conds.push(f.substitute(&p.state));
            vec![p]
        }
        HybridProgram::Seq(a, b) => enumerate(a, p, counter)
            .into_iter()
            .flat_map(|q| enumerate(b, q, counter))
            .collect(),
        HybridProgram::Choice(a, b) => {
            let copy = Path {
                state: p.state.clone(),
                conds: p.conds.clone(),
                fresh: p.fresh.clone(),
            };
            let mut out = enumerate(a, p, counter);
            out.extend(enumerate(b, copy, counter));
            out
        }
    }
}

/// `⋁_paths ∃fresh. conditions ∧ ⋀_x x⁺ = σ(x)` over the bound variables.
pub fn reach(hp: &HybridProgram) -> Formula {
    let bound = hp.bound_variables();
    let mut counter = 0;
    let start = Path {
        state: BTreeMap::new(),
        conds: vec![],
        fresh: vec![],
    };
    let paths = enumerate(hp, start, &mut counter);
    Formula::or_all(paths.into_iter().map(|p| {
        let mut parts = p.conds;
        for x in &bound {
            let v = p.state.get(x).cloned().unwrap_or_else(|| Term::var(x));
            parts.push(Formula::eq(Term::var(post_name(x)), v));
        }
        Formula::exists_all(p.fresh, Formula::and_all(parts))
    }))
}

// ---------------------------------------------------------------------------
// Random loop-free programs over `a`, `b`.

fn small_linear(rng: &mut ChaCha8Rng) -> Term {
    let mut t = Term::Const(Rational::from(rng.gen_range(-3..=3)));
    for x in ["a", "b"] {
        let k = rng.gen_range(-2..=2);
        if k != 0 {
            t = t.add(Term::Const(Rational::from(k)).mul(Term::var(x)));
        }
    }
    t
}

fn random_test(rng: &mut ChaCha8Rng) -> Formula {
    Formula::cmp(small_linear(rng), *RELS.choose(rng).unwrap(), Term::zero())
}

pub fn random_program(rng: &mut ChaCha8Rng, depth: u32) -> HybridProgram {
    let var = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.5) { "a" } else { "b" };
    let leaf = rng.gen_range(0..4);
    if depth == 0 || leaf == 0 {
        return match rng.gen_range(0..3) {
            0 => HybridProgram::assign(var(rng), small_linear(rng)),
            1 => {
                let x = var(rng);
                HybridProgram::seq(
                    HybridProgram::assign_any(x),
                    HybridProgram::test(Formula::le(Term::var(x).sub(small_linear(rng)), Term::int(3))),
                )
            }
            _ => HybridProgram::test(random_test(rng)),
        };
    }
    let a = random_program(rng, depth - 1);
    let b = random_program(rng, depth - 1);
    if rng.gen_bool(0.5) {
        HybridProgram::seq(a, b)
    } else {
        HybridProgram::choice(a, b)
    }
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Outcome of the QE-versus-grid comparison.
#[derive(Debug, Default)]
pub struct GridAgreement {
    pub generated: usize,
    pub decisive: usize,
    pub disagreements: Vec<String>,
}

/// Generates random instances until `want` decisive ones were compared
/// (or `cap` instances were generated).
pub fn fm_grid_agreement(seed: u64, want: usize, cap: usize) -> GridAgreement {
    let mut rng = seeded(seed);
    let mut out = GridAgreement::default();
    while out.decisive < want && out.generated < cap {
        let inst = Instance::random_with(&mut rng, &INEQUALITIES);
        out.generated += 1;
        let Some(expected) = grid_oracle(&inst) else { continue };
        out.decisive += 1;
        let f = inst.bounded_formula();
        match robustenv::solver::qe_decide_formula(&f, None) {
            Ok(v) if v.is_proven() == expected && !v.is_unknown() => {}
            Ok(v) => out.disagreements.push(format!("{f}: grid {expected}, qe {:?}", v.status)),
            Err(e) => out.disagreements.push(format!("{f}: {e}")),
        }
    }
    out
}

/// The safety-under-perturbation obligation of `ctl` with angel `angel`
/// and implementation `imp` of `model`, plus the model's domain `D`.
pub fn safety_obligation(
    model: &ModelFile,
    ctl: &str,
    angel: &str,
    imp: &str,
) -> (robustenv::obligations::Obligation, robustenv::solver::IBox) {
    let env = model.envelope(ctl).unwrap();
    let ap = model.perturbation(angel).unwrap();
    let imp = model.implementation(imp).unwrap();
    let ob = robustenv::obligations::build_safety_under_perturbation(&env, ap, &imp).unwrap();
    (ob, model.domain("D").unwrap().clone())
}

// ---------------------------------------------------------------------------
// Straight-line programs of the bundled implementations.

pub fn robot_program() -> StraightLineProgram {
    let m = robot();
    let env = m.envelope("C12").unwrap();
    let imp = m.implementation("implR").unwrap();
    lower_implementation(&env, &imp, m.domain("D").unwrap()).unwrap()
}

/// The closed form of `implR` with the model parameters substituted.
pub fn robot_term() -> Term {
    let m = robot();
    let env = m.envelope("C12").unwrap();
    match m.implementation("implR").unwrap() {
        Implementation::ClosedForm { outputs, .. } => outputs[0].1.substitute(&env.parameter_substitution()),
        _ => unreachable!(),
    }
}

pub fn network_program(file: &str) -> StraightLineProgram {
    let net = load_network(&fixtures().join(file)).unwrap();
    lower_network(&net, &[Interval::new(r(0, 1), r(100, 1)), Interval::new(r(-10, 1), r(10, 1))]).unwrap()
}

/// A point of the domain representable on a 2^-16 grid.
pub fn sample(rng: &mut ChaCha8Rng, dom: &[Interval]) -> Vec<Rational> {
    dom.iter()
        .map(|iv| {
            let steps = ((iv.hi.clone() - iv.lo.clone()) * Rational::from(1 << 16)).floor();
            let n: i64 = rng.gen_range(0..=i64::try_from(steps).unwrap());
            iv.lo.clone() + Rational::new(n, 1 << 16)
        })
        .collect()
}

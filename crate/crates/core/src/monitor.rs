//! Controller monitors for discrete loop-free programs, by forward symbolic
//! execution.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::hybrid::{HybridProgram, RandomChooser, RunOutcome, ScriptedChooser};
use crate::kernel::{fresh_name, post_name, pre_name, Formula, Rational, Term, Valuation};
use crate::solver::{find_model, Pick, Qe, SolverError};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Monitor {
    #[serde(serialize_with = "as_display")]
    pub formula: Formula,
    pub pre_vars: Vec<String>,
    pub post_vars: Vec<String>,
    #[serde(skip)]
    pub program: HybridProgram,
}

fn as_display<T: std::fmt::Display, S: serde::Serializer>(t: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(t)
}

/// One path through a program: the symbolic post-state, the accumulated
/// test conditions, the fresh symbols of `x := *` in execution order and the
/// branch bits taken.
#[derive(Clone, Debug)]
pub struct SymbolicPath {
    pub state: BTreeMap<String, Term>,
    pub conditions: Vec<Formula>,
    pub fresh: Vec<String>,
    pub branches: Vec<bool>,
}

impl SymbolicPath {
    /// Path condition conjoined with `x⁺ = σ(x)` for every bound variable,
    /// fresh symbols left free.
    pub fn formula(&self, bound: &[String]) -> Formula {
        let mut parts = self.conditions.clone();
        for x in bound {
            parts.push(Formula::eq(Term::var(post_name(x)), self.value(x)));
        }
        Formula::and_all(parts)
    }

    fn value(&self, x: &str) -> Term {
        self.state.get(x).cloned().unwrap_or_else(|| Term::var(x))
    }
}

/// All feasible-looking paths of `hp` (paths whose condition folds to ⊥ are
/// dropped).
pub fn symbolic_paths(hp: &HybridProgram) -> Vec<SymbolicPath> {
    let mut avoid = hp.all_variables();
    avoid.extend(hp.bound_variables().iter().map(|x| post_name(x)));
    let start = SymbolicPath {
        state: BTreeMap::new(),
        conditions: Vec::new(),
        fresh: Vec::new(),
        branches: Vec::new(),
    };
    let mut counter = 0usize;
    exec(hp, vec![start], &mut avoid, &mut counter)
}

fn exec(
    hp: &HybridProgram,
    paths: Vec<SymbolicPath>,
    avoid: &mut BTreeSet<String>,
    counter: &mut usize,
) -> Vec<SymbolicPath> {
    match hp {
        HybridProgram::Assign(x, e) => paths
            .into_iter()
            .map(|mut p| {
                let v = e.substitute(&p.state).fold_constants();
                p.state.insert(x.clone(), v);
                p
            })
            .collect(),
        HybridProgram::AssignAny(x) => paths
            .into_iter()
            .map(|mut p| {
                let base = format!("_k{counter}");
                let k = if avoid.contains(&base) { fresh_name(&base, avoid) } else { base };
                *counter += 1;
                avoid.insert(k.clone());
                p.state.insert(x.clone(), Term::var(k.clone()));
                p.fresh.push(k);
                p
            })
            .collect(),
        HybridProgram::Test(q) => paths
            .into_iter()
            .filter_map(|mut p| {
                let c = q.substitute(&p.state).map_terms(|t| t.fold_constants()).simplify();
                if c == Formula::False {
                    return None;
                }
                if c != Formula::True {
                    p.conditions.push(c);
                }
                Some(p)
            })
            .collect(),
        HybridProgram::Seq(a, b) => {
            let mid = exec(a, paths, avoid, counter);
            exec(b, mid, avoid, counter)
        }
        HybridProgram::Choice(a, b) => {
            let mut out = Vec::new();
            for p in paths {
                let mut left = p.clone();
                left.branches.push(false);
                let mut right = p;
                right.branches.push(true);
                out.extend(exec(a, vec![left], avoid, counter));
                out.extend(exec(b, vec![right], avoid, counter));
            }
            out
        }
    }
}

/// Synthesizes the exact monitor `χ(x̄, x̄⁺)` of `hp` over its bound
/// variables.
pub fn synthesize_monitor(hp: &HybridProgram) -> Monitor {
    let bound = hp.bound_variables();
    let disjuncts: Vec<Formula> = symbolic_paths(hp)
        .iter()
        .map(|p| eliminate_fresh(p, &bound))
        .collect();
    let formula = Formula::or_all(disjuncts);
    let post_vars: Vec<String> = bound.iter().map(|x| post_name(x)).collect();
    let mut pre: BTreeSet<String> = hp.free_variables();
    for v in formula.free_variables() {
        if pre_name(&v).is_none() {
            pre.insert(v);
        }
    }
    Monitor {
        formula,
        pre_vars: pre.into_iter().collect(),
        post_vars,
        program: hp.clone(),
    }
}

/// Removes the fresh symbols of one path: through a defining equation
/// `y⁺ = a·k + r` (constant `a ≠ 0`) when there is one, else by QE.
fn eliminate_fresh(path: &SymbolicPath, bound: &[String]) -> Formula {
    let mut conds = path.conditions.clone();
    let mut eqs: Vec<(String, Term)> = bound.iter().map(|x| (post_name(x), path.value(x))).collect();
    let mut leftover = Vec::new();
    for k in &path.fresh {
        let def = eqs
            .iter()
            .position(|(_, t)| t.as_var() == Some(k.as_str()))
            .or_else(|| eqs.iter().position(|(_, t)| linear_coefficient(t, k).is_some()));
        match def {
            Some(i) => {
                let (y, t) = eqs.remove(i);
                let a = linear_coefficient(&t, k).unwrap();
                let rest = t.substitute(&single(k, Term::zero())).fold_constants();
                let solved = if a.is_one() && rest.as_const().is_some_and(Rational::is_zero) {
                    Term::var(y)
                } else {
                    Term::var(y).sub(rest).div(Term::Const(a)).fold_constants()
                };
                let m = single(k, solved);
                conds = conds.iter().map(|c| c.substitute(&m)).collect();
                for (_, t) in eqs.iter_mut() {
                    *t = t.substitute(&m).fold_constants();
                }
            }
            None => leftover.push(k.clone()),
        }
    }
    let mut parts = conds;
    parts.extend(eqs.into_iter().map(|(y, t)| Formula::eq(Term::var(y), t)));
    let mut f = Formula::and_all(parts);
    for k in leftover.into_iter().rev() {
        if !f.mentions(&k) {
            continue;
        }
        let ex = Formula::exists(k, f.clone());
        f = match Qe::new().eliminate(&ex) {
            Ok(r) => r.to_formula(),
            Err(_) => ex,
        };
    }
    f
}

fn single(k: &str, t: Term) -> BTreeMap<String, Term> {
    BTreeMap::from([(k.to_string(), t)])
}

/// The constant nonzero coefficient of `k` if `t` is affine in `k`.
fn linear_coefficient(t: &Term, k: &str) -> Option<Rational> {
    if !t.mentions(k) {
        return None;
    }
    let d = t.derivative(k).fold_constants();
    let c = d.as_const()?.clone();
    (!c.is_zero()).then_some(c)
}

#[derive(Clone, Debug)]
pub struct SoundnessOptions {
    pub samples: usize,
    pub seed: u64,
    /// Values substituted for parameters before sampling.
    pub fixed: Valuation,
    /// Range of random values and of `x := *` choices.
    pub range: (i64, i64),
}

impl Default for SoundnessOptions {
    fn default() -> Self {
        SoundnessOptions {
            samples: 1000,
            seed: 0,
            fixed: Valuation::new(),
            range: (-10, 10),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SoundnessReport {
    /// Executions that completed (not blocked).
    pub executions: usize,
    /// Monitor models that were checked by replay.
    pub replays: usize,
    /// Direction (a): executions whose transition violates the monitor.
    pub execution_violations: Vec<String>,
    /// Direction (b): monitor models no path of the program reproduces.
    pub replay_violations: Vec<String>,
}

impl SoundnessReport {
    pub fn is_clean(&self) -> bool {
        self.execution_violations.is_empty() && self.replay_violations.is_empty()
    }
}

/// Empirical exactness check of `m` against its program in both directions.
pub fn check_monitor_soundness(m: &Monitor, opts: &SoundnessOptions) -> SoundnessReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = SoundnessReport::default();
    let hp = &m.program;
    let bound = hp.bound_variables();
    let (lo, hi) = opts.range;
    let den = 4;
    let mut inputs: BTreeSet<String> = hp.free_variables();
    inputs.extend(m.pre_vars.iter().cloned());
    let random_value = |rng: &mut ChaCha8Rng| Rational::new(rng.gen_range(lo * den..=hi * den), den);

    // (a) executions satisfy the monitor.
    for _ in 0..opts.samples {
        let mut s = opts.fixed.clone();
        for x in &inputs {
            if !s.contains(x) {
                s.insert(x.clone(), random_value(&mut rng));
            }
        }
        let mut chooser = RandomChooser {
            rng: ChaCha8Rng::seed_from_u64(rng.gen()),
            lo,
            hi,
            den,
        };
        match hp.run(&s, &mut chooser) {
            Ok(RunOutcome::Done(t)) => {
                report.executions += 1;
                let joint = joint_state(&s, &t, &bound);
                if m.formula.evaluate(&joint) != Ok(true) {
                    report.execution_violations.push(format!("{s} -> {t}"));
                }
            }
            Ok(RunOutcome::Blocked) => {}
            Err(e) => report.execution_violations.push(format!("{s}: {e}")),
        }
    }

    // (b) monitor models are replayed by some path.
    let formula = m.formula.substitute(&opts.fixed.to_substitution());
    let mut names: Vec<String> = m.pre_vars.iter().chain(&m.post_vars).cloned().collect();
    names.retain(|x| !opts.fixed.contains(x));
    let paths = symbolic_paths(hp);
    let linear = Qe::new().eliminate(&formula);
    for _ in 0..opts.samples {
        let model = match &linear {
            Ok(qf) => {
                names.shuffle(&mut rng);
                let mut pick = Pick::Random(&mut rng);
                match find_model(&mut Qe::new(), qf, &names, &mut pick) {
                    Ok(Some(v)) => Some(v),
                    _ => None,
                }
            }
            Err(_) => rejection_sample(&formula, &names, &mut rng, lo, hi, den),
        };
        let Some(mut model) = model else { break };
        model.extend(&opts.fixed);
        for x in &names {
            if !model.contains(x) {
                model.insert(x.clone(), Rational::zero());
            }
        }
        report.replays += 1;
        if !replays(hp, &paths, &bound, &model) {
            report.replay_violations.push(model.to_string());
        }
    }
    report
}

fn rejection_sample(
    f: &Formula,
    names: &[String],
    rng: &mut ChaCha8Rng,
    lo: i64,
    hi: i64,
    den: i64,
) -> Option<Valuation> {
    for _ in 0..10_000 {
        let v: Valuation = names
            .iter()
            .map(|x| (x.clone(), Rational::new(rng.gen_range(lo * den..=hi * den), den)))
            .collect();
        if f.evaluate(&v) == Ok(true) {
            return Some(v);
        }
    }
    None
}

fn joint_state(pre: &Valuation, post: &Valuation, bound: &[String]) -> Valuation {
    let mut joint = pre.clone();
    for x in bound {
        if let Some(v) = post.get(x) {
            joint.insert(post_name(x), v.clone());
        }
    }
    joint
}

/// Whether some path, with witnesses for its fresh symbols read off the
/// model, runs from the model's pre-state to its post-state.
fn replays(hp: &HybridProgram, paths: &[SymbolicPath], bound: &[String], model: &Valuation) -> bool {
    let pre: Valuation = model
        .iter()
        .filter(|(k, _)| pre_name(k).is_none())
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let mut pre_full = pre.clone();
    for x in hp.free_variables() {
        if !pre_full.contains(&x) {
            pre_full.insert(x, Rational::zero());
        }
    }
    for p in paths {
        let f = p.formula(bound).substitute(&model.to_substitution());
        let witness = match witness(&f, &p.fresh) {
            Ok(Some(w)) => w,
            _ => continue,
        };
        let values = p.fresh.iter().map(|k| witness.get(k).cloned().unwrap_or_default()).collect();
        let mut chooser = ScriptedChooser::new(values, p.branches.clone());
        if let Ok(RunOutcome::Done(t)) = hp.run(&pre_full, &mut chooser) {
            if bound.iter().all(|x| t.get(x) == model.get(&post_name(x))) {
                return true;
            }
        }
    }
    false
}

fn witness(f: &Formula, fresh: &[String]) -> Result<Option<Valuation>, SolverError> {
    let mut qe = Qe::new();
    let qf = qe.eliminate(f)?;
    find_model(&mut qe, &qf, fresh, &mut Pick::Canonical)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::{skip, AngelicPerturbation};
    use crate::kernel::{parse_formula, q};

    #[test]
    fn envelope_monitor() {
        let hp = HybridProgram::parse("v := *; ?(0 <= v & v <= Vmax & T*v <= p)").unwrap();
        let m = synthesize_monitor(&hp);
        assert_eq!(
            m.formula.normalize(),
            parse_formula("0 <= v+ & v+ <= Vmax & T*v+ <= p").unwrap().normalize()
        );
        assert_eq!(m.post_vars, vec!["v+"]);
        assert_eq!(m.pre_vars, vec!["T", "Vmax", "p"]);
    }

    #[test]
    fn skip_monitor_is_true() {
        let m = synthesize_monitor(&skip());
        assert_eq!(m.formula, Formula::True);
        assert!(m.post_vars.is_empty());
    }

    #[test]
    fn input_noise_monitor() {
        let a = AngelicPerturbation::input_output_noise(
            "a2",
            "p",
            Term::var("dp"),
            "v",
            Term::var("dv"),
        );
        let m = synthesize_monitor(&a.pre);
        let expect = parse_formula(
            "p_prev+ = p & -dp <= eps_p+ & eps_p+ <= dp & p+ = p + eps_p+",
        )
        .unwrap();
        assert_eq!(m.formula.normalize(), expect.normalize());
    }

    #[test]
    fn choice_adds_frame_equalities() {
        let hp = HybridProgram::parse("x := 1 ++ y := 2").unwrap();
        let m = synthesize_monitor(&hp);
        let expect = parse_formula("(x+ = 1 & y+ = y) | (x+ = x & y+ = 2)").unwrap();
        assert_eq!(m.formula.normalize(), expect.normalize());
    }

    #[test]
    fn soundness_and_mutation() {
        let hp = HybridProgram::parse("v := *; ?(0 <= v & v <= Vmax & T*v <= p)").unwrap();
        let m = synthesize_monitor(&hp);
        let opts = SoundnessOptions {
            samples: 200,
            fixed: [("T", q("1")), ("Vmax", q("10"))].into_iter().collect(),
            ..SoundnessOptions::default()
        };
        let r = check_monitor_soundness(&m, &opts);
        assert!(r.is_clean(), "{r:?}");
        assert!(r.executions > 0 && r.replays > 0);
        let mutated = Monitor {
            formula: parse_formula("0 <= v+ & T*v+ <= p").unwrap(),
            ..m
        };
        let r = check_monitor_soundness(&mutated, &opts);
        assert!(!r.replay_violations.is_empty());
    }

    #[test]
    fn blocked_program_is_vacuous() {
        let m = synthesize_monitor(&HybridProgram::test(Formula::False));
        assert_eq!(m.formula, Formula::False);
        let r = check_monitor_soundness(&m, &SoundnessOptions::default());
        assert!(r.is_clean());
        assert_eq!(r.executions, 0);
    }
}

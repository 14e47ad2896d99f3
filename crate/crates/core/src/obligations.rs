//! Assembly of the real-arithmetic obligations for robustness, safety under
//! perturbation, real-valued implementation safety and liveness.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::hybrid::{eps_name, AngelicPerturbation, EnvelopeModel, HybridError};
use crate::kernel::{fresh_name, post_name, pre_name, Formula, Rational, Term, Valuation};
use crate::monitor::synthesize_monitor;
use crate::nnet::{verify_network, NetworkImpl, OutputBinding};
use crate::solver::fm::Qe;
use crate::solver::{bb_decide, qe_decide_formula, Engine, SolveOptions, SolverError, Status, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ObligationError {
    #[error("symbol `{0}` is neither a state variable nor a declared parameter")]
    MissingParameter(String),
    #[error("implementation does not match the controller: {0}")]
    SignatureMismatch(String),
    #[error("perturbation `{0}` is not a bounded-noise template")]
    TemplateMismatch(String),
    #[error("cannot hide state variable `{0}`")]
    HiddenStateVariable(String),
    #[error("cannot project `{0}`")]
    NotProjectable(String),
    #[error(transparent)]
    Hybrid(#[from] HybridError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ObligationKind {
    Robustness,
    SafetyUnderPerturbation,
    RealValuedSafety,
    Liveness,
}

/// An idealized implementation `impl(x̄, x̄⁺)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Implementation {
    /// `y⁺ = term` for each output `y`, terms over pre-state names.
    ClosedForm { name: String, outputs: Vec<(String, Term)> },
    /// Inputs over pre-state names; the binding names the output variable.
    Network { name: String, network: NetworkImpl },
}

impl Implementation {
    pub fn name(&self) -> &str {
        match self {
            Implementation::ClosedForm { name, .. } | Implementation::Network { name, .. } => name,
        }
    }

    pub fn output_vars(&self) -> Vec<String> {
        match self {
            Implementation::ClosedForm { outputs, .. } => outputs.iter().map(|(y, _)| y.clone()).collect(),
            Implementation::Network { network, .. } => network.output_vars(),
        }
    }

    pub fn substitute(&self, m: &BTreeMap<String, Term>) -> Implementation {
        match self {
            Implementation::ClosedForm { name, outputs } => Implementation::ClosedForm {
                name: name.clone(),
                outputs: outputs
                    .iter()
                    .map(|(y, t)| (y.clone(), t.substitute(m).fold_constants()))
                    .collect(),
            },
            Implementation::Network { name, network } => {
                let mut n = network.clone();
                n.substitute_inputs(m);
                Implementation::Network { name: name.clone(), network: n }
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub model: String,
    pub perturbation: Option<String>,
    pub implementation: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Obligation {
    pub kind: ObligationKind,
    pub formula: Formula,
    /// Variable names of the copies x̄₀..x̄₃ (initial, after the pre
    /// perturbation, after the controller, after the post perturbation).
    pub generations: Vec<Vec<String>>,
    pub provenance: Provenance,
    /// The network implementation relation, when the implementation is a
    /// network (it cannot be written as a term).
    pub network: Option<NetworkImpl>,
    /// The model's precondition over x̄₀, for flagging concrete violations.
    pub precondition: Formula,
    pub state_vars: Vec<String>,
}

/// Tracks the current name of every variable across generations.
struct Namer {
    current: BTreeMap<String, String>,
    taken: BTreeSet<String>,
    generations: Vec<Vec<String>>,
}

impl Namer {
    fn new(taken: BTreeSet<String>) -> Namer {
        Namer {
            current: BTreeMap::new(),
            taken,
            generations: vec![Vec::new()],
        }
    }

    fn name(&self, x: &str) -> String {
        self.current.get(x).cloned().unwrap_or_else(|| x.to_string())
    }

    /// Starts generation `g` for the variables `bound`.
    fn advance(&mut self, bound: &[String], g: usize) -> BTreeMap<String, String> {
        let mut fresh = BTreeMap::new();
        let mut names = Vec::new();
        for x in bound {
            let base = format!("{x}_{g}");
            let n = if self.taken.contains(&base) { fresh_name(&base, &self.taken) } else { base };
            self.taken.insert(n.clone());
            fresh.insert(x.clone(), n.clone());
            names.push(n);
        }
        self.generations.push(names);
        fresh
    }

    /// Instantiates a monitor: pre-state names via `pre`, post copies via
    /// `post`.
    fn instantiate(
        f: &Formula,
        pre: &dyn Fn(&str) -> String,
        post: &BTreeMap<String, String>,
    ) -> Formula {
        let mut m = BTreeMap::new();
        for v in f.free_variables() {
            let target = match pre_name(&v) {
                Some(x) => post.get(x).cloned().unwrap_or_else(|| pre(x)),
                None => pre(&v),
            };
            if target != v {
                m.insert(v, Term::var(target));
            }
        }
        f.substitute(&m)
    }
}

fn all_names(model: &EnvelopeModel, ap: &AngelicPerturbation) -> BTreeSet<String> {
    let mut s: BTreeSet<String> = model.state_vars.iter().cloned().collect();
    s.extend(model.parameters.keys().cloned());
    for hp in [&model.ctl, &ap.pre, &ap.post] {
        for x in hp.all_variables() {
            s.insert(x.clone());
            s.insert(post_name(&x));
        }
    }
    s.extend(model.inv.all_variables());
    s.extend(model.pre.all_variables());
    s
}

/// Every free symbol of the open matrix must be a state variable, a
/// declared parameter or a generated copy.
fn check_parameters(
    model: &EnvelopeModel,
    generations: &[Vec<String>],
    f: &Formula,
) -> Result<(), ObligationError> {
    let mut known: BTreeSet<String> = model.state_vars.iter().cloned().collect();
    known.extend(model.parameters.keys().cloned());
    known.extend(generations.iter().flatten().cloned());
    for v in f.free_variables() {
        if !known.contains(&v) {
            return Err(ObligationError::MissingParameter(v));
        }
    }
    Ok(())
}

struct Stages {
    inv: Formula,
    chi_pre: Formula,
    ctrl_12: Formula,
    chi_post: Formula,
    ctrl_03: Formula,
    namer: Namer,
    /// Stage-1 renaming (current names after the pre perturbation).
    after_pre: BTreeMap<String, String>,
    ctl_post: BTreeMap<String, String>,
    precondition: Formula,
}

fn stages(model: &EnvelopeModel, ap: &AngelicPerturbation) -> Result<Stages, ObligationError> {
    model.validate()?;
    ap.pre.validate()?;
    ap.post.validate()?;
    let params = model.parameter_substitution();
    let mut namer = Namer::new(all_names(model, ap));
    let m_ctl = synthesize_monitor(&model.ctl);
    let m_pre = synthesize_monitor(&ap.pre);
    let m_post = synthesize_monitor(&ap.post);
    let inv = model.inv.clone();
    namer.generations[0] = Vec::new();

    let bound_pre = ap.pre.bound_variables();
    let gen1 = namer.advance(&bound_pre, 1);
    let chi_pre = Namer::instantiate(&m_pre.formula, &|x| x.to_string(), &gen1);
    namer.current.extend(gen1);
    let after_pre = namer.current.clone();

    let bound_ctl = model.ctl.bound_variables();
    let gen2 = namer.advance(&bound_ctl, 2);
    let cur = namer.current.clone();
    let ctrl_12 = Namer::instantiate(&m_ctl.formula, &|x| cur.get(x).cloned().unwrap_or_else(|| x.to_string()), &gen2);
    namer.current.extend(gen2.clone());

    let bound_post = ap.post.bound_variables();
    let gen3 = namer.advance(&bound_post, 3);
    let cur = namer.current.clone();
    let chi_post = Namer::instantiate(&m_post.formula, &|x| cur.get(x).cloned().unwrap_or_else(|| x.to_string()), &gen3);
    namer.current.extend(gen3);

    // χ_ctrl(x̄₀, x̄₃): pre-state at generation 0, post copies at the latest
    // generation of each controller variable.
    let latest: BTreeMap<String, String> =
        bound_ctl.iter().map(|x| (x.clone(), namer.name(x))).collect();
    let ctrl_03 = Namer::instantiate(&m_ctl.formula, &|x| x.to_string(), &latest);

    let subst = |f: &Formula| f.substitute(&params).map_terms(|t| t.fold_constants()).simplify();
    let mut gen0: BTreeSet<String> = model.state_vars.iter().cloned().collect();
    gen0.extend(model.parameters.iter().filter(|(_, v)| v.is_none()).map(|(k, _)| k.clone()));
    namer.generations[0] = gen0.into_iter().collect();
    Ok(Stages {
        inv: subst(&inv),
        chi_pre: subst(&chi_pre),
        ctrl_12: subst(&ctrl_12),
        chi_post: subst(&chi_post),
        ctrl_03: subst(&ctrl_03),
        after_pre: after_pre.clone(),
        ctl_post: gen2,
        precondition: subst(&model.pre),
        namer,
    })
}

/// Quantifies `vars` that occur free in `body`, innermost last.
fn quantify(universal: bool, vars: &[String], body: Formula) -> Formula {
    let fv = body.free_variables();
    let used: Vec<String> = vars.iter().filter(|v| fv.contains(*v)).cloned().collect();
    if universal {
        Formula::forall_all(used, body)
    } else {
        Formula::exists_all(used, body)
    }
}

fn close(body: Formula, inner: &[&[String]]) -> Formula {
    let bound: BTreeSet<&String> = inner.iter().flat_map(|g| g.iter()).collect();
    let outer: Vec<String> = body.free_variables().into_iter().filter(|v| !bound.contains(v)).collect();
    Formula::forall_all(outer, body)
}

/// `∀x̄₀∀x̄₁ (χ_inv(x̄₀) ∧ χ_pre(x̄₀,x̄₁) → ∃x̄₂ (χ_ctrl(x̄₁,x̄₂) ∧ ∀x̄₃ (χ_post(x̄₂,x̄₃) → χ_ctrl(x̄₀,x̄₃))))`.
pub fn build_robustness(
    model: &EnvelopeModel,
    ap: &AngelicPerturbation,
) -> Result<Obligation, ObligationError> {
    let st = stages(model, ap)?;
    let g = &st.namer.generations;
    let inner3 = quantify(true, &g[3], Formula::implies(st.chi_post.clone(), st.ctrl_03.clone()));
    let inner2 = quantify(false, &g[2], Formula::and_all([st.ctrl_12.clone(), inner3]));
    let body = quantify(
        true,
        &g[1],
        Formula::implies(Formula::and_all([st.inv.clone(), st.chi_pre.clone()]), inner2),
    );
    check_parameters(
        model,
        g,
        &Formula::And(vec![st.inv.clone(), st.chi_pre.clone(), st.ctrl_12.clone(), st.chi_post.clone(), st.ctrl_03.clone()]),
    )?;
    let formula = close(body, &[&g[1], &g[2], &g[3]]);
    Ok(Obligation {
        kind: ObligationKind::Robustness,
        formula,
        generations: st.namer.generations.clone(),
        provenance: Provenance {
            model: model.name.clone(),
            perturbation: Some(ap.name.clone()),
            implementation: None,
        },
        network: None,
        precondition: st.precondition,
        state_vars: model.state_vars.clone(),
    })
}

/// Robustness under the identity perturbation.
pub fn build_liveness(model: &EnvelopeModel) -> Result<Obligation, ObligationError> {
    let mut ob = build_robustness(model, &AngelicPerturbation::identity("skip"))?;
    ob.kind = ObligationKind::Liveness;
    ob.provenance.perturbation = None;
    Ok(ob)
}

/// `∀ (χ_inv(x̄₀) ∧ χ_pre(x̄₀,x̄₁) ∧ impl(x̄₁,x̄₂) ∧ χ_post(x̄₂,x̄₃) → χ_ctrl(x̄₀,x̄₃))`.
pub fn build_safety_under_perturbation(
    model: &EnvelopeModel,
    ap: &AngelicPerturbation,
    imp: &Implementation,
) -> Result<Obligation, ObligationError> {
    let st = stages(model, ap)?;
    let ctl_bound = model.ctl.bound_variables();
    let mut outs = imp.output_vars();
    outs.sort();
    let mut expected = ctl_bound.clone();
    expected.sort();
    if outs != expected {
        return Err(ObligationError::SignatureMismatch(format!(
            "implementation outputs {outs:?}, controller binds {expected:?}"
        )));
    }
    let params = model.parameter_substitution();
    let mut rename: BTreeMap<String, Term> = st
        .after_pre
        .iter()
        .map(|(k, v)| (k.clone(), Term::var(v)))
        .collect();
    for (k, v) in params {
        rename.insert(k, v);
    }
    let imp1 = imp.substitute(&rename);
    let (impl_atom, network) = match &imp1 {
        Implementation::ClosedForm { outputs, .. } => (
            Formula::and_all(
                outputs
                    .iter()
                    .map(|(y, t)| Formula::eq(Term::var(st.ctl_post[y].clone()), t.clone())),
            ),
            None,
        ),
        Implementation::Network { network, .. } => {
            let mut n = network.clone();
            n.binding = match &n.binding {
                OutputBinding::Regression { var } => OutputBinding::Regression {
                    var: st.ctl_post[var].clone(),
                },
                OutputBinding::ArgmaxCases { var, actions } => OutputBinding::ArgmaxCases {
                    var: st.ctl_post[var].clone(),
                    actions: actions.clone(),
                },
            };
            (Formula::True, Some(n))
        }
    };
    let body = Formula::implies(
        Formula::and_all([st.inv.clone(), st.chi_pre.clone(), impl_atom, st.chi_post.clone()]),
        st.ctrl_03.clone(),
    );
    let mut fv = body.free_variables();
    if let Some(n) = &network {
        for t in &n.inputs {
            fv.extend(t.free_variables());
        }
        fv.insert(n.binding.var().to_string());
    }
    check_parameters(model, &st.namer.generations, &body)?;
    let formula = Formula::forall_all(fv, body);
    let kind = if ap.pre == crate::hybrid::skip() && ap.post == crate::hybrid::skip() {
        ObligationKind::RealValuedSafety
    } else {
        ObligationKind::SafetyUnderPerturbation
    };
    Ok(Obligation {
        kind,
        formula,
        generations: st.namer.generations.clone(),
        provenance: Provenance {
            model: model.name.clone(),
            perturbation: Some(ap.name.clone()),
            implementation: Some(imp.name().to_string()),
        },
        network,
        precondition: st.precondition,
        state_vars: model.state_vars.clone(),
    })
}

/// `χ_inv(x̄) ∧ impl(x̄, x̄⁺) → χ_ctrl(x̄, x̄⁺)`.
pub fn build_real_valued_safety(
    model: &EnvelopeModel,
    imp: &Implementation,
) -> Result<Obligation, ObligationError> {
    build_safety_under_perturbation(model, &AngelicPerturbation::identity("skip"), imp)
}

/// The reduced forms for bounded input/output noise: inputs `x` are read as
/// `x + ε_x`, outputs `y⁺` are perturbed to `y⁺ + ε_y`. Without an
/// implementation this is the robustness form
/// `∀x̄ ∀ε_in ∃ȳ⁺ ∀ε_out (χ_inv ∧ |ε_in| ≤ δ → χ_ctrl(x̄+ε_in, ȳ⁺) ∧ (|ε_out| ≤ δ → χ_ctrl(x̄, ȳ⁺+ε_out)))`;
/// with one it is the universal form with `ȳ⁺ = impl(x̄+ε_in)` as premise.
pub fn build_simplified_bounded(
    model: &EnvelopeModel,
    delta_in: &BTreeMap<String, Term>,
    delta_out: &BTreeMap<String, Term>,
    imp: Option<&Implementation>,
) -> Result<Obligation, ObligationError> {
    model.validate()?;
    let params = model.parameter_substitution();
    let subst = |f: &Formula| f.substitute(&params).map_terms(|t| t.fold_constants()).simplify();
    let m = synthesize_monitor(&model.ctl);
    let bound = model.ctl.bound_variables();
    for y in delta_out.keys() {
        if !bound.contains(y) {
            return Err(ObligationError::TemplateMismatch(format!("output `{y}` is not bound by the controller")));
        }
    }
    let bounds = |x: &str, d: &Term| {
        let e = Term::var(eps_name(x));
        let d = d.substitute(&params).fold_constants();
        Formula::and_all([Formula::le(d.clone().neg(), e.clone()), Formula::le(e, d)])
    };
    let eps_in: Vec<String> = delta_in.keys().map(|x| eps_name(x)).collect();
    let eps_out: Vec<String> = delta_out.keys().map(|x| eps_name(x)).collect();
    let in_bounds = Formula::and_all(delta_in.iter().map(|(x, d)| bounds(x, d)));
    let out_bounds = Formula::and_all(delta_out.iter().map(|(x, d)| bounds(x, d)));
    let perturbed_in: BTreeMap<String, Term> = delta_in
        .keys()
        .map(|x| (x.clone(), Term::var(x).add(Term::var(eps_name(x)))))
        .collect();
    let ctrl_in = m.formula.substitute(&perturbed_in);
    let perturbed_out: BTreeMap<String, Term> = delta_out
        .keys()
        .map(|y| (post_name(y), Term::var(post_name(y)).add(Term::var(eps_name(y)))))
        .collect();
    let ctrl_out = m.formula.substitute(&perturbed_out);
    let posts: Vec<String> = bound.iter().map(|y| post_name(y)).collect();
    let inv = subst(&model.inv);
    let (kind, formula, network) = match imp {
        None => {
            let inner = quantify(
                true,
                &eps_out,
                Formula::implies(out_bounds, subst(&ctrl_out)),
            );
            let ex = quantify(false, &posts, Formula::and_all([subst(&ctrl_in), inner]));
            let body = quantify(true, &eps_in, Formula::implies(Formula::and_all([inv, in_bounds]), ex));
            let mut bound_all = eps_in.clone();
            bound_all.extend(posts.clone());
            bound_all.extend(eps_out.clone());
            (ObligationKind::Robustness, close(body, &[&bound_all]), None)
        }
        Some(imp) => {
            let mut sub = perturbed_in.clone();
            sub.extend(params.clone());
            let imp = imp.substitute(&sub);
            let (atom, network) = match &imp {
                Implementation::ClosedForm { outputs, .. } => (
                    Formula::and_all(outputs.iter().map(|(y, t)| Formula::eq(Term::var(post_name(y)), t.clone()))),
                    None,
                ),
                Implementation::Network { network, .. } => {
                    let mut n = network.clone();
                    let var = post_name(n.binding.var());
                    n.binding = match &n.binding {
                        OutputBinding::Regression { .. } => OutputBinding::Regression { var },
                        OutputBinding::ArgmaxCases { actions, .. } => OutputBinding::ArgmaxCases {
                            var,
                            actions: actions.clone(),
                        },
                    };
                    (Formula::True, Some(n))
                }
            };
            let body = Formula::implies(
                Formula::and_all([inv, in_bounds, atom, out_bounds]),
                subst(&ctrl_out),
            );
            let mut fv = body.free_variables();
            if let Some(n) = &network {
                for t in &n.inputs {
                    fv.extend(t.free_variables());
                }
                fv.insert(n.binding.var().to_string());
            }
            (ObligationKind::SafetyUnderPerturbation, Formula::forall_all(fv, body), network)
        }
    };
    Ok(Obligation {
        kind,
        formula,
        generations: vec![model.state_vars.clone(), eps_in, posts, eps_out],
        provenance: Provenance {
            model: model.name.clone(),
            perturbation: Some("bounded".into()),
            implementation: imp.map(|i| i.name().to_string()),
        },
        network,
        precondition: subst(&model.pre),
        state_vars: model.state_vars.clone(),
    })
}

/// [`build_simplified_bounded`] for a perturbation built from the bounded
/// template.
pub fn build_simplified_from(
    model: &EnvelopeModel,
    ap: &AngelicPerturbation,
    imp: Option<&Implementation>,
) -> Result<Obligation, ObligationError> {
    let (ins, outs) = ap
        .bounded_template()
        .ok_or_else(|| ObligationError::TemplateMismatch(ap.name.clone()))?;
    let mut ob = build_simplified_bounded(
        model,
        &ins.into_iter().collect(),
        &outs.into_iter().collect(),
        imp,
    )?;
    ob.provenance.perturbation = Some(ap.name.clone());
    Ok(ob)
}

/// Removes perturbation-internal variables: through a defining equality
/// where one exists, otherwise by eliminating them from the premise they
/// occur in. `hidden` are base names; every generation copy is removed.
pub fn project_auxiliaries(
    ob: &Obligation,
    hidden: &BTreeSet<String>,
) -> Result<Obligation, ObligationError> {
    for h in hidden {
        if ob.state_vars.contains(h) {
            return Err(ObligationError::HiddenStateVariable(h.clone()));
        }
    }
    let is_hidden = |v: &str| {
        hidden.contains(v)
            || hidden.iter().any(|h| {
                v.strip_prefix(h.as_str())
                    .and_then(|r| r.strip_prefix('_'))
                    .is_some_and(|g| g.trim_end_matches('\'').chars().all(|c| c.is_ascii_digit()) && !g.is_empty())
            })
    };
    let mut f = ob.formula.clone();
    loop {
        let target = bound_names(&f).into_iter().find(|v| is_hidden(v));
        let Some(h) = target else { break };
        f = project_one(&f, &h)?;
    }
    let mut out = ob.clone();
    out.formula = f;
    for g in out.generations.iter_mut() {
        g.retain(|v| !is_hidden(v));
    }
    Ok(out)
}

fn bound_names(f: &Formula) -> Vec<String> {
    let mut out = Vec::new();
    fn go(f: &Formula, out: &mut Vec<String>) {
        match f {
            Formula::Forall(x, b) | Formula::Exists(x, b) => {
                out.push(x.clone());
                go(b, out);
            }
            Formula::Not(a) => go(a, out),
            Formula::And(v) | Formula::Or(v) => v.iter().for_each(|g| go(g, out)),
            Formula::Implies(a, b) | Formula::Iff(a, b) => {
                go(a, out);
                go(b, out);
            }
            _ => {}
        }
    }
    go(f, &mut out);
    out
}

fn project_one(f: &Formula, h: &str) -> Result<Formula, ObligationError> {
    let rec = |g: &Formula| project_one(g, h);
    Ok(match f {
        Formula::Forall(x, body) if x == h => {
            let mut body = body.as_ref().clone();
            // Skip over the rest of a universal block.
            let mut block = Vec::new();
            while let Formula::Forall(y, b) = body {
                block.push(y);
                body = *b;
            }
            let projected = match &body {
                Formula::Implies(a, c) => {
                    let conj = a.conjuncts();
                    if let Some((i, t)) = definition_in(&conj, h) {
                        let mut rest = conj.clone();
                        rest.remove(i);
                        let m = BTreeMap::from([(h.to_string(), t)]);
                        Formula::implies(Formula::and_all(rest), c.as_ref().clone()).substitute(&m)
                    } else if !c.mentions(h) {
                        let ex = Qe::new()
                            .eliminate(&Formula::exists(h, a.as_ref().clone()))
                            .map_err(|_| ObligationError::NotProjectable(h.to_string()))?;
                        Formula::implies(ex.to_formula(), c.as_ref().clone())
                    } else {
                        return Err(ObligationError::NotProjectable(h.to_string()));
                    }
                }
                b if !b.mentions(h) => b.clone(),
                _ => return Err(ObligationError::NotProjectable(h.to_string())),
            };
            Formula::forall_all(block, projected)
        }
        Formula::Exists(x, body) if x == h => {
            let conj = body.conjuncts();
            if let Some((i, t)) = definition_in(&conj, h) {
                let mut rest = conj.clone();
                rest.remove(i);
                let m = BTreeMap::from([(h.to_string(), t)]);
                Formula::and_all(rest).substitute(&m)
            } else {
                Qe::new()
                    .eliminate(f)
                    .map_err(|_| ObligationError::NotProjectable(h.to_string()))?
                    .to_formula()
            }
        }
        Formula::Forall(x, b) => Formula::forall(x.clone(), rec(b)?),
        Formula::Exists(x, b) => Formula::exists(x.clone(), rec(b)?),
        Formula::Not(a) => Formula::not(rec(a)?),
        Formula::And(v) => Formula::and_all(v.iter().map(rec).collect::<Result<Vec<_>, _>>()?),
        Formula::Or(v) => Formula::or_all(v.iter().map(rec).collect::<Result<Vec<_>, _>>()?),
        Formula::Implies(a, b) => Formula::implies(rec(a)?, rec(b)?),
        Formula::Iff(a, b) => Formula::iff(rec(a)?, rec(b)?),
        other => other.clone(),
    })
}

/// A conjunct `h = t` or `t = h` with `t` free of `h`.
fn definition_in(conj: &[Formula], h: &str) -> Option<(usize, Term)> {
    conj.iter().enumerate().find_map(|(i, c)| match c {
        Formula::Cmp(a, crate::kernel::Rel::Eq, b) => {
            if a.as_var() == Some(h) && !b.mentions(h) {
                Some((i, b.clone()))
            } else if b.as_var() == Some(h) && !a.mentions(h) {
                Some((i, a.clone()))
            } else {
                None
            }
        }
        _ => None,
    })
}

/// A verdict plus whether a counterexample satisfies the model's
/// precondition (and so is a concrete violation rather than a failure of
/// the sufficient criterion).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Decision {
    pub verdict: Verdict,
    pub concrete_violation: Option<bool>,
    pub engine: &'static str,
}

/// Routes an obligation: networks to the network verifier, linear
/// formulas to QE, the rest to interval branch-and-bound.
pub fn decide(ob: &Obligation, opts: &SolveOptions) -> Result<Decision, SolverError> {
    let (verdict, engine) = if let Some(n) = &ob.network {
        (verify_network(&ob.formula, n, opts)?, "network")
    } else {
        match opts.engine {
            Engine::Qe => (qe_decide_formula(&ob.formula, opts.deadline())?, "qe"),
            Engine::Bb => (bb_decide(&ob.formula, opts)?, "bb"),
            Engine::Auto => match qe_decide_formula(&ob.formula, opts.deadline()) {
                Ok(v) => (v, "qe"),
                Err(SolverError::NonlinearAtom(_)) => (bb_decide(&ob.formula, opts)?, "bb"),
                Err(SolverError::Timeout) => (
                    Verdict {
                        status: Status::Unknown("timeout".into()),
                        stats: Default::default(),
                    },
                    "qe",
                ),
                Err(SolverError::ResourceLimit(n)) => (
                    Verdict {
                        status: Status::Unknown(format!("resource limit: {n} atoms")),
                        stats: Default::default(),
                    },
                    "qe",
                ),
                Err(e) => return Err(e),
            },
        }
    };
    let concrete_violation = verdict.counterexample().map(|c| satisfies(&ob.precondition, c));
    Ok(Decision {
        verdict,
        concrete_violation,
        engine,
    })
}

fn satisfies(f: &Formula, s: &Valuation) -> bool {
    f.evaluate(s).unwrap_or(false)
}

/// Parameter bindings as a valuation (symbolic ones are skipped).
pub fn parameter_valuation(model: &EnvelopeModel) -> Valuation {
    model
        .parameters
        .iter()
        .filter_map(|(k, v)| v.clone().map(|v| (k.clone(), v)))
        .collect()
}

/// Convenience for a single rational parameter override.
pub fn with_params(model: &EnvelopeModel, params: &[(&str, Rational)]) -> EnvelopeModel {
    params
        .iter()
        .fold(model.clone(), |m, (k, v)| m.with_parameter(k, v.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::HybridProgram;
    use crate::kernel::{parse_formula, parse_term, q};

    fn robot(ctl: &str, inv: &str) -> EnvelopeModel {
        EnvelopeModel {
            name: "robot".into(),
            pre: parse_formula(inv).unwrap(),
            post: parse_formula("p >= 0").unwrap(),
            inv: parse_formula(inv).unwrap(),
            ctl: HybridProgram::parse(ctl).unwrap(),
            parameters: [
                ("T", Some(q("1"))),
                ("Vmax", Some(q("10"))),
                ("W", Some(q("100"))),
                ("dv", Some(q("1/4"))),
                ("dp", Some(q("1/4"))),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
            state_vars: vec!["p".into(), "v".into()],
            notes: String::new(),
        }
    }

    const C11: &str = "v := *; ?(0 <= v & v <= Vmax & T*v <= p)";
    const C12: &str = "v := *; ?(-Vmax <= v & v <= Vmax & 0 <= p - T*v)";
    const INV1: &str = "p >= 0 & Vmax >= 0 & T > 0";

    fn angel1() -> AngelicPerturbation {
        AngelicPerturbation::output_noise("a1", "v", Term::var("dv"))
    }

    fn angel2() -> AngelicPerturbation {
        AngelicPerturbation::input_output_noise("a2", "p", Term::var("dp"), "v", Term::var("dv"))
    }

    fn decide_qe(ob: &Obligation) -> Verdict {
        qe_decide_formula(&ob.formula, None).unwrap()
    }

    #[test]
    fn robustness_verdicts() {
        let ob = build_robustness(&robot(C11, INV1), &angel1()).unwrap();
        assert_eq!(ob.kind, ObligationKind::Robustness);
        let v = decide_qe(&ob);
        assert_eq!(v.counterexample().unwrap().get("p"), Some(&q("0")));
        let ob = build_robustness(&robot(C12, INV1), &angel2()).unwrap();
        assert!(decide_qe(&ob).is_proven());
    }

    #[test]
    fn liveness() {
        assert!(decide_qe(&build_liveness(&robot(C11, INV1)).unwrap()).is_proven());
        let stuck = robot("?(false)", INV1);
        assert!(decide_qe(&build_liveness(&stuck).unwrap()).counterexample().is_some());
    }

    #[test]
    fn closed_form_safety_reduces_to_real_valued_shape() {
        let imp = Implementation::ClosedForm {
            name: "impl".into(),
            outputs: vec![("v".into(), parse_term("-1/(0.01*(p+10)) + 10").unwrap())],
        };
        let ob = build_real_valued_safety(&robot(C11, INV1), &imp).unwrap();
        assert_eq!(ob.kind, ObligationKind::RealValuedSafety);
        let expect = parse_formula(
            "\\forall p \\forall v_2 (p >= 0 & v_2 = -1/(1/100*(p+10)) + 10 -> 0 <= v_2 & v_2 <= 10 & v_2 <= p)",
        )
        .unwrap();
        let got = ob.formula.map_terms(|t| t.fold_constants()).normalize();
        assert_eq!(got, expect.map_terms(|t| t.fold_constants()).normalize());
    }

    #[test]
    fn signature_and_parameter_errors() {
        let imp = Implementation::ClosedForm {
            name: "bad".into(),
            outputs: vec![("w".into(), Term::int(0))],
        };
        assert!(matches!(
            build_safety_under_perturbation(&robot(C11, INV1), &angel1(), &imp),
            Err(ObligationError::SignatureMismatch(_))
        ));
        let ap = AngelicPerturbation::output_noise("a", "v", Term::var("unknown"));
        assert!(matches!(
            build_robustness(&robot(C11, INV1), &ap),
            Err(ObligationError::MissingParameter(x)) if x == "unknown"
        ));
    }

    #[test]
    fn projection_keeps_verdict() {
        let ob = build_robustness(&robot(C12, INV1), &angel2()).unwrap();
        let hidden: BTreeSet<String> = ["p_prev".to_string()].into();
        let pr = project_auxiliaries(&ob, &hidden).unwrap();
        assert!(!pr.formula.all_variables().iter().any(|v| v.starts_with("p_prev")));
        assert_eq!(decide_qe(&pr).is_proven(), decide_qe(&ob).is_proven());
        assert_eq!(project_auxiliaries(&ob, &BTreeSet::new()).unwrap().formula, ob.formula);
        assert!(matches!(
            project_auxiliaries(&ob, &["p".to_string()].into()),
            Err(ObligationError::HiddenStateVariable(_))
        ));
    }

    #[test]
    fn simplified_matches_full() {
        let model = robot(C12, INV1);
        for ap in [angel1(), angel2()] {
            let full = decide_qe(&build_robustness(&model, &ap).unwrap());
            let simple = decide_qe(&build_simplified_from(&model, &ap, None).unwrap());
            assert_eq!(full.is_proven(), simple.is_proven());
        }
    }
}

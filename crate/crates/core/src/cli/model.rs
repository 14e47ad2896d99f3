//! The `.gdm` model format.
//!
//! ```text
//! model robot;
//! param T = 1;            # `param x;` leaves x symbolic
//! state p, v;
//! pre p >= 0 & T > 0;
//! post p >= 0;
//! invariant p >= 0 & T > 0;
//! pre for C22: p >= 0 & p <= W;       # per-controller overrides
//! ctl C11 { v := *; ?(0 <= v & T*v <= p) }
//! angel a1 { pre { skip } post { eps_v := *; ?(-dv <= eps_v & eps_v <= dv); v := v + eps_v } }
//! angel a2 bounded { in p: dp; out v: dv; }
//! impl f closed { v+ := M - 1/(0.01*(p+10)) }
//! impl g network "net.nnet" inputs (p, v) outputs regression v;
//! impl h network "cls.nnet" inputs (p, v) outputs argmax v { -2, 0, 2 };
//! domain D { p in [0, 100]; v in [-10, 10]; }
//! pipeline full { ctl C11; angel a1; impl f; domain D; target 1/4; }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::hybrid::{parse_program, skip, AngelicPerturbation, EnvelopeModel, HybridError, HybridProgram};
use crate::kernel::parse::{Parser, Tok};
use crate::kernel::{pre_name, Formula, ParseError, Rational, Term};
use crate::nnet::{load_network, NetworkImpl, NnetError, OutputBinding};
use crate::obligations::Implementation;
use crate::solver::interval::{IBox, Interval};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parse error at {0}")]
    Parse(#[from] ParseError),
    #[error("{line}:{col}: unresolved {kind} `{name}`")]
    UnresolvedName {
        kind: &'static str,
        name: String,
        line: usize,
        col: usize,
    },
    #[error("{line}:{col}: duplicate {kind} `{name}`")]
    Duplicate {
        kind: &'static str,
        name: String,
        line: usize,
        col: usize,
    },
    #[error("cannot read `{path}`: {reason}")]
    Io { path: String, reason: String },
    #[error("network `{name}`: {source}")]
    Network { name: String, source: NnetError },
    #[error("controller `{name}`: {source}")]
    Hybrid { name: String, source: HybridError },
    #[error("parameter `{0}` is not declared")]
    UnknownParameter(String),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub pre: Option<Formula>,
    pub post: Option<Formula>,
    pub invariant: Option<Formula>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ImplDecl {
    Closed(Vec<(String, Term)>),
    Network {
        path: PathBuf,
        inputs: Vec<Term>,
        binding: OutputBinding,
    },
}

/// A named choice of stages for [`super::run_pipeline`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Selections {
    pub ctl: String,
    pub angel: String,
    pub implementation: Option<String>,
    pub domain: Option<String>,
    /// Error budget for tuning; defaults to the perturbation's output bound.
    pub target: Option<Rational>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Named<T> {
    pub name: String,
    pub line: usize,
    pub col: usize,
    pub value: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub name: String,
    pub params: BTreeMap<String, Option<Rational>>,
    pub state: Vec<String>,
    pub pre: Formula,
    pub post: Formula,
    pub invariant: Formula,
    pub overrides: BTreeMap<String, Overrides>,
    pub ctls: Vec<Named<HybridProgram>>,
    pub angels: Vec<Named<AngelicPerturbation>>,
    pub impls: Vec<Named<ImplDecl>>,
    pub domains: Vec<Named<IBox>>,
    pub pipelines: Vec<Named<Selections>>,
    /// Directory that relative network paths resolve against.
    pub base_dir: PathBuf,
}

fn find<'a, T>(v: &'a [Named<T>], name: &str) -> Option<&'a Named<T>> {
    v.iter().find(|n| n.name == name)
}

fn unresolved(kind: &'static str, name: &str) -> ModelError {
    ModelError::UnresolvedName {
        kind,
        name: name.to_string(),
        line: 0,
        col: 0,
    }
}

impl ModelFile {
    pub fn ctl(&self, name: &str) -> Result<&HybridProgram, ModelError> {
        find(&self.ctls, name).map(|n| &n.value).ok_or_else(|| unresolved("controller", name))
    }

    pub fn perturbation(&self, name: &str) -> Result<&AngelicPerturbation, ModelError> {
        find(&self.angels, name).map(|n| &n.value).ok_or_else(|| unresolved("perturbation", name))
    }

    pub fn domain(&self, name: &str) -> Result<&IBox, ModelError> {
        find(&self.domains, name).map(|n| &n.value).ok_or_else(|| unresolved("domain", name))
    }

    pub fn pipeline(&self, name: &str) -> Result<&Selections, ModelError> {
        find(&self.pipelines, name).map(|n| &n.value).ok_or_else(|| unresolved("pipeline", name))
    }

    /// The envelope for one controller, with its overrides applied.
    pub fn envelope(&self, ctl: &str) -> Result<EnvelopeModel, ModelError> {
        let hp = self.ctl(ctl)?.clone();
        let o = self.overrides.get(ctl).cloned().unwrap_or_default();
        let m = EnvelopeModel {
            name: ctl.to_string(),
            pre: o.pre.unwrap_or_else(|| self.pre.clone()),
            post: o.post.unwrap_or_else(|| self.post.clone()),
            inv: o.invariant.unwrap_or_else(|| self.invariant.clone()),
            ctl: hp,
            parameters: self.params.clone(),
            state_vars: self.state.clone(),
            notes: String::new(),
        };
        m.validate().map_err(|source| ModelError::Hybrid {
            name: ctl.to_string(),
            source,
        })?;
        Ok(m)
    }

    /// Resolves an implementation, loading network files on demand.
    pub fn implementation(&self, name: &str) -> Result<Implementation, ModelError> {
        let d = find(&self.impls, name).ok_or_else(|| unresolved("implementation", name))?;
        Ok(match &d.value {
            ImplDecl::Closed(outputs) => Implementation::ClosedForm {
                name: name.to_string(),
                outputs: outputs.clone(),
            },
            ImplDecl::Network { path, inputs, binding } => {
                let full = self.base_dir.join(path);
                let net = load_network(&full).map_err(|source| ModelError::Network {
                    name: name.to_string(),
                    source,
                })?;
                Implementation::Network {
                    name: name.to_string(),
                    network: NetworkImpl {
                        net: Arc::new(net),
                        inputs: inputs.clone(),
                        binding: binding.clone(),
                    },
                }
            }
        })
    }

    /// Network file paths referenced by implementations.
    pub fn network_paths(&self) -> Vec<PathBuf> {
        self.impls
            .iter()
            .filter_map(|d| match &d.value {
                ImplDecl::Network { path, .. } => Some(self.base_dir.join(path)),
                _ => None,
            })
            .collect()
    }

    pub fn set_param(&mut self, name: &str, value: Rational) -> Result<(), ModelError> {
        match self.params.get_mut(name) {
            Some(slot) => {
                *slot = Some(value);
                Ok(())
            }
            None => Err(ModelError::UnknownParameter(name.to_string())),
        }
    }

    pub fn param(&self, name: &str) -> Option<&Rational> {
        self.params.get(name).and_then(|v| v.as_ref())
    }
}

pub fn parse_model(path: &Path) -> Result<ModelFile, ModelError> {
    let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut m = parse_model_str(&text, &dir)?;
    if m.name.is_empty() {
        m.name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    }
    Ok(m)
}

fn constant(p: &Parser, t: Term) -> Result<Rational, ParseError> {
    t.fold_constants().as_const().cloned().ok_or_else(|| p.error("a constant"))
}

fn braced_program(p: &mut Parser) -> Result<HybridProgram, ParseError> {
    p.expect_sym("{")?;
    if p.eat_sym("}") {
        return Ok(skip());
    }
    let hp = parse_program(p)?;
    p.expect_sym("}")?;
    Ok(hp)
}

struct Decl {
    line: usize,
    col: usize,
}

fn named<T>(name: String, at: &Decl, value: T) -> Named<T> {
    Named {
        name,
        line: at.line,
        col: at.col,
        value,
    }
}

pub fn parse_model_str(src: &str, base_dir: &Path) -> Result<ModelFile, ModelError> {
    let mut p = Parser::new(src)?;
    let mut name = String::new();
    let mut params = BTreeMap::new();
    let mut state = Vec::new();
    let (mut pre, mut post, mut inv) = (None, None, None);
    let mut overrides: BTreeMap<String, Overrides> = BTreeMap::new();
    let mut override_refs: Vec<(String, Decl)> = Vec::new();
    let mut ctls: Vec<Named<HybridProgram>> = Vec::new();
    let mut angels: Vec<Named<AngelicPerturbation>> = Vec::new();
    let mut impls: Vec<Named<ImplDecl>> = Vec::new();
    let mut domains: Vec<Named<IBox>> = Vec::new();
    let mut pipelines: Vec<Named<Selections>> = Vec::new();
    if p.at_eof() {
        return Err(p.error("a declaration").into());
    }
    while !p.at_eof() {
        let (line, col) = p.position();
        let at = Decl { line, col };
        let dup = |kind: &'static str, n: &str| ModelError::Duplicate {
            kind,
            name: n.to_string(),
            line,
            col,
        };
        let kw = p.expect_ident()?;
        match kw.as_str() {
            "model" => {
                name = p.expect_ident()?;
                p.expect_sym(";")?;
            }
            "param" => loop {
                let x = p.expect_ident()?;
                let v = if p.eat_sym("=") {
                    let t = p.term()?;
                    Some(constant(&p, t)?)
                } else {
                    None
                };
                if params.insert(x.clone(), v).is_some() {
                    return Err(dup("parameter", &x));
                }
                if p.eat_sym(";") {
                    break;
                }
                p.expect_sym(",")?;
            },
            "state" => loop {
                let x = p.expect_ident()?;
                if state.contains(&x) {
                    return Err(dup("state variable", &x));
                }
                state.push(x);
                if p.eat_sym(";") {
                    break;
                }
                p.expect_sym(",")?;
            },
            "pre" | "post" | "invariant" => {
                let target = if p.at_keyword("for") && matches!(p.peek_at(2), Tok::Sym(":")) {
                    p.bump();
                    let c = p.expect_ident()?;
                    p.expect_sym(":")?;
                    Some(c)
                } else {
                    None
                };
                let f = p.formula()?;
                p.expect_sym(";")?;
                let slot = match &target {
                    Some(c) => {
                        override_refs.push((c.clone(), Decl { line, col }));
                        let o = overrides.entry(c.clone()).or_default();
                        match kw.as_str() {
                            "pre" => &mut o.pre,
                            "post" => &mut o.post,
                            _ => &mut o.invariant,
                        }
                    }
                    None => match kw.as_str() {
                        "pre" => &mut pre,
                        "post" => &mut post,
                        _ => &mut inv,
                    },
                };
                if slot.is_some() {
                    return Err(dup(if kw == "invariant" { "invariant" } else { "condition" }, &kw));
                }
                *slot = Some(f);
            }
            "ctl" => {
                let n = p.expect_ident()?;
                if find(&ctls, &n).is_some() {
                    return Err(dup("controller", &n));
                }
                let hp = braced_program(&mut p)?;
                ctls.push(named(n, &at, hp));
            }
            "angel" => {
                let n = p.expect_ident()?;
                if find(&angels, &n).is_some() {
                    return Err(dup("perturbation", &n));
                }
                let ap = if p.eat_keyword("bounded") {
                    p.expect_sym("{")?;
                    let (mut ins, mut outs) = (Vec::new(), Vec::new());
                    while !p.eat_sym("}") {
                        let dir = p.expect_ident()?;
                        let x = p.expect_ident()?;
                        p.expect_sym(":")?;
                        let d = p.term()?;
                        p.expect_sym(";")?;
                        match dir.as_str() {
                            "in" => ins.push((x, d)),
                            "out" => outs.push((x, d)),
                            _ => return Err(p.error("`in` or `out`").into()),
                        }
                    }
                    AngelicPerturbation::bounded(n.clone(), &ins, &outs)
                } else {
                    p.expect_sym("{")?;
                    let (mut a_pre, mut a_post) = (skip(), skip());
                    while !p.eat_sym("}") {
                        if p.eat_keyword("pre") {
                            a_pre = braced_program(&mut p)?;
                        } else if p.eat_keyword("post") {
                            a_post = braced_program(&mut p)?;
                        } else {
                            return Err(p.error("`pre` or `post`").into());
                        }
                    }
                    AngelicPerturbation {
                        name: n.clone(),
                        pre: a_pre,
                        post: a_post,
                    }
                };
                angels.push(named(n, &at, ap));
            }
            "impl" => {
                let n = p.expect_ident()?;
                if find(&impls, &n).is_some() {
                    return Err(dup("implementation", &n));
                }
                let d = if p.eat_keyword("closed") {
                    p.expect_sym("{")?;
                    let mut outs = Vec::new();
                    while !p.eat_sym("}") {
                        let y = p.expect_ident()?;
                        let base = pre_name(&y).ok_or_else(|| p.error("a post-state variable like `v+`"))?;
                        let base = base.to_string();
                        p.expect_sym(":=")?;
                        outs.push((base, p.term()?));
                        if !p.eat_sym(";") && !p.at_sym("}") {
                            return Err(p.error("`;` or `}`").into());
                        }
                    }
                    ImplDecl::Closed(outs)
                } else {
                    p.expect_keyword("network")?;
                    let path = PathBuf::from(p.expect_string()?);
                    p.expect_keyword("inputs")?;
                    p.expect_sym("(")?;
                    let mut inputs = vec![p.term()?];
                    while p.eat_sym(",") {
                        inputs.push(p.term()?);
                    }
                    p.expect_sym(")")?;
                    p.expect_keyword("outputs")?;
                    let binding = if p.eat_keyword("regression") {
                        OutputBinding::Regression { var: p.expect_ident()? }
                    } else if p.eat_keyword("argmax") {
                        let var = p.expect_ident()?;
                        p.expect_sym("{")?;
                        let mut actions = vec![p.term()?];
                        while p.eat_sym(",") {
                            actions.push(p.term()?);
                        }
                        p.expect_sym("}")?;
                        OutputBinding::ArgmaxCases { var, actions }
                    } else {
                        return Err(p.error("`regression` or `argmax`").into());
                    };
                    p.expect_sym(";")?;
                    ImplDecl::Network { path, inputs, binding }
                };
                impls.push(named(n, &at, d));
            }
            "domain" => {
                let n = p.expect_ident()?;
                if find(&domains, &n).is_some() {
                    return Err(dup("domain", &n));
                }
                p.expect_sym("{")?;
                let mut b = IBox::new();
                while !p.eat_sym("}") {
                    let x = p.expect_ident()?;
                    p.expect_keyword("in")?;
                    p.expect_sym("[")?;
                    let lo = p.term()?;
                    let lo = constant(&p, lo)?;
                    p.expect_sym(",")?;
                    let hi = p.term()?;
                    let hi = constant(&p, hi)?;
                    if lo > hi {
                        return Err(p.error("a nonempty interval").into());
                    }
                    p.expect_sym("]")?;
                    p.expect_sym(";")?;
                    b.insert(x, Interval::new(lo, hi));
                }
                domains.push(named(n, &at, b));
            }
            "pipeline" => {
                let n = p.expect_ident()?;
                if find(&pipelines, &n).is_some() {
                    return Err(dup("pipeline", &n));
                }
                p.expect_sym("{")?;
                let mut s = Selections::default();
                while !p.eat_sym("}") {
                    let key = p.expect_ident()?;
                    match key.as_str() {
                        "ctl" => s.ctl = p.expect_ident()?,
                        "angel" => s.angel = p.expect_ident()?,
                        "impl" => s.implementation = Some(p.expect_ident()?),
                        "domain" => s.domain = Some(p.expect_ident()?),
                        "target" => {
                            let t = p.term()?;
                            s.target = Some(constant(&p, t)?);
                        }
                        _ => return Err(p.error("`ctl`, `angel`, `impl`, `domain` or `target`").into()),
                    }
                    p.expect_sym(";")?;
                }
                pipelines.push(named(n, &at, s));
            }
            _ => {
                return Err(ParseError {
                    line,
                    col,
                    expected: "a declaration".into(),
                    found: format!("`{kw}`"),
                }
                .into())
            }
        }
    }
    let missing = |what: &str| p.error(format!("a `{what}` declaration"));
    let invariant = inv.ok_or_else(|| missing("invariant"))?;
    let m = ModelFile {
        name,
        params,
        state,
        pre: pre.ok_or_else(|| missing("pre"))?,
        post: post.ok_or_else(|| missing("post"))?,
        invariant,
        overrides,
        ctls,
        angels,
        impls,
        domains,
        pipelines,
        base_dir: base_dir.to_path_buf(),
    };
    resolve(&m, &override_refs)?;
    Ok(m)
}

fn resolve(m: &ModelFile, override_refs: &[(String, Decl)]) -> Result<(), ModelError> {
    let un = |kind, name: &str, line, col| ModelError::UnresolvedName {
        kind,
        name: name.to_string(),
        line,
        col,
    };
    for (c, d) in override_refs {
        if find(&m.ctls, c).is_none() {
            return Err(un("controller", c, d.line, d.col));
        }
    }
    let known: BTreeSet<&str> = m.state.iter().chain(m.params.keys()).map(String::as_str).collect();
    let check_vars = |vars: BTreeSet<String>, line, col| -> Result<(), ModelError> {
        match vars.iter().find(|v| !known.contains(v.as_str())) {
            Some(v) => Err(un("variable", v, line, col)),
            None => Ok(()),
        }
    };
    let mut formulas = vec![&m.pre, &m.post, &m.invariant];
    for o in m.overrides.values() {
        formulas.extend(o.pre.iter().chain(&o.post).chain(&o.invariant));
    }
    for f in formulas {
        check_vars(f.free_variables(), 0, 0)?;
    }
    for c in &m.ctls {
        check_vars(c.value.free_variables(), c.line, c.col)?;
    }
    for a in &m.angels {
        let bound: BTreeSet<String> = a.value.pre.bound_variables().into_iter().collect();
        let mut fv = a.value.pre.free_variables();
        fv.extend(a.value.post.free_variables().into_iter().filter(|x| !bound.contains(x)));
        check_vars(fv, a.line, a.col)?;
    }
    for i in &m.impls {
        match &i.value {
            ImplDecl::Closed(outs) => {
                for (y, t) in outs {
                    check_vars(t.free_variables(), i.line, i.col)?;
                    if !m.state.contains(y) {
                        return Err(un("state variable", y, i.line, i.col));
                    }
                }
            }
            ImplDecl::Network { inputs, binding, .. } => {
                for t in inputs {
                    check_vars(t.free_variables(), i.line, i.col)?;
                }
                if !m.state.iter().any(|s| s == binding.var()) {
                    return Err(un("state variable", binding.var(), i.line, i.col));
                }
            }
        }
    }
    for d in &m.domains {
        for x in d.value.vars() {
            if !m.state.contains(x) {
                return Err(un("state variable", x, d.line, d.col));
            }
        }
    }
    for pl in &m.pipelines {
        let s = &pl.value;
        if find(&m.ctls, &s.ctl).is_none() {
            return Err(un("controller", &s.ctl, pl.line, pl.col));
        }
        if find(&m.angels, &s.angel).is_none() {
            return Err(un("perturbation", &s.angel, pl.line, pl.col));
        }
        if let Some(i) = &s.implementation {
            if find(&m.impls, i).is_none() {
                return Err(un("implementation", i, pl.line, pl.col));
            }
        }
        if let Some(d) = &s.domain {
            if find(&m.domains, d).is_none() {
                return Err(un("domain", d, pl.line, pl.col));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::q;

    const SMALL: &str = r#"
        param T = 1; param Vmax = 10; param dv = 1/4;
        state p, v;
        pre p >= 0; post p >= 0; invariant p >= 0;
        ctl C { v := *; ?(0 <= v & v <= Vmax & T*v <= p) }
        angel a { post { eps_v := *; ?(-dv <= eps_v & eps_v <= dv); v := v + eps_v } }
        angel b bounded { out v: dv; }
        impl f closed { v+ := p/2 }
        domain D { p in [0, 100]; }
        pipeline go { ctl C; angel a; impl f; domain D; target 1/4; }
    "#;

    #[test]
    fn parses_declarations() {
        let m = parse_model_str(SMALL, Path::new(".")).unwrap();
        assert_eq!(m.ctls.len(), 1);
        assert_eq!(m.angels.len(), 2);
        let (a, b) = (m.perturbation("a").unwrap(), m.perturbation("b").unwrap());
        assert_eq!((&a.pre, &a.post), (&b.pre, &b.post));
        assert_eq!(m.param("dv"), Some(&q("1/4")));
        assert_eq!(m.pipeline("go").unwrap().target, Some(q("1/4")));
        let env = m.envelope("C").unwrap();
        assert_eq!(env.state_vars, vec!["p", "v"]);
        assert!(matches!(
            m.implementation("f").unwrap(),
            Implementation::ClosedForm { outputs, .. } if outputs[0].0 == "v"
        ));
    }

    #[test]
    fn errors() {
        assert!(matches!(parse_model_str("", Path::new(".")), Err(ModelError::Parse(_))));
        assert!(matches!(
            parse_model_str("state p; pre p >= 0; post p >= 0;", Path::new(".")),
            Err(ModelError::Parse(e)) if e.expected.contains("invariant")
        ));
        let dangling = SMALL.replace("angel a; impl", "angel zz; impl");
        assert!(matches!(
            parse_model_str(&dangling, Path::new(".")),
            Err(ModelError::UnresolvedName { kind: "perturbation", name, .. }) if name == "zz"
        ));
        let bad_var = SMALL.replace("v+ := p/2", "v+ := q/2");
        assert!(matches!(
            parse_model_str(&bad_var, Path::new(".")),
            Err(ModelError::UnresolvedName { kind: "variable", .. })
        ));
        let e = parse_model_str("state p;\npre p >= ;", Path::new(".")).unwrap_err();
        assert!(matches!(e, ModelError::Parse(ParseError { line: 2, .. })), "{e}");
    }
}

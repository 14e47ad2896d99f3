//! Feedforward ReLU networks with exact rational weights, and their
//! verification against universal obligations.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::kernel::{Formula, KernelError, Rational, Term, Valuation};
use crate::par;
use crate::solver::bb::confirmed_violation;
use crate::solver::interval::{eval_term, Compiled, IBox, Interval, Tri};
use crate::solver::linear::LinearExpr;
use crate::solver::{qe_decide_formula, Prepared, SolveOptions, SolverError, Stats, Status, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NnetError {
    #[error("line {line}: {reason}")]
    FormatError { line: usize, reason: String },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cannot read network: {0}")]
    Io(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("network input `{0}` is not affine")]
    NonAffineInput(Term),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layer {
    /// Row-major, one row per output.
    pub weights: Vec<Vec<Rational>>,
    pub biases: Vec<Rational>,
    pub activation: Activation,
}

impl Layer {
    pub fn rows(&self) -> usize {
        self.weights.len()
    }

    pub fn cols(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReluNetwork {
    pub layers: Vec<Layer>,
    pub input_dim: usize,
    pub output_dim: usize,
    pub name: String,
}

/// Per-ReLU phase, one vector per layer (empty for identity layers).
/// `true` is active (pre-activation ≥ 0).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ActivationPattern(pub Vec<Vec<bool>>);

impl ReluNetwork {
    pub fn new(name: impl Into<String>, input_dim: usize, layers: Vec<Layer>) -> Result<Self, NnetError> {
        let mut dim = input_dim;
        for l in &layers {
            if l.cols() != dim && l.rows() > 0 {
                return Err(NnetError::DimensionMismatch {
                    expected: dim,
                    found: l.cols(),
                });
            }
            if l.biases.len() != l.rows() || l.weights.iter().any(|r| r.len() != dim) {
                return Err(NnetError::DimensionMismatch {
                    expected: l.rows(),
                    found: l.biases.len(),
                });
            }
            dim = l.rows();
        }
        if let Some(last) = layers.last() {
            if last.activation != Activation::Identity {
                return Err(NnetError::FormatError {
                    line: 0,
                    reason: "final layer must be identity".into(),
                });
            }
        }
        Ok(ReluNetwork {
            layers,
            input_dim,
            output_dim: dim,
            name: name.into(),
        })
    }

    /// Drops hidden neurons with no path to an output. The computed function
    /// is unchanged.
    pub fn pruned(&self) -> ReluNetwork {
        let n = self.layers.len();
        let mut keep: Vec<Vec<bool>> = self.layers.iter().map(|l| vec![false; l.rows()]).collect();
        if let Some(last) = keep.last_mut() {
            last.iter_mut().for_each(|k| *k = true);
        }
        for k in (0..n.saturating_sub(1)).rev() {
            let next = &self.layers[k + 1];
            for j in 0..self.layers[k].rows() {
                keep[k][j] = (0..next.rows()).any(|i| keep[k + 1][i] && !next.weights[i][j].is_zero());
            }
        }
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let rows = (0..l.rows()).filter(|&j| keep[k][j]);
                let cols: Vec<usize> = match k {
                    0 => (0..self.input_dim).collect(),
                    _ => (0..keep[k - 1].len()).filter(|&j| keep[k - 1][j]).collect(),
                };
                Layer {
                    weights: rows
                        .clone()
                        .map(|j| cols.iter().map(|&c| l.weights[j][c].clone()).collect())
                        .collect(),
                    biases: rows.map(|j| l.biases[j].clone()).collect(),
                    activation: l.activation,
                }
            })
            .collect();
        ReluNetwork {
            layers,
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            name: self.name.clone(),
        }
    }

    /// The network computing its input unchanged.
    pub fn identity(dim: usize) -> ReluNetwork {
        let weights = (0..dim)
            .map(|i| (0..dim).map(|j| Rational::from((i == j) as i64)).collect())
            .collect();
        let layer = Layer {
            weights,
            biases: vec![Rational::zero(); dim],
            activation: Activation::Identity,
        };
        ReluNetwork::new("identity", dim, vec![layer]).unwrap()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.rows() * l.cols() + l.rows()).sum()
    }

    pub fn relu_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.activation == Activation::Relu)
            .map(Layer::rows)
            .sum()
    }

    pub fn evaluate(&self, x: &[Rational]) -> Result<Vec<Rational>, NnetError> {
        if x.len() != self.input_dim {
            return Err(NnetError::DimensionMismatch {
                expected: self.input_dim,
                found: x.len(),
            });
        }
        let mut cur = x.to_vec();
        for l in &self.layers {
            cur = l
                .weights
                .iter()
                .zip(&l.biases)
                .map(|(row, b)| {
                    let mut acc = b.clone();
                    for (w, v) in row.iter().zip(&cur) {
                        if !w.is_zero() {
                            acc += w * v;
                        }
                    }
                    match l.activation {
                        Activation::Relu => acc.max(Rational::zero()),
                        Activation::Identity => acc,
                    }
                })
                .collect();
        }
        Ok(cur)
    }

    /// The activation pattern realized at `x` (ties at 0 count as active).
    pub fn realized_pattern(&self, x: &[Rational]) -> Result<ActivationPattern, NnetError> {
        if x.len() != self.input_dim {
            return Err(NnetError::DimensionMismatch {
                expected: self.input_dim,
                found: x.len(),
            });
        }
        let mut cur = x.to_vec();
        let mut pattern = Vec::new();
        for l in &self.layers {
            let pre: Vec<Rational> = l
                .weights
                .iter()
                .zip(&l.biases)
                .map(|(row, b)| row.iter().zip(&cur).map(|(w, v)| w * v).sum::<Rational>() + b)
                .collect();
            match l.activation {
                Activation::Relu => {
                    pattern.push(pre.iter().map(|v| !v.is_negative()).collect());
                    cur = pre.into_iter().map(|v| v.max(Rational::zero())).collect();
                }
                Activation::Identity => {
                    pattern.push(vec![]);
                    cur = pre;
                }
            }
        }
        Ok(ActivationPattern(pattern))
    }

    /// Interval bound propagation. `phases` fixes some ReLUs; returns the
    /// pre-activation intervals per layer and the output intervals, or
    /// `None` if a fixed phase is infeasible on the box.
    pub fn propagate(
        &self,
        input: &[Interval],
        phases: &[Vec<Option<bool>>],
    ) -> Option<(Vec<Vec<Interval>>, Vec<Interval>)> {
        let mut cur = input.to_vec();
        let mut pres = Vec::new();
        for (k, l) in self.layers.iter().enumerate() {
            let mut pre = Vec::with_capacity(l.rows());
            for (row, b) in l.weights.iter().zip(&l.biases) {
                let mut lo = b.clone();
                let mut hi = b.clone();
                for (w, v) in row.iter().zip(&cur) {
                    if w.is_positive() {
                        lo += w * &v.lo;
                        hi += w * &v.hi;
                    } else if w.is_negative() {
                        lo += w * &v.hi;
                        hi += w * &v.lo;
                    }
                }
                pre.push(Interval { lo, hi });
            }
            let post = match l.activation {
                Activation::Identity => pre.clone(),
                Activation::Relu => {
                    let mut post = Vec::with_capacity(pre.len());
                    for (j, i) in pre.iter().enumerate() {
                        match phases.get(k).and_then(|p| p.get(j)).copied().flatten() {
                            Some(true) => {
                                if i.hi.is_negative() {
                                    return None;
                                }
                                post.push(i.relu());
                            }
                            Some(false) => {
                                if i.lo.is_positive() {
                                    return None;
                                }
                                post.push(Interval::point(Rational::zero()));
                            }
                            None => post.push(i.relu()),
                        }
                    }
                    post
                }
            };
            pres.push(pre);
            cur = post;
        }
        Some((pres, cur))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "nnet-ratio v1").unwrap();
        if !self.name.is_empty() {
            writeln!(s, "# name: {}", self.name).unwrap();
        }
        writeln!(s, "inputs {}", self.input_dim).unwrap();
        writeln!(s, "outputs {}", self.output_dim).unwrap();
        for l in &self.layers {
            let act = match l.activation {
                Activation::Relu => "relu",
                Activation::Identity => "identity",
            };
            writeln!(s, "layer {} {} {}", l.rows(), l.cols(), act).unwrap();
            for row in &l.weights {
                writeln!(s, "{}", join_decimal(row)).unwrap();
            }
            writeln!(s, "{}", join_decimal(&l.biases)).unwrap();
        }
        s
    }
}

fn join_decimal(xs: &[Rational]) -> String {
    xs.iter()
        .map(|x| x.to_finite_decimal().unwrap_or_else(|| x.to_string()))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn load_network(path: &Path) -> Result<ReluNetwork, NnetError> {
    let text = std::fs::read_to_string(path).map_err(|e| NnetError::Io(format!("{}: {e}", path.display())))?;
    parse_network(&text)
}

/// Parses the `nnet-ratio v1` text format.
pub fn parse_network(text: &str) -> Result<ReluNetwork, NnetError> {
    let mut name = String::new();
    let mut toks: VecDeque<(usize, &str)> = VecDeque::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if let Some(c) = trimmed.strip_prefix('#') {
            if let Some(n) = c.trim().strip_prefix("name:") {
                name = n.trim().to_string();
            }
            continue;
        }
        toks.extend(trimmed.split_whitespace().map(|t| (i + 1, t)));
    }
    let mut cur = Cursor {
        toks,
        last_line: text.lines().count().max(1),
    };
    let (l, t) = cur.next("header")?;
    let (_, v) = cur.next("header version")?;
    if t != "nnet-ratio" || v != "v1" {
        return Err(format_error(l, "expected header `nnet-ratio v1`"));
    }
    cur.keyword("inputs")?;
    let inputs = cur.count()?;
    cur.keyword("outputs")?;
    let outputs = cur.count()?;
    let mut layers = Vec::new();
    let mut dim = inputs;
    while !cur.toks.is_empty() {
        cur.keyword("layer")?;
        let rows = cur.count()?;
        let cols = cur.count()?;
        let (la, act) = cur.next("activation")?;
        let activation = match act {
            "relu" => Activation::Relu,
            "identity" => Activation::Identity,
            _ => return Err(format_error(la, &format!("unknown activation `{act}`"))),
        };
        if cols != dim {
            return Err(NnetError::DimensionMismatch {
                expected: dim,
                found: cols,
            });
        }
        let mut weights = Vec::with_capacity(rows);
        for _ in 0..rows {
            let mut row = Vec::with_capacity(cols);
            for _ in 0..cols {
                row.push(cur.number("weight")?);
            }
            weights.push(row);
        }
        let mut biases = Vec::with_capacity(rows);
        for _ in 0..rows {
            biases.push(cur.number("bias")?);
        }
        layers.push(Layer {
            weights,
            biases,
            activation,
        });
        dim = rows;
    }
    if layers.is_empty() {
        return Err(format_error(cur.last_line, "no layers"));
    }
    if dim != outputs {
        return Err(NnetError::DimensionMismatch {
            expected: outputs,
            found: dim,
        });
    }
    ReluNetwork::new(name, inputs, layers)
}

fn format_error(line: usize, reason: &str) -> NnetError {
    NnetError::FormatError {
        line,
        reason: reason.to_string(),
    }
}

struct Cursor<'a> {
    toks: VecDeque<(usize, &'a str)>,
    last_line: usize,
}

impl<'a> Cursor<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str), NnetError> {
        self.toks
            .pop_front()
            .ok_or_else(|| format_error(self.last_line, &format!("unexpected end of file, expected {what}")))
    }

    fn keyword(&mut self, kw: &str) -> Result<(), NnetError> {
        let (l, t) = self.next(kw)?;
        if t != kw {
            return Err(format_error(l, &format!("expected `{kw}`, found `{t}`")));
        }
        Ok(())
    }

    fn count(&mut self) -> Result<usize, NnetError> {
        let (l, t) = self.next("count")?;
        t.parse().map_err(|_| format_error(l, &format!("bad count `{t}`")))
    }

    fn number(&mut self, what: &str) -> Result<Rational, NnetError> {
        let (l, t) = self.next(what)?;
        t.parse::<Rational>()
            .map_err(|_| format_error(l, &format!("bad number `{t}`")))
    }
}

/// Feasibility constraints of a pattern and the affine outputs, over the
/// given affine input expressions. ReLUs at exactly 0 satisfy both phases.
pub fn network_to_constraints(
    net: &ReluNetwork,
    pattern: &ActivationPattern,
    inputs: &[Term],
) -> Result<(Formula, Vec<Term>), NnetError> {
    let exprs = inputs
        .iter()
        .map(|t| LinearExpr::from_term(t).map_err(|_| NnetError::NonAffineInput(t.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let (cons, outs) = affine_pieces(net, pattern, &exprs)?;
    Ok((
        Formula::and_all(cons.into_iter()),
        outs.into_iter().map(|e| e.to_term()).collect(),
    ))
}

fn affine_pieces(
    net: &ReluNetwork,
    pattern: &ActivationPattern,
    inputs: &[LinearExpr],
) -> Result<(Vec<Formula>, Vec<LinearExpr>), NnetError> {
    if inputs.len() != net.input_dim {
        return Err(NnetError::DimensionMismatch {
            expected: net.input_dim,
            found: inputs.len(),
        });
    }
    let mut cur = inputs.to_vec();
    let mut cons = Vec::new();
    for (k, l) in net.layers.iter().enumerate() {
        let mut next = Vec::with_capacity(l.rows());
        for (j, (row, b)) in l.weights.iter().zip(&l.biases).enumerate() {
            let mut e = LinearExpr::constant(b.clone());
            for (w, x) in row.iter().zip(&cur) {
                if !w.is_zero() {
                    e = e.add(&x.scale(w));
                }
            }
            match l.activation {
                Activation::Identity => next.push(e),
                Activation::Relu => {
                    let active = *pattern.0.get(k).and_then(|p| p.get(j)).ok_or(
                        NnetError::DimensionMismatch {
                            expected: l.rows(),
                            found: pattern.0.get(k).map_or(0, Vec::len),
                        },
                    )?;
                    if active {
                        cons.push(Formula::ge(e.to_term(), Term::zero()));
                        next.push(e);
                    } else {
                        cons.push(Formula::le(e.to_term(), Term::zero()));
                        next.push(LinearExpr::default());
                    }
                }
            }
        }
        cur = next;
    }
    Ok((cons, cur))
}

/// How network outputs determine the controller's output variable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OutputBinding {
    Regression { var: String },
    /// Action `i` is chosen iff `out_i ≥ out_j` for `j < i` and
    /// `out_i > out_j` for `j > i`.
    ArgmaxCases { var: String, actions: Vec<Term> },
}

impl OutputBinding {
    pub fn var(&self) -> &str {
        match self {
            OutputBinding::Regression { var } | OutputBinding::ArgmaxCases { var, .. } => var,
        }
    }
}

/// Lowest index attaining the maximum.
pub fn argmax_lowest(outs: &[Rational]) -> usize {
    let mut best = 0;
    for i in 1..outs.len() {
        if outs[i] > outs[best] {
            best = i;
        }
    }
    best
}

/// The implementation relation `var = net(inputs)`, kept beside the
/// obligation formula because ReLU is not a term constructor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkImpl {
    pub net: Arc<ReluNetwork>,
    pub inputs: Vec<Term>,
    pub binding: OutputBinding,
}

impl NetworkImpl {
    pub fn output_vars(&self) -> Vec<String> {
        vec![self.binding.var().to_string()]
    }

    pub fn substitute_inputs(&mut self, m: &BTreeMap<String, Term>) {
        for t in self.inputs.iter_mut() {
            *t = t.substitute(m).fold_constants();
        }
        if let OutputBinding::ArgmaxCases { actions, .. } = &mut self.binding {
            for a in actions.iter_mut() {
                *a = a.substitute(m).fold_constants();
            }
        }
    }

    pub fn rename(&self, m: &BTreeMap<String, String>) -> NetworkImpl {
        let sub: BTreeMap<String, Term> = m.iter().map(|(k, v)| (k.clone(), Term::var(v))).collect();
        let mut out = self.clone();
        out.substitute_inputs(&sub);
        let rename = |v: &String| m.get(v).cloned().unwrap_or_else(|| v.clone());
        out.binding = match &out.binding {
            OutputBinding::Regression { var } => OutputBinding::Regression { var: rename(var) },
            OutputBinding::ArgmaxCases { var, actions } => OutputBinding::ArgmaxCases {
                var: rename(var),
                actions: actions.clone(),
            },
        };
        out
    }

    /// The output variable's value at `s`.
    pub fn evaluate(&self, s: &Valuation) -> Result<Valuation, NnetError> {
        let x = self
            .inputs
            .iter()
            .map(|t| t.evaluate(s))
            .collect::<Result<Vec<_>, _>>()?;
        let outs = self.net.evaluate(&x)?;
        let v = match &self.binding {
            OutputBinding::Regression { .. } => outs[0].clone(),
            OutputBinding::ArgmaxCases { actions, .. } => {
                actions[argmax_lowest(&outs)].evaluate(s)?
            }
        };
        Ok(Valuation::new().with(self.binding.var(), v))
    }
}

const UNSTABLE_INPUT_SPLIT: usize = 4;
const BATCH: usize = 128;

#[derive(Clone)]
struct Node {
    bx: IBox,
    phases: Vec<Vec<Option<bool>>>,
    depth: usize,
}

enum Outcome {
    Proven,
    Counterexample(Valuation),
    Children(Vec<Node>),
    Stuck,
}

/// Branch-and-bound over input boxes and ReLU phases. Stable or fixed
/// phases give linear leaf obligations decided by Fourier–Motzkin.
pub fn verify_network(
    f: &Formula,
    network: &NetworkImpl,
    opts: &SolveOptions,
) -> Result<Verdict, SolverError> {
    let start = Instant::now();
    let deadline = opts.deadline();
    let mut stats = Stats::default();
    let finish = |status: Status, mut stats: Stats| {
        stats.wall_time_ms = start.elapsed().as_millis();
        Ok(Verdict { status, stats })
    };
    let prep = Prepared::new(f, Some(network));
    if !prep.matrix.is_quantifier_free() {
        return finish(Status::Unknown("nonlinear alternation".into()), stats);
    }
    let nimpl = prep.network.clone().expect("network kept");
    let out_var = nimpl.binding.var().to_string();
    let root = match prep.search_box(&opts.domain) {
        Ok(b) => b,
        Err(SolverError::UnboundedVariable(x)) => {
            return finish(Status::Unknown(format!("variable `{x}` is unbounded")), stats)
        }
        Err(e) => return Err(e),
    };
    if root.get("__empty").is_some() {
        return finish(Status::Proven, stats);
    }
    let input_exprs = nimpl
        .inputs
        .iter()
        .map(|t| LinearExpr::from_term(t).map_err(SolverError::NonlinearAtom))
        .collect::<Result<Vec<_>, _>>()?;
    let compiled = Compiled::new(&prep.matrix)?;
    let net = nimpl.net.pruned();
    let root_widths: BTreeMap<String, Rational> =
        root.0.iter().map(|(k, i)| (k.clone(), i.width())).collect();
    let box_bounds = |bx: &IBox| -> Formula {
        Formula::and_all(bx.0.iter().flat_map(|(x, i)| {
            [
                Formula::ge(Term::var(x), Term::Const(i.lo.clone())),
                Formula::le(Term::var(x), Term::Const(i.hi.clone())),
            ]
        }))
    };

    // All phases are fixed or stable: decide the linear obligation.
    let leaf = |node: &Node, pres: &[Vec<Interval>]| -> Result<Outcome, SolverError> {
        let pattern = ActivationPattern(
            net.layers
                .iter()
                .enumerate()
                .map(|(k, l)| match l.activation {
                    Activation::Identity => vec![],
                    Activation::Relu => (0..l.rows())
                        .map(|j| node.phases[k][j].unwrap_or(!pres[k][j].hi.is_negative() && !pres[k][j].lo.is_negative()))
                        .collect(),
                })
                .collect(),
        );
        let (cons, outs) = affine_pieces(&net, &pattern, &input_exprs)
            .map_err(|e| SolverError::Internal(e.to_string()))?;
        let region = Formula::and_all([box_bounds(&node.bx), Formula::and_all(cons)]);
        let cases: Vec<(Formula, Term)> = match &nimpl.binding {
            OutputBinding::Regression { .. } => vec![(Formula::True, outs[0].to_term())],
            OutputBinding::ArgmaxCases { actions, .. } => (0..actions.len())
                .map(|i| {
                    let sel = Formula::and_all((0..outs.len()).filter(|&j| j != i).map(|j| {
                        let d = outs[i].sub(&outs[j]).to_term();
                        if j < i {
                            Formula::ge(d, Term::zero())
                        } else {
                            Formula::gt(d, Term::zero())
                        }
                    }));
                    (sel, actions[i].clone())
                })
                .collect(),
        };
        for (sel, value) in cases {
            let mut m = BTreeMap::new();
            m.insert(out_var.clone(), value);
            let body = Formula::implies(
                Formula::and_all([region.clone(), sel]),
                prep.matrix.substitute(&m),
            );
            let v = match qe_decide_formula(&body, deadline) {
                Ok(v) => v,
                Err(SolverError::NonlinearAtom(_)) => return Ok(Outcome::Stuck),
                Err(e) => return Err(e),
            };
            if let Some(c) = v.counterexample() {
                let point: Valuation = prep
                    .free_inputs()
                    .iter()
                    .map(|x| (x.clone(), c.get(x).cloned().unwrap_or_default()))
                    .collect();
                match confirmed_violation(&prep, &point)? {
                    Some(cex) => return Ok(Outcome::Counterexample(cex)),
                    None => {
                        return Err(SolverError::Internal(format!(
                            "leaf counterexample {point} not confirmed by exact evaluation"
                        )))
                    }
                }
            }
        }
        Ok(Outcome::Proven)
    };

    let process = |node: &Node| -> Result<Outcome, SolverError> {
        let inputs: Vec<Interval> = nimpl
            .inputs
            .iter()
            .map(|t| eval_term(t, &node.bx))
            .collect::<Result<_, _>>()?;
        let Some((pres, outs)) = net.propagate(&inputs, &node.phases) else {
            return Ok(Outcome::Proven);
        };
        // Interval of the controller output.
        let out_iv = match &nimpl.binding {
            OutputBinding::Regression { .. } => outs[0].clone(),
            OutputBinding::ArgmaxCases { actions, .. } => {
                let mut hull: Option<Interval> = None;
                for (i, a) in actions.iter().enumerate() {
                    let beaten = (0..outs.len()).any(|j| {
                        (j < i && outs[i].hi < outs[j].lo) || (j > i && outs[i].hi <= outs[j].lo)
                    });
                    if !beaten {
                        let ai = eval_term(a, &node.bx)?;
                        hull = Some(hull.map_or(ai.clone(), |h| h.hull(&ai)));
                    }
                }
                hull.expect("some action is always possible")
            }
        };
        let mut ext = node.bx.clone();
        ext.insert(out_var.clone(), out_iv);
        if compiled.eval(&ext) == Tri::True {
            return Ok(Outcome::Proven);
        }
        let mut probes = vec![node.bx.center()];
        probes.extend(node.bx.corners(4));
        for p in probes {
            if let Some(c) = confirmed_violation(&prep, &p)? {
                return Ok(Outcome::Counterexample(c));
            }
        }
        // Unstable ReLUs under the current box and phases.
        let mut unstable: Vec<(usize, usize, Rational)> = Vec::new();
        for (k, l) in net.layers.iter().enumerate() {
            if l.activation != Activation::Relu {
                continue;
            }
            for (j, iv) in pres[k].iter().enumerate() {
                if node.phases[k][j].is_none() && iv.lo.is_negative() && iv.hi.is_positive() {
                    unstable.push((k, j, iv.width()));
                }
            }
        }
        if unstable.is_empty() {
            return leaf(node, &pres);
        }
        if node.depth >= opts.depth_cap {
            return Ok(Outcome::Stuck);
        }
        if unstable.len() > UNSTABLE_INPUT_SPLIT {
            if let Some(x) = widest_relative(&node.bx, &root_widths, &opts.eps_split) {
                let (a, b) = node.bx.split(&x);
                return Ok(Outcome::Children(vec![
                    Node { bx: a, phases: node.phases.clone(), depth: node.depth + 1 },
                    Node { bx: b, phases: node.phases.clone(), depth: node.depth + 1 },
                ]));
            }
        }
        let (k, j, _) = unstable
            .iter()
            .max_by(|a, b| a.2.cmp(&b.2).then(b.0.cmp(&a.0)).then(b.1.cmp(&a.1)))
            .cloned()
            .unwrap();
        let mut on = node.phases.clone();
        on[k][j] = Some(true);
        let mut off = node.phases.clone();
        off[k][j] = Some(false);
        Ok(Outcome::Children(vec![
            Node { bx: node.bx.clone(), phases: on, depth: node.depth + 1 },
            Node { bx: node.bx.clone(), phases: off, depth: node.depth + 1 },
        ]))
    };

    let phases0: Vec<Vec<Option<bool>>> = net
        .layers
        .iter()
        .map(|l| match l.activation {
            Activation::Relu => vec![None; l.rows()],
            Activation::Identity => vec![],
        })
        .collect();
    let mut queue: VecDeque<Node> = VecDeque::from([Node { bx: root, phases: phases0, depth: 0 }]);
    let mut stuck = 0usize;
    while !queue.is_empty() {
        if deadline.is_some_and(|d| Instant::now() > d) {
            return finish(Status::Unknown("timeout".into()), stats);
        }
        let n = queue.len().min(BATCH);
        let batch: Vec<Node> = queue.drain(..n).collect();
        let results = par::map(opts.mode, &batch, |node| process(node));
        for (node, r) in batch.iter().zip(results) {
            stats.boxes_explored += 1;
            stats.depth_max = stats.depth_max.max(node.depth);
            match r? {
                Outcome::Proven => {}
                Outcome::Counterexample(c) => return finish(Status::Counterexample(c), stats),
                Outcome::Children(cs) => queue.extend(cs),
                Outcome::Stuck => stuck += 1,
            }
        }
    }
    if stuck > 0 {
        return finish(Status::Unknown(format!("depth cap reached on {stuck} nodes")), stats);
    }
    finish(Status::Proven, stats)
}

fn widest_relative(bx: &IBox, root: &BTreeMap<String, Rational>, eps: &Rational) -> Option<String> {
    let mut best: Option<(String, Rational)> = None;
    for (x, i) in &bx.0 {
        let w0 = &root[x];
        let w = i.width();
        if w0.is_zero() || w <= *eps {
            continue;
        }
        let rel = w / w0.clone();
        if best.as_ref().map_or(true, |(_, r)| rel > *r) {
            best = Some((x.clone(), rel));
        }
    }
    best.map(|(x, _)| x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{parse_formula, q};

    fn single_relu() -> ReluNetwork {
        parse_network(
            "nnet-ratio v1\ninputs 1\noutputs 1\nlayer 1 1 relu\n1\n0\nlayer 1 1 identity\n1\n0\n",
        )
        .unwrap()
    }

    #[test]
    fn identity_network() {
        let net = ReluNetwork::identity(1);
        assert_eq!(net.evaluate(&[q("3")]).unwrap(), vec![q("3")]);
        let again = parse_network(&net.to_text()).unwrap();
        assert_eq!(again.layers, net.layers);
        let (f, outs) =
            network_to_constraints(&net, &ActivationPattern(vec![vec![]]), &[Term::var("x")]).unwrap();
        assert_eq!(f, Formula::True);
        assert_eq!(outs, vec![Term::var("x")]);
    }

    #[test]
    fn relu_clamps() {
        let net = single_relu();
        assert_eq!(net.evaluate(&[q("-2")]).unwrap(), vec![q("0")]);
        let (f, outs) = network_to_constraints(
            &net,
            &ActivationPattern(vec![vec![true], vec![]]),
            &[Term::var("x")],
        )
        .unwrap();
        assert_eq!(f.to_string(), "x >= 0");
        assert_eq!(outs, vec![Term::var("x")]);
    }

    #[test]
    fn malformed_files() {
        assert!(matches!(
            parse_network("nnet-ratio v1\ninputs 1\noutputs 1\nlayer 1 1 relu\n1\n"),
            Err(NnetError::FormatError { .. })
        ));
        assert!(matches!(
            parse_network("nnet-ratio v1\ninputs 2\noutputs 1\nlayer 1 1 identity\n1\n0\n"),
            Err(NnetError::DimensionMismatch { .. })
        ));
        assert!(parse_network("").is_err());
    }

    #[test]
    fn relu_is_nonnegative() {
        let nimpl = NetworkImpl {
            net: Arc::new(single_relu()),
            inputs: vec![Term::var("x")],
            binding: OutputBinding::Regression { var: "y".into() },
        };
        let f = parse_formula("\\forall x \\forall y (-1 <= x & x <= 1 -> y >= 0)").unwrap();
        let v = verify_network(&f, &nimpl, &SolveOptions::default()).unwrap();
        assert!(v.is_proven(), "{v:?}");
        let g = parse_formula("\\forall x \\forall y (-1 <= x & x <= 1 -> y <= 1/2)").unwrap();
        let v = verify_network(&g, &nimpl, &SolveOptions::default()).unwrap();
        let c = v.counterexample().unwrap();
        assert!(c.get("x").unwrap() > &q("1/2"));
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        assert_eq!(argmax_lowest(&[q("1"), q("1"), q("0")]), 0);
        assert_eq!(argmax_lowest(&[q("0"), q("2"), q("2")]), 1);
    }

    #[test]
    fn pruning_drops_dead_neurons() {
        let text = "nnet-ratio v1\ninputs 1\noutputs 1\nlayer 2 1 relu\n1\n-1\n0\n0\nlayer 1 2 identity\n2 0\n1\n";
        let net = parse_network(text).unwrap();
        let p = net.pruned();
        assert_eq!(p.layers[0].rows(), 1);
        for x in ["-3", "0", "5/2"] {
            assert_eq!(p.evaluate(&[q(x)]).unwrap(), net.evaluate(&[q(x)]).unwrap());
        }
    }
}

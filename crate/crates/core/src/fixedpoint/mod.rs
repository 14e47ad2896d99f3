//! Fixed-point formats, range and roundoff analysis over straight-line
//! code, mixed-precision tuning, simulation and code emission.

mod analyze;
mod emit;
mod sim;
mod tune;

pub use analyze::{analyze, assign_formats, Analysis};
pub use emit::{emit, parse_emitted};
pub use sim::{exact_eval, simulate, IntInstr, IntProgram, SimResult};
pub use tune::{tune, CostWeights, TuneOptions, TuningResult};

use serde::Serialize;
use thiserror::Error;

use crate::kernel::{Rational, Term};
use crate::nnet::{Activation, ReluNetwork};
use crate::solver::interval::Interval;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FixedError {
    #[error("denominator `{0}` may vanish on the domain")]
    DenominatorMayVanish(String),
    #[error("unsupported operation: {0}")]
    UnsupportedOp(String),
    #[error("range of t{id} exceeds its format")]
    RangeOverflow { id: usize },
    #[error("no uniform width up to {max_width} bits meets the target")]
    Infeasible { max_width: u32 },
    #[error("simulation overflow at t{id}")]
    SimOverflow { id: usize },
    #[error("input {0} is outside the domain")]
    InputOutOfDomain(usize),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// A signed format with `q` total bits and `pi` fractional bits; the
/// representable range is `[-2^(q-1-pi), 2^(q-1-pi) - 2^-pi]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct FixedFormat {
    pub q: u32,
    pub pi: u32,
}

impl FixedFormat {
    pub fn new(q: u32, pi: u32) -> FixedFormat {
        assert!((1..=64).contains(&q) && pi < q, "bad format s{q}.{pi}");
        FixedFormat { q, pi }
    }

    /// Integer bits (excluding the sign bit).
    pub fn int_bits(&self) -> i64 {
        self.q as i64 - 1 - self.pi as i64
    }

    pub fn ulp(&self) -> Rational {
        Rational::pow2(-(self.pi as i32))
    }

    pub fn min_value(&self) -> Rational {
        -Rational::pow2(self.int_bits() as i32)
    }

    pub fn max_value(&self) -> Rational {
        Rational::pow2(self.int_bits() as i32) - self.ulp()
    }

    pub fn contains(&self, lo: &Rational, hi: &Rational) -> bool {
        *lo >= self.min_value() && *hi <= self.max_value()
    }

    pub fn int_range(&self) -> (i128, i128) {
        (-(1i128 << (self.q - 1)), (1i128 << (self.q - 1)) - 1)
    }
}

impl std::fmt::Display for FixedFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "s{}.{}", self.q, self.pi)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Op {
    Input(usize),
    Const(Rational),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Max0(usize),
    /// `1 / a`; only produced for denominators bounded away from 0.
    Recip(usize),
}

impl Op {
    pub fn operands(&self) -> Vec<usize> {
        match self {
            Op::Input(_) | Op::Const(_) => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Max0(a) | Op::Recip(a) => vec![*a],
        }
    }

    pub fn is_arithmetic(&self) -> bool {
        !matches!(self, Op::Input(_) | Op::Const(_))
    }
}

/// SSA straight-line code: op `i` defines `t_i`; operands precede their
/// uses.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StraightLineProgram {
    pub ops: Vec<Op>,
    /// Tuning group of each op (network layer, or depth for closed forms).
    pub groups: Vec<usize>,
    /// Domain of each input.
    pub domain: Vec<Interval>,
    pub input_formats: Vec<FixedFormat>,
    pub outputs: Vec<usize>,
    /// Assigned formats; empty until [`assign_formats`] ran.
    pub formats: Vec<FixedFormat>,
}

/// Width of the fixed input formats.
pub const INPUT_WIDTH: u32 = 32;

fn input_format(iv: &Interval) -> FixedFormat {
    let i = int_bits_for(&iv.lo, &iv.hi);
    FixedFormat::new(INPUT_WIDTH, (INPUT_WIDTH as i64 - 1 - i).max(0) as u32)
}

/// Smallest `I ≥ 0` with `[lo, hi] ⊆ [-2^I, 2^I)`.
pub(crate) fn int_bits_for(lo: &Rational, hi: &Rational) -> i64 {
    let mut i = 0i64;
    while *lo < -Rational::pow2(i as i32) || *hi >= Rational::pow2(i as i32) {
        i += 1;
    }
    i
}

struct Builder {
    ops: Vec<Op>,
    groups: Vec<usize>,
}

impl Builder {
    fn push(&mut self, op: Op, group: usize) -> usize {
        self.ops.push(op);
        self.groups.push(group);
        self.ops.len() - 1
    }
}

impl StraightLineProgram {
    fn from_builder(b: Builder, domain: Vec<Interval>, outputs: Vec<usize>) -> Self {
        let input_formats = domain.iter().map(input_format).collect();
        StraightLineProgram {
            ops: b.ops,
            groups: b.groups,
            domain,
            input_formats,
            outputs,
            formats: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Number of add, sub, mul, max0 and reciprocal operations.
    pub fn arithmetic_op_count(&self) -> usize {
        self.ops.iter().filter(|o| o.is_arithmetic()).count()
    }

    pub fn count(&self, pred: impl Fn(&Op) -> bool) -> usize {
        self.ops.iter().filter(|o| pred(o)).count()
    }

    /// Ids whose format is tuned (everything except inputs).
    pub fn tunable(&self) -> Vec<usize> {
        (0..self.ops.len()).filter(|&i| !matches!(self.ops[i], Op::Input(_))).collect()
    }
}

/// Unrolls a network over the given input domain: one multiply per weight,
/// one add per weight (the first adds the bias), one max0 per ReLU.
pub fn lower_network(net: &ReluNetwork, domain: &[Interval]) -> Result<StraightLineProgram, FixedError> {
    if domain.len() != net.input_dim {
        return Err(FixedError::DimensionMismatch {
            expected: net.input_dim,
            found: domain.len(),
        });
    }
    let mut b = Builder {
        ops: Vec::new(),
        groups: Vec::new(),
    };
    let mut cur: Vec<usize> = (0..net.input_dim).map(|k| b.push(Op::Input(k), 0)).collect();
    for (layer, l) in net.layers.iter().enumerate() {
        let g = layer + 1;
        let mut next = Vec::with_capacity(l.rows());
        for (row, bias) in l.weights.iter().zip(&l.biases) {
            let mut acc = b.push(Op::Const(bias.clone()), g);
            for (w, &x) in row.iter().zip(&cur) {
                let c = b.push(Op::Const(w.clone()), g);
                let m = b.push(Op::Mul(c, x), g);
                acc = b.push(Op::Add(acc, m), g);
            }
            if l.activation == Activation::Relu {
                acc = b.push(Op::Max0(acc), g);
            }
            next.push(acc);
        }
        cur = next;
    }
    Ok(StraightLineProgram::from_builder(b, domain.to_vec(), cur))
}

/// Lowers a closed-form term over `inputs`. Division `n / d` becomes
/// `n · recip(d)` and requires `d` affine with an interval excluding 0.
pub fn lower_term(
    t: &Term,
    inputs: &[String],
    domain: &[Interval],
) -> Result<StraightLineProgram, FixedError> {
    if domain.len() != inputs.len() {
        return Err(FixedError::DimensionMismatch {
            expected: inputs.len(),
            found: domain.len(),
        });
    }
    let mut b = Builder {
        ops: Vec::new(),
        groups: Vec::new(),
    };
    for k in 0..inputs.len() {
        b.push(Op::Input(k), 0);
    }
    let bx = crate::solver::interval::IBox(
        inputs.iter().cloned().zip(domain.iter().cloned()).collect(),
    );
    let (out, _) = lower_rec(&t.fold_constants(), inputs, &bx, &mut b)?;
    Ok(StraightLineProgram::from_builder(b, domain.to_vec(), vec![out]))
}

/// Returns the id and its depth (used as the tuning group).
fn lower_rec(
    t: &Term,
    inputs: &[String],
    bx: &crate::solver::interval::IBox,
    b: &mut Builder,
) -> Result<(usize, usize), FixedError> {
    Ok(match t {
        Term::Const(c) => (b.push(Op::Const(c.clone()), 1), 1),
        Term::Var(x) => {
            let k = inputs
                .iter()
                .position(|i| i == x)
                .ok_or_else(|| FixedError::UnsupportedOp(format!("free variable `{x}`")))?;
            (k, 0)
        }
        Term::Neg(a) => {
            let z = b.push(Op::Const(Rational::zero()), 1);
            let (a, d) = lower_rec(a, inputs, bx, b)?;
            (b.push(Op::Sub(z, a), d + 1), d + 1)
        }
        Term::Add(x, y) | Term::Sub(x, y) | Term::Mul(x, y) => {
            let (a, da) = lower_rec(x, inputs, bx, b)?;
            let (c, dc) = lower_rec(y, inputs, bx, b)?;
            let d = da.max(dc) + 1;
            let op = match t {
                Term::Add(..) => Op::Add(a, c),
                Term::Sub(..) => Op::Sub(a, c),
                _ => Op::Mul(a, c),
            };
            (b.push(op, d), d)
        }
        Term::Div(n, den) if den.as_const().is_some() => {
            let c = den.as_const().and_then(Rational::recip).ok_or_else(|| {
                FixedError::DenominatorMayVanish(den.to_string())
            })?;
            let (a, da) = lower_rec(n, inputs, bx, b)?;
            let k = b.push(Op::Const(c), 1);
            (b.push(Op::Mul(a, k), da + 1), da + 1)
        }
        Term::Div(n, den) => {
            if crate::solver::linear::LinearExpr::from_term(den).is_err() {
                return Err(FixedError::UnsupportedOp(format!("non-affine denominator `{den}`")));
            }
            let iv = crate::solver::interval::eval_term(den, bx)
                .map_err(|_| FixedError::DenominatorMayVanish(den.to_string()))?;
            if iv.contains_zero() {
                return Err(FixedError::DenominatorMayVanish(den.to_string()));
            }
            let (a, da) = lower_rec(n, inputs, bx, b)?;
            let (c, dc) = lower_rec(den, inputs, bx, b)?;
            let r = b.push(Op::Recip(c), dc + 1);
            let d = da.max(dc + 1) + 1;
            (b.push(Op::Mul(a, r), d), d)
        }
        Term::Pow(a, n) => {
            if *n == 0 {
                return Ok((b.push(Op::Const(Rational::one()), 1), 1));
            }
            let (a, mut d) = lower_rec(a, inputs, bx, b)?;
            let mut acc = a;
            for _ in 1..*n {
                d += 1;
                acc = b.push(Op::Mul(acc, a), d);
            }
            (acc, d)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{parse_term, q};

    #[test]
    fn identity_network_lowering() {
        let net = ReluNetwork::identity(1);
        let p = lower_network(&net, &[Interval::new(q("-1"), q("1"))]).unwrap();
        // load, bias, weight, mul, add
        assert_eq!(p.arithmetic_op_count(), 2);
        assert_eq!(p.outputs.len(), 1);
    }

    #[test]
    fn guarded_reciprocal() {
        let t = parse_term("-1/(0.01*(p+10)) + 19/2").unwrap();
        let p = lower_term(&t, &["p".into()], &[Interval::new(q("0"), q("100"))]).unwrap();
        assert_eq!(p.count(|o| matches!(o, Op::Recip(_))), 1);
        let bad = parse_term("1/p").unwrap();
        assert!(matches!(
            lower_term(&bad, &["p".into()], &[Interval::new(q("0"), q("1"))]),
            Err(FixedError::DenominatorMayVanish(_))
        ));
        let nonaffine = parse_term("1/(p*p + 1)").unwrap();
        assert!(matches!(
            lower_term(&nonaffine, &["p".into()], &[Interval::new(q("0"), q("1"))]),
            Err(FixedError::UnsupportedOp(_))
        ));
    }

    #[test]
    fn formats() {
        let f = FixedFormat::new(8, 4);
        assert_eq!(f.min_value(), q("-8"));
        assert_eq!(f.max_value(), q("127/16"));
        assert_eq!(int_bits_for(&q("0"), &q("100")), 7);
        assert_eq!(int_bits_for(&q("-1"), &q("1/2")), 0);
    }
}

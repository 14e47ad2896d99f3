use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::ToPrimitive;
use serde::Serialize;

use super::{FixedError, FixedFormat, Op, StraightLineProgram};
use crate::kernel::Rational;

/// Integer instruction. Shifts are signed: positive shifts right with
/// floor, negative shifts left.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum IntInstr {
    In(usize),
    Const(i128),
    Add { a: usize, la: u32, b: usize, lb: u32, shift: i32 },
    Sub { a: usize, la: u32, b: usize, lb: u32, shift: i32 },
    Mul { a: usize, b: usize, shift: i32 },
    Max0 { a: usize, shift: i32 },
    /// `floor(2^s / t_a)`.
    Recip { a: usize, s: u32 },
}

/// Executable integer form of a tuned program; instruction `i` defines
/// `t_i` in `formats[i]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct IntProgram {
    pub inputs: usize,
    pub formats: Vec<FixedFormat>,
    pub instrs: Vec<IntInstr>,
    pub outputs: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimResult {
    pub outputs: Vec<Rational>,
    pub exact: Vec<Rational>,
    pub realized_error: Rational,
}

fn to_i128(b: &BigInt, id: usize) -> Result<i128, FixedError> {
    b.to_i128().ok_or(FixedError::SimOverflow { id })
}

fn scaled_floor(x: &Rational, pi: u32) -> BigInt {
    (x * &Rational::pow2(pi as i32)).floor()
}

fn rescale(v: i128, shift: i32, id: usize) -> Result<i128, FixedError> {
    if shift >= 0 {
        Ok(v >> shift.min(127))
    } else {
        v.checked_mul(1i128 << (-shift) as u32).ok_or(FixedError::SimOverflow { id })
    }
}

impl IntProgram {
    pub fn from_program(p: &StraightLineProgram) -> Result<IntProgram, FixedError> {
        assert_eq!(p.formats.len(), p.ops.len(), "formats not assigned");
        let pi = |i: usize| p.formats[i].pi as i32;
        let mut instrs = Vec::with_capacity(p.ops.len());
        for (id, op) in p.ops.iter().enumerate() {
            let d = pi(id);
            instrs.push(match op {
                Op::Input(k) => IntInstr::In(*k),
                Op::Const(c) => IntInstr::Const(to_i128(&scaled_floor(c, d as u32), id)?),
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let m = pi(*a).max(pi(*b));
                    let (la, lb, shift) = ((m - pi(*a)) as u32, (m - pi(*b)) as u32, m - d);
                    if matches!(op, Op::Add(..)) {
                        IntInstr::Add { a: *a, la, b: *b, lb, shift }
                    } else {
                        IntInstr::Sub { a: *a, la, b: *b, lb, shift }
                    }
                }
                Op::Mul(a, b) => IntInstr::Mul {
                    a: *a,
                    b: *b,
                    shift: pi(*a) + pi(*b) - d,
                },
                Op::Max0(a) => IntInstr::Max0 { a: *a, shift: pi(*a) - d },
                Op::Recip(a) => IntInstr::Recip {
                    a: *a,
                    s: (pi(*a) + d) as u32,
                },
            });
        }
        Ok(IntProgram {
            inputs: p.domain.len(),
            formats: p.formats.clone(),
            instrs,
            outputs: p.outputs.clone(),
        })
    }

    /// Runs on rational inputs (floored onto the input grids) and returns
    /// the raw output integers.
    pub fn run(&self, inputs: &[Rational]) -> Result<Vec<i128>, FixedError> {
        if inputs.len() != self.inputs {
            return Err(FixedError::DimensionMismatch {
                expected: self.inputs,
                found: inputs.len(),
            });
        }
        let mut t: Vec<i128> = Vec::with_capacity(self.instrs.len());
        for (id, ins) in self.instrs.iter().enumerate() {
            let shl = |v: i128, s: u32| v.checked_mul(1i128.checked_shl(s)?);
            let v = match ins {
                IntInstr::In(k) => to_i128(&scaled_floor(&inputs[*k], self.formats[id].pi), id)?,
                IntInstr::Const(c) => *c,
                IntInstr::Add { a, la, b, lb, shift } | IntInstr::Sub { a, la, b, lb, shift } => {
                    let x = shl(t[*a], *la).ok_or(FixedError::SimOverflow { id })?;
                    let y = shl(t[*b], *lb).ok_or(FixedError::SimOverflow { id })?;
                    let s = if matches!(ins, IntInstr::Add { .. }) {
                        x.checked_add(y)
                    } else {
                        x.checked_sub(y)
                    };
                    rescale(s.ok_or(FixedError::SimOverflow { id })?, *shift, id)?
                }
                IntInstr::Mul { a, b, shift } => {
                    let m = t[*a].checked_mul(t[*b]).ok_or(FixedError::SimOverflow { id })?;
                    rescale(m, *shift, id)?
                }
                IntInstr::Max0 { a, shift } => rescale(t[*a].max(0), *shift, id)?,
                IntInstr::Recip { a, s } => {
                    if t[*a] == 0 {
                        return Err(FixedError::SimOverflow { id });
                    }
                    let n = 1i128.checked_shl(*s).filter(|_| *s < 127).ok_or(FixedError::SimOverflow { id })?;
                    Integer::div_floor(&n, &t[*a])
                }
            };
            let (lo, hi) = self.formats[id].int_range();
            if v < lo || v > hi {
                return Err(FixedError::SimOverflow { id });
            }
            t.push(v);
        }
        Ok(self.outputs.iter().map(|&o| t[o]).collect())
    }

    /// Output values as rationals.
    pub fn run_values(&self, inputs: &[Rational]) -> Result<Vec<Rational>, FixedError> {
        let raw = self.run(inputs)?;
        Ok(raw
            .iter()
            .zip(&self.outputs)
            .map(|(v, &o)| &Rational::from_integer(BigInt::from(*v)) * &self.formats[o].ulp())
            .collect())
    }
}

/// Exact rational evaluation of the program.
pub fn exact_eval(p: &StraightLineProgram, inputs: &[Rational]) -> Result<Vec<Rational>, FixedError> {
    if inputs.len() != p.domain.len() {
        return Err(FixedError::DimensionMismatch {
            expected: p.domain.len(),
            found: inputs.len(),
        });
    }
    let mut v: Vec<Rational> = Vec::with_capacity(p.ops.len());
    for op in &p.ops {
        let x = match op {
            Op::Input(k) => inputs[*k].clone(),
            Op::Const(c) => c.clone(),
            Op::Add(a, b) => &v[*a] + &v[*b],
            Op::Sub(a, b) => &v[*a] - &v[*b],
            Op::Mul(a, b) => &v[*a] * &v[*b],
            Op::Max0(a) => v[*a].clone().max(Rational::zero()),
            Op::Recip(a) => v[*a]
                .recip()
                .ok_or_else(|| FixedError::DenominatorMayVanish(format!("t{a}")))?,
        };
        v.push(x);
    }
    Ok(p.outputs.iter().map(|&o| v[o].clone()).collect())
}

/// Simulates the tuned program and compares it with exact evaluation.
pub fn simulate(p: &StraightLineProgram, inputs: &[Rational]) -> Result<SimResult, FixedError> {
    for (k, (x, iv)) in inputs.iter().zip(&p.domain).enumerate() {
        if !iv.contains(x) {
            return Err(FixedError::InputOutOfDomain(k));
        }
    }
    let ip = IntProgram::from_program(p)?;
    let outputs = ip.run_values(inputs)?;
    let exact = exact_eval(p, inputs)?;
    let realized_error = outputs
        .iter()
        .zip(&exact)
        .map(|(a, b)| (a - b).abs())
        .fold(Rational::zero(), Rational::max);
    Ok(SimResult {
        outputs,
        exact,
        realized_error,
    })
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use crate::kernel::{parse_term, q};
    use crate::solver::interval::Interval;

    #[test]
    fn simulation_stays_within_bound() {
        let t = parse_term("-1/(0.01*(p+10)) + 19/2").unwrap();
        let mut p = lower_term(&t, &["p".into()], &[Interval::new(q("0"), q("100"))]).unwrap();
        let widths = vec![16; p.len()];
        let a = assign_formats(&mut p, &widths).unwrap();
        for k in 0..=400 {
            let x = Rational::new(k, 4);
            let r = simulate(&p, &[x]).unwrap();
            assert!(r.realized_error <= a.output_error, "{} > {}", r.realized_error, a.output_error);
        }
        assert_eq!(simulate(&p, &[q("101")]), Err(FixedError::InputOutOfDomain(0)));
    }

    #[test]
    fn negative_values_floor() {
        let mut p = StraightLineProgram {
            ops: vec![Op::Input(0), Op::Const(q("3/4")), Op::Mul(0, 1)],
            groups: vec![0, 1, 1],
            domain: vec![Interval::new(q("-2"), q("2"))],
            input_formats: vec![FixedFormat::new(8, 4)],
            outputs: vec![2],
            formats: vec![],
        };
        assign_formats(&mut p, &[8, 8, 6]).unwrap();
        let r = simulate(&p, &[q("-1/16")]).unwrap();
        assert!(r.outputs[0] <= r.exact[0]);
    }
}

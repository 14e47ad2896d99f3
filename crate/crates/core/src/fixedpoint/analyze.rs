use serde::Serialize;

use super::{int_bits_for, FixedError, FixedFormat, Op, StraightLineProgram};
use crate::kernel::Rational;
use crate::solver::interval::Interval;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Analysis {
    /// Exact real range of every id over the input domain.
    pub ranges: Vec<Interval>,
    /// Bound on `|computed - exact|` for every id.
    pub errors: Vec<Rational>,
    /// Largest error bound over the outputs.
    pub output_error: Rational,
}

pub(crate) fn exact_ranges(p: &StraightLineProgram) -> Result<Vec<Interval>, FixedError> {
    let mut r: Vec<Interval> = Vec::with_capacity(p.ops.len());
    for (id, op) in p.ops.iter().enumerate() {
        let iv = match op {
            Op::Input(k) => p.domain[*k].clone(),
            Op::Const(c) => Interval::point(c.clone()),
            Op::Add(a, b) => r[*a].add(&r[*b]),
            Op::Sub(a, b) => r[*a].sub(&r[*b]),
            Op::Mul(a, b) => r[*a].mul(&r[*b]),
            Op::Max0(a) => r[*a].relu(),
            Op::Recip(a) => r[*a]
                .recip()
                .ok_or_else(|| FixedError::DenominatorMayVanish(format!("t{a}")))?,
        };
        debug_assert_eq!(r.len(), id);
        r.push(iv);
    }
    Ok(r)
}

/// Error of flooring a value on the grid `2^-s` onto the grid of `f`, and
/// the grid the stored value lies on.
fn narrow(s: u32, f: &FixedFormat) -> (Rational, u32) {
    if f.pi < s {
        (&f.ulp() - &Rational::pow2(-(s as i32)), f.pi)
    } else {
        (Rational::zero(), s)
    }
}

/// Propagates ranges and roundoff bounds under `formats` and checks that
/// every computed value fits its format.
pub fn analyze(p: &StraightLineProgram, formats: &[FixedFormat]) -> Result<Analysis, FixedError> {
    let ranges = exact_ranges(p)?;
    analyze_with(p, formats, ranges)
}

pub(crate) fn analyze_with(
    p: &StraightLineProgram,
    formats: &[FixedFormat],
    ranges: Vec<Interval>,
) -> Result<Analysis, FixedError> {
    assert_eq!(formats.len(), p.ops.len());
    let mut err: Vec<Rational> = Vec::with_capacity(p.ops.len());
    // Fraction bits the computed value actually carries (at most its π).
    let mut grid: Vec<u32> = Vec::with_capacity(p.ops.len());
    for (id, op) in p.ops.iter().enumerate() {
        let f = &formats[id];
        let (e, g) = match op {
            Op::Input(_) => (Rational::zero(), f.pi),
            Op::Const(c) => {
                let scaled = c * &Rational::pow2(f.pi as i32);
                if scaled.is_integer() {
                    (Rational::zero(), c.dyadic_bits().unwrap_or(f.pi))
                } else {
                    (f.ulp(), f.pi)
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let (t, g) = narrow(grid[*a].max(grid[*b]), f);
                (&(&err[*a] + &err[*b]) + &t, g)
            }
            Op::Mul(a, b) => {
                let (ma, mb) = (ranges[*a].mag(), ranges[*b].mag());
                let prop = &(&(&ma * &err[*b]) + &(&mb * &err[*a])) + &(&err[*a] * &err[*b]);
                let (t, g) = narrow(grid[*a] + grid[*b], f);
                (&prop + &t, g)
            }
            Op::Max0(a) => {
                let (t, g) = narrow(grid[*a], f);
                (&err[*a] + &t, g)
            }
            Op::Recip(a) => {
                let iv = &ranges[*a];
                let m = if iv.lo.is_positive() { iv.lo.clone() } else { -iv.hi.clone() };
                let ea = &err[*a];
                if *ea >= m {
                    return Err(FixedError::DenominatorMayVanish(format!("t{a}")));
                }
                (&(ea / &(&m * &(&m - ea))) + &f.ulp(), f.pi)
            }
        };
        let lo = &ranges[id].lo - &e;
        let hi = &ranges[id].hi + &e;
        if !f.contains(&lo, &hi) {
            return Err(FixedError::RangeOverflow { id });
        }
        err.push(e);
        grid.push(g);
    }
    let output_error = p
        .outputs
        .iter()
        .map(|&o| err[o].clone())
        .fold(Rational::zero(), Rational::max);
    Ok(Analysis {
        ranges,
        errors: err,
        output_error,
    })
}

/// Picks integer bits from the ranges for the given total widths (inputs
/// keep their fixed formats) and widens any id whose range plus error
/// bound overflows. Writes the result into `p.formats`.
pub fn assign_formats(p: &mut StraightLineProgram, widths: &[u32]) -> Result<Analysis, FixedError> {
    let ranges = exact_ranges(p)?;
    assign_with(p, widths, &ranges)
}

pub(crate) fn assign_with(
    p: &mut StraightLineProgram,
    widths: &[u32],
    ranges: &[Interval],
) -> Result<Analysis, FixedError> {
    assert_eq!(widths.len(), p.ops.len());
    let mut ibits: Vec<i64> = ranges.iter().map(|r| int_bits_for(&r.lo, &r.hi)).collect();
    loop {
        let mut formats = Vec::with_capacity(p.ops.len());
        for (id, op) in p.ops.iter().enumerate() {
            if let Op::Input(k) = op {
                formats.push(p.input_formats[*k]);
                continue;
            }
            let q = widths[id];
            if ibits[id] > q as i64 - 1 {
                return Err(FixedError::RangeOverflow { id });
            }
            formats.push(FixedFormat::new(q, (q as i64 - 1 - ibits[id]) as u32));
        }
        match analyze_with(p, &formats, ranges.to_vec()) {
            Ok(a) => {
                p.formats = formats;
                return Ok(a);
            }
            Err(FixedError::RangeOverflow { id }) if !matches!(p.ops[id], Op::Input(_)) => ibits[id] += 1,
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use crate::kernel::q;

    fn single_const(c: &str) -> StraightLineProgram {
        StraightLineProgram {
            ops: vec![Op::Const(q(c))],
            groups: vec![1],
            domain: vec![],
            input_formats: vec![],
            outputs: vec![0],
            formats: vec![],
        }
    }

    #[test]
    fn constant_truncation_bound() {
        let p = single_const("0.3");
        let a = analyze(&p, &[FixedFormat::new(8, 4)]).unwrap();
        assert_eq!(a.errors[0], q("1/16"));
        let exact = single_const("0.25");
        let a = analyze(&exact, &[FixedFormat::new(8, 4)]).unwrap();
        assert_eq!(a.errors[0], q("0"));
    }

    #[test]
    fn overflow_is_reported() {
        let p = single_const("100");
        assert_eq!(
            analyze(&p, &[FixedFormat::new(8, 4)]),
            Err(FixedError::RangeOverflow { id: 0 })
        );
        let mut p = p;
        let a = assign_formats(&mut p, &[8]).unwrap();
        assert_eq!(p.formats[0], FixedFormat::new(8, 0));
        assert_eq!(a.output_error, q("0"));
    }

    #[test]
    fn more_fraction_bits_never_hurt() {
        let t = crate::kernel::parse_term("0.3*x*x - 0.7*x + 1/(x + 3)").unwrap();
        let mut p = lower_term(&t, &["x".into()], &[Interval::new(q("-1"), q("1"))]).unwrap();
        let mut last = None;
        for w in [12u32, 16, 20, 24, 32] {
            let widths = vec![w; p.len()];
            let a = assign_formats(&mut p, &widths).unwrap();
            if let Some(prev) = last {
                assert!(a.output_error <= prev);
            }
            last = Some(a.output_error);
        }
    }
}

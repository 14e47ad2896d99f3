use std::time::Instant;

use serde::Serialize;

use super::analyze::{assign_with, exact_ranges};
use super::{Analysis, FixedError, FixedFormat, Op, StraightLineProgram};
use crate::kernel::Rational;
use crate::par::{self, Mode};

/// Per-op cost weights: a multiply costs `mul · Q_a · Q_b`, an add, sub
/// or max0 costs `add · max(Q)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostWeights {
    pub mul: Rational,
    pub add: Rational,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            mul: Rational::one(),
            add: Rational::new(1, 8),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TuneOptions {
    pub target: Rational,
    pub min_width: u32,
    pub max_width: u32,
    pub weights: CostWeights,
    pub mode: Mode,
}

impl TuneOptions {
    pub fn new(target: Rational) -> TuneOptions {
        TuneOptions {
            target,
            min_width: 4,
            max_width: 64,
            weights: CostWeights::default(),
            mode: Mode::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TuningResult {
    pub program: StraightLineProgram,
    pub analysis: Analysis,
    pub cost: Rational,
    /// Smallest uniform width meeting the target, and its cost.
    pub uniform_width: u32,
    pub uniform_cost: Rational,
    pub accepted_steps: usize,
    pub candidates_evaluated: usize,
    pub wall_time_ms: u128,
}

impl TuningResult {
    pub fn total_error_bound(&self) -> &Rational {
        &self.analysis.output_error
    }

    /// Widest tuned format (inputs excluded).
    pub fn max_width(&self) -> u32 {
        self.program
            .tunable()
            .iter()
            .map(|&i| self.program.formats[i].q)
            .max()
            .unwrap_or(0)
    }
}

pub fn cost(p: &StraightLineProgram, formats: &[FixedFormat], w: &CostWeights) -> Rational {
    let q = |i: usize| Rational::from(formats[i].q as i64);
    let mut c = Rational::zero();
    for (id, op) in p.ops.iter().enumerate() {
        c += match op {
            Op::Input(_) | Op::Const(_) => Rational::zero(),
            Op::Mul(a, b) => &w.mul * &(&q(*a) * &q(*b)),
            Op::Recip(a) => &w.mul * &(&q(*a) * &q(id)),
            Op::Add(a, b) | Op::Sub(a, b) => &w.add * &q(*a).max(q(*b)),
            Op::Max0(a) => &w.add * &q(*a),
        };
    }
    c
}

struct Eval {
    formats: Vec<FixedFormat>,
    analysis: Analysis,
    cost: Rational,
}

fn evaluate(
    p: &StraightLineProgram,
    widths: &[u32],
    ranges: &[crate::solver::interval::Interval],
    opts: &TuneOptions,
) -> Option<Eval> {
    let mut scratch = p.clone();
    match assign_with(&mut scratch, widths, ranges) {
        Ok(a) if a.output_error <= opts.target => Some(Eval {
            cost: cost(&scratch, &scratch.formats, &opts.weights),
            formats: scratch.formats,
            analysis: a,
        }),
        _ => None,
    }
}

/// Finds the smallest uniform width meeting `opts.target`, then lowers
/// widths of subsets of tuning units (layer groups, then single ops for
/// small programs) while the bound holds. Candidates at one granularity
/// are evaluated in parallel and the first feasible one in order wins, so
/// the result does not depend on the worker count.
pub fn tune(p: &StraightLineProgram, opts: &TuneOptions) -> Result<TuningResult, FixedError> {
    let start = Instant::now();
    let ranges = exact_ranges(p)?;
    let n = p.ops.len();
    let mut evaluated = 0usize;
    let mut found = None;
    for q in opts.min_width..=opts.max_width {
        evaluated += 1;
        if let Some(e) = evaluate(p, &vec![q; n], &ranges, opts) {
            found = Some((q, e));
            break;
        }
    }
    let (uniform_width, mut best) = found.ok_or(FixedError::Infeasible {
        max_width: opts.max_width,
    })?;
    let uniform_cost = best.cost.clone();
    let mut widths = vec![uniform_width; n];
    let mut accepted = 0usize;

    let tunable = p.tunable();
    let mut groups: Vec<usize> = tunable.iter().map(|&i| p.groups[i]).collect();
    groups.sort_unstable();
    groups.dedup();
    let mut phases: Vec<Vec<Vec<usize>>> = vec![groups
        .iter()
        .map(|g| tunable.iter().copied().filter(|&i| p.groups[i] == *g).collect())
        .collect()];
    if tunable.len() <= 64 {
        phases.push(tunable.iter().map(|&i| vec![i]).collect());
    }

    for units in phases {
        let mut gran = 2usize.min(units.len().max(1));
        while !units.is_empty() {
            let chunks: Vec<Vec<usize>> = partition(&units, gran);
            let candidates: Vec<Vec<u32>> = chunks
                .iter()
                .filter_map(|c| {
                    let mut w = widths.clone();
                    let mut changed = false;
                    for &id in c {
                        if w[id] > opts.min_width {
                            w[id] -= 1;
                            changed = true;
                        }
                    }
                    changed.then_some(w)
                })
                .collect();
            evaluated += candidates.len();
            let results = par::map(opts.mode, &candidates, |w| evaluate(p, w, &ranges, opts));
            let hit = results
                .into_iter()
                .zip(candidates)
                .find_map(|(r, w)| r.filter(|e| e.cost < best.cost).map(|e| (w, e)));
            match hit {
                Some((w, e)) => {
                    widths = w;
                    best = e;
                    accepted += 1;
                    gran = 2usize.min(units.len());
                }
                None if gran < units.len() => gran = (gran * 2).min(units.len()),
                None => break,
            }
        }
    }

    let mut program = p.clone();
    program.formats = best.formats;
    Ok(TuningResult {
        program,
        analysis: best.analysis,
        cost: best.cost,
        uniform_width,
        uniform_cost,
        accepted_steps: accepted,
        candidates_evaluated: evaluated,
        wall_time_ms: start.elapsed().as_millis(),
    })
}

fn partition(units: &[Vec<usize>], n: usize) -> Vec<Vec<usize>> {
    let n = n.max(1);
    let size = units.len().div_ceil(n);
    units
        .chunks(size.max(1))
        .map(|c| c.iter().flatten().copied().collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;
    use crate::kernel::{parse_term, q};
    use crate::solver::interval::Interval;

    fn robot() -> StraightLineProgram {
        let t = parse_term("-1/(0.01*(p+10)) + 19/2").unwrap();
        lower_term(&t, &["p".into()], &[Interval::new(q("0"), q("100"))]).unwrap()
    }

    #[test]
    fn tuned_cost_never_exceeds_uniform() {
        let r = tune(&robot(), &TuneOptions::new(q("1/4"))).unwrap();
        assert!(r.cost <= r.uniform_cost);
        assert!(*r.total_error_bound() <= q("1/4"));
        assert!(r.max_width() <= 20, "{:?}", r.program.formats);
    }

    #[test]
    fn deterministic_across_modes() {
        let mut a = TuneOptions::new(q("1/64"));
        a.mode = Mode::Sequential;
        let mut b = a.clone();
        b.mode = Mode::Workers(3);
        let (ra, rb) = (tune(&robot(), &a).unwrap(), tune(&robot(), &b).unwrap());
        assert_eq!(ra.program.formats, rb.program.formats);
    }

    #[test]
    fn impossible_target() {
        let mut o = TuneOptions::new(q("0"));
        o.max_width = 12;
        assert_eq!(tune(&robot(), &o).unwrap_err(), FixedError::Infeasible { max_width: 12 });
    }
}

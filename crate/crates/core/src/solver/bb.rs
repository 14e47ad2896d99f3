//! Interval branch-and-bound for universal nonlinear obligations.

use std::collections::VecDeque;
use std::time::Instant;

use super::interval::{Compiled, IBox, Tri};
use super::{Prepared, SolveOptions, SolverError, Stats, Status, Verdict};
use crate::kernel::{Rational, Valuation};
use crate::par;

const BATCH: usize = 256;
const CORNER_PROBES: usize = 8;

enum Outcome {
    Proven,
    Counterexample(Valuation),
    Split(IBox, IBox),
    Stuck,
}

/// Proves or refutes `∀x̄ φ` over `opts.domain` (plus bounds read off the
/// premise) by recursive bisection.
pub fn bb_decide(f: &crate::kernel::Formula, opts: &SolveOptions) -> Result<Verdict, SolverError> {
    bb_decide_prepared(&Prepared::new(f, None), opts)
}

pub fn bb_decide_prepared(prep: &Prepared, opts: &SolveOptions) -> Result<Verdict, SolverError> {
    let start = Instant::now();
    let deadline = opts.deadline();
    let mut stats = Stats::default();
    let finish = |status: Status, mut stats: Stats| {
        stats.wall_time_ms = start.elapsed().as_millis();
        Ok(Verdict { status, stats })
    };
    if !prep.matrix.is_quantifier_free() {
        return finish(Status::Unknown("nonlinear alternation".into()), stats);
    }
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
    let compiled = Compiled::new(&prep.matrix)?;
    let root_widths: Vec<(String, Rational)> =
        root.0.iter().map(|(k, i)| (k.clone(), i.width())).collect();

    let process = |b: &IBox, depth: usize| -> Result<Outcome, SolverError> {
        let tri = compiled.eval(b);
        if tri == Tri::True {
            return Ok(Outcome::Proven);
        }
        let mut probes = vec![b.center()];
        probes.extend(b.corners(CORNER_PROBES));
        for p in probes {
            if let Some(cex) = confirmed_violation(prep, &p)? {
                return Ok(Outcome::Counterexample(cex));
            }
        }
        if depth >= opts.depth_cap {
            return Ok(Outcome::Stuck);
        }
        // Split the dimension that is widest relative to the root box.
        let mut best: Option<(&String, Rational)> = None;
        for (x, w0) in &root_widths {
            if w0.is_zero() {
                continue;
            }
            let w = b.0[x].width();
            if w <= opts.eps_split {
                continue;
            }
            let rel = w / w0.clone();
            if best.as_ref().map_or(true, |(_, r)| rel > *r) {
                best = Some((x, rel));
            }
        }
        Ok(match best {
            None => Outcome::Stuck,
            Some((x, _)) => {
                let (l, r) = b.split(x);
                Outcome::Split(l, r)
            }
        })
    };

    let mut queue: VecDeque<(IBox, usize)> = VecDeque::from([(root, 0)]);
    let mut stuck = 0usize;
    while !queue.is_empty() {
        if deadline.is_some_and(|d| Instant::now() > d) {
            return finish(Status::Unknown("timeout".into()), stats);
        }
        let n = queue.len().min(BATCH);
        let batch: Vec<(IBox, usize)> = queue.drain(..n).collect();
        let results = par::map(opts.mode, &batch, |(b, d)| process(b, *d));
        for ((_, d), r) in batch.iter().zip(results) {
            stats.boxes_explored += 1;
            stats.depth_max = stats.depth_max.max(*d);
            match r? {
                Outcome::Proven => {}
                Outcome::Counterexample(c) => return finish(Status::Counterexample(c), stats),
                Outcome::Split(a, b) => {
                    queue.push_back((a, d + 1));
                    queue.push_back((b, d + 1));
                }
                Outcome::Stuck => stuck += 1,
            }
        }
    }
    if stuck > 0 {
        return finish(
            Status::Unknown(format!("depth cap reached on {stuck} boxes")),
            stats,
        );
    }
    finish(Status::Proven, stats)
}

/// Exact check of one point; returns the completed valuation restricted to
/// the obligation's universal variables if it falsifies the matrix.
pub(crate) fn confirmed_violation(
    prep: &Prepared,
    point: &Valuation,
) -> Result<Option<Valuation>, SolverError> {
    let full = match prep.complete(point) {
        Ok(f) => f,
        Err(SolverError::Kernel(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let fast = if prep.matrix.is_quantifier_free() {
        match prep.matrix.evaluate(&full) {
            Ok(v) => v,
            Err(_) => return Ok(None),
        }
    } else {
        false
    };
    if fast {
        return Ok(None);
    }
    match prep.holds_at(&full) {
        Ok(false) => Ok(Some(
            full.iter()
                .filter(|(k, _)| prep.original_vars.contains(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        )),
        Ok(true) => Ok(None),
        Err(SolverError::Kernel(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

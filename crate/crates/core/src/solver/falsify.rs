//! Sampling-based falsification of universal obligations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::bb::confirmed_violation;
use super::interval::IBox;
use super::{Prepared, SolverError};
use crate::kernel::{Formula, Rational, Valuation};
use crate::nnet::NetworkImpl;
use crate::par::{self, Mode};

const CHUNK: usize = 4096;
const GRID_BITS: u32 = 20;

/// Searches corners, boundary points and seeded random points of the
/// search box for an exact violation of the outermost universal block.
/// Inner quantifiers are decided by QE at each point.
pub fn falsify(
    f: &Formula,
    network: Option<&NetworkImpl>,
    domain: &IBox,
    samples: usize,
    seed: u64,
    mode: Mode,
) -> Result<Option<Valuation>, SolverError> {
    let prep = Prepared::new(f, network);
    falsify_prepared(&prep, domain, samples, seed, mode)
}

pub fn falsify_prepared(
    prep: &Prepared,
    domain: &IBox,
    samples: usize,
    seed: u64,
    mode: Mode,
) -> Result<Option<Valuation>, SolverError> {
    let bx = prep.search_box(domain)?;
    if bx.get("__empty").is_some() || samples == 0 {
        return Ok(None);
    }
    let corners = bx.corners(64);
    let point = |i: usize| -> Valuation {
        if i < corners.len() {
            return corners[i].clone();
        }
        sample_point(&bx, seed, i as u64)
    };
    let hit = par::find_first(mode, samples, CHUNK, |i| {
        confirmed_violation(prep, &point(i)).transpose()
    });
    match hit {
        None => Ok(None),
        Some((_, r)) => r.map(Some),
    }
}

/// The `i`-th sample of a seeded stream: each coordinate is an endpoint,
/// the midpoint, 0 (if inside) or a point on a 2^-20 grid of the interval.
pub fn sample_point(bx: &IBox, seed: u64, i: u64) -> Valuation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ i.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    bx.0.iter()
        .map(|(k, iv)| {
            let v = match rng.gen_range(0..16) {
                0 => iv.lo.clone(),
                1 => iv.hi.clone(),
                2 => iv.mid(),
                3 if iv.contains(&Rational::zero()) => Rational::zero(),
                _ => {
                    let t = Rational::new(rng.gen_range(0..=(1i64 << GRID_BITS)), 1i64 << GRID_BITS);
                    &iv.lo + &(&iv.width() * &t)
                }
            };
            (k.clone(), v)
        })
        .collect()
}

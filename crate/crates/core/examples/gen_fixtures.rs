//! Writes the bundled 2-8-8-1 regression and 2-8-8-3 classifier networks.
//!
//! Inputs are `(p, v)`. Each network has a hand-placed core computing the
//! intended policy plus seeded filler neurons (weights multiples of 1/64)
//! that feed the second layer but not the output, except one filler that
//! adds `relu(v)/512` to the regression output.
//!
//! Usage: `cargo run -p robustenv-core --example gen_fixtures [dir]`

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robustenv::kernel::Rational;
use robustenv::nnet::{Activation, Layer, ReluNetwork};

fn r(n: i64, d: i64) -> Rational {
    Rational::new(n, d)
}

fn filler(rng: &mut ChaCha8Rng, cols: usize) -> (Vec<Rational>, Rational) {
    let row = (0..cols).map(|_| r(rng.gen_range(-32..=32), 64)).collect();
    (row, r(rng.gen_range(-64..=64), 64))
}

/// Layer 1: `n0 = relu(p/2)`, `n1 = relu(p/2 - k)`, `n7 = relu(v/8)`,
/// fillers n2..n6.
fn first_layer(rng: &mut ChaCha8Rng, k: i64) -> Layer {
    let mut weights = vec![vec![r(1, 2), r(0, 1)], vec![r(1, 2), r(0, 1)]];
    let mut biases = vec![r(0, 1), r(-k, 1)];
    for _ in 2..7 {
        let (w, b) = filler(rng, 2);
        weights.push(w);
        biases.push(b);
    }
    weights.push(vec![r(0, 1), r(1, 8)]);
    biases.push(r(0, 1));
    Layer {
        weights,
        biases,
        activation: Activation::Relu,
    }
}

/// Layer 2: `m0 = relu(n0 - n1)`, `m1 = relu(n1)`, `m7 = relu(n7)`,
/// fillers m2..m6.
fn second_layer(rng: &mut ChaCha8Rng) -> Layer {
    let unit = |i: usize, s: i64| (0..8).map(|j| r(if j == i { s } else { 0 }, 1)).collect::<Vec<_>>();
    let mut m0 = unit(0, 1);
    m0[1] = r(-1, 1);
    let mut weights = vec![m0, unit(1, 1)];
    let mut biases = vec![r(0, 1), r(0, 1)];
    for _ in 2..7 {
        let (w, b) = filler(rng, 8);
        weights.push(w);
        biases.push(b);
    }
    weights.push(unit(7, 1));
    biases.push(r(0, 1));
    Layer {
        weights,
        biases,
        activation: Activation::Relu,
    }
}

/// `y = m0 - 1 + m7/64`, i.e. `min(p/2, 9) - 1 + relu(v)/512`.
fn regression(seed: u64) -> ReluNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l1 = first_layer(&mut rng, 9);
    let l2 = second_layer(&mut rng);
    let mut out = vec![r(0, 1); 8];
    out[0] = r(1, 1);
    out[7] = r(1, 64);
    let l3 = Layer {
        weights: vec![out],
        biases: vec![r(-1, 1)],
        activation: Activation::Identity,
    };
    ReluNetwork::new("robot-regression", 2, vec![l1, l2, l3]).expect("dimensions")
}

/// Scores for actions `(-2, 0, +2)`: `2 - m0`, `1`, `m0 - 3` with
/// `m0 = min(p/2, 16)`.
fn classifier(seed: u64) -> ReluNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l1 = first_layer(&mut rng, 16);
    let l2 = second_layer(&mut rng);
    let mut s0 = vec![r(0, 1); 8];
    s0[0] = r(-1, 1);
    let s1 = vec![r(0, 1); 8];
    let mut s2 = vec![r(0, 1); 8];
    s2[0] = r(1, 1);
    let l3 = Layer {
        weights: vec![s0, s1, s2],
        biases: vec![r(2, 1), r(1, 1), r(-3, 1)],
        activation: Activation::Identity,
    };
    ReluNetwork::new("robot-classifier", 2, vec![l1, l2, l3]).expect("dimensions")
}

fn main() -> std::io::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures"));
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("regression.nnet"), regression(7).to_text())?;
    std::fs::write(dir.join("classifier.nnet"), classifier(11).to_text())?;
    println!("wrote {}", dir.display());
    Ok(())
}

//! Robustness checking of control envelopes under angelic perturbations,
//! implementation verification, and fixed-point synthesis.

pub mod cli;
pub mod fixedpoint;
pub mod hybrid;
pub mod kernel;
pub mod monitor;
pub mod nnet;
pub mod obligations;
pub mod par;
pub mod solver;

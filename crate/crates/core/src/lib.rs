//! Taylor-type expansions and simulation tools for stochastic differential
//! equations driven by fractional Brownian motion.
//!
//! * [`tree_enum`] enumerates labelled trees and evaluates elementary differentials.
//! * [`symexpr`] parses and differentiates coefficient expressions.
//! * [`gaussian_moments`] computes expected iterated integrals of fBm.
//! * [`fbm_sim`] samples fBm paths and their areas.
//! * [`rough_core`] implements increments, sewing and controlled paths.
//! * [`sde_solver`] integrates the equation and its variational equation.
//! * [`expansion_engine`] assembles the small-time expansion.
//! * [`harness`] compares expansions with Monte Carlo and runs the check suite.

pub mod error;
pub mod expansion_engine;
pub mod fbm_sim;
pub mod gaussian_moments;
pub mod harness;
pub mod rough_core;
pub mod sde_solver;
pub mod stats;
pub mod symexpr;
pub mod tree_enum;

pub use error::{Error, Result};

//! The black-box interface the round loop optimizes against.
//!
//! The loop always maximizes; problems with a minimization sense expose
//! their negation. Only designs and rewards ever cross client boundaries —
//! observed responses stay behind this trait.

use crate::error::Result;
use crate::rng::Stream;

pub trait Objective: Sync {
    fn dim(&self) -> usize;

    /// Shared search box.
    fn bounds(&self) -> &[(f64, f64)];

    /// Runs one experiment: the sense-adjusted objective plus any
    /// observation noise.
    fn observe(&self, x: &[f64], rng: &mut Stream) -> Result<f64>;

    /// Noiseless sense-adjusted value, used for regret accounting.
    fn objective_value(&self, x: &[f64]) -> Result<f64>;

    /// Known optimal response of the sense-adjusted problem.
    fn optimal_value(&self) -> f64;
}

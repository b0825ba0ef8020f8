//! Exact randomness processing: extraction of fair bits from biased
//! sources, correction of almost-independent bits into exactly independent
//! ones, and the assembly that thickens an i.i.d. Bernoulli(p) process into
//! an i.i.d. Bernoulli(p') process (and a Poisson process into a denser
//! one). Everything distribution-critical runs on exact rational arithmetic
//! with lazy refinement; almost-surely terminating loops carry explicit
//! budgets so that measure-zero inputs surface as errors instead of wrong
//! answers.

pub mod bits;
pub mod corrector;
pub mod distinguisher;
pub mod error;
pub mod extractor;
pub mod poisson;
pub mod rational;
pub mod streams;
pub mod thickener;

pub use bits::{Bias, Bit, BitStream};
pub use error::{Error, Result};
pub use rational::{Interval, Rational};

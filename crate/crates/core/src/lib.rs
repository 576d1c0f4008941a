//! Planning template length, decision threshold and storage for biometric
//! identification with binary templates.
//!
//! Templates are uniformly random `k`-bit vectors; probes are templates with
//! independent bit flips; identification returns the nearest template in
//! Hamming distance. All probabilities are handled as natural logarithms
//! ([`LogProb`]) so that populations of `10^10` users stay representable.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, the precision all accuracy targets assume.

pub mod birthday;
pub mod calibration;
pub mod error;
pub mod noisy_match;
pub mod open_world;
pub mod prob;
pub mod scalar;
pub mod simulator;

pub use error::{Error, Result};
pub use scalar::Real;

pub use birthday::{BirthdayQuery, CapacityReport};
pub use calibration::{CubicFit, CubicPoly, DbRow, LinearFit, SweepRecord};
pub use noisy_match::{BoundPair, IntervalPartition, MatchModel};
pub use open_world::{ErrorBudget, OpenWorldModel, OpenWorldRates, ThresholdPlan};
pub use prob::{BinomialSpec, LogProb};
pub use simulator::{Population, SimConfig, SimResult, Template};

pub type LogProb64 = LogProb<f64>;
pub type BinomialSpec64 = BinomialSpec<f64>;
pub type BirthdayQuery64 = BirthdayQuery<f64>;
pub type CapacityReport64 = CapacityReport<f64>;
pub type MatchModel64 = MatchModel<f64>;
pub type BoundPair64 = BoundPair<f64>;
pub type OpenWorldModel64 = OpenWorldModel<f64>;
pub type OpenWorldRates64 = OpenWorldRates<f64>;
pub type ErrorBudget64 = ErrorBudget<f64>;
pub type SweepRecord64 = SweepRecord<f64>;
pub type LinearFit64 = LinearFit<f64>;
pub type CubicPoly64 = CubicPoly<f64>;
pub type CubicFit64 = CubicFit<f64>;
pub type DbRow64 = DbRow<f64>;

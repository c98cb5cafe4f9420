//! Metric elicitation from pairwise preference feedback.
//!
//! An oracle hides a performance metric over classifier rate vectors and only
//! answers "do you prefer this rate vector over that one?". The modules here
//! recover linear metrics ([`lpme`]), quadratic metrics ([`qpme`]) and
//! group-fair quadratic metrics ([`fair`]) from such answers, while keeping
//! every query inside a sphere of feasible rates ([`geometry`]).
//!
//! [`experiments`] reproduces the simulated-oracle studies and [`session`]
//! drives an elicitation step by step for a human answering over HTTP.

pub mod error;
pub mod experiments;
pub mod fair;
pub mod geometry;
mod lp;
pub mod lpme;
pub mod metrics;
pub mod oracle;
pub mod qpme;
pub mod session;

pub use error::{Error, Result};
pub use geometry::{AngleVector, RateKind, RateSpace, RateVector, Sphere};
pub use metrics::{
    FairQuadraticMetric, GroupModel, GroupRateProfile, QuadraticMetric, ShiftedQuadratic,
};
pub use oracle::{NoiseMode, Oracle, SimulatedOracle, Transcript};

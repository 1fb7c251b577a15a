//! Statistical time-domain channel modelling for in-door powerline networks.
//!
//! The crate covers the full chain: random topologies, an exact
//! transmission-line solver, statistical fitting of the resulting impulse
//! responses, a generator that samples new channels from the fitted model,
//! and a few applications (capacity, impulsive noise propagation).

pub mod apps;
pub mod cable;
pub mod changen;
pub mod dsp;
pub mod error;
pub mod pipeline;
pub mod rng;
pub mod statfit;
pub mod stats;
pub mod tlsolver;
pub mod topology;

pub use error::{Error, Result};

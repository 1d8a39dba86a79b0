//! Optimal transmit-power allocation minimizing convex costs of packet
//! completion times in interference-limited wireless packet networks.
//!
//! The nonconvex rate constraint is convexified by a log change of
//! variables on powers and SINR targets, giving a smooth program solved
//! by a log-barrier Newton method. On top of that core sit:
//!
//! - completion-time / rate region tracing by weighted-sum sweeps,
//! - power adaptation across discrete fading states (average-power or
//!   short-term constraints, expected-time or expected-cost objectives),
//! - robust power control under distributional channel knowledge with
//!   outage probability constraints (closed-form Rayleigh reliability,
//!   Monte Carlo / smoothed sample-average approximation otherwise).
//!
//! With the default `parallel` feature, Monte Carlo sampling, grid
//! oracles, and per-weight sweeps run data-parallel on rayon; disabling
//! the feature yields an identical sequential path.

pub mod costs;
pub mod error;
pub mod fading;
pub mod model;
pub mod numeric;
pub mod region;
pub mod robust;
pub mod solver;
pub mod verify;

mod par;

pub use error::{Error, Result};

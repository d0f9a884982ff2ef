//! Rare-event probability estimation with Subset Simulation.
//!
//! The generic engine lives in [`subset`]. Two problems are built on it:
//! a 2D Gaussian toy problem ([`toy`]) with a quadrature oracle, and the
//! probability of conflict between an observer aircraft and a tracked,
//! non-cooperative intruder ([`conflict`]), using the point-mass kinematics
//! in [`dynamics`] and the Kalman filter in [`tracking`]. Engagement
//! geometries are built by [`scenarios`]; [`analysis`] runs the
//! coefficient-of-variation study comparing Subset Simulation with Direct
//! Monte Carlo at matched sample budgets.

pub mod analysis;
pub mod cli;
pub mod conflict;
pub mod dynamics;
pub mod error;
pub mod rng;
pub mod scenarios;
pub mod subset;
pub mod toy;
pub mod tracking;

pub use error::{Error, Result};

//! Simulation and analysis toolkit for pulsed, polarization-entangled
//! down-conversion sources.
//!
//! The crate is organised around the detection chain of a pulsed source:
//!
//! * [`params`] holds the physical configuration and shared value types.
//! * [`multipair`] evaluates the closed-form multi-pair visibility model.
//! * [`state`] provides two-qubit polarization-state algebra.
//! * [`montecarlo`] simulates the source and detectors pulse by pulse.
//! * [`fringe`] scans and fits two-photon interference fringes.
//! * [`chsh`] and [`tomography`] implement the entanglement witnesses.
//! * [`budget`] composes accidental-coincidence rate budgets.
//! * [`harness`] ties everything to CSV outputs and scenario presets.

pub mod budget;
pub mod chsh;
pub mod config;
pub mod error;
pub mod fringe;
pub mod harness;
pub mod montecarlo;
pub mod multipair;
pub mod params;
pub mod rng;
pub mod state;
pub mod tomography;

pub use error::{Error, ErrorKind, Result};
pub use params::{AnalyzerPair, Basis, CountRecord, PairDistribution, SourceParams};
pub use state::TwoQubitState;

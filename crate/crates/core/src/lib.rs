//! Monte Carlo simulation of a real-time quantum feedback loop that prepares
//! and stabilizes photon-number states of a cavity field.
//!
//! The loop combines weak QND measurements by atomic qubits, a Bayesian
//! filter aware of detector imperfections and transport delay, and a
//! Lyapunov controller acting through small coherent displacements.

pub mod controller;
pub mod dissipation;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod fock;
pub mod io;
pub mod measurement;
pub mod reconstruction;

pub use error::{Error, Result};

//! Cavity-QED quantum memory: a cavity field qubit protected by a beam of
//! two-level atoms, modeled numerically with a Lindblad integrator and
//! analytically with closed-form dwell times and fidelities.

pub mod beam;
pub mod closed_form;
pub mod error;
pub mod experiment;
pub mod hilbert;
pub mod lindblad;

pub use error::{Error, Result};

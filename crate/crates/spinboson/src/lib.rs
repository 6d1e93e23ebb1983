//! Classical simulation toolkit for spin-boson models with structured baths.
//!
//! A two-level system ("spin") couples through sigma_z to a set of damped or
//! dephased harmonic modes that stand in for a continuous environment.  The
//! crate covers the full workflow:
//!
//! * dense operator algebra on truncated spin (x) Fock spaces ([`hilbert`]),
//! * open-system model construction and unit mapping ([`models`]),
//! * Lindblad / unitary / time-convolutionless propagation ([`propagate`]),
//! * two- and four-point bath correlation functions ([`correlation`]),
//! * stochastic unraveling of thermal preparation and dephasing together
//!   with parameter recovery from ensemble data ([`stochastic`]),
//! * compilation of the model into discrete pulse schedules and their
//!   calibration scans ([`pulses`]),
//! * discretization of continuous spectral densities into Lorentzian peak
//!   sets ([`specfit`]).
//!
//! Everything is deterministic given explicit seeds.  Data-parallel loops
//! (trajectory ensembles, calibration grids, population optimizers) go
//! through [`exec`], which uses rayon when the `parallel` feature (default)
//! is enabled and plain iteration otherwise.

pub mod correlation;
pub mod error;
pub mod exec;
pub mod hilbert;
pub mod models;
pub mod propagate;
pub mod pulses;
pub mod specfit;
pub mod stochastic;

pub use error::{Error, Result};

//! Linear-quadratic mean field games on truncated Hilbert spaces.
//!
//! The pipeline is: build a [`GameModel`], solve the Riccati equation and the
//! mean-field fixed point ([`mean_field::fixed_point`]), check the contraction
//! certificate, then confront the limiting equilibrium with Monte Carlo
//! simulations of the finite population ([`population`], [`experiments`]).

pub mod error;
pub mod experiments;
pub mod io;
pub mod lq;
pub mod mean_field;
pub mod model;
pub mod noise;
pub mod population;
pub mod spectral;

pub use error::{MfgError, Result};
pub use mean_field::{ContractionCertificate, EquilibriumSolution, MeanFieldPath};
pub use model::GameModel;
pub use noise::{NoiseBatch, TimeGrid};

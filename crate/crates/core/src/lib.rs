//! Simulation and estimation of excursions of Lévy processes reflected at
//! their running infimum.

pub mod error;
pub mod excursion;
pub mod levy_model;
pub mod measure_est;
pub mod pathsim;
pub mod rng;
pub mod runner;
pub mod scalefn;
pub mod stats;

pub use error::{Error, Result};
pub use rng::RngStream;

//! Sequential placement of Lagrangian drifters for learning time-dependent
//! 2D vector fields with a temporal Helmholtz Gaussian process.
//!
//! Modules, bottom up: [`kernels`] (covariances), [`gp`] (dense inference and
//! information gain), [`spde`] (state-space sampling, filtering, smoothing),
//! [`ocean`] (grids, fields, advection, observations), [`policies`] (the six
//! placement rules) and [`experiment`] (deployment loop, metrics, ablations).

pub mod error;
pub mod experiment;
pub mod gp;
pub mod kernels;
pub mod linalg;
pub mod ocean;
pub mod optim;
pub mod oracle;
pub mod policies;
pub mod rng;
pub mod sobol;
pub mod spde;

pub use error::{Error, Result};

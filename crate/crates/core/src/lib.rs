//! Generalized indirect inference with a change of variables.
//!
//! Simulated outcomes of discrete-choice, switching and queueing models are
//! step functions of the parameters. Re-expressing each uniform draw through
//! a local change of variables anchored at `θ*` turns the simulated
//! auxiliary moments into smooth functions of `θ`, so forward-mode dual
//! numbers deliver exact pathwise derivatives and Newton's method applies.

pub mod autodiff;
pub mod auxiliary;
pub mod cov;
pub mod data;
pub mod error;
pub mod estimate;
pub mod linalg;
pub mod mc;
pub mod models;
pub mod randsrc;
pub mod selftest;
pub mod sim;

pub use error::{Error, Result};

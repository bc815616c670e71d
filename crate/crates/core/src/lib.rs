//! Numerical toolkit for the elliptic Ruijsenaars–Schneider model: theta functions with
//! characteristics, intertwining vectors, Belavin's R-matrix, factorised Lax operators,
//! Baecklund transformations, discrete-time dynamics and a randomised identity suite.

pub mod belavin;
pub mod cli;
pub mod discrete;
pub mod elliptic;
pub mod error;
pub mod identity;
pub mod intertwiners;
pub mod lax;
pub mod linalg;

pub use elliptic::{ModelParams, TorusParams, C64};
pub use error::{Error, Result};

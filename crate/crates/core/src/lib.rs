//! Optimal spectral partitions of planar domains.

pub mod analysis;
pub mod cholesky;
pub mod config;
pub mod eigensolve;
pub mod energy;
pub mod error;
pub mod fem;
pub mod functional;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod optimizer;
pub mod par;
pub mod run;
pub mod sparse;

pub use error::{Error, Result};

//! H-infinity norms, spectral abscissae and fixed-order H-infinity controller
//! synthesis for linear retarded time-delay systems.

pub mod cli;
pub mod error;
pub mod grad;
pub mod hinf;
pub mod io;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod spectral;
pub mod stability;

pub use error::{Error, Result};

pub mod calibration;
pub mod cds;
pub mod error;
pub mod io;
pub mod mc;
pub mod model;
mod par;
pub mod pde;
pub mod scenario;
pub mod validation;

pub use error::{Error, Result};

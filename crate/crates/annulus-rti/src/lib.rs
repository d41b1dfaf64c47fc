pub mod cli;
pub mod dispersion;
pub mod error;
pub mod evolve;
pub mod field2d;
pub mod linalg;
pub mod modes;
pub mod parallel;
pub mod profiles;
pub mod radial_ops;
pub mod spline;
pub mod verify;

pub use error::{Error, Result};

pub mod assembly;
pub mod eigen;
pub mod error;
pub mod geometry;
pub mod model;
pub mod objective;
pub mod optimizer;
pub mod oracle;
pub mod quadrature;
pub mod scenario;
pub mod sensitivity;
pub mod sparse;
pub mod splines;
pub mod tracking;

pub use error::{Error, Result};

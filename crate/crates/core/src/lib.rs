pub mod bessel;
pub mod covmodel;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod likelihood;
pub mod optim;
pub mod predict;
pub mod simulate;
pub mod sparse;
pub mod taper;

pub use error::{Error, Result};

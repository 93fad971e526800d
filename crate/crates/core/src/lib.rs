pub mod colorsep;
pub mod error;
pub mod field;
pub mod grid;
pub mod halftone;
pub mod pipeline;
pub mod traverse;
pub mod voxelize;

pub use error::{Error, Result};

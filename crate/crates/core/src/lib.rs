pub mod checks;
pub mod error;
pub mod geometry;
pub mod layers;
pub mod trajectory;

pub use error::{Error, Result};
pub mod model;
pub mod synth;
pub mod formats;

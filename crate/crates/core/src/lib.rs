pub mod config;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod integrators;
pub mod learning;
pub mod mechanics;
pub mod numcore;
pub mod physnets;
pub mod plants;

pub use error::{Error, Result};

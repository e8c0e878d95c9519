pub mod config;
pub mod costs;
pub mod domain;
pub mod error;
pub mod gating;
pub mod harness;
pub mod inference;
pub mod io;
pub mod rng;
pub mod smo;
pub mod synth;

pub use domain::*;
pub use error::{Error, Result};

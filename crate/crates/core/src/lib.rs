pub mod baselines;
pub mod data;
pub mod error;
pub mod forecast;
pub mod harness;
pub mod inference;
pub mod latent;
pub mod likelihood;
pub mod model;

pub use error::{Error, Result};

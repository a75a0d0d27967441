pub mod auction;
pub mod core_pricing;
pub mod error;
pub mod eval;
pub mod game;
pub mod learner;
pub mod policy;
pub mod priors;
pub mod qp;
pub mod rng;

pub use error::{Error, Result};

//! Auction settings, winner determination and payment rules.

mod mechanism;
mod profile;
mod setting;

pub use mechanism::*;
pub use profile::{BidBatch, ProfileBatch, ValuationBatch};
pub use setting::*;

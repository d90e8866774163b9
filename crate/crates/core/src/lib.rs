//! Agent-based simulator of the sugarcane and sugar supply chain.

pub mod credit;
pub mod domain;
pub mod error;
pub mod farmer;
pub mod ledger;
pub mod market;
pub mod mill;
pub mod output;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod sweep;
pub mod water;

pub use error::{Error, Result};

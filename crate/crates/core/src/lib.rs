//! Decentralized SGD over time-varying gossip networks and its
//! Catalyst-accelerated variant.

pub mod catalyst;
pub mod dsgd;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod network;
pub mod problems;
pub mod seed;

pub use error::{Error, Result};

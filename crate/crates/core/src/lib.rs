//! Deterministic simulation of collaborative learning under Byzantine attack.
//!
//! Users train a shared dense model on local data and exchange additive
//! updates; robust aggregators score and filter those updates; strategic
//! adversaries craft updates against them; and the `games` harness measures
//! how well a participant can tell benign updates from harmful ones given
//! its own slice of the domain.

pub mod adversary;
pub mod aggregators;
pub mod data;
pub mod error;
pub mod games;
pub mod nn;
pub mod rng;
pub mod simulator;

pub use error::{Error, Result};

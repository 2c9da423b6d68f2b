//! Federated LoRA fine-tuning simulator.
//!
//! Compares three ways of federating low-rank adapters under client-level
//! differential privacy:
//!
//! * `joint-lora`: every client trains both factors and the server averages
//!   them independently;
//! * `ffa-lora`: the Gaussian-initialized `A` stays frozen, only `B` trains;
//! * `deer`: `B` and `A` train in alternating half-rounds so every aggregation
//!   sees a shared frozen factor, and the DP noise for each factor is shaped by
//!   the pseudo-inverse of the frozen one.

pub mod data;
pub mod error;
pub mod federation;
pub mod harness;
pub mod lora;
pub mod numerics;
pub mod privacy;

pub use error::{Error, Result};
pub use numerics::Matrix;

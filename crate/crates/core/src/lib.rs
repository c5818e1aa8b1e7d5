//! Deterministic simulator for asynchronous Byzantine-resilient SGD.
//!
//! The crate is organised around the pieces of a parameter-server run:
//!
//! - [`optim`]: cost functions, minibatch gradient estimation and the dampened
//!   update rule.
//! - [`filter`]: the Lipschitz filter and the frequency filter that decide
//!   whether a delivered gradient is applied.
//! - [`dampening`]: staleness dampening functions, the adaptive learning rate
//!   and the associated diagnostics.
//! - [`sim`]: a single-threaded discrete-event loop with honest and Byzantine
//!   workers.
//! - [`experiment`]: configuration, presets, replicate orchestration and
//!   metrics persistence.

pub mod dampening;
pub mod error;
pub mod experiment;
pub mod filter;
pub mod optim;
pub mod rng;
mod serde_real;
pub mod sim;
pub mod vecops;

pub use error::{Error, Result};

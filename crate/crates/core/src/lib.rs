//! Confounder feature acquisition for treatment-effect estimation.
//!
//! A known confounder `A` is missing not at random for most units. Each
//! round, an acquisition strategy picks which pool units should have `A`
//! revealed; effect estimators are refit and scored on a held-out test set
//! against noiseless potential outcomes.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, configuration and
//! the command line live in the `cfa` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod acquire;
pub mod data;
pub mod error;
pub mod estimators;
pub mod evaluate;
pub mod rng;
pub mod runner;
pub mod simulate;

pub use error::{Error, Result};

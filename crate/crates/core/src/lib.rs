#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod approximator;
pub mod dynamics;
pub mod entropy;
pub mod env;
pub mod error;
pub mod harness;
pub mod influence;
pub mod learner;
mod math;
pub mod rng;

pub use error::{Error, Result};

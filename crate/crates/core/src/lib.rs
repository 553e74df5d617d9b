//! Covering verification designs and L0 few-pixel robustness verification.

pub mod defaults;
pub mod cli;
pub mod coverdb;
pub mod design;
pub mod engine;
pub mod error;
pub mod gf;
pub mod nnverify;
pub mod pg;
pub mod planner;

pub use error::{Error, Result};

//! Experiment runner behind the `specguard` binary.

pub mod config;
pub mod error;
pub mod io;
pub mod plot;
pub mod run;

#![cfg_attr(not(any(test, feature = "std")), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments, clippy::type_complexity)]

extern crate alloc;

pub mod attack;
pub mod data;
pub mod error;
pub mod etf;
pub mod geometry;
pub mod network;
pub mod numerics;
pub mod regularize;
pub mod spectral;
pub mod train;

pub use error::{Error, Result};

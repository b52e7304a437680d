#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
pub mod attention;
pub mod bench;
pub mod cli;
pub mod dcf;
pub mod error;
pub mod features;
pub mod geometry;
pub mod graddesc;
pub mod math;
pub mod params;
pub mod raft;
pub mod tracker;

pub use error::{Error, Result};

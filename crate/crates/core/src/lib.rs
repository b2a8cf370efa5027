// NaN-rejecting guards are written as `!(x > 0.0)`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod detector;
pub mod error;
pub mod ingest;
pub mod io;
pub mod montecarlo;
pub mod num;
pub mod sim;
pub mod theory;

pub use error::{Error, Result};

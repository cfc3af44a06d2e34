// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod beamforming;
pub mod channel;
pub mod cli;
pub mod config;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod network;
pub mod pilots;
pub mod protocol;
pub mod seeds;
pub mod topology;

pub use error::{FbError, Result};

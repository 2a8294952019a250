//! File formats, dataset tooling, training driver, streaming pipeline and
//! reports around [`ee3d_core`].
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod config;
pub mod dataset;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod render;
pub mod report;
pub mod threads;
pub mod train;

pub use error::{Error, Result};

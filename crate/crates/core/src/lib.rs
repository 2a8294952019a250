//! Core algorithms for event-based egocentric 3D human pose estimation.
//!
//! The crate is `no_std` (it needs `alloc`) and carries no IO. It covers:
//!
//! * [`event`]: event types, time windowing and LNES encoding,
//! * [`fisheye`]: the polynomial omnidirectional camera model,
//! * [`sim`]: a log-intensity threshold event simulator,
//! * [`scene`]: an analytic 16-joint body, fisheye renderer and ground truth,
//! * [`augment`]: background event compositing,
//! * [`net`]: the pose network (encoder, decoders, confidence decoder,
//!   heatmap lifting, frame buffer) with hand-written gradients,
//! * [`metrics`]: MPJPE, PA-MPJPE, the 1€ filter and report aggregation.
#![no_std]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod augment;
pub mod error;
pub mod event;
pub mod fisheye;
pub(crate) mod math;
pub mod metrics;
pub mod net;
pub mod scene;
pub mod sim;

pub use error::{Error, Result};

/// Default LNES height in pixels.
pub const LNES_HEIGHT: usize = 192;
/// Default LNES width in pixels.
pub const LNES_WIDTH: usize = 256;
/// Heatmap / mask height.
pub const MAP_HEIGHT: usize = 48;
/// Heatmap / mask width.
pub const MAP_WIDTH: usize = 64;
/// Number of body joints.
pub const NUM_JOINTS: usize = 16;

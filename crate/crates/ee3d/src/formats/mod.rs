//! On-disk formats.

pub mod events;
pub mod image;
pub mod intrinsics;
pub mod model;

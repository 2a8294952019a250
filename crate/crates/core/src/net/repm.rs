//! Frame buffer recurrence: the previous composed frame, weighted by the
//! previous confidence, is added to the current LNES frame.

use alloc::format;

use super::config::NetConfig;
use super::tensor::{resize_bilinear, resize_bilinear_backward, Tensor};
use crate::event::LnesFrame;
use crate::{Error, Result};

/// State carried between consecutive frames of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBufferState {
    /// Composed input of the previous frame before normalization.
    pub prev_input: Tensor,
    /// Confidence map of the previous frame at decoder resolution.
    pub prev_confidence: Tensor,
}

impl FrameBufferState {
    pub fn zeros(cfg: &NetConfig) -> Self {
        FrameBufferState {
            prev_input: Tensor::zeros(2, cfg.input_height, cfg.input_width),
            prev_confidence: Tensor::zeros(1, cfg.map_height(), cfg.map_width()),
        }
    }

    pub fn reset(&mut self) {
        self.prev_input.data.fill(0.0);
        self.prev_confidence.data.fill(0.0);
    }

    /// Stores the current frame's raw input and confidence for the next one.
    pub fn update(&mut self, composed: &Composed, confidence: &Tensor) -> Result<()> {
        if composed.raw.shape() != self.prev_input.shape() || confidence.shape() != self.prev_confidence.shape() {
            return Err(Error::Shape("frame buffer update with mismatched shapes".into()));
        }
        self.prev_input.data.copy_from_slice(&composed.raw.data);
        self.prev_confidence.data.copy_from_slice(&confidence.data);
        Ok(())
    }
}

/// Result of [`compose_input`].
#[derive(Debug, Clone, PartialEq)]
pub struct Composed {
    /// Network input in `[-1, 1]`.
    pub input: Tensor,
    /// Unnormalized sum, stored as the next buffer frame.
    pub raw: Tensor,
    /// Divisor used by the normalization, `max(1, max(raw))`.
    pub scale: f64,
    /// Flat index of the maximum when it set the divisor.
    pub argmax: Option<usize>,
}

/// Converts an LNES frame to a `2 x H x W` tensor.
pub fn lnes_tensor(lq: &LnesFrame) -> Tensor {
    Tensor::from_vec(2, lq.height, lq.width, lq.values.iter().map(|&v| v as f64).collect())
}

pub fn compose_input(lq: &LnesFrame, buf: &FrameBufferState) -> Result<Composed> {
    let (_, h, w) = buf.prev_input.shape();
    if (lq.height, lq.width) != (h, w) || lq.values.len() != 2 * h * w {
        return Err(Error::Shape(format!(
            "LNES frame {}x{} does not match buffer {}x{}",
            lq.height, lq.width, h, w
        )));
    }
    let pc = &buf.prev_confidence;
    if pc.c != 1 || pc.h == 0 || pc.w == 0 {
        return Err(Error::Shape(format!("confidence buffer {:?} must be a single plane", pc.shape())));
    }
    let up = resize_bilinear(pc, h, w);
    let plane = h * w;
    let mut raw = Tensor::zeros(2, h, w);
    for ch in 0..2 {
        for i in 0..plane {
            let j = ch * plane + i;
            raw.data[j] = buf.prev_input.data[j] * up.data[i] + lq.values[j] as f64;
        }
    }
    let (argmax, max) = raw.data.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let (scale, argmax) = if max > 1.0 { (max, Some(argmax)) } else { (1.0, None) };
    let input = raw.map(|v| 2.0 * v / scale - 1.0);
    Ok(Composed { input, raw, scale, argmax })
}

/// Gradient of a loss on the composed input with respect to the previous
/// confidence map, holding the previous frame fixed.
pub fn compose_backward_confidence(composed: &Composed, buf: &FrameBufferState, g_input: &Tensor) -> Tensor {
    let s = composed.scale;
    let mut g_raw = g_input.map(|g| 2.0 * g / s);
    if let Some(am) = composed.argmax {
        let through_max: f64 = g_input.data.iter().zip(&composed.raw.data).map(|(g, r)| -2.0 * g * r / (s * s)).sum();
        g_raw.data[am] += through_max;
    }
    let (_, h, w) = g_raw.shape();
    let plane = h * w;
    let mut g_up = Tensor::zeros(1, h, w);
    for ch in 0..2 {
        for i in 0..plane {
            g_up.data[i] += g_raw.data[ch * plane + i] * buf.prev_input.data[ch * plane + i];
        }
    }
    let pc = &buf.prev_confidence;
    resize_bilinear_backward(&g_up, pc.h, pc.w)
}

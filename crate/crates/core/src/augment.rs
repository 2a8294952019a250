//! Background augmentation: composite human-only LNES frames onto LNES
//! frames of human-free recordings.

use alloc::format;
use alloc::vec::Vec;

use crate::event::{encode_lnes, window_events, EventStream, LnesFrame, TimeWindow};
use crate::scene::Mask;
use crate::{Error, Result};

/// `clamp(bg * (1 - mask) + lq, 0, 1)`. A mask coarser than the frame by
/// an integer factor is upsampled nearest-neighbour.
pub fn augment_lnes(lq: &LnesFrame, mask: &Mask, bg: &LnesFrame) -> Result<LnesFrame> {
    if lq.height != bg.height || lq.width != bg.width {
        return Err(Error::Shape(format!(
            "frame {}x{} vs background {}x{}",
            lq.height, lq.width, bg.height, bg.width
        )));
    }
    let (h, w) = (lq.height, lq.width);
    if mask.height == 0 || mask.width == 0 || h % mask.height != 0 || w % mask.width != 0 || h / mask.height != w / mask.width {
        return Err(Error::Shape(format!("mask {}x{} does not tile frame {h}x{w}", mask.height, mask.width)));
    }
    let f = h / mask.height;
    let plane = h * w;
    let mut out = lq.clone();
    for y in 0..h {
        let mrow = &mask.values[(y / f) * mask.width..(y / f + 1) * mask.width];
        for x in 0..w {
            let keep = 1.0 - mrow[x / f];
            for c in 0..2 {
                let i = c * plane + y * w + x;
                out.values[i] = (bg.values[i] * keep + lq.values[i]).clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

/// Sequential supply of background LNES frames with wraparound.
#[derive(Debug, Clone)]
pub struct AugmentSource {
    stream: EventStream,
    windows: Vec<(TimeWindow, core::ops::Range<usize>)>,
    cursor: usize,
}

impl AugmentSource {
    pub fn new(stream: EventStream, duration: u64) -> Result<Self> {
        stream.validate()?;
        let mut offset = 0;
        let windows = window_events(&stream.events, duration)?
            .into_iter()
            .map(|(w, s)| {
                let range = offset..offset + s.len();
                offset += s.len();
                (w, range)
            })
            .collect();
        Ok(AugmentSource { stream, windows, cursor: 0 })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Moves the cursor to window `i` (modulo the window count).
    pub fn seek(&mut self, i: usize) {
        if !self.windows.is_empty() {
            self.cursor = i % self.windows.len();
        }
    }

    /// Next background frame; all zeros when the recording has no events.
    pub fn next_frame(&mut self, height: usize, width: usize) -> Result<LnesFrame> {
        if self.windows.is_empty() {
            return Ok(LnesFrame::zeros(height, width));
        }
        let (window, range) = self.windows[self.cursor].clone();
        self.cursor = (self.cursor + 1) % self.windows.len();
        encode_lnes(&self.stream.events[range], window, height, width)
    }
}

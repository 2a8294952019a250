//! Event domain types, windowing and the LNES time-surface encoding.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Sign of a brightness change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn from_sign(p: i8) -> Result<Self> {
        match p {
            1 => Ok(Polarity::Positive),
            -1 => Ok(Polarity::Negative),
            other => Err(Error::InvalidArgument(format!("polarity must be -1 or +1, got {other}"))),
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    /// LNES channel: 0 for positive, 1 for negative.
    pub fn channel(self) -> usize {
        match self {
            Polarity::Positive => 0,
            Polarity::Negative => 1,
        }
    }
}

/// A single sensor event. `t` is in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub t: u64,
    pub p: Polarity,
}

impl Event {
    pub fn new(x: u16, y: u16, t: u64, p: Polarity) -> Self {
        Event { x, y, t, p }
    }
}

/// A time-ordered event sequence from a sensor of known size.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventStream {
    pub events: Vec<Event>,
    pub width: u16,
    pub height: u16,
}

impl EventStream {
    /// Builds a stream, checking bounds and timestamp order.
    pub fn new(events: Vec<Event>, width: u16, height: u16) -> Result<Self> {
        let stream = EventStream { events, width, height };
        stream.validate()?;
        Ok(stream)
    }

    pub fn empty(width: u16, height: u16) -> Self {
        EventStream { events: Vec::new(), width, height }
    }

    pub fn validate(&self) -> Result<()> {
        let mut last = 0u64;
        for (i, e) in self.events.iter().enumerate() {
            if e.x >= self.width || e.y >= self.height {
                return Err(Error::OutOfBounds(format!(
                    "event {i} at ({}, {}) outside {}x{}",
                    e.x, e.y, self.width, self.height
                )));
            }
            if e.t < last {
                return Err(Error::InvalidArgument(format!(
                    "timestamps decrease at event {i} ({} < {last})",
                    e.t
                )));
            }
            last = e.t;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// A window `[t0, t0 + duration]` in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeWindow {
    pub t0: u64,
    pub duration: u64,
}

impl TimeWindow {
    pub fn new(t0: u64, duration: u64) -> Result<Self> {
        if duration == 0 {
            return Err(Error::InvalidArgument("window duration must be positive".into()));
        }
        Ok(TimeWindow { t0, duration })
    }

    pub fn end(&self) -> u64 {
        self.t0 + self.duration
    }

    pub fn contains(&self, t: u64) -> bool {
        t >= self.t0 && t - self.t0 <= self.duration
    }
}

/// Splits a sorted event slice into back-to-back windows.
///
/// Each window starts at the first event not yet consumed and takes every
/// event with `t - t0 <= duration`. Concatenating the returned slices
/// reproduces the input.
pub fn window_events(events: &[Event], duration: u64) -> Result<Vec<(TimeWindow, &[Event])>> {
    if duration == 0 {
        return Err(Error::InvalidArgument("window duration must be positive".into()));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start < events.len() {
        let t0 = events[start].t;
        let len = events[start..].partition_point(|e| e.t - t0 <= duration);
        if len == 0 {
            return Err(Error::InvalidArgument("events are not sorted by timestamp".into()));
        }
        out.push((TimeWindow { t0, duration }, &events[start..start + len]));
        start += len;
    }
    Ok(out)
}

/// Two-channel locally normalised event surface, stored channel-major
/// (`[channel][row][col]`). Channel 0 holds positive events, channel 1
/// negative ones.
#[derive(Debug, Clone, PartialEq)]
pub struct LnesFrame {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl LnesFrame {
    pub fn zeros(height: usize, width: usize) -> Self {
        LnesFrame { height, width, values: vec![0.0; 2 * height * width] }
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, channel: usize) -> usize {
        (channel * self.height + y) * self.width + x
    }

    pub fn get(&self, y: usize, x: usize, channel: usize) -> f32 {
        self.values[self.index(y, x, channel)]
    }

    pub fn set(&mut self, y: usize, x: usize, channel: usize, v: f32) {
        let i = self.index(y, x, channel);
        self.values[i] = v;
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Channel plane as a slice.
    pub fn channel(&self, channel: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.values[channel * n..(channel + 1) * n]
    }
}

/// Encodes one window of events into a fresh LNES frame.
pub fn encode_lnes(events: &[Event], window: TimeWindow, height: usize, width: usize) -> Result<LnesFrame> {
    let mut frame = LnesFrame::zeros(height, width);
    encode_lnes_into(&mut frame, events, window)?;
    Ok(frame)
}

/// Encodes into an existing frame, overwriting its contents.
///
/// Every event writes `(t - t0) / T` at its pixel and polarity channel, so
/// the last event at a location determines the value.
pub fn encode_lnes_into(frame: &mut LnesFrame, events: &[Event], window: TimeWindow) -> Result<()> {
    if window.duration == 0 {
        return Err(Error::InvalidArgument("window duration must be positive".into()));
    }
    frame.clear();
    let span = window.duration as f64;
    let (h, w) = (frame.height, frame.width);
    let plane = h * w;
    for e in events {
        let (x, y) = (e.x as usize, e.y as usize);
        if x >= w || y >= h {
            return Err(Error::OutOfBounds(format!("event at ({x}, {y}) outside {w}x{h}")));
        }
        if !window.contains(e.t) {
            return Err(Error::OutOfBounds(format!(
                "event at t={} outside window [{}, {}]",
                e.t,
                window.t0,
                window.end()
            )));
        }
        let v = ((e.t - window.t0) as f64 / span) as f32;
        frame.values[e.p.channel() * plane + y * w + x] = v;
    }
    Ok(())
}

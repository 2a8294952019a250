//! Frame-to-event simulation with a per-pixel log-intensity threshold.
//!
//! Between consecutive frames the log brightness of every pixel is
//! interpolated linearly in time. Each pixel keeps a reference level
//! `ref0 + k * C`; whenever the interpolated signal reaches the next level
//! up (or down) an event of positive (negative) polarity is emitted at the
//! crossing instant and `k` moves by one.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::event::{Event, EventStream, Polarity};
use crate::math;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatorConfig {
    /// Contrast threshold `C` in log-intensity units.
    pub threshold: f64,
    /// Relative standard deviation of the per-pixel threshold.
    pub threshold_jitter: f64,
    /// Spurious events per pixel per second.
    pub noise_rate: f64,
    /// Added to the luminance before taking the log.
    pub log_eps: f64,
    pub seed: u64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig { threshold: 0.2, threshold_jitter: 0.0, noise_rate: 0.0, log_eps: 1e-3, seed: 0 }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) {
            return Err(Error::InvalidArgument("threshold must be positive".into()));
        }
        if !(self.log_eps > 0.0) {
            return Err(Error::InvalidArgument("log_eps must be positive".into()));
        }
        if !(self.threshold_jitter >= 0.0) || !(self.noise_rate >= 0.0) {
            return Err(Error::InvalidArgument("jitter and noise rate must be non-negative".into()));
        }
        Ok(())
    }

    pub fn log_brightness(&self, luminance: f32) -> f64 {
        math::ln(luminance as f64 + self.log_eps)
    }
}

/// Luminance frames in `[0, 1]`, row-major, with strictly increasing
/// timestamps in microseconds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BrightnessVideo {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<Vec<f32>>,
    pub timestamps: Vec<u64>,
}

impl BrightnessVideo {
    pub fn new(width: usize, height: usize) -> Self {
        BrightnessVideo { width, height, frames: Vec::new(), timestamps: Vec::new() }
    }

    pub fn push(&mut self, frame: Vec<f32>, t: u64) -> Result<()> {
        if frame.len() != self.width * self.height {
            return Err(Error::Shape(format!("frame has {} pixels, expected {}", frame.len(), self.width * self.height)));
        }
        if let Some(&last) = self.timestamps.last() {
            if t <= last {
                return Err(Error::InvalidArgument(format!("timestamp {t} not after {last}")));
            }
        }
        self.frames.push(frame);
        self.timestamps.push(t);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct PixelState {
    reference: f64,
    level: i64,
    threshold: f64,
    last_log: f64,
}

/// Incremental simulator: feed frames one at a time, collect events.
#[derive(Debug, Clone)]
pub struct EventSimulator {
    cfg: SimulatorConfig,
    width: usize,
    height: usize,
    pixels: Vec<PixelState>,
    last_t: u64,
    rng: ChaCha8Rng,
}

impl EventSimulator {
    /// Initializes the per-pixel reference from the first frame's log image.
    /// No events are emitted for it.
    pub fn from_log_frame(log_frame: &[f64], width: usize, height: usize, t: u64, cfg: &SimulatorConfig) -> Result<Self> {
        cfg.validate()?;
        if log_frame.len() != width * height {
            return Err(Error::Shape("first frame size does not match sensor".into()));
        }
        if width > u16::MAX as usize || height > u16::MAX as usize {
            return Err(Error::InvalidArgument("sensor too large for 16-bit coordinates".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let pixels = log_frame
            .iter()
            .map(|&l| {
                let threshold = if cfg.threshold_jitter > 0.0 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (cfg.threshold * (1.0 + cfg.threshold_jitter * z)).max(0.01 * cfg.threshold)
                } else {
                    cfg.threshold
                };
                PixelState { reference: l, level: 0, threshold, last_log: l }
            })
            .collect();
        Ok(EventSimulator { cfg: cfg.clone(), width, height, pixels, last_t: t, rng })
    }

    pub fn from_frame(frame: &[f32], width: usize, height: usize, t: u64, cfg: &SimulatorConfig) -> Result<Self> {
        let logs: Vec<f64> = frame.iter().map(|&v| cfg.log_brightness(v)).collect();
        Self::from_log_frame(&logs, width, height, t, cfg)
    }

    pub fn push_frame(&mut self, frame: &[f32], t: u64) -> Result<Vec<Event>> {
        let logs: Vec<f64> = frame.iter().map(|&v| self.cfg.log_brightness(v)).collect();
        self.push_log_frame(&logs, t)
    }

    /// Advances to a new log-brightness frame at time `t` and returns the
    /// events of the interval `(last_t, t]`, sorted by timestamp.
    pub fn push_log_frame(&mut self, log_frame: &[f64], t: u64) -> Result<Vec<Event>> {
        if log_frame.len() != self.pixels.len() {
            return Err(Error::Shape("frame size does not match sensor".into()));
        }
        if t <= self.last_t {
            return Err(Error::InvalidArgument(format!("timestamp {t} not after {}", self.last_t)));
        }
        let ta = self.last_t;
        let dt = t - ta;
        let mut events = Vec::new();
        for (idx, (px, &lb)) in self.pixels.iter_mut().zip(log_frame).enumerate() {
            let la = px.last_log;
            px.last_log = lb;
            let q = (lb - px.reference) / px.threshold;
            let up = math::floor(q) as i64;
            let down = math::ceil(q) as i64;
            let (x, y) = ((idx % self.width) as u16, (idx / self.width) as u16);
            let crossing = |level: i64| {
                let target = px.reference + level as f64 * px.threshold;
                let s = (target - la) / (lb - la);
                let off = math::round(s * dt as f64).clamp(1.0, dt as f64) as u64;
                ta + off
            };
            if up > px.level {
                for level in px.level + 1..=up {
                    events.push(Event::new(x, y, crossing(level), Polarity::Positive));
                }
                px.level = up;
            } else if down < px.level {
                for level in (down..px.level).rev() {
                    events.push(Event::new(x, y, crossing(level), Polarity::Negative));
                }
                px.level = down;
            }
        }
        if self.cfg.noise_rate > 0.0 {
            let rate_per_us = self.cfg.noise_rate * self.pixels.len() as f64 * 1e-6;
            let exp = Exp::new(rate_per_us).map_err(|_| Error::InvalidArgument("bad noise rate".into()))?;
            let mut s: f64 = exp.sample(&mut self.rng);
            while s < dt as f64 {
                let idx = self.rng.random_range(0..self.pixels.len());
                let p = if self.rng.random::<bool>() { Polarity::Positive } else { Polarity::Negative };
                let off = (math::ceil(s) as u64).clamp(1, dt);
                events.push(Event::new((idx % self.width) as u16, (idx / self.width) as u16, ta + off, p));
                s += exp.sample(&mut self.rng);
            }
        }
        events.sort_by_key(|e| e.t);
        self.last_t = t;
        Ok(events)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

/// Converts a whole video into an event stream.
pub fn simulate(video: &BrightnessVideo, cfg: &SimulatorConfig) -> Result<EventStream> {
    if video.frames.len() < 2 || video.timestamps.len() != video.frames.len() {
        return Err(Error::InvalidArgument("simulation needs at least two timestamped frames".into()));
    }
    if video.timestamps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("frame timestamps must be strictly increasing".into()));
    }
    let mut sim = EventSimulator::from_frame(&video.frames[0], video.width, video.height, video.timestamps[0], cfg)?;
    let mut events = Vec::new();
    for (frame, &t) in video.frames.iter().zip(&video.timestamps).skip(1) {
        events.extend(sim.push_frame(frame, t)?);
    }
    Ok(EventStream { events, width: video.width as u16, height: video.height as u16 })
}

/// Integrates event polarities on top of an initial log image.
pub fn reconstruct_log_brightness(stream: &EventStream, cfg: &SimulatorConfig, initial: &[f64]) -> Result<Vec<f64>> {
    let (w, h) = (stream.width as usize, stream.height as usize);
    if initial.len() != w * h {
        return Err(Error::Shape("initial image does not match sensor".into()));
    }
    let mut counts = alloc::vec![0i64; w * h];
    for e in &stream.events {
        let (x, y) = (e.x as usize, e.y as usize);
        if x >= w || y >= h {
            return Err(Error::OutOfBounds(format!("event at ({x}, {y})")));
        }
        counts[y * w + x] += e.p.sign() as i64;
    }
    Ok(initial.iter().zip(counts).map(|(l, n)| l + cfg.threshold * n as f64).collect())
}

//! Throughput measurement.

use std::time::Instant;

use ee3d_core::event::{encode_lnes_into, window_events, LnesFrame};
use ee3d_core::net::NetworkParams;

use crate::error::{Error, Result};
use crate::formats::events::read_events_from;
use crate::pipeline::{run_file, PipelineOptions};

/// How the FLOP figure is counted.
pub const FLOP_FORMULA: &str = "2 x multiply-accumulates of all convolution and dense layers, one forward pass";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub repetitions: usize,
    pub windows: u64,
    pub events: u64,
    /// Median end-to-end pose updates per second.
    pub poses_per_second: f64,
    /// Median LNES encoding rate.
    pub events_per_second: f64,
    pub params: usize,
    pub flops: usize,
}

impl BenchReport {
    pub fn format(&self) -> String {
        format!(
            "repetitions   {}\nwindows       {}\nevents        {}\nposes/s       {:.2} (median, ingest -> LNES -> forward -> record)\n\
             events/s      {:.0} (median, LNES encoding)\nparameters    {}\nflops         {} ({FLOP_FORMULA})\n",
            self.repetitions, self.windows, self.events, self.poses_per_second, self.events_per_second, self.params, self.flops
        )
    }
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs the file pipeline `reps` times over `events` (an `EVT1` byte
/// stream) and times LNES encoding of the same windows.
pub fn bench(events: &[u8], params: &NetworkParams, opts: &PipelineOptions, reps: usize) -> Result<BenchReport> {
    if reps == 0 {
        return Err(Error::config("at least one repetition is required"));
    }
    let stream = read_events_from(events)?;
    let windows = window_events(&stream.events, opts.window_us)?;
    let mut frame = LnesFrame::zeros(stream.height as usize, stream.width as usize);
    let mut pose_rates = Vec::with_capacity(reps);
    let mut event_rates = Vec::with_capacity(reps);
    let mut count = 0;
    for _ in 0..reps {
        let mut sink = 0u64;
        let stats = run_file(events, params, opts, |r| {
            sink = sink.wrapping_add(r.t0);
            Ok(())
        })?;
        count = stats.windows;
        pose_rates.push(stats.poses_per_second());
        let t = Instant::now();
        for (w, ev) in &windows {
            encode_lnes_into(&mut frame, ev, *w)?;
        }
        event_rates.push(stream.events.len() as f64 / t.elapsed().as_secs_f64().max(1e-9));
    }
    Ok(BenchReport {
        repetitions: reps,
        windows: count,
        events: stream.events.len() as u64,
        poses_per_second: median(&mut pose_rates),
        events_per_second: median(&mut event_rates),
        params: params.param_count(),
        flops: params.config.flops(),
    })
}

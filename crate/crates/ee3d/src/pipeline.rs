//! Streaming pose estimation: ingestion, LNES encoding and inference as
//! three stages joined by bounded queues.
//!
//! File input uses event-anchored windows and never drops: a full queue
//! blocks the stage before it. Live socket input uses windows of fixed
//! length anchored at the first event of the session; a window closes when
//! a later event arrives or when the wall clock has passed its end, so
//! silent periods still produce poses. If a downstream queue is full, the
//! whole window is dropped and counted.

use std::io::{self, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, SyncSender, TrySendError};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use ee3d_core::event::{encode_lnes, Event, LnesFrame, TimeWindow};
use ee3d_core::metrics::{OneEuroParams, OneEuroState};
use ee3d_core::net::{NetworkParams, StreamingEstimator};
use ee3d_core::NUM_JOINTS;

use crate::error::{Error, Result};
use crate::formats::events::EventReader;

pub const POSE_VALUES: usize = 3 * NUM_JOINTS;
/// Payload bytes of a binary pose record.
pub const POSE_FRAME_LEN: usize = 16 + 8 * POSE_VALUES;

/// One pose per window: window start, last event time and 16 joints.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseRecord {
    pub t0: u64,
    /// Last event of the window; the window start when it had none.
    pub t_last: u64,
    pub pose: Vec<f64>,
}

impl PoseRecord {
    /// `t0_us t_last_us` followed by 48 values, space separated.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}", self.t0, self.t_last);
        for v in &self.pose {
            s.push(' ');
            s.push_str(&v.to_string());
        }
        s
    }

    pub fn parse_text(line: &str) -> Result<Self> {
        let mut it = line.split_whitespace();
        let mut int = || it.next().and_then(|s| s.parse::<u64>().ok()).ok_or_else(|| Error::format("pose record: bad timestamp"));
        let (t0, t_last) = (int()?, int()?);
        let pose = line
            .split_whitespace()
            .skip(2)
            .map(|s| s.parse::<f64>().map_err(|_| Error::format(format!("pose record: bad value '{s}'"))))
            .collect::<Result<Vec<_>>>()?;
        if pose.len() != POSE_VALUES {
            return Err(Error::format(format!("pose record: {} values, expected {POSE_VALUES}", pose.len())));
        }
        Ok(PoseRecord { t0, t_last, pose })
    }

    /// u32 little-endian payload length, then t0 u64, t_last u64 and the
    /// 48 values as f64, all little-endian.
    pub fn to_frame(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(4 + POSE_FRAME_LEN);
        b.extend_from_slice(&(POSE_FRAME_LEN as u32).to_le_bytes());
        b.extend_from_slice(&self.t0.to_le_bytes());
        b.extend_from_slice(&self.t_last.to_le_bytes());
        self.pose.iter().for_each(|v| b.extend_from_slice(&v.to_le_bytes()));
        b
    }

    /// Reads one framed record; `None` on a clean end of stream.
    pub fn read_frame(r: &mut impl Read) -> Result<Option<Self>> {
        let mut len = [0u8; 4];
        match r.read_exact(&mut len) {
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(Error::Net(e)),
            Ok(()) => {}
        }
        if u32::from_le_bytes(len) as usize != POSE_FRAME_LEN {
            return Err(Error::format(format!("pose frame of {} bytes", u32::from_le_bytes(len))));
        }
        let mut b = vec![0u8; POSE_FRAME_LEN];
        r.read_exact(&mut b).map_err(Error::Net)?;
        let word = |i: usize| u64::from_le_bytes(b[8 * i..8 * i + 8].try_into().expect("8 bytes"));
        let pose = (2..2 + POSE_VALUES).map(|i| f64::from_bits(word(i))).collect();
        Ok(Some(PoseRecord { t0: word(0), t_last: word(1), pose }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineOptions {
    pub window_us: u64,
    /// 1 runs every stage on the calling thread; more runs one thread per
    /// stage.
    pub threads: usize,
    pub queue: usize,
    pub smoothing: Option<OneEuroParams>,
}

impl PipelineOptions {
    pub fn new(window_us: u64) -> Self {
        PipelineOptions { window_us, threads: 1, queue: 4, smoothing: None }
    }
}

/// Counters of one streaming session.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SessionStats {
    pub windows: u64,
    pub events: u64,
    pub dropped_windows: u64,
    pub late_events: u64,
    pub wall: Duration,
}

impl SessionStats {
    pub fn poses_per_second(&self) -> f64 {
        self.windows as f64 / self.wall.as_secs_f64().max(1e-9)
    }
}

/// Events of one window, before encoding.
#[derive(Debug, Clone)]
pub struct RawWindow {
    pub window: TimeWindow,
    pub events: Vec<Event>,
}

struct EncodedWindow {
    window: TimeWindow,
    t_last: Option<u64>,
    events: usize,
    lnes: LnesFrame,
}

fn encode(raw: RawWindow, h: usize, w: usize) -> Result<EncodedWindow> {
    let lnes = encode_lnes(&raw.events, raw.window, h, w)?;
    Ok(EncodedWindow { window: raw.window, t_last: raw.events.last().map(|e| e.t), events: raw.events.len(), lnes })
}

/// The inference end of a session: frame buffer, smoothing and counters.
/// Only this stage advances the session.
pub struct StreamSession<'a> {
    estimator: StreamingEstimator<'a>,
    smoother: Option<OneEuroState>,
    stats: SessionStats,
}

impl<'a> StreamSession<'a> {
    pub fn new(params: &'a NetworkParams, smoothing: Option<OneEuroParams>) -> Result<Self> {
        let smoother = smoothing.map(|p| OneEuroState::new(POSE_VALUES, p)).transpose()?;
        Ok(StreamSession { estimator: StreamingEstimator::new(params), smoother, stats: SessionStats::default() })
    }

    pub fn stats(&self) -> SessionStats {
        self.stats
    }

    fn process(&mut self, w: EncodedWindow) -> Result<PoseRecord> {
        let out = self.estimator.push(&w.lnes)?;
        let pose = match &mut self.smoother {
            Some(f) => f.filter(w.window.t0 as f64 * 1e-6, &out.pose)?,
            None => out.pose,
        };
        self.stats.windows += 1;
        self.stats.events += w.events as u64;
        Ok(PoseRecord { t0: w.window.t0, t_last: w.t_last.unwrap_or(w.window.t0), pose })
    }
}

/// Event-anchored windows read incrementally from an event source.
pub struct FileWindows<I> {
    events: I,
    duration: u64,
    pending: Option<Event>,
}

impl<I: Iterator<Item = Result<Event>>> FileWindows<I> {
    pub fn new(events: I, duration: u64) -> Self {
        FileWindows { events, duration, pending: None }
    }
}

impl<I: Iterator<Item = Result<Event>>> Iterator for FileWindows<I> {
    type Item = Result<RawWindow>;

    fn next(&mut self) -> Option<Self::Item> {
        let first = match self.pending.take().map(Ok).or_else(|| self.events.next())? {
            Ok(e) => e,
            Err(e) => return Some(Err(e)),
        };
        let window = TimeWindow { t0: first.t, duration: self.duration };
        let mut events = vec![first];
        loop {
            match self.events.next() {
                None => break,
                Some(Err(e)) => return Some(Err(e)),
                Some(Ok(e)) if e.t - window.t0 <= self.duration => events.push(e),
                Some(Ok(e)) => {
                    self.pending = Some(e);
                    break;
                }
            }
        }
        Some(Ok(RawWindow { window, events }))
    }
}

fn check_sensor(params: &NetworkParams, width: u16, height: u16) -> Result<(usize, usize)> {
    let (h, w) = (params.config.input_height, params.config.input_width);
    if (width as usize, height as usize) != (w, h) {
        return Err(Error::Core(ee3d_core::Error::Shape(format!("events are {width}x{height}, the model expects {w}x{h}"))));
    }
    Ok((h, w))
}

/// Runs an event file (or any `EVT1` byte stream) through the pipeline,
/// handing each pose to `sink` in window order.
pub fn run_file<R: Read + Send>(
    source: R,
    params: &NetworkParams,
    opts: &PipelineOptions,
    mut sink: impl FnMut(&PoseRecord) -> Result<()>,
) -> Result<SessionStats> {
    let start = Instant::now();
    let reader = EventReader::new(source)?;
    let header = reader.header();
    let (h, w) = check_sensor(params, header.width, header.height)?;
    if opts.window_us == 0 {
        return Err(Error::config("window must be positive"));
    }
    let windows = FileWindows::new(reader, opts.window_us);
    let mut session = StreamSession::new(params, opts.smoothing)?;
    if opts.threads <= 1 {
        for raw in windows {
            let rec = session.process(encode(raw?, h, w)?)?;
            sink(&rec)?;
        }
    } else {
        std::thread::scope(|s| -> Result<()> {
            let (raw_tx, raw_rx) = mpsc::sync_channel::<Result<RawWindow>>(opts.queue);
            let (enc_tx, enc_rx) = mpsc::sync_channel::<Result<EncodedWindow>>(opts.queue);
            s.spawn(move || {
                for raw in windows {
                    let stop = raw.is_err();
                    if raw_tx.send(raw).is_err() || stop {
                        break;
                    }
                }
            });
            s.spawn(move || {
                for raw in raw_rx {
                    let enc = raw.and_then(|r| encode(r, h, w));
                    let stop = enc.is_err();
                    if enc_tx.send(enc).is_err() || stop {
                        break;
                    }
                }
            });
            for enc in enc_rx {
                let rec = session.process(enc?)?;
                sink(&rec)?;
            }
            Ok(())
        })?;
    }
    let mut stats = session.stats();
    stats.wall = start.elapsed();
    Ok(stats)
}

/// All poses of an in-memory event file.
pub fn infer_bytes(bytes: &[u8], params: &NetworkParams, opts: &PipelineOptions) -> Result<(Vec<PoseRecord>, SessionStats)> {
    let mut out = Vec::new();
    let stats = run_file(bytes, params, opts, |r| {
        out.push(r.clone());
        Ok(())
    })?;
    Ok((out, stats))
}

/// Sends each pose to every connected viewer as a framed binary record.
/// Viewers that fail or stall are disconnected.
pub struct PoseBroadcaster {
    listener: TcpListener,
    clients: Vec<TcpStream>,
}

impl PoseBroadcaster {
    pub fn bind(addr: &str) -> Result<Self> {
        let listener = TcpListener::bind(addr).map_err(Error::Net)?;
        listener.set_nonblocking(true).map_err(Error::Net)?;
        Ok(PoseBroadcaster { listener, clients: Vec::new() })
    }

    pub fn local_addr(&self) -> Result<std::net::SocketAddr> {
        self.listener.local_addr().map_err(Error::Net)
    }

    /// Accepts viewers that connected since the last call.
    pub fn accept_pending(&mut self) {
        while let Ok((c, _)) = self.listener.accept() {
            if c.set_nonblocking(false).is_ok() && c.set_write_timeout(Some(Duration::from_millis(200))).is_ok() {
                let _ = c.set_nodelay(true);
                self.clients.push(c);
            }
        }
    }

    pub fn clients(&self) -> usize {
        self.clients.len()
    }

    pub fn publish(&mut self, rec: &PoseRecord) {
        self.accept_pending();
        let frame = rec.to_frame();
        self.clients.retain_mut(|c| c.write_all(&frame).is_ok());
    }
}

struct LiveWindower {
    duration: u64,
    base: Option<(u64, Instant)>,
    index: u64,
    events: Vec<Event>,
    late: u64,
}

impl LiveWindower {
    fn window(&self) -> Option<TimeWindow> {
        self.base.map(|(t, _)| TimeWindow { t0: t + self.index * self.duration, duration: self.duration })
    }

    /// Wall-clock instant at which the open window closes without events.
    fn deadline(&self) -> Option<Instant> {
        self.base.map(|(_, at)| at + Duration::from_micros((self.index + 1) * self.duration))
    }

    fn close(&mut self) -> RawWindow {
        let window = self.window().expect("open window");
        self.index += 1;
        RawWindow { window, events: std::mem::take(&mut self.events) }
    }

    /// Adds an event, returning the windows it closes.
    fn push(&mut self, e: Event, closed: &mut Vec<RawWindow>) {
        if self.base.is_none() {
            self.base = Some((e.t, Instant::now()));
        }
        let w = self.window().expect("open window");
        if e.t < w.t0 {
            self.late += 1;
            return;
        }
        while e.t >= self.window().expect("open window").end() {
            closed.push(self.close());
        }
        self.events.push(e);
    }
}

/// Live ingestion from a connected event source.
///
/// A reader thread decodes the socket; the windowing stage closes windows
/// on event time or wall clock; the encoding stage builds LNES frames; the
/// calling thread runs inference. Queues between the windowing, encoding
/// and inference stages are bounded, and a window that finds its queue
/// full is dropped whole.
pub fn run_live(
    source: TcpStream,
    params: &NetworkParams,
    opts: &PipelineOptions,
    mut sink: impl FnMut(&PoseRecord) -> Result<()>,
) -> Result<SessionStats> {
    let start = Instant::now();
    let mut reader = EventReader::new(BufReader::new(source))?;
    let header = reader.header();
    let (h, w) = check_sensor(params, header.width, header.height)?;
    if opts.window_us == 0 {
        return Err(Error::config("window must be positive"));
    }
    let dropped = AtomicU64::new(0);
    let late = AtomicU64::new(0);
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let mut session = StreamSession::new(params, opts.smoothing)?;
    let (dropped_n, late_n) = (&dropped, &late);
    let fail = |e: Error| {
        failure.lock().expect("poisoned").get_or_insert(e);
    };
    std::thread::scope(|s| -> Result<()> {
        let (ev_tx, ev_rx) = mpsc::channel::<Event>();
        let (raw_tx, raw_rx) = mpsc::sync_channel::<RawWindow>(opts.queue);
        let (enc_tx, enc_rx) = mpsc::sync_channel::<EncodedWindow>(opts.queue);
        s.spawn(move || loop {
            match reader.next_event() {
                Ok(None) => break,
                Ok(Some(Ok(e))) => {
                    if ev_tx.send(e).is_err() {
                        break;
                    }
                }
                Ok(Some(Err(e))) => {
                    fail(e);
                    break;
                }
                Err(e) => {
                    fail(Error::Net(e));
                    break;
                }
            }
        });
        let window_stage = move |ev_rx: Receiver<Event>, raw_tx: SyncSender<RawWindow>| {
            let mut wdw = LiveWindower { duration: opts.window_us, base: None, index: 0, events: Vec::new(), late: 0 };
            let mut closed = Vec::new();
            let forward = |closed: &mut Vec<RawWindow>| -> bool {
                for raw in closed.drain(..) {
                    match raw_tx.try_send(raw) {
                        Ok(()) => {}
                        Err(TrySendError::Full(_)) => {
                            dropped_n.fetch_add(1, Ordering::Relaxed);
                        }
                        Err(TrySendError::Disconnected(_)) => return false,
                    }
                }
                true
            };
            loop {
                let got = match wdw.deadline() {
                    None => ev_rx.recv().map_err(|_| RecvTimeoutError::Disconnected),
                    Some(d) => ev_rx.recv_timeout(d.saturating_duration_since(Instant::now())),
                };
                match got {
                    Ok(e) => wdw.push(e, &mut closed),
                    Err(RecvTimeoutError::Timeout) => closed.push(wdw.close()),
                    Err(RecvTimeoutError::Disconnected) => {
                        if !wdw.events.is_empty() {
                            closed.push(wdw.close());
                        }
                        forward(&mut closed);
                        break;
                    }
                }
                if !forward(&mut closed) {
                    break;
                }
            }
            late_n.store(wdw.late, Ordering::Relaxed);
        };
        s.spawn(move || window_stage(ev_rx, raw_tx));
        s.spawn(move || {
            for raw in raw_rx {
                match encode(raw, h, w) {
                    Ok(enc) => match enc_tx.try_send(enc) {
                        Ok(()) => {}
                        Err(TrySendError::Full(_)) => {
                            dropped_n.fetch_add(1, Ordering::Relaxed);
                        }
                        Err(TrySendError::Disconnected(_)) => break,
                    },
                    Err(e) => {
                        fail(e);
                        break;
                    }
                }
            }
        });
        for enc in enc_rx {
            let rec = session.process(enc)?;
            sink(&rec)?;
        }
        Ok(())
    })?;
    let mut stats = session.stats();
    stats.dropped_windows = dropped.into_inner();
    stats.late_events = late.into_inner();
    stats.wall = start.elapsed();
    match failure.into_inner().expect("poisoned") {
        Some(e) => Err(e),
        None => Ok(stats),
    }
}

/// Writes text pose records, one per line.
pub fn write_text(w: &mut impl Write, rec: &PoseRecord) -> io::Result<()> {
    writeln!(w, "{}", rec.to_text())
}

use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::sync::OnceLock;
use std::time::Duration;

use ee3d::formats::events::{encode_record, write_events_to, EventHeader, UNBOUNDED};
use ee3d::pipeline::{infer_bytes, run_file, run_live, FileWindows, PipelineOptions, PoseBroadcaster, PoseRecord};
use ee3d_core::event::{window_events, Event, EventStream, Polarity};
use ee3d_core::metrics::OneEuroParams;
use ee3d_core::net::{NetConfig, NetworkParams};
use proptest::prelude::*;

const T: u64 = 15_000;

fn params() -> &'static NetworkParams {
    static P: OnceLock<NetworkParams> = OnceLock::new();
    P.get_or_init(|| NetworkParams::init(&NetConfig::toy(), 3).unwrap())
}

fn bytes_of(s: &EventStream) -> Vec<u8> {
    let mut b = Vec::new();
    write_events_to(&mut b, s).unwrap();
    b
}

fn stream(raw: Vec<(u16, u16, u64, bool)>) -> EventStream {
    let mut t = 0;
    let events = raw
        .into_iter()
        .map(|(x, y, dt, pos)| {
            t += dt;
            Event::new(x, y, t, if pos { Polarity::Positive } else { Polarity::Negative })
        })
        .collect();
    EventStream::new(events, 256, 192).unwrap()
}

fn raw_events(n: usize) -> impl Strategy<Value = Vec<(u16, u16, u64, bool)>> {
    prop::collection::vec((0u16..256, 0u16..192, prop_oneof![0u64..50, 0u64..40_000], any::<bool>()), 0..n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn one_finite_pose_per_window(raw in raw_events(120)) {
        let s = stream(raw);
        let (records, stats) = infer_bytes(&bytes_of(&s), params(), &PipelineOptions::new(T)).unwrap();
        let windows = window_events(&s.events, T).unwrap();
        prop_assert_eq!(records.len(), windows.len());
        prop_assert_eq!(stats.events as usize, s.len());
        for (r, (w, ev)) in records.iter().zip(&windows) {
            prop_assert_eq!(r.t0, w.t0);
            prop_assert_eq!(r.t_last, ev.last().unwrap().t);
            prop_assert!(r.pose.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn incremental_windows_match_the_batch_partition(raw in raw_events(300)) {
        let s = stream(raw);
        let inc: Vec<_> = FileWindows::new(s.events.iter().copied().map(Ok), T).map(Result::unwrap).collect();
        let batch = window_events(&s.events, T).unwrap();
        prop_assert_eq!(inc.len(), batch.len());
        for (a, (w, ev)) in inc.iter().zip(&batch) {
            prop_assert_eq!(a.window, *w);
            prop_assert_eq!(a.events.as_slice(), *ev);
        }
    }
}

fn moving_stream(windows: u64) -> EventStream {
    let mut events = Vec::new();
    for k in 0..windows * 30 {
        let t = k * 500;
        let x = (40 + (k * 7) % 180) as u16;
        let y = (30 + (k * 3) % 130) as u16;
        events.push(Event::new(x, y, t, if k % 3 == 0 { Polarity::Negative } else { Polarity::Positive }));
    }
    EventStream::new(events, 256, 192).unwrap()
}

#[test]
fn staged_and_inline_runs_are_bit_identical() {
    let bytes = bytes_of(&moving_stream(12));
    let inline = infer_bytes(&bytes, params(), &PipelineOptions::new(T)).unwrap().0;
    let mut staged = PipelineOptions::new(T);
    staged.threads = 3;
    staged.queue = 1;
    assert_eq!(infer_bytes(&bytes, params(), &staged).unwrap().0, inline);
    assert_eq!(infer_bytes(&bytes, params(), &PipelineOptions::new(T)).unwrap().0, inline);
}

#[test]
fn smoothing_passes_the_first_pose_through() {
    let bytes = bytes_of(&moving_stream(6));
    let raw = infer_bytes(&bytes, params(), &PipelineOptions::new(T)).unwrap().0;
    let mut opts = PipelineOptions::new(T);
    opts.smoothing = Some(OneEuroParams::default());
    let smooth = infer_bytes(&bytes, params(), &opts).unwrap().0;
    assert_eq!(raw[0], smooth[0]);
    assert_eq!(raw.len(), smooth.len());
    assert_ne!(raw[1..], smooth[1..]);
}

#[test]
fn sensor_size_must_match_the_model() {
    let s = EventStream::new(vec![Event::new(0, 0, 0, Polarity::Positive)], 64, 48).unwrap();
    let e = infer_bytes(&bytes_of(&s), params(), &PipelineOptions::new(T)).unwrap_err();
    assert_eq!(e.code(), "E_SHAPE");
}

#[test]
fn sink_errors_stop_the_staged_pipeline() {
    let bytes = bytes_of(&moving_stream(10));
    let mut opts = PipelineOptions::new(T);
    opts.threads = 3;
    let mut seen = 0;
    let r = run_file(bytes.as_slice(), params(), &opts, |_| {
        seen += 1;
        if seen == 3 {
            Err(ee3d::Error::config("stop"))
        } else {
            Ok(())
        }
    });
    assert_eq!(r.unwrap_err().code(), "E_CONFIG");
    assert_eq!(seen, 3);
}

/// Serves `events` as one EVT1 stream declaring `count` records, sleeping
/// `pause` before the event at index `pause_at`.
fn serve(events: Vec<Event>, count: u64, pause_at: usize, pause: Duration) -> (String, std::thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let h = std::thread::spawn(move || {
        let (mut c, _) = listener.accept().unwrap();
        c.write_all(&EventHeader { width: 256, height: 192, count }.to_bytes()).unwrap();
        for (i, e) in events.iter().enumerate() {
            if i == pause_at {
                c.flush().unwrap();
                std::thread::sleep(pause);
            }
            c.write_all(&encode_record(e)).unwrap();
        }
    });
    (addr, h)
}

#[test]
fn live_windows_are_anchored_and_cover_silence() {
    let mut events: Vec<Event> = (0..60).map(|k| Event::new(100 + k as u16, 50, 1_000 + k * 500, Polarity::Positive)).collect();
    // sensor and wall clock both jump by about 0.24 s
    events.push(Event::new(7, 9, 241_000, Polarity::Negative));
    let (addr, h) = serve(events, 61, 60, Duration::from_millis(240));
    let mut opts = PipelineOptions::new(T);
    opts.threads = 3;
    let mut records = Vec::new();
    let stats = run_live(TcpStream::connect(addr).unwrap(), params(), &opts, |r| {
        records.push(r.clone());
        Ok(())
    })
    .unwrap();
    h.join().unwrap();
    assert_eq!(stats.dropped_windows, 0);
    // windows [1000 + 15000 k, ...) for k = 0..=16
    assert_eq!(records.len(), 17);
    for (k, r) in records.iter().enumerate() {
        assert_eq!(r.t0, 1_000 + 15_000 * k as u64);
        assert!(r.pose.iter().all(|v| v.is_finite()));
    }
    assert_eq!(records[0].t_last, 1_000 + 29 * 500);
    assert_eq!(records[1].t_last, 1_000 + 59 * 500);
    for r in &records[2..16] {
        assert_eq!(r.t_last, r.t0, "silent window");
    }
    assert_eq!(records[16].t_last, 241_000);
    assert_eq!(stats.events, 61);
}

#[test]
fn overloaded_live_session_drops_whole_windows() {
    let events: Vec<Event> = (0..40 * 30).map(|k| Event::new((k % 256) as u16, (k / 256) as u16 % 192, k * 500, Polarity::Positive)).collect();
    let expected_last = |t0: u64| events.iter().filter(|e| e.t >= t0 && e.t < t0 + T).map(|e| e.t).max();
    let (addr, h) = serve(events.clone(), UNBOUNDED, usize::MAX, Duration::ZERO);
    let mut opts = PipelineOptions::new(T);
    opts.threads = 3;
    opts.queue = 1;
    let mut records = Vec::new();
    let stats = run_live(TcpStream::connect(addr).unwrap(), params(), &opts, |r| {
        std::thread::sleep(Duration::from_millis(30));
        records.push(r.clone());
        Ok(())
    })
    .unwrap();
    h.join().unwrap();
    assert!(stats.dropped_windows > 0, "no window was dropped");
    assert_eq!(records.len() as u64 + stats.dropped_windows, 40);
    for r in &records {
        assert_eq!(r.t0 % T, 0);
        assert_eq!(Some(r.t_last), expected_last(r.t0), "window at {} was cut", r.t0);
    }
    assert!(records.windows(2).all(|w| w[0].t0 < w[1].t0));
}

#[test]
fn broadcast_frames_match_the_text_records() {
    let bytes = bytes_of(&moving_stream(5));
    let mut bc = PoseBroadcaster::bind("127.0.0.1:0").unwrap();
    let mut viewer = TcpStream::connect(bc.local_addr().unwrap()).unwrap();
    let mut sent = Vec::new();
    run_file(bytes.as_slice(), params(), &PipelineOptions::new(T), |r| {
        bc.publish(r);
        sent.push(r.clone());
        Ok(())
    })
    .unwrap();
    assert_eq!(bc.clients(), 1);
    drop(bc);
    let mut got = Vec::new();
    while let Some(r) = PoseRecord::read_frame(&mut viewer).unwrap() {
        got.push(r);
    }
    assert_eq!(got, sent);
    let text: Vec<PoseRecord> = sent.iter().map(|r| PoseRecord::parse_text(&r.to_text()).unwrap()).collect();
    assert_eq!(text, sent);
}

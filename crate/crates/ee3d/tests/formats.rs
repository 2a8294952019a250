use ee3d::config::{SynthConfig, TrainConfig, FINE_TUNE_LR};
use ee3d::formats::events::{read_csv_from, read_events, read_events_from, write_csv_to, write_events, write_events_to, EventHeader, UNBOUNDED};
use ee3d::formats::image::{read_video, write_video, Image};
use ee3d::formats::intrinsics::{format_intrinsics, parse_intrinsics};
use ee3d::formats::model::{decode_model, decode_state, encode_model, encode_state, TrainingState};
use ee3d::pipeline::PoseRecord;
use ee3d_core::event::{Event, EventStream, Polarity};
use ee3d_core::fisheye::FisheyeIntrinsics;
use ee3d_core::net::{AdamState, NetConfig, NetworkParams};
use ee3d_core::sim::BrightnessVideo;
use proptest::prelude::*;

fn stream_strategy() -> impl Strategy<Value = EventStream> {
    prop::collection::vec((0u16..256, 0u16..192, 0u64..5_000, any::<bool>()), 0..200).prop_map(|raw| {
        let mut t = 0;
        let events = raw
            .into_iter()
            .map(|(x, y, dt, pos)| {
                t += dt;
                Event::new(x, y, t, if pos { Polarity::Positive } else { Polarity::Negative })
            })
            .collect();
        EventStream::new(events, 256, 192).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn binary_events_round_trip(s in stream_strategy()) {
        let mut bytes = Vec::new();
        write_events_to(&mut bytes, &s).unwrap();
        prop_assert_eq!(bytes.len(), 16 + 14 * s.len());
        prop_assert_eq!(read_events_from(bytes.as_slice()).unwrap(), s);
    }

    #[test]
    fn csv_events_round_trip(s in stream_strategy()) {
        let mut bytes = Vec::new();
        write_csv_to(&mut bytes, &s).unwrap();
        prop_assert_eq!(read_csv_from(bytes.as_slice(), 256, 192).unwrap(), s);
    }

    #[test]
    fn pose_record_round_trips(t0 in 0u64..1 << 40, dt in 0u64..20_000, pose in prop::collection::vec(-3.0f64..3.0, 48)) {
        let r = PoseRecord { t0, t_last: t0 + dt, pose };
        prop_assert_eq!(PoseRecord::parse_text(&r.to_text()).unwrap(), r.clone());
        let frame = r.to_frame();
        prop_assert_eq!(PoseRecord::read_frame(&mut frame.as_slice()).unwrap(), Some(r));
    }
}

#[test]
fn header_layout_is_sixteen_bytes_little_endian() {
    let h = EventHeader { width: 256, height: 192, count: 3 };
    let b = h.to_bytes();
    assert_eq!(&b[..4], b"EVT1");
    assert_eq!(&b[4..8], &[0, 1, 192, 0]);
    assert_eq!(u64::from_le_bytes(b[8..].try_into().unwrap()), 3);
    assert_eq!(EventHeader::parse(&b).unwrap(), h);
}

#[test]
fn malformed_event_files_are_rejected() {
    let s = EventStream::new(vec![Event::new(1, 1, 5, Polarity::Positive), Event::new(2, 2, 9, Polarity::Negative)], 4, 4).unwrap();
    let mut good = Vec::new();
    write_events_to(&mut good, &s).unwrap();

    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    let mut bad_polarity = good.clone();
    bad_polarity[16 + 12] = 0;
    let mut out_of_bounds = good.clone();
    out_of_bounds[16] = 9;
    let mut backwards = good.clone();
    backwards[16 + 14 + 4..16 + 14 + 12].copy_from_slice(&1u64.to_le_bytes());
    let truncated = &good[..good.len() - 3];
    for (name, bytes) in [
        ("magic", bad_magic.as_slice()),
        ("polarity", bad_polarity.as_slice()),
        ("bounds", out_of_bounds.as_slice()),
        ("order", backwards.as_slice()),
        ("truncated", truncated),
    ] {
        let e = read_events_from(bytes).unwrap_err();
        assert_eq!(e.code(), "E_FORMAT", "{name}: {e}");
    }

    let mut open_ended = good.clone();
    open_ended[8..16].copy_from_slice(&UNBOUNDED.to_le_bytes());
    assert_eq!(read_events_from(open_ended.as_slice()).unwrap(), s);
    let e = read_events_from(&open_ended[..open_ended.len() - 3]).unwrap_err();
    assert_eq!(e.code(), "E_FORMAT");
}

#[test]
fn file_reader_detects_csv_and_binary() {
    let dir = tempfile::tempdir().unwrap();
    let s = EventStream::new(vec![Event::new(3, 2, 0, Polarity::Positive), Event::new(3, 2, 7_500, Polarity::Negative)], 256, 192).unwrap();
    let bin = dir.path().join("e.bin");
    write_events(&bin, &s).unwrap();
    let csv = dir.path().join("e.csv");
    let mut text = Vec::new();
    write_csv_to(&mut text, &s).unwrap();
    std::fs::write(&csv, &text).unwrap();
    assert!(String::from_utf8(text).unwrap().starts_with("t,x,y,p\n0,3,2,1\n"));
    assert_eq!(read_events(&bin, (1, 1)).unwrap(), s);
    assert_eq!(read_events(&csv, (256, 192)).unwrap(), s);
}

#[test]
fn intrinsics_round_trip_and_fit_missing_inverse() {
    let intr = FisheyeIntrinsics::default_egocentric();
    let back = parse_intrinsics(&format_intrinsics(&intr)).unwrap();
    assert_eq!(back, intr);

    let text = "# lens\npoly: 100 0 -0.001 0 0\ncenter: 128 96\naffine: 1 0 0\n";
    let fitted = parse_intrinsics(text).unwrap();
    assert!(!fitted.inverse_poly.is_empty());
    assert_eq!((fitted.width, fitted.height), (256, 192));
    let px = fitted.project([0.0, 0.0, -1.0]).unwrap();
    assert!((px[0] - 128.0).abs() < 1e-9 && (px[1] - 96.0).abs() < 1e-9);

    for bad in ["poly: 1 2 3\ncenter: 1 1\naffine: 1 0 0", "center: 1 1\naffine: 1 0 0", "poly: 1 0 0 0 0\ncenter: 1 1\naffine: 1 0 0\nzoom: 2"] {
        assert_eq!(parse_intrinsics(bad).unwrap_err().code(), "E_FORMAT", "{bad}");
    }
    let singular = "poly: 1 0 0 0 0\ncenter: 1 1\naffine: 0 0 0";
    assert_eq!(parse_intrinsics(singular).unwrap_err().code(), "E_ARG");
}

#[test]
fn images_and_videos_round_trip() {
    let mut img = Image::new(5, 3, 3);
    img.put(4, 2, &[1, 2, 3]);
    assert_eq!(Image::decode(&img.encode()).unwrap(), img);
    let grey = Image::from_luminance(2, 2, &[0.0, 0.5, 1.0, 0.25]);
    assert_eq!(grey.data, vec![0, 128, 255, 64]);
    let with_comment = b"P5\n# made by hand\n2 1\n255\n\x00\xff";
    assert_eq!(Image::decode(with_comment).unwrap().data, vec![0, 255]);

    let dir = tempfile::tempdir().unwrap();
    let mut v = BrightnessVideo::new(3, 2);
    v.push(vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0], 0).unwrap();
    v.push(vec![1.0; 6], 2_083).unwrap();
    write_video(dir.path(), &v).unwrap();
    let back = read_video(dir.path()).unwrap();
    assert_eq!(back.timestamps, v.timestamps);
    for (a, b) in back.frames.iter().flatten().zip(v.frames.iter().flatten()) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
    }
}

#[test]
fn model_file_round_trips_in_single_precision() {
    let params = NetworkParams::init(&NetConfig::toy(), 11).unwrap();
    let bytes = encode_model(&params);
    assert_eq!(&bytes[..4], b"EE3D");
    let back = decode_model(&bytes).unwrap();
    assert_eq!(back.config, params.config);
    for (a, b) in back.values.iter().flatten().zip(params.values.iter().flatten()) {
        assert_eq!(*a, *b as f32 as f64);
    }
    assert_eq!(back.buffers, params.buffers);
    // storing an already rounded model is lossless
    assert_eq!(encode_model(&back), bytes);

    let mut corrupt = bytes.clone();
    corrupt[100] ^= 1;
    assert_eq!(decode_model(&corrupt).unwrap_err().code(), "E_FORMAT");
}

#[test]
fn training_state_round_trips_exactly() {
    let params = NetworkParams::init(&NetConfig::toy(), 5).unwrap();
    let mut adam = AdamState::new(&params);
    adam.step = 42;
    adam.m[0][0] = 0.1 + 0.2;
    adam.v[3][1] = 1e-300;
    let s = TrainingState { params, adam, config_hash: [7; 32] };
    let back = decode_state(&encode_state(&s)).unwrap();
    assert_eq!(back, s);
    assert!(decode_model(&encode_state(&s)).is_err());
}

#[test]
fn configs_parse_and_hash() {
    let c = SynthConfig::parse("motions = wave, squat\nseed = 9\nduration = 0.5 # seconds\n").unwrap();
    assert_eq!(c.motions.len(), 2);
    assert_eq!(c.window_ms, 15.0);
    assert_eq!(SynthConfig::parse(&c.canonical()).unwrap(), c);
    assert_ne!(c.hash(), SynthConfig::default().hash());
    assert_eq!(SynthConfig::parse("speed = 3").unwrap_err().code(), "E_CONFIG");

    let t = TrainConfig::parse("arch = full\nseq_len = 4\n", false).unwrap();
    assert_eq!(t.net, NetConfig::full_scale());
    assert_eq!(t.lr, 1e-3);
    assert_eq!((t.weights.joints, t.weights.heatmap, t.weights.segmentation), (0.01, 10.0, 1.0));
    assert_eq!(TrainConfig::parse("", true).unwrap().lr, FINE_TUNE_LR);
    assert_eq!(TrainConfig::parse("lr = 0.01", true).unwrap().lr, 0.01);
    let mut longer = t.clone();
    longer.iters += 100;
    assert_eq!(longer.hash(), t.hash());
    assert_eq!(TrainConfig::parse("encoder = 1,2", false).unwrap_err().code(), "E_CONFIG");
}

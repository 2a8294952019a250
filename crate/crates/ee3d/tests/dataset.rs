//! Dataset generation, training driver, evaluation and rendering.

use std::path::Path;
use std::sync::OnceLock;

use ee3d::config::{SynthConfig, TrainConfig};
use ee3d::dataset::{synthesize, synthesize_background, Dataset, MANIFEST};
use ee3d::formats::model::{decode_state, encode_state};
use ee3d::render::{project_skeleton, render_lnes, render_pose, BACKGROUND, BONE, JOINT, NEGATIVE, POSITIVE};
use ee3d::report::{evaluate, format_table, json_lines, EvalOptions, Predictor};
use ee3d::train::{batch_indices, load_clips, Augmenter, Trainer};
use ee3d_core::augment::AugmentSource;
use ee3d_core::event::LnesFrame;
use ee3d_core::fisheye::FisheyeIntrinsics;
use ee3d_core::net::NetworkParams;
use ee3d_core::scene::{Motion, Skeleton16, CATEGORIES};
use ee3d_core::{MAP_HEIGHT, MAP_WIDTH, NUM_JOINTS};
use tempfile::TempDir;

fn small_config() -> SynthConfig {
    SynthConfig { motions: vec![Motion::Wave, Motion::Squat], duration: 0.3, seed: 5, ..Default::default() }
}

fn intrinsics() -> FisheyeIntrinsics {
    FisheyeIntrinsics::default_egocentric()
}

/// One dataset shared by every test in this file.
fn shared() -> &'static (TempDir, Dataset) {
    static DS: OnceLock<(TempDir, Dataset)> = OnceLock::new();
    DS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        synthesize(dir.path(), &small_config(), &intrinsics(), 2).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        (dir, ds)
    })
}

fn background(dir: &Path) -> AugmentSource {
    let cfg = SynthConfig { duration: 0.2, ..small_config() };
    let stream = synthesize_background(&dir.join("bg.bin"), &cfg, &intrinsics()).unwrap();
    AugmentSource::new(stream, 15_000).unwrap()
}

#[test]
fn generation_is_reproducible_and_thread_independent() {
    let (dir, ds) = shared();
    let other = tempfile::tempdir().unwrap();
    let summary = synthesize(other.path(), &small_config(), &intrinsics(), 1).unwrap();
    assert_eq!(summary.dataset_hash, ds.dataset_hash);
    assert_eq!(std::fs::read(dir.path().join(MANIFEST)).unwrap(), std::fs::read(other.path().join(MANIFEST)).unwrap());
    assert_eq!(ds.sequence_names, ["000_wave", "001_squat"]);

    let reseeded = tempfile::tempdir().unwrap();
    let s = synthesize(reseeded.path(), &SynthConfig { seed: 6, ..small_config() }, &intrinsics(), 1).unwrap();
    assert_ne!(s.dataset_hash, ds.dataset_hash);
}

#[test]
fn verification_catches_tampering() {
    let (dir, ds) = shared();
    ds.verify().unwrap();
    let copy = tempfile::tempdir().unwrap();
    for entry in walk(dir.path()) {
        let rel = entry.strip_prefix(dir.path()).unwrap();
        let dst = copy.path().join(rel);
        std::fs::create_dir_all(dst.parent().unwrap()).unwrap();
        std::fs::copy(&entry, &dst).unwrap();
    }
    let gt = copy.path().join("001_squat/gt.jsonl");
    let text = std::fs::read_to_string(&gt).unwrap().replacen("\"t0\":0", "\"t0\":1", 1);
    std::fs::write(&gt, text).unwrap();
    let e = Dataset::open(copy.path()).unwrap().verify().unwrap_err();
    assert_eq!(e.code(), "E_FORMAT");
}

fn walk(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(root).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn windows_tile_the_sequence_at_fifteen_milliseconds() {
    assert_eq!(SynthConfig::default().window_ms, 15.0);
    let (_, ds) = shared();
    for seq in ds.sequences().unwrap() {
        assert_eq!(seq.meta.window_us, 15_000);
        assert_eq!(seq.len(), 20, "0.3 s holds 20 whole windows");
        for (i, g) in seq.gt.iter().enumerate() {
            assert_eq!((g.t0, g.duration), (i as u64 * 15_000, 15_000));
        }
        for ((w, range), g) in seq.window_ranges().into_iter().zip(&seq.gt) {
            let ev = &seq.stream.events[range];
            assert!(ev.iter().all(|e| e.t >= w.t0 && e.t < w.t0 + w.duration));
            assert_eq!(g.t_last, ev.last().map(|e| e.t));
        }
        seq.verify_alignment().unwrap();
    }
}

#[test]
fn heatmap_peaks_fall_on_the_dilated_mask() {
    let (_, ds) = shared();
    let plane = MAP_HEIGHT * MAP_WIDTH;
    let (mut on, mut total) = (0usize, 0usize);
    for seq in ds.sequences().unwrap() {
        for (maps, mask) in seq.targets.heatmaps.iter().zip(&seq.targets.masks) {
            let dilated = mask.dilate();
            for j in 0..NUM_JOINTS {
                let m = &maps[j * plane..(j + 1) * plane];
                let (arg, peak) = m.iter().enumerate().fold((0, 0.0f32), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
                if peak < 0.5 {
                    continue;
                }
                total += 1;
                on += (dilated.values[arg] > 0.0) as usize;
            }
        }
    }
    assert!(total > 500);
    assert!(on as f64 >= 0.99 * total as f64, "{on} of {total} peaks on the mask");
}

#[test]
fn clips_cover_sequences_and_epochs_are_permutations() {
    let (_, ds) = shared();
    let clips = load_clips(ds, 6).unwrap();
    assert_eq!(clips.len(), 6, "20 windows give 3 clips of 6 per sequence");
    assert!(clips.iter().all(|c| c.len() == 6));
    let long = load_clips(ds, 50).unwrap();
    assert_eq!(long.len(), 2);
    assert_eq!(long[0].len(), 20);

    for epoch in 0..3u64 {
        let mut seen: Vec<usize> = (0..7).flat_map(|s| batch_indices(epoch * 7 + s, 1, 7, 9)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..7).collect::<Vec<_>>());
    }
    assert_eq!(batch_indices(2, 3, 7, 9), [batch_indices(6, 1, 7, 9), batch_indices(7, 1, 7, 9), batch_indices(8, 1, 7, 9)].concat());
}

fn train_config(iters: u64) -> TrainConfig {
    TrainConfig { iters, seq_len: 4, batch: 2, seed: 3, ..Default::default() }
}

#[test]
fn resumed_training_is_bit_exact() {
    let (dir, ds) = shared();
    let clips = load_clips(ds, 4).unwrap();
    let bg = tempfile::tempdir().unwrap();
    let source = background(bg.path());
    let _ = dir;

    let mut straight = Trainer::new(train_config(4), clips.clone(), None).unwrap().with_augment(Augmenter::new(source.clone())).with_threads(2);
    straight.run(|_, _| Ok(())).unwrap();

    let mut first = Trainer::new(train_config(2), clips.clone(), None).unwrap().with_augment(Augmenter::new(source.clone()));
    first.run(|_, _| Ok(())).unwrap();
    let saved = encode_state(&first.state);
    let mut second = Trainer::resume(train_config(4), clips.clone(), decode_state(&saved).unwrap()).unwrap().with_augment(Augmenter::new(source));
    assert_eq!(second.step(), 2);
    second.run(|_, _| Ok(())).unwrap();

    assert_eq!(encode_state(&second.state), encode_state(&straight.state));

    let other = TrainConfig { lr: 5e-4, ..train_config(4) };
    let e = Trainer::resume(other, clips, decode_state(&saved).unwrap()).err().unwrap();
    assert_eq!(e.code(), "E_CONFIG");
}

#[test]
fn fine_tuning_requires_matching_widths() {
    let (_, ds) = shared();
    let clips = load_clips(ds, 4).unwrap();
    let mut cfg = train_config(1);
    let init = NetworkParams::init(&cfg.net, 1).unwrap();
    cfg.net.lifting_dense[0] += 1;
    assert_eq!(Trainer::new(cfg, clips, Some(init)).err().unwrap().code(), "E_CONFIG");
}

#[test]
fn loss_falls_on_a_small_set() {
    let (_, ds) = shared();
    let clips: Vec<_> = load_clips(ds, 4).unwrap().into_iter().take(2).collect();
    let mut t = Trainer::new(TrainConfig { batch: 1, ..train_config(60) }, clips, None).unwrap();
    let mut totals = Vec::new();
    t.run(|_, l| {
        totals.push(l.total);
        Ok(())
    })
    .unwrap();
    let avg = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let (head, tail) = (avg(&totals[..20]), avg(&totals[40..]));
    assert!(tail < 0.8 * head, "moving average {head} -> {tail}");
    assert!(totals.iter().all(|v| v.is_finite()));
}

#[test]
fn ground_truth_scores_zero_and_alignment_never_hurts() {
    let (_, ds) = shared();
    let gt = evaluate(ds, Predictor::GroundTruth, &EvalOptions::default()).unwrap();
    assert_eq!(gt.report.mean_mpjpe, 0.0);
    assert!(gt.report.mean_pa_mpjpe < 1e-9, "{}", gt.report.mean_pa_mpjpe);

    let params = NetworkParams::init(&TrainConfig::default().net, 2).unwrap();
    let e = evaluate(ds, Predictor::Model(&params), &EvalOptions::default()).unwrap();
    assert_eq!(e.sequences.len(), 2);
    for s in &e.sequences {
        assert!(s.pa_mpjpe <= s.mpjpe, "{s:?}");
    }
    assert!(e.report.mean_pa_mpjpe <= e.report.mean_mpjpe);

    let table = format_table(&e.report);
    let header = table.lines().next().unwrap();
    for c in CATEGORIES {
        assert!(header.contains(c), "missing column {c}");
    }
    assert!(header.contains("Avg. (σ)"));
    assert_eq!(table.lines().count(), 3);
    assert_eq!(e.report.missing.len(), CATEGORIES.len() - 2);

    let lines: Vec<serde_json::Value> = json_lines(&e).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.iter().filter(|v| v["kind"] == "sequence").count(), 2);
    assert_eq!(lines.last().unwrap()["kind"], "summary");
}

#[test]
fn smoothing_keeps_ground_truth_near_zero() {
    let (_, ds) = shared();
    let opts = EvalOptions { smoothing: Some(Default::default()), ..Default::default() };
    let e = evaluate(ds, Predictor::GroundTruth, &opts).unwrap();
    assert!(e.report.mean_mpjpe < 30.0, "{}", e.report.mean_mpjpe);
}

#[test]
fn empty_surface_renders_blank() {
    let img = render_lnes(&LnesFrame::zeros(192, 256));
    assert_eq!((img.width, img.height, img.channels), (256, 192, 3));
    assert!(img.data.chunks(3).all(|p| p == BACKGROUND));
    let palette = [BACKGROUND, POSITIVE, NEGATIVE, BONE, JOINT];
    for (i, a) in palette.iter().enumerate() {
        for b in &palette[i + 1..] {
            assert_ne!(a, b);
        }
    }
    let mut one = LnesFrame::zeros(192, 256);
    one.set(5, 7, 0, 1.0);
    one.set(9, 11, 1, 1.0);
    let img = render_lnes(&one);
    assert_eq!(img.pixel(7, 5), POSITIVE);
    assert_eq!(img.pixel(11, 9), NEGATIVE);
}

#[test]
fn projected_skeleton_lands_on_the_body() {
    let (_, ds) = shared();
    let seq = ds.load_sequence("000_wave").unwrap();
    let (mut on, mut total) = (0, 0);
    for (g, mask) in seq.gt.iter().zip(&seq.targets.masks) {
        let s = Skeleton16::from_flat(&g.joints).unwrap();
        let dilated = mask.dilate();
        for px in project_skeleton(&s, &seq.intrinsics).into_iter().flatten() {
            let (x, y) = ((px[0] / 4.0) as usize, (px[1] / 4.0) as usize);
            total += 1;
            on += (dilated.get(y.min(MAP_HEIGHT - 1), x.min(MAP_WIDTH - 1)) > 0.0) as usize;
        }
    }
    assert!(total > 0);
    assert!(on as f64 >= 0.99 * total as f64, "{on}/{total}");
    let s = Skeleton16::from_flat(&seq.gt[3].joints).unwrap();
    let img = render_pose(&s, &seq.intrinsics, None);
    assert!(img.data.chunks(3).any(|p| p == JOINT));
    assert!(img.data.chunks(3).any(|p| p == BONE));
}

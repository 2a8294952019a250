//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 3 6`.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ee3d::bench::bench;
use ee3d::formats::events::write_events_to;
use ee3d::pipeline::PipelineOptions;
use ee3d::threads::thread_budget;
use ee3d_core::augment::augment_lnes;
use ee3d_core::event::{encode_lnes, Event, EventStream, LnesFrame, Polarity, TimeWindow};
use ee3d_core::fisheye::FisheyeIntrinsics;
use ee3d_core::metrics::{mpjpe, pa_mpjpe};
use ee3d_core::net::*;
use ee3d_core::scene::{generate_sequence, Mask, Motion, Renderer, SequenceConfig};
use ee3d_core::sim::{reconstruct_log_brightness, EventSimulator, SimulatorConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = std::result::Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Check);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, started: Instant) -> std::result::Result<Duration, String> {
    let took = started.elapsed();
    ensure(took < limit, || format!("took {took:.1?}, limit {limit:?}"))?;
    Ok(took)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// 1

fn replay_oracle(events: &[Event], t0: u64, span: u64, h: usize, w: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; 2 * h * w];
    for e in events {
        let c = if e.p == Polarity::Positive { 0 } else { 1 };
        out[(c * h + e.y as usize) * w + e.x as usize] = ((e.t - t0) as f64 / span as f64) as f32;
    }
    out
}

fn lnes_oracle() -> Check {
    let started = Instant::now();
    let mut r = rng(1);
    let (h, w) = (192, 256);
    let mut mismatches = 0usize;
    let mut total_events = 0usize;
    for _ in 0..1000 {
        let t0 = r.random_range(0..1u64 << 40);
        let span = r.random_range(1..200_000u64);
        let n = r.random_range(0..3000usize);
        let mut ts: Vec<u64> = (0..n).map(|_| t0 + r.random_range(0..=span)).collect();
        ts.sort_unstable();
        // crowd a few pixels so repeated hits are common
        let hot = r.random_bool(0.5);
        let events: Vec<Event> = ts
            .into_iter()
            .map(|t| {
                let (x, y) = if hot { (r.random_range(0..8), r.random_range(0..8)) } else { (r.random_range(0..w as u16), r.random_range(0..h as u16)) };
                Event::new(x, y, t, if r.random_bool(0.5) { Polarity::Positive } else { Polarity::Negative })
            })
            .collect();
        total_events += events.len();
        let frame = encode_lnes(&events, TimeWindow::new(t0, span).unwrap(), h, w).map_err(|e| e.to_string())?;
        let oracle = replay_oracle(&events, t0, span, h, w);
        mismatches += frame.values.iter().zip(&oracle).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
    }
    ensure(mismatches == 0, || format!("{mismatches} entries differ from the replay oracle"))?;
    let took = within(Duration::from_secs(10), started)?;
    Ok(format!("1000 windows, {total_events} events, bitwise equal, {took:.2?}"))
}

// 2

fn simulator_law() -> Check {
    let started = Instant::now();
    let mut r = rng(2);
    let mut worst_residual_ratio: f64 = 0.0;
    let mut total = 0usize;
    for case in 0..200 {
        let threshold = r.random_range(0.05..0.6);
        let start = r.random_range(-4.0..2.0);
        let up = r.random_bool(0.5);
        let frames = r.random_range(1..40);
        // monotone, uneven steps
        let steps: Vec<f64> = (0..frames).map(|_| r.random_range(0.0..0.3)).collect();
        let sign = if up { 1.0 } else { -1.0 };
        let cfg = SimulatorConfig { threshold, ..Default::default() };
        let mut sim = EventSimulator::from_log_frame(&[start], 1, 1, 0, &cfg).map_err(|e| e.to_string())?;
        let mut level = start;
        let mut events = Vec::new();
        for (k, s) in steps.iter().enumerate() {
            level += sign * s;
            events.extend(sim.push_log_frame(&[level], (k as u64 + 1) * 1_000).map_err(|e| e.to_string())?);
        }
        let d = (level - start).abs();
        let q = d / threshold;
        ensure((q - q.round()).abs() > 1e-9 || q.round() == 0.0, || format!("case {case}: ramp lands on a threshold multiple"))?;
        ensure(events.len() as f64 == q.floor(), || format!("case {case}: {} events, expected floor({q}) ", events.len()))?;
        let want = if up { Polarity::Positive } else { Polarity::Negative };
        ensure(events.iter().all(|e| e.p == want), || format!("case {case}: wrong polarity"))?;
        total += events.len();
        let stream = EventStream::new(events, 1, 1).map_err(|e| e.to_string())?;
        let rec = reconstruct_log_brightness(&stream, &cfg, &[start]).map_err(|e| e.to_string())?;
        let residual = (rec[0] - level).abs();
        ensure(residual < threshold, || format!("case {case}: residual {residual} >= C = {threshold}"))?;
        worst_residual_ratio = worst_residual_ratio.max(residual / threshold);
    }
    let took = within(Duration::from_secs(10), started)?;
    Ok(format!("200 ramps, {total} events, worst residual {worst_residual_ratio:.3} C, {took:.2?}"))
}

// 3

fn random_frame(r: &mut ChaCha8Rng, h: usize, w: usize) -> LnesFrame {
    let mut f = LnesFrame::zeros(h, w);
    for v in f.values.iter_mut() {
        if r.random_bool(0.2) {
            *v = r.random_range(0.0..1.0);
        }
    }
    f
}

fn random_targets(r: &mut ChaCha8Rng, cfg: &NetConfig) -> Targets {
    let (h, w) = (cfg.map_height(), cfg.map_width());
    Targets {
        heatmaps: Tensor::from_vec(16, h, w, (0..16 * h * w).map(|_| r.random_range(0.0..1.0)).collect()),
        mask: Tensor::from_vec(1, h, w, (0..h * w).map(|_| if r.random_bool(0.4) { 1.0 } else { 0.0 }).collect()),
        joints: (0..48).map(|_| r.random_range(-1.0..1.0)).collect(),
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

/// Change of the weighted total loss between two predictions, summed term
/// by term to avoid cancellation at small steps.
fn loss_delta(plus: &Outputs, minus: &Outputs, gt: &Targets, w: &LossWeights) -> f64 {
    let sq = |a: &[f64], b: &[f64], t: &[f64]| -> f64 { a.iter().zip(b).zip(t).map(|((a, b), t)| (a - b) * (a + b - 2.0 * t)).sum::<f64>() / 16.0 };
    let n = gt.mask.data.len() as f64;
    let seg: f64 = plus
        .mask
        .data
        .iter()
        .zip(&minus.mask.data)
        .zip(&gt.mask.data)
        .map(|((p, m), t)| -(t * ((p - m) / m).ln_1p() + (1.0 - t) * ((m - p) / (1.0 - m)).ln_1p()))
        .sum::<f64>()
        / n;
    w.heatmap * sq(&plus.heatmaps.data, &minus.heatmaps.data, &gt.heatmaps.data) + w.joints * sq(&plus.pose, &minus.pose, &gt.joints) + w.segmentation * seg
}

fn gradient_check() -> Check {
    let started = Instant::now();
    let weights = LossWeights::default();
    ensure((weights.joints, weights.heatmap, weights.segmentation) == (0.01, 10.0, 1.0), || format!("default weights {weights:?}"))?;
    let cfg = NetConfig::toy();
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for seed in [1u64, 2, 3] {
        let mut r = rng(100 + seed);
        let params = NetworkParams::init(&cfg, seed).map_err(|e| e.to_string())?;
        let samples: Vec<TrainingSample> =
            (0..2).map(|_| TrainingSample { lnes: random_frame(&mut r, cfg.input_height, cfg.input_width), targets: random_targets(&mut r, &cfg) }).collect();
        let opts = TrainOptions { weights, ..Default::default() };
        let analytic = sequence_gradients(&samples, &params, &opts).map_err(|e| e.to_string())?.grads;
        // two frames, the second composed through the first one's confidence
        let outputs = |p: &NetworkParams| -> Vec<Outputs> {
            let mut buf = FrameBufferState::zeros(&cfg);
            samples
                .iter()
                .map(|s| {
                    let c = compose_input(&s.lnes, &buf).unwrap();
                    let o = forward(&c.input, p, Mode::Train).unwrap().0;
                    buf.update(&c, &o.confidence).unwrap();
                    o
                })
                .collect()
        };
        let mut confidence_seen = false;
        for t in 0..params.values.len() {
            let len = params.values[t].len();
            let stride = (len / 6).max(1);
            for i in (0..len).step_by(stride).chain([len - 1]) {
                let a = analytic.values[t][i];
                let mut num = 0.0;
                // a step straddling a PReLU kink is retried 10x smaller
                for h in [1e-6, 1e-7] {
                    let mut p = params.clone();
                    let x0 = p.values[t][i];
                    p.values_mut()[t][i] = x0 + h;
                    let fp = outputs(&p);
                    p.values_mut()[t][i] = x0 - h;
                    let fm = outputs(&p);
                    num = (0..2).map(|q| loss_delta(&fp[q], &fm[q], &samples[q].targets, &weights)).sum::<f64>() / (2.0 * h);
                    if rel_err(a, num) < 1e-4 {
                        break;
                    }
                }
                let e = rel_err(a, num);
                ensure(e < 1e-4, || format!("seed {seed}, {} [{i}]: analytic {a:e}, numeric {num:e}", params.specs[t].name))?;
                worst = worst.max(e);
                checked += 1;
                if params.specs[t].name.starts_with("confidence") && a != 0.0 {
                    confidence_seen = true;
                }
            }
        }
        ensure(confidence_seen, || format!("seed {seed}: confidence decoder received no gradient"))?;
    }
    let took = within(Duration::from_secs(300), started)?;
    Ok(format!("toy net, 3 seeds, {checked} entries over every tensor, worst rel err {worst:.1e}, {took:.1?}"))
}

// 4

fn repm_identities() -> Check {
    let started = Instant::now();
    let cfg = NetConfig::toy();
    let mut r = rng(4);
    let lq = random_frame(&mut r, cfg.input_height, cfg.input_width);

    let fresh = FrameBufferState::zeros(&cfg);
    let c = compose_input(&lq, &fresh).map_err(|e| e.to_string())?;
    ensure(c.input.data.iter().zip(&lq.values).all(|(o, &l)| *o == 2.0 * l as f64 - 1.0), || "zero buffer is not 2 L - 1".into())?;

    let mut stale = FrameBufferState::zeros(&cfg);
    stale.prev_input.data.iter_mut().for_each(|v| *v = r.random_range(0.0..3.0));
    let c2 = compose_input(&lq, &stale).map_err(|e| e.to_string())?;
    ensure(c2 == c, || "zero-confidence buffer differs from a fresh start".into())?;
    let params = NetworkParams::init(&cfg, 4).map_err(|e| e.to_string())?;
    let a = forward(&c.input, &params, Mode::Eval).map_err(|e| e.to_string())?.0;
    let b = forward(&c2.input, &params, Mode::Eval).map_err(|e| e.to_string())?.0;
    ensure(a == b, || "outputs differ after a zero-confidence buffer".into())?;

    let mut halves = 0;
    for out in [&a] {
        for ((m, f), conf) in out.mask.data.iter().zip(&out.feature.data).zip(&out.confidence.data) {
            if m * f == 0.0 {
                ensure(*conf == 0.5, || format!("confidence {conf} where the product is zero"))?;
                halves += 1;
            }
        }
    }
    let mut zeroed = params.clone();
    let w = zeroed.index_of("confidence.3.weight").ok_or("no last confidence layer")?;
    let bias = zeroed.index_of("confidence.3.bias").ok_or("no last confidence bias")?;
    zeroed.values_mut()[w].fill(0.0);
    zeroed.values_mut()[bias].fill(0.0);
    let z = forward(&c.input, &zeroed, Mode::Eval).map_err(|e| e.to_string())?.0;
    ensure(z.feature.data.iter().all(|&v| v == 0.0), || "feature map not zero".into())?;
    ensure(z.confidence.data.iter().all(|&v| v == 0.5), || "confidence not exactly 0.5 on a zero product".into())?;
    halves += z.confidence.data.len();
    let took = started.elapsed();
    Ok(format!("fresh compose exact, zero confidence == reset, {halves} zero-product cells at 0.5, {took:.2?}"))
}

// 5

fn rotation(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let [x, y, z] = axis.map(|v| v / n);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [[t * x * x + c, t * x * y - s * z, t * x * z + s * y], [t * x * y + s * z, t * y * y + c, t * y * z - s * x], [t * x * z - s * y, t * y * z + s * x, t * z * z + c]]
}

fn random_pose(r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..48).map(|_| r.random_range(-0.8..0.8)).collect()
}

fn procrustes_suite() -> Check {
    let started = Instant::now();
    let mut r = rng(5);
    let mut worst_pa: f64 = 0.0;
    for _ in 0..100 {
        let gt = random_pose(&mut r);
        let rot = rotation([r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(0.1..1.0)], r.random_range(-3.1..3.1));
        let s = r.random_range(0.3..3.0);
        let t: [f64; 3] = [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)];
        let moved: Vec<f64> = gt
            .chunks(3)
            .flat_map(|p| (0..3).map(move |i| s * (rot[i][0] * p[0] + rot[i][1] * p[1] + rot[i][2] * p[2]) + t[i]).collect::<Vec<_>>())
            .collect();
        let pa = pa_mpjpe(&[&moved], &[&gt], true).map_err(|e| e.to_string())?;
        ensure(pa < 1e-6, || format!("PA-MPJPE {pa:e} mm after a similarity transform"))?;
        worst_pa = worst_pa.max(pa);
    }
    for k in 0..100 {
        let gt = random_pose(&mut r);
        let pred = random_pose(&mut r);
        let (m, pa) = (mpjpe(&[&pred], &[&gt]).map_err(|e| e.to_string())?, pa_mpjpe(&[&pred], &[&gt], true).map_err(|e| e.to_string())?);
        ensure(pa <= m, || format!("pair {k}: PA-MPJPE {pa} > MPJPE {m}"))?;
    }
    let gt = random_pose(&mut r);
    let v = [0.012, -0.034, 0.056];
    let shifted: Vec<f64> = gt.iter().enumerate().map(|(i, x)| x + v[i % 3]).collect();
    let norm = 1000.0 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let m = mpjpe(&[&shifted], &[&gt]).map_err(|e| e.to_string())?;
    let pa = pa_mpjpe(&[&shifted], &[&gt], true).map_err(|e| e.to_string())?;
    ensure((m - norm).abs() <= 1e-9, || format!("translation MPJPE {m} vs |v| {norm}"))?;
    ensure(pa < 1e-9, || format!("translation PA-MPJPE {pa:e}"))?;
    Ok(format!("worst similarity PA-MPJPE {worst_pa:.1e} mm, translation MPJPE {m:.9} mm, {:.2?}", started.elapsed()))
}

// 6

fn overfit_run(samples: &[TrainingSample], max_steps: usize) -> std::result::Result<(Vec<f64>, NetworkParams), String> {
    let mut params = NetworkParams::init(&NetConfig::toy(), 7).map_err(|e| e.to_string())?;
    let mut adam = AdamState::new(&params);
    let opts = TrainOptions::default();
    let mut totals = Vec::new();
    for _ in 0..max_steps {
        let l = train_step(&[samples], &mut params, &mut adam, &opts).map_err(|e| e.to_string())?;
        totals.push(l.total);
        if l.total <= 0.1 * totals[0] {
            break;
        }
    }
    Ok((totals, params))
}

fn overfit_smoke() -> Check {
    let started = Instant::now();
    let renderer = Renderer::new(FisheyeIntrinsics::default_egocentric()).map_err(|e| e.to_string())?;
    let mut seq_cfg = SequenceConfig::new(Motion::Wave, 0.15);
    seq_cfg.seed = 7;
    let seq = generate_sequence(&seq_cfg, &renderer).map_err(|e| e.to_string())?;
    let samples: Vec<TrainingSample> =
        (0..8).map(|i| seq.sample(i, &renderer, seq_cfg.sigma).map(|s| TrainingSample::from(&s))).collect::<ee3d_core::Result<_>>().map_err(|e| e.to_string())?;
    let (totals, params) = overfit_run(&samples, 2000)?;
    let (first, last) = (totals[0], *totals.last().unwrap());
    let reduction = 1.0 - last / first;
    ensure(reduction >= 0.9, || format!("loss {first:.3} -> {last:.3} ({:.1}%) after {} steps", 100.0 * reduction, totals.len()))?;
    let (again, params_again) = overfit_run(&samples, totals.len())?;
    ensure(again.iter().map(|v| v.to_bits()).eq(totals.iter().map(|v| v.to_bits())) && params_again == params, || "second run differs".into())?;
    let took = within(Duration::from_secs(600), started)?;
    Ok(format!("8 frames, loss {first:.2} -> {last:.2} (-{:.1}%) in {} steps, rerun bit-identical, {took:.1?}", 100.0 * reduction, totals.len()))
}

// 7

fn architecture_scale() -> Check {
    let cfg = NetConfig::full_scale();
    let params = NetworkParams::init(&cfg, 0).map_err(|e| e.to_string())?.param_count();
    let flops = cfg.flops();
    ensure(params == cfg.param_count(), || format!("instantiated {params} vs counted {}", cfg.param_count()))?;
    let dp = (params as f64 / 1.25e6 - 1.0).abs();
    let df = (flops as f64 / 416.84e6 - 1.0).abs();
    ensure(dp <= 0.10, || format!("{params} parameters, {:.1}% from 1.25M", 100.0 * dp))?;
    ensure(df <= 0.25, || format!("{flops} FLOPs, {:.1}% from 416.84M", 100.0 * df))?;
    Ok(format!("{params} parameters ({:+.1}%), {:.2}M FLOPs ({:+.1}%)", 100.0 * (params as f64 / 1.25e6 - 1.0), flops as f64 / 1e6, 100.0 * (flops as f64 / 416.84e6 - 1.0)))
}

// 8

fn moving_events(seconds: f64) -> Vec<u8> {
    let mut r = rng(8);
    let mut events = Vec::new();
    let end = (seconds * 1e6) as u64;
    let mut t = 0u64;
    while t < end {
        let phase = t as f64 * 1e-6 * 3.0;
        let cx = 128.0 + 70.0 * phase.sin();
        let cy = 96.0 + 40.0 * (1.3 * phase).cos();
        let x = (cx + r.random_range(-20.0..20.0)).clamp(0.0, 255.0) as u16;
        let y = (cy + r.random_range(-30.0..30.0)).clamp(0.0, 191.0) as u16;
        events.push(Event::new(x, y, t, if r.random_bool(0.5) { Polarity::Positive } else { Polarity::Negative }));
        t += r.random_range(1..12);
    }
    let stream = EventStream::new(events, 256, 192).unwrap();
    let mut bytes = Vec::new();
    write_events_to(&mut bytes, &stream).unwrap();
    bytes
}

fn throughput() -> Check {
    let bytes = moving_events(2.0);
    let params = NetworkParams::init(&NetConfig::toy(), 8).map_err(|e| e.to_string())?;
    let mut opts = PipelineOptions::new(15_000);
    opts.threads = thread_budget();
    let report = bench(&bytes, &params, &opts, 5).map_err(|e| e.to_string())?;
    ensure(report.poses_per_second >= 140.0, || format!("{:.1} poses/s < 140", report.poses_per_second))?;
    ensure(report.events_per_second >= 1e7, || format!("{:.3e} LNES events/s < 1e7", report.events_per_second))?;
    Ok(format!(
        "{:.1} poses/s end to end ({} threads), {:.2e} LNES events/s",
        report.poses_per_second, opts.threads, report.events_per_second
    ))
}

// 9

fn augmentation_identities() -> Check {
    let mut r = rng(9);
    let (h, w) = (192, 256);
    for case in 0..100 {
        let human = random_frame(&mut r, h, w);
        let mut bg = LnesFrame::zeros(h, w);
        bg.values.iter_mut().for_each(|v| *v = r.random_range(0.0..=1.0));
        let ones = Mask::filled(48, 64, 1.0);
        let out = augment_lnes(&human, &ones, &bg).map_err(|e| e.to_string())?;
        ensure(out == human, || format!("case {case}: all-ones mask changed the human frame"))?;
        let mut mask = Mask::filled(48, 64, 0.0);
        mask.values.iter_mut().for_each(|v| *v = if r.random_bool(0.3) { 1.0 } else { 0.0 });
        let out = augment_lnes(&human, &mask, &LnesFrame::zeros(h, w)).map_err(|e| e.to_string())?;
        ensure(out == human, || format!("case {case}: zero background is not the identity"))?;
        let out = augment_lnes(&human, &mask, &bg).map_err(|e| e.to_string())?;
        ensure(out.values.iter().all(|v| (0.0..=1.0).contains(v)), || format!("case {case}: value outside [0, 1]"))?;
    }
    Ok("100 fuzzed frames: all-ones mask and zero background exact, outputs in [0, 1]".into())
}

// 10

fn ee3d(dir: &Path, args: &[&str]) -> std::result::Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ee3d")).current_dir(dir).args(args).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("ee3d {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()))?;
    Ok(out.stdout)
}

fn end_to_end_run(dir: &Path) -> std::result::Result<Vec<(String, Vec<u8>)>, String> {
    ee3d(dir, &["synth", "--out", "data", "--seed", "11", "--motions", "wave,squat", "--duration", "0.3"])?;
    ee3d(dir, &["train", "--dataset", "data", "--model", "model.ee3d", "--iters", "4", "--seq-len", "6", "--seed", "11"])?;
    let seq = std::fs::read_dir(dir.join("data"))
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().join("events.bin").exists())
        .map(|e| e.path().join("events.bin"))
        .min()
        .ok_or("no sequence in the dataset")?;
    let poses = ee3d(dir, &["infer", seq.to_str().unwrap(), "--model", "model.ee3d"])?;
    let table = ee3d(dir, &["eval", "--dataset", "data", "--model", "model.ee3d", "--json", "report.jsonl"])?;
    let json = std::fs::read(dir.join("report.jsonl")).map_err(|e| e.to_string())?;
    let manifest = std::fs::read(dir.join("data/manifest.txt")).map_err(|e| e.to_string())?;
    let model = std::fs::read(dir.join("model.ee3d")).map_err(|e| e.to_string())?;
    Ok(vec![
        ("manifest".into(), manifest),
        ("model".into(), model),
        ("pose records".into(), poses),
        ("report".into(), table),
        ("json report".into(), json),
    ])
}

fn end_to_end_determinism() -> Check {
    let started = Instant::now();
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ra = end_to_end_run(a.path())?;
    let rb = end_to_end_run(b.path())?;
    for ((name, x), (_, y)) in ra.iter().zip(&rb) {
        ensure(x == y, || format!("{name} differs between runs"))?;
        ensure(!x.is_empty(), || format!("{name} is empty"))?;
    }
    let records = String::from_utf8_lossy(&ra[2].1).lines().count();
    Ok(format!("two runs, {records} pose records, model, manifest and reports bit-identical, {:.1?}", started.elapsed()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "LNES oracle equivalence", lnes_oracle),
        (2, "simulator event-count law", simulator_law),
        (3, "gradient check", gradient_check),
        (4, "frame buffer identities", repm_identities),
        (5, "Procrustes suite", procrustes_suite),
        (6, "training smoke test", overfit_smoke),
        (7, "architecture scale", architecture_scale),
        (8, "throughput", throughput),
        (9, "augmentation identities", augmentation_identities),
        (10, "end-to-end determinism", end_to_end_determinism),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        match check() {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

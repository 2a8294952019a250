//! Synthetic dataset on disk.
//!
//! ```text
//! <root>/manifest.txt          seed, config hash, per-file SHA-256, dataset hash
//! <root>/synth.txt             canonical generation config
//! <root>/<seq>/events.bin      EVT1 event stream
//! <root>/<seq>/gt.jsonl        one record per window: t0, T, t_last, pose_time, 48 joint values
//! <root>/<seq>/targets.bin     packed heatmaps (f32) and mask (u8) per window
//! <root>/<seq>/intrinsics.txt  fisheye intrinsics
//! <root>/<seq>/meta.txt        motion, category, window, camera perturbation
//! ```
//!
//! Windows are back-to-back `[t0, t0 + T)` intervals from the sequence
//! start; windows without events are kept and carry the pose at their end.

use std::fs;
use std::path::{Path, PathBuf};

use ee3d_core::event::{encode_lnes, EventStream, TimeWindow};
use ee3d_core::fisheye::FisheyeIntrinsics;
use ee3d_core::scene::{
    generate_background, generate_sequence, skeleton_in_camera, CameraPerturbation, Mask, Motion, Renderer, SampleRecord,
    SequenceConfig, Skeleton16,
};
use ee3d_core::{MAP_HEIGHT, MAP_WIDTH, NUM_JOINTS};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, window_us, SynthConfig};
use crate::error::{Error, IoContext, Result};
use crate::formats::events::{read_events, write_events};
use crate::formats::intrinsics::{read_intrinsics, write_intrinsics};
use crate::threads::parallel_map;

pub const MANIFEST: &str = "manifest.txt";
pub const SYNTH_CONFIG: &str = "synth.txt";
const TARGETS_MAGIC: &[u8; 4] = b"EE3T";
const SEQUENCE_FILES: [&str; 5] = ["events.bin", "gt.jsonl", "targets.bin", "intrinsics.txt", "meta.txt"];

/// One line of `gt.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtRecord {
    pub t0: u64,
    #[serde(rename = "T")]
    pub duration: u64,
    pub t_last: Option<u64>,
    pub pose_time: u64,
    pub joints: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceMeta {
    pub name: String,
    pub motion: Motion,
    pub window_us: u64,
    pub sigma: f64,
    pub perturbation: CameraPerturbation,
}

impl SequenceMeta {
    fn format(&self) -> String {
        let r = self.perturbation.rotation;
        let t = self.perturbation.translation;
        let flat: Vec<String> = r.iter().flatten().map(|v| format!("{v:?}")).collect();
        format!(
            "name = {}\nmotion = {}\ncategory = {}\nwindow_us = {}\nsigma = {:?}\nrotation = {}\ntranslation = {:?} {:?} {:?}\n",
            self.name,
            self.motion.name(),
            self.motion.category(),
            self.window_us,
            self.sigma,
            flat.join(" "),
            t[0],
            t[1],
            t[2]
        )
    }

    fn parse(text: &str) -> Result<Self> {
        let mut map = std::collections::HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::format(format!("meta.txt: bad line '{line}'")))?;
            map.insert(k.trim(), v.trim());
        }
        let get = |k: &str| map.get(k).copied().ok_or_else(|| Error::format(format!("meta.txt: missing '{k}'")));
        let floats = |k: &str, n: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = get(k)?.split_whitespace().map(str::parse).collect::<std::result::Result<_, _>>().map_err(Error::format)?;
            if v.len() != n {
                return Err(Error::format(format!("meta.txt: '{k}' needs {n} values")));
            }
            Ok(v)
        };
        let r = floats("rotation", 9)?;
        let t = floats("translation", 3)?;
        Ok(SequenceMeta {
            name: get("name")?.to_string(),
            motion: get("motion")?.parse()?,
            window_us: get("window_us")?.parse().map_err(Error::format)?,
            sigma: get("sigma")?.parse().map_err(Error::format)?,
            perturbation: CameraPerturbation {
                rotation: [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]],
                translation: [t[0], t[1], t[2]],
            },
        })
    }
}

/// Packed heatmaps and masks of every window of a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMaps {
    pub heatmaps: Vec<Vec<f32>>,
    pub masks: Vec<Mask>,
}

fn encode_targets(t: &TargetMaps) -> Vec<u8> {
    let mut out = TARGETS_MAGIC.to_vec();
    for v in [t.heatmaps.len(), MAP_HEIGHT, MAP_WIDTH, NUM_JOINTS] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for (h, m) in t.heatmaps.iter().zip(&t.masks) {
        h.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        out.extend(m.values.iter().map(|&v| (v > 0.5) as u8));
    }
    out
}

fn decode_targets(b: &[u8]) -> Result<TargetMaps> {
    if b.len() < 20 || &b[..4] != TARGETS_MAGIC {
        return Err(Error::format("targets.bin: bad header"));
    }
    let word = |i: usize| u32::from_le_bytes(b[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (n, h, w, j) = (word(0), word(1), word(2), word(3));
    if (h, w, j) != (MAP_HEIGHT, MAP_WIDTH, NUM_JOINTS) {
        return Err(Error::format(format!("targets.bin: maps {h}x{w}x{j}")));
    }
    let plane = h * w;
    let per = 4 * j * plane + plane;
    if b.len() != 20 + n * per {
        return Err(Error::format("targets.bin: truncated"));
    }
    let mut heatmaps = Vec::with_capacity(n);
    let mut masks = Vec::with_capacity(n);
    for rec in b[20..].chunks_exact(per) {
        let (hm, m) = rec.split_at(4 * j * plane);
        heatmaps.push(hm.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect());
        masks.push(Mask { height: h, width: w, values: m.iter().map(|&v| v as f32).collect() });
    }
    Ok(TargetMaps { heatmaps, masks })
}

/// A sequence loaded from disk.
#[derive(Debug, Clone)]
pub struct SequenceData {
    pub meta: SequenceMeta,
    pub intrinsics: FisheyeIntrinsics,
    pub stream: EventStream,
    pub gt: Vec<GtRecord>,
    pub targets: TargetMaps,
}

impl SequenceData {
    pub fn len(&self) -> usize {
        self.gt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gt.is_empty()
    }

    /// Event index range of every window.
    pub fn window_ranges(&self) -> Vec<(TimeWindow, std::ops::Range<usize>)> {
        let ev = &self.stream.events;
        let mut start = 0;
        self.gt
            .iter()
            .map(|g| {
                let stop = start + ev[start..].partition_point(|e| e.t < g.t0 + g.duration);
                let r = start..stop;
                start = stop;
                (TimeWindow { t0: g.t0, duration: g.duration }, r)
            })
            .collect()
    }

    pub fn sample(&self, i: usize) -> Result<SampleRecord> {
        let (window, range) = self.window_ranges().swap_remove(i);
        self.build_sample(i, window, range)
    }

    fn build_sample(&self, i: usize, window: TimeWindow, range: std::ops::Range<usize>) -> Result<SampleRecord> {
        let g = &self.gt[i];
        let lnes = encode_lnes(&self.stream.events[range], window, self.intrinsics.height, self.intrinsics.width)?;
        Ok(SampleRecord {
            window,
            t_last: g.t_last,
            pose_time: g.pose_time,
            lnes,
            joints: Skeleton16::from_flat(&g.joints)?,
            heatmaps: self.targets.heatmaps[i].clone(),
            mask: self.targets.masks[i].clone(),
        })
    }

    pub fn samples(&self) -> Result<Vec<SampleRecord>> {
        self.window_ranges().into_iter().enumerate().map(|(i, (w, r))| self.build_sample(i, w, r)).collect()
    }

    /// Checks that every window's ground truth is the animated pose at its
    /// last event (or its end when empty), bit for bit.
    pub fn verify_alignment(&self) -> Result<()> {
        for (i, (window, range)) in self.window_ranges().into_iter().enumerate() {
            let g = &self.gt[i];
            let t_last = range.clone().last().map(|k| self.stream.events[k].t);
            if g.t_last != t_last || g.pose_time != t_last.unwrap_or(window.end()) {
                return Err(Error::format(format!("{} window {i}: pose time does not match the last event", self.meta.name)));
            }
            let expect = skeleton_in_camera(self.meta.motion, g.pose_time as f64 * 1e-6, &self.meta.perturbation)?;
            if expect.to_flat().as_slice() != g.joints.as_slice() {
                return Err(Error::format(format!("{} window {i}: joints differ from the animated pose", self.meta.name)));
            }
        }
        if let Some(g) = self.gt.last() {
            if self.stream.events.last().is_some_and(|e| e.t >= g.t0 + g.duration) {
                return Err(Error::format(format!("{}: events after the last window", self.meta.name)));
            }
        }
        Ok(())
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex(&Sha256::digest(fs::read(path).at(path)?)))
}

/// Writes a generated sequence's files into `dir`.
fn write_sequence(dir: &Path, cfg: &SequenceConfig, renderer: &Renderer) -> Result<()> {
    let seq = generate_sequence(cfg, renderer)?;
    fs::create_dir_all(dir).at(dir)?;
    write_events(&dir.join("events.bin"), &seq.stream)?;
    let mut gt = Vec::new();
    let mut maps = TargetMaps { heatmaps: Vec::new(), masks: Vec::new() };
    for i in 0..seq.windows.len() {
        let s = seq.sample(i, renderer, cfg.sigma)?;
        let rec = GtRecord {
            t0: s.window.t0,
            duration: s.window.duration,
            t_last: s.t_last,
            pose_time: s.pose_time,
            joints: s.joints.to_flat().to_vec(),
        };
        serde_json::to_writer(&mut gt, &rec).map_err(Error::format)?;
        gt.push(b'\n');
        maps.heatmaps.push(s.heatmaps);
        maps.masks.push(s.mask);
    }
    let path = dir.join("gt.jsonl");
    fs::write(&path, gt).at(&path)?;
    let path = dir.join("targets.bin");
    fs::write(&path, encode_targets(&maps)).at(&path)?;
    write_intrinsics(&dir.join("intrinsics.txt"), &renderer.intrinsics)?;
    let meta = SequenceMeta {
        name: seq.name.clone(),
        motion: cfg.motion,
        window_us: cfg.window_us,
        sigma: cfg.sigma,
        perturbation: seq.perturbation,
    };
    let path = dir.join("meta.txt");
    fs::write(&path, meta.format()).at(&path)
}

/// Sequence configs in generation order; names are `{index:03}_{motion}`.
pub fn sequence_configs(cfg: &SynthConfig) -> Result<Vec<SequenceConfig>> {
    let window = window_us(cfg.window_ms)?;
    let mut out = Vec::new();
    for &motion in &cfg.motions {
        for _ in 0..cfg.repeats {
            let mut s = SequenceConfig::new(motion, cfg.duration);
            s.fps = cfg.fps;
            s.window_us = window;
            s.sigma = cfg.sigma;
            s.sim = cfg.sim.clone();
            s.seed = cfg.seed;
            s.index = out.len() as u64;
            s.perturb = cfg.perturb;
            out.push(s);
        }
    }
    Ok(out)
}

/// Summary returned by [`synthesize`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub sequences: Vec<String>,
    pub dataset_hash: String,
}

/// Generates the dataset under `root`. Sequences are independent and may
/// be generated on `threads` workers without changing any byte.
pub fn synthesize(root: &Path, cfg: &SynthConfig, intr: &FisheyeIntrinsics, threads: usize) -> Result<SynthSummary> {
    cfg.validate()?;
    fs::create_dir_all(root).at(root)?;
    let renderer = Renderer::new(intr.clone())?;
    let configs = sequence_configs(cfg)?;
    let names: Vec<String> = configs.iter().map(|c| format!("{:03}_{}", c.index, c.motion.name())).collect();
    let jobs: Vec<(PathBuf, &SequenceConfig)> = names.iter().map(|n| root.join(n)).zip(&configs).collect();
    parallel_map(&jobs, threads, |(dir, c)| write_sequence(dir, c, &renderer)).into_iter().collect::<Result<()>>()?;
    let path = root.join(SYNTH_CONFIG);
    fs::write(&path, cfg.canonical()).at(&path)?;
    write_manifest(root, cfg, &names)
}

fn write_manifest(root: &Path, cfg: &SynthConfig, names: &[String]) -> Result<SynthSummary> {
    let mut lines = Vec::new();
    for n in names {
        for f in SEQUENCE_FILES {
            lines.push(format!("file = {n}/{f} {}", sha256_file(&root.join(n).join(f))?));
        }
    }
    let dataset_hash = hex(&Sha256::digest(lines.join("\n").as_bytes()));
    let mut text = format!("seed = {}\nconfig_hash = {}\ndataset_hash = {dataset_hash}\n", cfg.seed, hex(&cfg.hash()));
    for n in names {
        text.push_str(&format!("sequence = {n}\n"));
    }
    for l in &lines {
        text.push_str(l);
        text.push('\n');
    }
    let path = root.join(MANIFEST);
    fs::write(&path, text).at(&path)?;
    Ok(SynthSummary { sequences: names.to_vec(), dataset_hash })
}

/// Writes a human-free background recording for augmentation.
pub fn synthesize_background(path: &Path, cfg: &SynthConfig, intr: &FisheyeIntrinsics) -> Result<EventStream> {
    let renderer = Renderer::new(intr.clone())?;
    let sim = ee3d_core::sim::SimulatorConfig { seed: cfg.seed ^ 0x5bd1_e995, ..cfg.sim.clone() };
    let stream = generate_background(Motion::WalkInPlace, cfg.duration, cfg.fps, &renderer, &sim)?;
    write_events(path, &stream)?;
    Ok(stream)
}

/// A dataset opened from disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub seed: u64,
    pub config_hash: String,
    pub dataset_hash: String,
    pub sequence_names: Vec<String>,
    files: Vec<(String, String)>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST);
        let text = fs::read_to_string(&path).at(&path)?;
        let mut ds = Dataset {
            root: root.to_path_buf(),
            seed: 0,
            config_hash: String::new(),
            dataset_hash: String::new(),
            sequence_names: Vec::new(),
            files: Vec::new(),
        };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::format(format!("manifest: bad line '{line}'")))?;
            let v = v.trim();
            match k.trim() {
                "seed" => ds.seed = v.parse().map_err(Error::format)?,
                "config_hash" => ds.config_hash = v.to_string(),
                "dataset_hash" => ds.dataset_hash = v.to_string(),
                "sequence" => ds.sequence_names.push(v.to_string()),
                "file" => {
                    let (f, h) = v.split_once(' ').ok_or_else(|| Error::format("manifest: bad file line"))?;
                    ds.files.push((f.to_string(), h.to_string()));
                }
                other => return Err(Error::format(format!("manifest: unknown key '{other}'"))),
            }
        }
        if ds.sequence_names.is_empty() {
            return Err(Error::format("manifest lists no sequences"));
        }
        Ok(ds)
    }

    pub fn load_sequence(&self, name: &str) -> Result<SequenceData> {
        let dir = self.root.join(name);
        let intrinsics = read_intrinsics(&dir.join("intrinsics.txt"))?;
        let stream = read_events(&dir.join("events.bin"), (intrinsics.width as u16, intrinsics.height as u16))?;
        let path = dir.join("meta.txt");
        let meta = SequenceMeta::parse(&fs::read_to_string(&path).at(&path)?)?;
        let path = dir.join("gt.jsonl");
        let gt = fs::read_to_string(&path)
            .at(&path)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str::<GtRecord>(l).map_err(|e| Error::format(format!("{}: {e}", path.display()))))
            .collect::<Result<Vec<_>>>()?;
        let path = dir.join("targets.bin");
        let targets = decode_targets(&fs::read(&path).at(&path)?)?;
        if targets.heatmaps.len() != gt.len() || gt.iter().any(|g| g.joints.len() != 3 * NUM_JOINTS) {
            return Err(Error::format(format!("{name}: ground truth and targets disagree")));
        }
        if (stream.width as usize, stream.height as usize) != (intrinsics.width, intrinsics.height) {
            return Err(Error::format(format!("{name}: event sensor size differs from the intrinsics")));
        }
        Ok(SequenceData { meta, intrinsics, stream, gt, targets })
    }

    pub fn sequences(&self) -> Result<Vec<SequenceData>> {
        self.sequence_names.iter().map(|n| self.load_sequence(n)).collect()
    }

    /// Re-hashes every file and re-runs the ground-truth alignment check.
    pub fn verify(&self) -> Result<()> {
        for (f, h) in &self.files {
            if &sha256_file(&self.root.join(f))? != h {
                return Err(Error::format(format!("{f}: checksum mismatch")));
            }
        }
        let lines: Vec<String> = self.files.iter().map(|(f, h)| format!("file = {f} {h}")).collect();
        if hex(&Sha256::digest(lines.join("\n").as_bytes())) != self.dataset_hash {
            return Err(Error::format("dataset hash mismatch"));
        }
        for s in self.sequences()? {
            s.verify_alignment()?;
        }
        Ok(())
    }
}


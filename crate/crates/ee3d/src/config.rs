//! `key = value` configuration files for dataset synthesis and training.
//!
//! Blank lines and `#` comments are ignored; unknown keys are errors.
//! Each config renders back to a canonical text whose SHA-256 identifies
//! it in manifests and checkpoints.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use ee3d_core::net::{LossWeights, NetConfig};
use ee3d_core::scene::{Motion, DEFAULT_FPS, DEFAULT_SIGMA};
use ee3d_core::sim::SimulatorConfig;
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};

/// Default window length.
pub const DEFAULT_WINDOW_MS: f64 = 15.0;
/// Default frames per training sequence.
pub const DEFAULT_SEQ_LEN: usize = 20;
pub const DEFAULT_LR: f64 = 1e-3;
pub const FINE_TUNE_LR: f64 = 1e-4;

struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::config(format!("line {}: expected 'key = value'", n + 1)))?;
            if entries.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::config(format!("line {}: duplicate key '{}'", n + 1, k.trim())));
            }
        }
        Ok(KeyValues { entries })
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| Error::config(format!("{key}: cannot parse '{v}'"))),
        }
    }

    fn take_list<T: FromStr, const N: usize>(&mut self, key: &str) -> Result<Option<[T; N]>> {
        let Some(v) = self.entries.remove(key) else { return Ok(None) };
        let items = v
            .split(',')
            .map(|s| s.trim().parse::<T>().map_err(|_| Error::config(format!("{key}: cannot parse '{s}'"))))
            .collect::<Result<Vec<T>>>()?;
        let n = items.len();
        items.try_into().map(Some).map_err(|_| Error::config(format!("{key}: expected {N} values, got {n}")))
    }

    fn finish(self) -> Result<()> {
        match self.entries.keys().next() {
            Some(k) => Err(Error::config(format!("unknown key '{k}'"))),
            None => Ok(()),
        }
    }
}

fn hash(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Window length in whole microseconds.
pub fn window_us(ms: f64) -> Result<u64> {
    let us = (ms * 1000.0).round();
    if !(us >= 1.0) {
        return Err(Error::config(format!("window must be at least 1 µs, got {ms} ms")));
    }
    Ok(us as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub motions: Vec<Motion>,
    /// Sequences generated per motion.
    pub repeats: usize,
    /// Seconds per sequence.
    pub duration: f64,
    pub fps: f64,
    pub window_ms: f64,
    pub sigma: f64,
    pub sim: SimulatorConfig,
    pub perturb: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            motions: Motion::ALL.to_vec(),
            repeats: 1,
            duration: 1.0,
            fps: DEFAULT_FPS,
            window_ms: DEFAULT_WINDOW_MS,
            sigma: DEFAULT_SIGMA,
            sim: SimulatorConfig::default(),
            perturb: true,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let mut c = SynthConfig::default();
        if let Some(m) = kv.entries.remove("motions") {
            c.motions = m.split(',').map(|s| s.trim().parse::<Motion>()).collect::<ee3d_core::Result<_>>()?;
        }
        c.repeats = kv.take("repeats")?.unwrap_or(c.repeats);
        c.duration = kv.take("duration")?.unwrap_or(c.duration);
        c.fps = kv.take("fps")?.unwrap_or(c.fps);
        c.window_ms = kv.take("window_ms")?.unwrap_or(c.window_ms);
        c.sigma = kv.take("sigma")?.unwrap_or(c.sigma);
        c.sim.threshold = kv.take("threshold")?.unwrap_or(c.sim.threshold);
        c.sim.threshold_jitter = kv.take("threshold_jitter")?.unwrap_or(c.sim.threshold_jitter);
        c.sim.noise_rate = kv.take("noise_rate")?.unwrap_or(c.sim.noise_rate);
        c.sim.log_eps = kv.take("log_eps")?.unwrap_or(c.sim.log_eps);
        c.perturb = kv.take("perturb")?.unwrap_or(c.perturb);
        c.seed = kv.take("seed")?.unwrap_or(c.seed);
        kv.finish()?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).at(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.motions.is_empty() || self.repeats == 0 {
            return Err(Error::config("at least one motion and one repeat are required"));
        }
        if !(self.duration > 0.0) || !(self.sigma > 0.0) {
            return Err(Error::config("duration and sigma must be positive"));
        }
        window_us(self.window_ms)?;
        self.sim.validate()?;
        Ok(())
    }

    pub fn canonical(&self) -> String {
        let motions: Vec<&str> = self.motions.iter().map(|m| m.name()).collect();
        format!(
            "motions = {}\nrepeats = {}\nduration = {:?}\nfps = {:?}\nwindow_ms = {:?}\nsigma = {:?}\nthreshold = {:?}\n\
             threshold_jitter = {:?}\nnoise_rate = {:?}\nlog_eps = {:?}\nperturb = {}\nseed = {}\n",
            motions.join(","),
            self.repeats,
            self.duration,
            self.fps,
            self.window_ms,
            self.sigma,
            self.sim.threshold,
            self.sim.threshold_jitter,
            self.sim.noise_rate,
            self.sim.log_eps,
            self.perturb,
            self.seed
        )
    }

    pub fn hash(&self) -> [u8; 32] {
        hash(&self.canonical())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Total optimizer steps.
    pub iters: u64,
    /// Sequences per step.
    pub batch: usize,
    pub seq_len: usize,
    pub weights: LossWeights,
    pub net: NetConfig,
    pub seed: u64,
    pub confidence_grad: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: DEFAULT_LR,
            iters: 200,
            batch: 1,
            seq_len: DEFAULT_SEQ_LEN,
            weights: LossWeights::default(),
            net: NetConfig::toy(),
            seed: 0,
            confidence_grad: true,
        }
    }
}

impl TrainConfig {
    /// `fine_tune` changes the learning rate default only; an explicit
    /// `lr` key wins.
    pub fn parse(text: &str, fine_tune: bool) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let mut c = TrainConfig::default();
        c.lr = kv.take("lr")?.unwrap_or(if fine_tune { FINE_TUNE_LR } else { DEFAULT_LR });
        c.iters = kv.take("iters")?.unwrap_or(c.iters);
        c.batch = kv.take("batch")?.unwrap_or(c.batch);
        c.seq_len = kv.take("seq_len")?.unwrap_or(c.seq_len);
        c.weights.joints = kv.take("lambda_joints")?.unwrap_or(c.weights.joints);
        c.weights.heatmap = kv.take("lambda_heatmap")?.unwrap_or(c.weights.heatmap);
        c.weights.segmentation = kv.take("lambda_segmentation")?.unwrap_or(c.weights.segmentation);
        c.seed = kv.take("seed")?.unwrap_or(c.seed);
        c.confidence_grad = kv.take("confidence_grad")?.unwrap_or(c.confidence_grad);
        c.net = match kv.entries.remove("arch").as_deref() {
            None | Some("toy") => NetConfig::toy(),
            Some("full") => NetConfig::full_scale(),
            Some(a) => return Err(Error::config(format!("arch: expected 'toy' or 'full', got '{a}'"))),
        };
        let n = &mut c.net;
        n.encoder = kv.take_list("encoder")?.unwrap_or(n.encoder);
        n.decoder = kv.take_list("decoder")?.unwrap_or(n.decoder);
        n.confidence = kv.take("confidence")?.unwrap_or(n.confidence);
        n.lifting_conv = kv.take_list("lifting_conv")?.unwrap_or(n.lifting_conv);
        n.lifting_dense = kv.take_list("lifting_dense")?.unwrap_or(n.lifting_dense);
        kv.finish()?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path, fine_tune: bool) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).at(path)?, fine_tune)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch == 0 || self.seq_len == 0 {
            return Err(Error::config("lr, batch and seq_len must be positive"));
        }
        self.weights.validate()?;
        self.net.validate()?;
        Ok(())
    }

    /// Canonical text without `iters`, so a run can be extended.
    pub fn canonical(&self) -> String {
        let n = &self.net;
        format!(
            "lr = {:?}\nbatch = {}\nseq_len = {}\nlambda_joints = {:?}\nlambda_heatmap = {:?}\nlambda_segmentation = {:?}\n\
             seed = {}\nconfidence_grad = {}\nencoder = {}\ndecoder = {}\nconfidence = {}\nlifting_conv = {}\nlifting_dense = {}\n",
            self.lr,
            self.batch,
            self.seq_len,
            self.weights.joints,
            self.weights.heatmap,
            self.weights.segmentation,
            self.seed,
            self.confidence_grad,
            join(&n.encoder),
            join(&n.decoder),
            n.confidence,
            join(&n.lifting_conv),
            join(&n.lifting_dense)
        )
    }

    pub fn hash(&self) -> [u8; 32] {
        hash(&self.canonical())
    }
}

//! Dataset-driven training with checkpointing and exact resume.
//!
//! Each sequence is cut into consecutive clips of `seq_len` windows (a
//! shorter sequence is one clip). Step `s` trains on the clips at global
//! positions `s * batch .. (s + 1) * batch` of an epoch-wise shuffled
//! order derived from the seed, so the data of any step depends only on
//! the step number and a resumed run matches an uninterrupted one.

use ee3d_core::augment::{augment_lnes, AugmentSource};
use ee3d_core::net::{apply_batch, sequence_gradients, AdamState, Losses, NetworkParams, TrainOptions, TrainingSample};
use ee3d_core::scene::SampleRecord;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::formats::model::TrainingState;
use crate::threads::parallel_map;

/// A clip keeps its raw records so augmentation can be applied per step.
pub type Clip = Vec<SampleRecord>;

pub fn load_clips(ds: &Dataset, seq_len: usize) -> Result<Vec<Clip>> {
    if seq_len == 0 {
        return Err(Error::config("seq_len must be positive"));
    }
    let mut clips = Vec::new();
    for seq in ds.sequences()? {
        let samples = seq.samples()?;
        if samples.len() <= seq_len {
            if !samples.is_empty() {
                clips.push(samples);
            }
            continue;
        }
        clips.extend(samples.chunks_exact(seq_len).map(<[SampleRecord]>::to_vec));
    }
    if clips.is_empty() {
        return Err(Error::format("dataset has no windows"));
    }
    Ok(clips)
}

/// Clip indices of step `step`.
pub fn batch_indices(step: u64, batch: usize, clips: usize, seed: u64) -> Vec<usize> {
    let mut cached: Option<(u64, Vec<usize>)> = None;
    (0..batch as u64)
        .map(|b| {
            let g = step * batch as u64 + b;
            let (epoch, pos) = (g / clips as u64, (g % clips as u64) as usize);
            if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
                let mut order: Vec<usize> = (0..clips).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(epoch);
                order.shuffle(&mut rng);
                cached = Some((epoch, order));
            }
            cached.as_ref().expect("order").1[pos]
        })
        .collect()
}

/// Background frames consumed by training, addressed by global frame
/// number so the composite of a step is fixed.
pub struct Augmenter {
    source: AugmentSource,
}

impl Augmenter {
    pub fn new(source: AugmentSource) -> Self {
        Augmenter { source }
    }

    fn apply(&mut self, s: &SampleRecord, frame: u64) -> Result<TrainingSample> {
        self.source.seek(frame as usize);
        let bg = self.source.next_frame(s.lnes.height, s.lnes.width)?;
        let mut t = TrainingSample::from(s);
        t.lnes = augment_lnes(&s.lnes, &s.mask, &bg)?;
        Ok(t)
    }
}

pub struct Trainer {
    pub config: TrainConfig,
    pub state: TrainingState,
    clips: Vec<Clip>,
    augment: Option<Augmenter>,
    threads: usize,
}

impl Trainer {
    /// Fresh run from seeded initial weights, or from `init` weights for
    /// fine-tuning.
    pub fn new(config: TrainConfig, clips: Vec<Clip>, init: Option<NetworkParams>) -> Result<Self> {
        config.validate()?;
        let params = match init {
            Some(p) if p.config != config.net => {
                return Err(Error::config("initial model does not match the configured network widths"));
            }
            Some(p) => p,
            None => NetworkParams::init(&config.net, config.seed)?,
        };
        let adam = AdamState::new(&params);
        let state = TrainingState { params, adam, config_hash: config.hash() };
        Ok(Trainer { config, state, clips, augment: None, threads: 1 })
    }

    /// Continues a run from its saved state.
    pub fn resume(config: TrainConfig, clips: Vec<Clip>, state: TrainingState) -> Result<Self> {
        config.validate()?;
        if state.config_hash != config.hash() {
            return Err(Error::config("training state was produced with a different configuration"));
        }
        Ok(Trainer { config, state, clips, augment: None, threads: 1 })
    }

    pub fn with_augment(mut self, a: Augmenter) -> Self {
        self.augment = Some(a);
        self
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads.max(1);
        self
    }

    pub fn step(&self) -> u64 {
        self.state.adam.step
    }

    fn options(&self) -> TrainOptions {
        let mut o = TrainOptions { weights: self.config.weights, confidence_grad: self.config.confidence_grad, ..Default::default() };
        o.adam.lr = self.config.lr;
        o
    }

    fn batch(&mut self, step: u64) -> Result<Vec<Vec<TrainingSample>>> {
        let idx = batch_indices(step, self.config.batch, self.clips.len(), self.config.seed);
        let mut out = Vec::with_capacity(idx.len());
        for (b, &c) in idx.iter().enumerate() {
            let base = (step * self.config.batch as u64 + b as u64) * self.config.seq_len as u64;
            let clip = &self.clips[c];
            let samples = match &mut self.augment {
                None => clip.iter().map(TrainingSample::from).collect(),
                Some(a) => clip.iter().enumerate().map(|(f, s)| a.apply(s, base + f as u64)).collect::<Result<_>>()?,
            };
            out.push(samples);
        }
        Ok(out)
    }

    /// One optimizer step; returns the mean per-frame losses before it.
    pub fn train_step(&mut self) -> Result<Losses> {
        let step = self.step();
        let batch = self.batch(step)?;
        let opts = self.options();
        let params = &self.state.params;
        let results = parallel_map(&batch, self.threads, |clip| sequence_gradients(clip, params, &opts))
            .into_iter()
            .collect::<ee3d_core::Result<Vec<_>>>()?;
        Ok(apply_batch(&mut self.state.params, &mut self.state.adam, &results, &opts)?)
    }

    /// Trains until `config.iters` steps are done, reporting each step.
    pub fn run(&mut self, mut on_step: impl FnMut(u64, &Losses) -> Result<()>) -> Result<()> {
        while self.step() < self.config.iters {
            let l = self.train_step()?;
            on_step(self.step(), &l)?;
        }
        Ok(())
    }
}

/// Header and one line of the loss log.
pub const LOSS_LOG_HEADER: &str = "# step total heatmap segmentation joints";

pub fn loss_line(step: u64, l: &Losses) -> String {
    format!("{step} {:?} {:?} {:?} {:?}", l.total, l.heatmap, l.segmentation, l.joints)
}

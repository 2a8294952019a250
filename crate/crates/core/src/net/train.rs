//! Sequence-level training and streaming inference.

use alloc::vec::Vec;

use super::adam::{AdamConfig, AdamState};
use super::loss::{loss_and_grads, LossWeights, Losses, Targets};
use super::model::{backward, forward, update_running_stats, ActivationTape, BnStats, Mode, Outputs};
use super::params::{Gradients, NetworkParams};
use super::repm::{compose_backward_confidence, compose_input, Composed, FrameBufferState};
use crate::event::LnesFrame;
use crate::scene::SampleRecord;
use crate::{Error, Result};

/// One supervised frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub lnes: LnesFrame,
    pub targets: Targets,
}

impl From<&SampleRecord> for TrainingSample {
    fn from(s: &SampleRecord) -> Self {
        TrainingSample { lnes: s.lnes.clone(), targets: Targets::from_sample(s) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub weights: LossWeights,
    pub adam: AdamConfig,
    /// Backpropagate each frame's loss into the previous frame's
    /// confidence map. The buffered frame itself stays detached.
    pub confidence_grad: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { weights: LossWeights::default(), adam: AdamConfig::default(), confidence_grad: true }
    }
}

/// Summed gradients of one sequence, with per-frame losses.
#[derive(Debug, Clone)]
pub struct SequenceGradients {
    pub grads: Gradients,
    pub losses: Vec<Losses>,
    pub bn_stats: Vec<BnStats>,
}

struct FrameRecord {
    composed: Composed,
    buffer: FrameBufferState,
    tape: ActivationTape,
    outputs: Outputs,
}

/// Runs one sequence from a zeroed buffer and accumulates the gradient of
/// the summed per-frame losses.
pub fn sequence_gradients(samples: &[TrainingSample], params: &NetworkParams, opts: &TrainOptions) -> Result<SequenceGradients> {
    let cfg = &params.config;
    let mut buf = FrameBufferState::zeros(cfg);
    let mut grads = Gradients::zeros(params);
    let mut losses = Vec::with_capacity(samples.len());
    let mut bn_stats = Vec::with_capacity(samples.len());
    let mut records: Vec<FrameRecord> = Vec::new();
    for s in samples {
        let composed = compose_input(&s.lnes, &buf)?;
        let (outputs, tape) = forward(&composed.input, params, Mode::Train)?;
        bn_stats.push(tape.bn_stats());
        if opts.confidence_grad {
            let previous = buf.clone();
            buf.update(&composed, &outputs.confidence)?;
            records.push(FrameRecord { composed, buffer: previous, tape, outputs });
        } else {
            let (l, g) = loss_and_grads(&outputs, &s.targets, &opts.weights)?;
            losses.push(l);
            grads.add(&backward(&tape, params, &g, false)?.0);
            buf.update(&composed, &outputs.confidence)?;
        }
    }
    if opts.confidence_grad {
        let mut losses_rev = Vec::with_capacity(samples.len());
        let mut g_conf: Option<crate::net::Tensor> = None;
        for (q, rec) in records.into_iter().enumerate().rev() {
            let (l, mut g) = loss_and_grads(&rec.outputs, &samples[q].targets, &opts.weights)?;
            losses_rev.push(l);
            if let Some(gc) = g_conf.take() {
                g.confidence = gc;
            }
            let (pg, g_in) = backward(&rec.tape, params, &g, q > 0)?;
            grads.add(&pg);
            if let Some(g_in) = g_in {
                g_conf = Some(compose_backward_confidence(&rec.composed, &rec.buffer, &g_in));
            }
        }
        losses_rev.reverse();
        losses = losses_rev;
    }
    Ok(SequenceGradients { grads, losses, bn_stats })
}

/// Mean losses and gradient of a batch, then one optimizer step. The
/// objective is the per-frame loss averaged over every frame of every
/// sequence.
pub fn apply_batch(
    params: &mut NetworkParams,
    adam: &mut AdamState,
    results: &[SequenceGradients],
    opts: &TrainOptions,
) -> Result<Losses> {
    let frames: usize = results.iter().map(|r| r.losses.len()).sum();
    if frames == 0 {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    let mut grads = Gradients::zeros(params);
    let mut mean = Losses::default();
    let mut stats = Vec::with_capacity(frames);
    for r in results {
        grads.add(&r.grads);
        r.losses.iter().for_each(|l| mean.add(l));
        stats.extend(r.bn_stats.iter().cloned());
    }
    let inv = 1.0 / frames as f64;
    grads.scale(inv);
    adam.step(params, &grads, &opts.adam)?;
    update_running_stats(params, &stats);
    Ok(mean.scaled(inv))
}

/// One optimizer step over a batch of sequences, single-threaded.
pub fn train_step(
    batch: &[&[TrainingSample]],
    params: &mut NetworkParams,
    adam: &mut AdamState,
    opts: &TrainOptions,
) -> Result<Losses> {
    let results = batch.iter().map(|s| sequence_gradients(s, params, opts)).collect::<Result<Vec<_>>>()?;
    apply_batch(params, adam, &results, opts)
}

/// Trains on one sequence and returns its per-frame losses (measured
/// before the update).
pub fn train_sequence(
    samples: &[TrainingSample],
    params: &mut NetworkParams,
    adam: &mut AdamState,
    opts: &TrainOptions,
) -> Result<Vec<Losses>> {
    let r = sequence_gradients(samples, params, opts)?;
    let losses = r.losses.clone();
    apply_batch(params, adam, &[r], opts)?;
    Ok(losses)
}

/// Eval-mode estimator that threads the frame buffer across windows.
#[derive(Debug, Clone)]
pub struct StreamingEstimator<'a> {
    params: &'a NetworkParams,
    buffer: FrameBufferState,
}

impl<'a> StreamingEstimator<'a> {
    pub fn new(params: &'a NetworkParams) -> Self {
        StreamingEstimator { params, buffer: FrameBufferState::zeros(&params.config) }
    }

    pub fn buffer(&self) -> &FrameBufferState {
        &self.buffer
    }

    pub fn reset(&mut self) {
        self.buffer.reset();
    }

    pub fn push(&mut self, lnes: &LnesFrame) -> Result<Outputs> {
        let composed = compose_input(lnes, &self.buffer)?;
        let (out, _) = forward(&composed.input, self.params, Mode::Eval)?;
        self.buffer.update(&composed, &out.confidence)?;
        Ok(out)
    }
}

/// One pose per window, `[joint][xyz]` flattened.
pub fn infer_stream(windows: &[LnesFrame], params: &NetworkParams) -> Result<Vec<Vec<f64>>> {
    let mut est = StreamingEstimator::new(params);
    windows.iter().map(|w| est.push(w).map(|o| o.pose)).collect()
}

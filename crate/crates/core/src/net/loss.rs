//! Heatmap, segmentation and joint losses with their gradients.

use alloc::format;
use alloc::vec::Vec;

use super::model::{OutputGrads, Outputs};
use super::tensor::Tensor;
use crate::math::ln;
use crate::scene::SampleRecord;
use crate::{Error, Result, NUM_JOINTS};

/// Probability clamp of the cross-entropy term.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub joints: f64,
    pub heatmap: f64,
    pub segmentation: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { joints: 0.01, heatmap: 10.0, segmentation: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.joints, self.heatmap, self.segmentation].iter().all(|w| w.is_finite() && *w >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("loss weights must be finite and non-negative: {self:?}")))
        }
    }
}

/// Ground truth for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub heatmaps: Tensor,
    pub mask: Tensor,
    pub joints: Vec<f64>,
}

impl Targets {
    pub fn from_sample(s: &SampleRecord) -> Self {
        let (h, w) = (s.mask.height, s.mask.width);
        Targets {
            heatmaps: Tensor::from_vec(NUM_JOINTS, h, w, s.heatmaps.iter().map(|&v| v as f64).collect()),
            mask: Tensor::from_vec(1, h, w, s.mask.values.iter().map(|&v| v as f64).collect()),
            joints: s.joints.to_flat().to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Losses {
    pub heatmap: f64,
    pub segmentation: f64,
    pub joints: f64,
    pub total: f64,
}

impl Losses {
    pub fn add(&mut self, o: &Losses) {
        self.heatmap += o.heatmap;
        self.segmentation += o.segmentation;
        self.joints += o.joints;
        self.total += o.total;
    }

    pub fn scaled(&self, s: f64) -> Losses {
        Losses { heatmap: self.heatmap * s, segmentation: self.segmentation * s, joints: self.joints * s, total: self.total * s }
    }
}

fn check_shapes(pred: &Outputs, gt: &Targets) -> Result<()> {
    if pred.heatmaps.shape() != gt.heatmaps.shape() || pred.mask.shape() != gt.mask.shape() || pred.pose.len() != gt.joints.len()
    {
        return Err(Error::Shape(format!(
            "prediction {:?}/{:?}/{} vs target {:?}/{:?}/{}",
            pred.heatmaps.shape(),
            pred.mask.shape(),
            pred.pose.len(),
            gt.heatmaps.shape(),
            gt.mask.shape(),
            gt.joints.len()
        )));
    }
    if let Some(v) = gt.mask.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!("target mask value {v} outside [0, 1]")));
    }
    Ok(())
}

/// Loss values only.
pub fn losses(pred: &Outputs, gt: &Targets, w: &LossWeights) -> Result<Losses> {
    loss_and_grads(pred, gt, w).map(|r| r.0)
}

/// Loss values and the cotangents of the network outputs. The confidence
/// cotangent is zero.
pub fn loss_and_grads(pred: &Outputs, gt: &Targets, w: &LossWeights) -> Result<(Losses, OutputGrads)> {
    check_shapes(pred, gt)?;
    let nj = NUM_JOINTS as f64;

    let mut g_hm = pred.heatmaps.zeros_like();
    let mut l_h = 0.0;
    for ((g, p), t) in g_hm.data.iter_mut().zip(&pred.heatmaps.data).zip(&gt.heatmaps.data) {
        let d = p - t;
        l_h += d * d;
        *g = w.heatmap * 2.0 * d / nj;
    }
    l_h /= nj;

    let mut g_pose = pred.pose.clone();
    let mut l_j = 0.0;
    for ((g, p), t) in g_pose.iter_mut().zip(&pred.pose).zip(&gt.joints) {
        let d = p - t;
        l_j += d * d;
        *g = w.joints * 2.0 * d / nj;
    }
    l_j /= nj;

    let n = pred.mask.data.len() as f64;
    let mut g_mask = pred.mask.zeros_like();
    let mut l_s = 0.0;
    for ((g, &p), &t) in g_mask.data.iter_mut().zip(&pred.mask.data).zip(&gt.mask.data) {
        let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        l_s -= t * ln(pc) + (1.0 - t) * ln(1.0 - pc);
        if p > BCE_EPS && p < 1.0 - BCE_EPS {
            *g = -w.segmentation * (t / pc - (1.0 - t) / (1.0 - pc)) / n;
        }
    }
    l_s /= n;

    let total = w.joints * l_j + w.heatmap * l_h + w.segmentation * l_s;
    let grads = OutputGrads { heatmaps: g_hm, mask: g_mask, confidence: pred.confidence.zeros_like(), pose: g_pose };
    Ok((Losses { heatmap: l_h, segmentation: l_s, joints: l_j, total }, grads))
}

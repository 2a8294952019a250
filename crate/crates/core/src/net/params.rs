//! Parameter storage: every learnable tensor in declaration order, plus
//! the batch-norm running statistics.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::NetConfig;
use crate::{Result, NUM_JOINTS};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BlazeIdx {
    pub dw_w: usize,
    pub dw_b: usize,
    pub pw_w: usize,
    pub pw_b: usize,
    pub cin: usize,
    pub cout: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LinearIdx {
    pub w: usize,
    pub b: usize,
    pub cout: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConfIdx {
    pub w: usize,
    pub b: usize,
    pub slope: usize,
    pub cout: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LiftConvIdx {
    pub w: usize,
    pub gamma: usize,
    pub beta: usize,
    pub running_mean: usize,
    pub running_var: usize,
    pub cout: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub encoder: Vec<BlazeIdx>,
    pub hm_decoder: Vec<BlazeIdx>,
    pub hm_heads: Vec<LinearIdx>,
    pub seg_decoder: Vec<BlazeIdx>,
    pub seg_head: LinearIdx,
    pub confidence: Vec<ConfIdx>,
    pub lift_conv: Vec<LiftConvIdx>,
    pub lift_dense: Vec<LinearIdx>,
}

#[derive(Default)]
struct Registry {
    specs: Vec<ParamSpec>,
    buffers: Vec<ParamSpec>,
}

impl Registry {
    fn add(&mut self, name: String, shape: &[usize]) -> usize {
        self.specs.push(ParamSpec { name, shape: shape.to_vec() });
        self.specs.len() - 1
    }

    fn buffer(&mut self, name: String, shape: &[usize]) -> usize {
        self.buffers.push(ParamSpec { name, shape: shape.to_vec() });
        self.buffers.len() - 1
    }

    fn blaze(&mut self, prefix: &str, cin: usize, cout: usize, k: usize) -> BlazeIdx {
        BlazeIdx {
            dw_w: self.add(format!("{prefix}.dw.weight"), &[cin, k, k]),
            dw_b: self.add(format!("{prefix}.dw.bias"), &[cin]),
            pw_w: self.add(format!("{prefix}.pw.weight"), &[cout, cin]),
            pw_b: self.add(format!("{prefix}.pw.bias"), &[cout]),
            cin,
            cout,
        }
    }

    fn linear(&mut self, prefix: &str, cin: usize, cout: usize) -> LinearIdx {
        LinearIdx {
            w: self.add(format!("{prefix}.weight"), &[cout, cin]),
            b: self.add(format!("{prefix}.bias"), &[cout]),
            cout,
        }
    }
}

pub(crate) fn build_layout(cfg: &NetConfig) -> (Layout, Vec<ParamSpec>, Vec<ParamSpec>) {
    let mut r = Registry::default();
    let k = cfg.dw_kernel;
    let mut cin = 2;
    let encoder = (0..6)
        .map(|i| {
            let b = r.blaze(&format!("encoder.{i}"), cin, cfg.encoder[i], k);
            cin = cfg.encoder[i];
            b
        })
        .collect();
    let decoder = |r: &mut Registry, name: &str| -> Vec<BlazeIdx> {
        (0..4)
            .map(|j| {
                let cprev = if j == 0 { cfg.encoder[5] } else { cfg.decoder[j - 1] };
                r.blaze(&format!("{name}.{j}"), cprev + cfg.encoder[4 - j], cfg.decoder[j], k)
            })
            .collect()
    };
    let hm_decoder = decoder(&mut r, "heatmap_decoder");
    let hm_heads = (0..4).map(|j| r.linear(&format!("heatmap_head.{j}"), cfg.decoder[j], NUM_JOINTS)).collect();
    let seg_decoder = decoder(&mut r, "segmentation_decoder");
    let seg_head = r.linear("segmentation_head", cfg.decoder[3], 1);
    let ws = [1, cfg.confidence, cfg.confidence, cfg.confidence, 1];
    let confidence = (0..4)
        .map(|l| ConfIdx {
            w: r.add(format!("confidence.{l}.weight"), &[ws[l + 1], ws[l], 3, 3]),
            b: r.add(format!("confidence.{l}.bias"), &[ws[l + 1]]),
            slope: r.add(format!("confidence.{l}.prelu"), &[1]),
            cout: ws[l + 1],
        })
        .collect();
    let mut cin = NUM_JOINTS;
    let lift_conv = (0..3)
        .map(|l| {
            let cout = cfg.lifting_conv[l];
            let idx = LiftConvIdx {
                w: r.add(format!("lifting.conv{l}.weight"), &[cout, cin, 4, 4]),
                gamma: r.add(format!("lifting.bn{l}.weight"), &[cout]),
                beta: r.add(format!("lifting.bn{l}.bias"), &[cout]),
                running_mean: r.buffer(format!("lifting.bn{l}.running_mean"), &[cout]),
                running_var: r.buffer(format!("lifting.bn{l}.running_var"), &[cout]),
                cout,
            };
            cin = cout;
            idx
        })
        .collect();
    let (gh, gw) = cfg.lifting_grid();
    let mut fin = cin * gh * gw;
    let lift_dense = [cfg.lifting_dense[0], cfg.lifting_dense[1], 3 * NUM_JOINTS]
        .iter()
        .enumerate()
        .map(|(l, &fout)| {
            let idx = r.linear(&format!("lifting.fc{l}"), fin, fout);
            fin = fout;
            idx
        })
        .collect();
    let layout = Layout { encoder, hm_decoder, hm_heads, seg_decoder, seg_head, confidence, lift_conv, lift_dense };
    (layout, r.specs, r.buffers)
}

/// All learnable tensors of the network.
#[derive(Debug, Clone)]
pub struct NetworkParams {
    pub config: NetConfig,
    pub specs: Vec<ParamSpec>,
    pub values: Vec<Vec<f64>>,
    pub buffer_specs: Vec<ParamSpec>,
    pub buffers: Vec<Vec<f64>>,
    pub(crate) layout: Layout,
    version: u64,
}

impl PartialEq for NetworkParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.values == other.values && self.buffers == other.buffers
    }
}

/// Initial slope of every PReLU.
pub const PRELU_INIT: f64 = 0.25;
/// Momentum of the batch-norm running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

impl NetworkParams {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights and biases,
    /// unit/zero batch-norm affine, PReLU slopes of 0.25.
    pub fn init(config: &NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, specs, buffer_specs) = build_layout(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = specs
            .iter()
            .enumerate()
            .map(|(i, s)| init_tensor(i, s, &specs, &mut rng))
            .collect();
        let buffers = buffer_specs
            .iter()
            .map(|s| vec![if s.name.ends_with("running_var") { 1.0 } else { 0.0 }; s.len()])
            .collect();
        Ok(NetworkParams { config: config.clone(), specs, values, buffer_specs, buffers, layout, version: 0 })
    }

    /// Empty parameters of the right shapes, to be filled by a loader.
    pub fn zeros(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let (layout, specs, buffer_specs) = build_layout(config);
        let values = specs.iter().map(|s| vec![0.0; s.len()]).collect();
        let buffers = buffer_specs.iter().map(|s| vec![0.0; s.len()]).collect();
        Ok(NetworkParams { config: config.clone(), specs, values, buffer_specs, buffers, layout, version: 0 })
    }

    pub fn param_count(&self) -> usize {
        self.specs.iter().map(ParamSpec::len).sum()
    }

    /// Bumped on every mutation; tapes recorded before it are stale.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn values_mut(&mut self) -> &mut Vec<Vec<f64>> {
        self.version += 1;
        &mut self.values
    }

    pub fn buffers_mut(&mut self) -> &mut Vec<Vec<f64>> {
        self.version += 1;
        &mut self.buffers
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    /// Parameter group (the name up to the last dot) of each tensor.
    pub fn group_of(&self, i: usize) -> &str {
        let name = &self.specs[i].name;
        name.rsplit_once('.').map_or(name.as_str(), |(g, _)| g)
    }
}

fn init_tensor(i: usize, spec: &ParamSpec, specs: &[ParamSpec], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = spec.len();
    let name = spec.name.as_str();
    if name.ends_with(".prelu") {
        return vec![PRELU_INIT; n];
    }
    if name.starts_with("lifting.bn") {
        return vec![if name.ends_with(".weight") { 1.0 } else { 0.0 }; n];
    }
    // biases share the fan-in of the weight declared just before them
    let weight = if name.ends_with(".bias") { &specs[i - 1] } else { spec };
    let fan_in: usize = match weight.shape.as_slice() {
        [_, k, _] if name.contains(".dw.") => k * k,
        [_, cin, k, _] => cin * k * k,
        [_, cin] => *cin,
        _ => 1,
    };
    let bound = 1.0 / libm::sqrt(fan_in.max(1) as f64);
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Gradients laid out like [`NetworkParams::values`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub values: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros(params: &NetworkParams) -> Self {
        Gradients { values: params.values.iter().map(|v| vec![0.0; v.len()]).collect() }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().flatten().for_each(|x| *x *= s);
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

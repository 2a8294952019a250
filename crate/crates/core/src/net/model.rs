//! Forward pass, activation tape and reverse-mode gradients of the pose
//! network.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::params::{BlazeIdx, Gradients, LinearIdx, NetworkParams, BN_MOMENTUM};
use super::tensor::*;
use crate::math::{sigmoid, sqrt};
use crate::{Error, Result, NUM_JOINTS};

const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Network outputs for one composed input frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    /// `16 x 48 x 64` joint heatmaps.
    pub heatmaps: Tensor,
    /// Body mask after the sigmoid, `1 x 48 x 64`.
    pub mask: Tensor,
    /// Raw output of the confidence decoder.
    pub feature: Tensor,
    /// Per-pixel confidence in `(0, 1)`.
    pub confidence: Tensor,
    /// Joint positions in metres, `[joint][xyz]` flattened.
    pub pose: Vec<f64>,
}

/// Cotangents of the network outputs.
#[derive(Debug, Clone)]
pub struct OutputGrads {
    pub heatmaps: Tensor,
    pub mask: Tensor,
    pub confidence: Tensor,
    pub pose: Vec<f64>,
}

impl OutputGrads {
    pub fn zeros(cfg: &super::NetConfig) -> Self {
        let (h, w) = (cfg.map_height(), cfg.map_width());
        OutputGrads {
            heatmaps: Tensor::zeros(NUM_JOINTS, h, w),
            mask: Tensor::zeros(1, h, w),
            confidence: Tensor::zeros(1, h, w),
            pose: vec![0.0; 3 * NUM_JOINTS],
        }
    }
}

#[derive(Debug, Clone)]
struct BlockCache {
    /// Input to the depthwise convolution.
    z: Option<Tensor>,
    dw: Tensor,
    y: Tensor,
}

#[derive(Debug, Clone)]
struct ConfCache {
    pre: Tensor,
    y: Tensor,
}

#[derive(Debug, Clone)]
struct LiftCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
    y: Tensor,
    mean: Vec<f64>,
    var: Vec<f64>,
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct ActivationTape {
    version: u64,
    mode: Mode,
    input: Tensor,
    encoder: Vec<BlockCache>,
    hm_decoder: Vec<BlockCache>,
    seg_decoder: Vec<BlockCache>,
    mask: Tensor,
    feature: Tensor,
    confidence: Tensor,
    conf: Vec<ConfCache>,
    heatmaps: Tensor,
    lift: Vec<LiftCache>,
    pooled: Tensor,
    dense: Vec<Vec<f64>>,
}

impl ActivationTape {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn params_version(&self) -> u64 {
        self.version
    }
}

fn check(t: &Tensor, layer: impl FnOnce() -> String) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(layer()))
    }
}

fn encoder_block(p: &NetworkParams, b: &BlazeIdx, x: &Tensor, k: usize) -> BlockCache {
    let v = &p.values;
    let dw = depthwise(x, &v[b.dw_w], &v[b.dw_b], k, 2, k / 2);
    let mut y = pointwise(&dw, &v[b.pw_w], &v[b.pw_b], b.cout);
    let skip = avgpool2(x);
    y.data[..skip.data.len()].iter_mut().zip(&skip.data).for_each(|(a, s)| *a += s);
    relu_inplace(&mut y);
    BlockCache { z: None, dw, y }
}

fn decoder_block(p: &NetworkParams, b: &BlazeIdx, prev: &Tensor, skip: &Tensor, k: usize) -> BlockCache {
    let v = &p.values;
    let z = concat(&upsample_nearest2(prev), skip);
    let dw = depthwise(&z, &v[b.dw_w], &v[b.dw_b], k, 1, k / 2);
    let mut y = pointwise(&dw, &v[b.pw_w], &v[b.pw_b], b.cout);
    relu_inplace(&mut y);
    BlockCache { z: Some(z), dw, y }
}

fn run_decoder(p: &NetworkParams, blocks: &[BlazeIdx], enc: &[BlockCache], name: &str) -> Result<Vec<BlockCache>> {
    let k = p.config.dw_kernel;
    let mut out: Vec<BlockCache> = Vec::with_capacity(4);
    for (j, b) in blocks.iter().enumerate() {
        let prev = if j == 0 { &enc[5].y } else { &out[j - 1].y };
        let c = decoder_block(p, b, prev, &enc[4 - j].y, k);
        check(&c.y, || format!("{name}.{j}"))?;
        out.push(c);
    }
    Ok(out)
}

fn linear_head(p: &NetworkParams, h: &LinearIdx, x: &Tensor) -> Tensor {
    pointwise(x, &p.values[h.w], &p.values[h.b], h.cout)
}

fn prelu(pre: &Tensor, slope: f64) -> Tensor {
    pre.map(|v| if v > 0.0 { v } else { slope * v })
}

fn dense(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    b.iter()
        .enumerate()
        .map(|(o, &bo)| bo + w[o * x.len()..(o + 1) * x.len()].iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

/// Runs the network on a normalized `2 x H x W` input.
pub fn forward(input: &Tensor, params: &NetworkParams, mode: Mode) -> Result<(Outputs, ActivationTape)> {
    let cfg = &params.config;
    if input.shape() != (2, cfg.input_height, cfg.input_width) {
        return Err(Error::Shape(format!(
            "network input is {:?}, expected (2, {}, {})",
            input.shape(),
            cfg.input_height,
            cfg.input_width
        )));
    }
    check(input, || String::from("input"))?;
    let lay = &params.layout;
    let v = &params.values;
    let k = cfg.dw_kernel;
    let (mh, mw) = (cfg.map_height(), cfg.map_width());

    let mut encoder: Vec<BlockCache> = Vec::with_capacity(6);
    for (i, b) in lay.encoder.iter().enumerate() {
        let x = if i == 0 { input } else { &encoder[i - 1].y };
        let c = encoder_block(params, b, x, k);
        check(&c.y, || format!("encoder.{i}"))?;
        encoder.push(c);
    }

    let hm_decoder = run_decoder(params, &lay.hm_decoder, &encoder, "heatmap_decoder")?;
    let mut heatmaps = Tensor::zeros(NUM_JOINTS, mh, mw);
    for (j, h) in lay.hm_heads.iter().enumerate() {
        let out = resize_bilinear(&linear_head(params, h, &hm_decoder[j].y), mh, mw);
        heatmaps.add_assign(&out);
    }
    heatmaps.scale(0.25);
    check(&heatmaps, || String::from("heatmap_head"))?;

    let seg_decoder = run_decoder(params, &lay.seg_decoder, &encoder, "segmentation_decoder")?;
    let mask = linear_head(params, &lay.seg_head, &seg_decoder[3].y).map(sigmoid);
    check(&mask, || String::from("segmentation_head"))?;

    let mut conf: Vec<ConfCache> = Vec::with_capacity(4);
    for (l, c) in lay.confidence.iter().enumerate() {
        let x = if l == 0 { &mask } else { &conf[l - 1].y };
        let pre = conv2d(x, &v[c.w], Some(&v[c.b]), c.cout, 3, 1, 1);
        let y = prelu(&pre, v[c.slope][0]);
        check(&y, || format!("confidence_decoder.{l}"))?;
        conf.push(ConfCache { pre, y });
    }
    let feature = conf[3].y.clone();
    let mut confidence = mask.clone();
    confidence.data.iter_mut().zip(&feature.data).for_each(|(m, f)| *m = sigmoid(*m * f));

    let mut lift = Vec::with_capacity(3);
    let mut x = &heatmaps;
    for (l, c) in lay.lift_conv.iter().enumerate() {
        let conv = conv2d(x, &v[c.w], None, c.cout, 4, 2, 1);
        let n = conv.plane();
        let (gamma, beta) = (&v[c.gamma], &v[c.beta]);
        let mut xhat = conv;
        let mut y = xhat.zeros_like();
        let mut inv_std = vec![0.0; c.cout];
        let mut means = vec![0.0; c.cout];
        let mut vars = vec![0.0; c.cout];
        for ch in 0..c.cout {
            let plane = xhat.channel_mut(ch);
            let (mean, var) = match mode {
                Mode::Train => {
                    let mean = plane.iter().sum::<f64>() / n as f64;
                    (mean, plane.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64)
                }
                Mode::Eval => (params.buffers[c.running_mean][ch], params.buffers[c.running_var][ch]),
            };
            let is = 1.0 / sqrt(var + BN_EPS);
            plane.iter_mut().for_each(|a| *a = (*a - mean) * is);
            let yc = &mut y.data[ch * n..(ch + 1) * n];
            for (o, a) in yc.iter_mut().zip(plane.iter()) {
                *o = (gamma[ch] * a + beta[ch]).max(0.0);
            }
            inv_std[ch] = is;
            means[ch] = mean;
            vars[ch] = var;
        }
        check(&y, || format!("lifting_conv.{l}"))?;
        lift.push(LiftCache { xhat, inv_std, y, mean: means, var: vars });
        x = &lift[l].y;
    }
    let pooled = avgpool2(&lift[2].y);
    let mut dense_out: Vec<Vec<f64>> = Vec::with_capacity(3);
    for (l, d) in lay.lift_dense.iter().enumerate() {
        let x = if l == 0 { &pooled.data } else { &dense_out[l - 1] };
        let mut y = dense(&v[d.w], &v[d.b], x);
        if l < 2 {
            y.iter_mut().for_each(|a| *a = a.max(0.0));
        }
        if !y.iter().all(|a| a.is_finite()) {
            return Err(Error::NonFinite(format!("lifting_dense.{l}")));
        }
        dense_out.push(y);
    }
    let pose = dense_out[2].clone();

    let outputs = Outputs { heatmaps: heatmaps.clone(), mask: mask.clone(), feature: feature.clone(), confidence: confidence.clone(), pose };
    let tape = ActivationTape {
        version: params.version(),
        mode,
        input: input.clone(),
        encoder,
        hm_decoder,
        seg_decoder,
        mask,
        feature,
        confidence,
        conf,
        heatmaps,
        lift,
        pooled,
        dense: dense_out,
    };
    Ok((outputs, tape))
}

/// Per-channel statistics of the lifting batch-norm layers seen by one
/// train-mode forward call (variance unbiased).
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
}

impl ActivationTape {
    pub fn bn_stats(&self) -> BnStats {
        let mut mean = Vec::with_capacity(self.lift.len());
        let mut var = Vec::with_capacity(self.lift.len());
        for l in &self.lift {
            let n = l.xhat.plane() as f64;
            mean.push(l.mean.clone());
            var.push(l.var.iter().map(|v| v * n / (n - 1.0).max(1.0)).collect());
        }
        BnStats { mean, var }
    }
}

/// Folds the averaged statistics into the running estimates with the
/// usual momentum update.
pub fn update_running_stats(params: &mut NetworkParams, stats: &[BnStats]) {
    if stats.is_empty() {
        return;
    }
    let lay = params.layout.lift_conv.clone();
    let cnt = stats.len() as f64;
    let bufs = params.buffers_mut();
    for (l, c) in lay.iter().enumerate() {
        for ch in 0..c.cout {
            let mean = stats.iter().map(|s| s.mean[l][ch]).sum::<f64>() / cnt;
            let var = stats.iter().map(|s| s.var[l][ch]).sum::<f64>() / cnt;
            let rm = &mut bufs[c.running_mean][ch];
            *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean;
            let rv = &mut bufs[c.running_var][ch];
            *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * var;
        }
    }
}

fn decoder_backward(
    p: &NetworkParams,
    blocks: &[BlazeIdx],
    caches: &[BlockCache],
    mut g_last: Tensor,
    heads: &mut [Tensor],
    grads: &mut Gradients,
    g_enc: &mut [Tensor],
) {
    let k = p.config.dw_kernel;
    let v = &p.values;
    for j in (0..4).rev() {
        g_last.add_assign(&heads[j]);
        let b = &blocks[j];
        let c = &caches[j];
        relu_backward_inplace(&c.y, &mut g_last);
        let mut g_dw = c.dw.zeros_like();
        let (gw, gb) = two_mut(&mut grads.values, b.pw_w, b.pw_b);
        pointwise_backward(&c.dw, &v[b.pw_w], &g_last, gw, gb, Some(&mut g_dw));
        let z = c.z.as_ref().expect("decoder cache keeps its input");
        let mut g_z = z.zeros_like();
        let (gw, gb) = two_mut(&mut grads.values, b.dw_w, b.dw_b);
        depthwise_backward(z, &v[b.dw_w], &g_dw, k, 1, k / 2, gw, gb, Some(&mut g_z));
        let cprev = z.c - g_enc[4 - j].c;
        let (g_up, g_skip) = split(&g_z, cprev);
        g_enc[4 - j].add_assign(&g_skip);
        let g_prev = upsample_nearest2_backward(&g_up);
        if j == 0 {
            g_enc[5].add_assign(&g_prev);
        } else {
            g_last = g_prev;
        }
    }
}

fn two_mut(v: &mut [Vec<f64>], a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    assert!(a < b);
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

/// Reverse pass. Returns parameter gradients and, when asked, the gradient
/// with respect to the network input.
pub fn backward(
    tape: &ActivationTape,
    params: &NetworkParams,
    grads_out: &OutputGrads,
    want_input_grad: bool,
) -> Result<(Gradients, Option<Tensor>)> {
    if tape.version != params.version() {
        return Err(Error::StaleTape(format!(
            "tape recorded at parameter version {}, parameters are at {}",
            tape.version,
            params.version()
        )));
    }
    if tape.mode != Mode::Train {
        return Err(Error::InvalidArgument("backward needs a train-mode tape".into()));
    }
    let cfg = &params.config;
    let lay = &params.layout;
    let v = &params.values;
    let k = cfg.dw_kernel;
    let (mh, mw) = (cfg.map_height(), cfg.map_width());
    if grads_out.heatmaps.shape() != (NUM_JOINTS, mh, mw)
        || grads_out.mask.shape() != (1, mh, mw)
        || grads_out.confidence.shape() != (1, mh, mw)
        || grads_out.pose.len() != 3 * NUM_JOINTS
    {
        return Err(Error::Shape("output gradient shapes do not match the network".into()));
    }
    let mut grads = Gradients::zeros(params);

    // Lifting network.
    let mut g = grads_out.pose.clone();
    for l in (0..3).rev() {
        let d = &lay.lift_dense[l];
        let x: &[f64] = if l == 0 { &tape.pooled.data } else { &tape.dense[l - 1] };
        if l < 2 {
            g.iter_mut().zip(&tape.dense[l]).for_each(|(gv, y)| {
                if *y <= 0.0 {
                    *gv = 0.0
                }
            });
        }
        let mut gx = vec![0.0; x.len()];
        for (o, &go) in g.iter().enumerate() {
            grads.values[d.b][o] += go;
            let row = &mut grads.values[d.w][o * x.len()..(o + 1) * x.len()];
            row.iter_mut().zip(x).for_each(|(gw, xv)| *gw += go * xv);
            gx.iter_mut().zip(&v[d.w][o * x.len()..(o + 1) * x.len()]).for_each(|(a, w)| *a += go * w);
        }
        g = gx;
    }
    let last = &tape.lift[2].y;
    let mut g_t = avgpool2_backward(&Tensor::from_vec(tape.pooled.c, tape.pooled.h, tape.pooled.w, g), last.h, last.w);
    for l in (0..3).rev() {
        let c = &lay.lift_conv[l];
        let lc = &tape.lift[l];
        relu_backward_inplace(&lc.y, &mut g_t);
        let n = g_t.plane() as f64;
        let gamma = &v[c.gamma];
        let mut g_conv = g_t.zeros_like();
        for ch in 0..c.cout {
            let gy = g_t.channel(ch);
            let xh = lc.xhat.channel(ch);
            let sum_g: f64 = gy.iter().sum();
            let sum_gx: f64 = gy.iter().zip(xh).map(|(a, b)| a * b).sum();
            grads.values[c.beta][ch] += sum_g;
            grads.values[c.gamma][ch] += sum_gx;
            let scale = gamma[ch] * lc.inv_std[ch] / n;
            for ((o, a), b) in g_conv.channel_mut(ch).iter_mut().zip(gy).zip(xh) {
                *o = scale * (n * a - sum_g - b * sum_gx);
            }
        }
        let x = if l == 0 { &tape.heatmaps } else { &tape.lift[l - 1].y };
        let mut gx = x.zeros_like();
        conv2d_backward(x, &v[c.w], &g_conv, 4, 2, 1, &mut grads.values[c.w], None, Some(&mut gx));
        g_t = gx;
    }

    // Heatmap decoder: each head sees a quarter of the averaged gradient.
    let mut g_hm = grads_out.heatmaps.clone();
    g_hm.add_assign(&g_t);
    g_hm.scale(0.25);
    let mut g_enc: Vec<Tensor> = tape.encoder.iter().map(|c| c.y.zeros_like()).collect();
    let mut head_grads = Vec::with_capacity(4);
    for (j, h) in lay.hm_heads.iter().enumerate() {
        let x = &tape.hm_decoder[j].y;
        let g_head = resize_bilinear_backward(&g_hm, x.h, x.w);
        let mut gx = x.zeros_like();
        let (gw, gb) = two_mut(&mut grads.values, h.w, h.b);
        pointwise_backward(x, &v[h.w], &g_head, gw, gb, Some(&mut gx));
        head_grads.push(gx);
    }
    let g_last = head_grads[3].zeros_like();
    decoder_backward(params, &lay.hm_decoder, &tape.hm_decoder, g_last, &mut head_grads, &mut grads, &mut g_enc);

    // Confidence: C = sigmoid(mask * feature).
    let mut g_mask = grads_out.mask.clone();
    let mut g_feat = tape.feature.zeros_like();
    for i in 0..g_mask.data.len() {
        let c = tape.confidence.data[i];
        let gp = grads_out.confidence.data[i] * c * (1.0 - c);
        g_mask.data[i] += gp * tape.feature.data[i];
        g_feat.data[i] = gp * tape.mask.data[i];
    }
    let mut g_y = g_feat;
    for l in (0..4).rev() {
        let c = &lay.confidence[l];
        let cc = &tape.conf[l];
        let slope = v[c.slope][0];
        let mut g_slope = 0.0;
        for (gv, &pre) in g_y.data.iter_mut().zip(&cc.pre.data) {
            if pre <= 0.0 {
                g_slope += *gv * pre;
                *gv *= slope;
            }
        }
        grads.values[c.slope][0] += g_slope;
        let x = if l == 0 { &tape.mask } else { &tape.conf[l - 1].y };
        let mut gx = x.zeros_like();
        let (gw, gb) = two_mut(&mut grads.values, c.w, c.b);
        conv2d_backward(x, &v[c.w], &g_y, 3, 1, 1, gw, Some(gb), Some(&mut gx));
        g_y = gx;
    }
    g_mask.add_assign(&g_y);

    // Segmentation branch.
    let g_logit = Tensor::from_vec(
        1,
        mh,
        mw,
        g_mask.data.iter().zip(&tape.mask.data).map(|(g, m)| g * m * (1.0 - m)).collect(),
    );
    let sh = &lay.seg_head;
    let x = &tape.seg_decoder[3].y;
    let mut g_last = x.zeros_like();
    let (gw, gb) = two_mut(&mut grads.values, sh.w, sh.b);
    pointwise_backward(x, &v[sh.w], &g_logit, gw, gb, Some(&mut g_last));
    let mut no_heads: Vec<Tensor> = tape.seg_decoder.iter().map(|c| c.y.zeros_like()).collect();
    decoder_backward(params, &lay.seg_decoder, &tape.seg_decoder, g_last, &mut no_heads, &mut grads, &mut g_enc);

    // Encoder, deepest block first.
    let mut g_input = None;
    for i in (0..6).rev() {
        let b = &lay.encoder[i];
        let c = &tape.encoder[i];
        let mut g = core::mem::replace(&mut g_enc[i], Tensor::zeros(0, 0, 0));
        relu_backward_inplace(&c.y, &mut g);
        let x = if i == 0 { &tape.input } else { &tape.encoder[i - 1].y };
        let mut g_dw = c.dw.zeros_like();
        let (gw, gb) = two_mut(&mut grads.values, b.pw_w, b.pw_b);
        pointwise_backward(&c.dw, &v[b.pw_w], &g, gw, gb, Some(&mut g_dw));
        let need_gx = i > 0 || want_input_grad;
        let mut gx = if need_gx { Some(x.zeros_like()) } else { None };
        let (gw, gb) = two_mut(&mut grads.values, b.dw_w, b.dw_b);
        depthwise_backward(x, &v[b.dw_w], &g_dw, k, 2, k / 2, gw, gb, gx.as_mut());
        if let Some(gx) = gx.as_mut() {
            let g_res = Tensor::from_vec(b.cin, g.h, g.w, g.data[..b.cin * g.plane()].to_vec());
            gx.add_assign(&avgpool2_backward(&g_res, x.h, x.w));
        }
        match (i, gx) {
            (0, gx) => g_input = gx,
            (_, Some(gx)) => g_enc[i - 1].add_assign(&gx),
            _ => {}
        }
    }
    if !grads.all_finite() {
        return Err(Error::NonFinite("gradients".into()));
    }
    Ok((grads, g_input))
}

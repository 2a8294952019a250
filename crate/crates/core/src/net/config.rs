//! Channel configuration, parameter count and FLOP estimate.

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result, NUM_JOINTS};

/// Widths of every stage of the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    pub input_height: usize,
    pub input_width: usize,
    /// Output channels of the six stride-2 encoder blocks.
    pub encoder: [usize; 6],
    /// Output channels of the four decoder blocks (shared by the heatmap
    /// and segmentation decoders).
    pub decoder: [usize; 4],
    /// Hidden width of the confidence decoder.
    pub confidence: usize,
    /// Output channels of the three lifting convolutions.
    pub lifting_conv: [usize; 3],
    /// Hidden sizes of the first two lifting dense layers.
    pub lifting_dense: [usize; 2],
    /// Depthwise kernel size of the encoder/decoder blocks.
    pub dw_kernel: usize,
}

impl NetConfig {
    /// Small configuration for CPU training and tests.
    pub fn toy() -> Self {
        NetConfig {
            input_height: 192,
            input_width: 256,
            encoder: [4, 4, 8, 16, 16, 16],
            decoder: [16, 8, 4, 4],
            confidence: 4,
            lifting_conv: [4, 8, 8],
            lifting_dense: [32, 32],
            dw_kernel: 5,
        }
    }

    /// Configuration sized like the published model (about 1.26M
    /// parameters, 0.41 GFLOPs).
    pub fn full_scale() -> Self {
        NetConfig {
            input_height: 192,
            input_width: 256,
            encoder: [16, 64, 64, 128, 128, 128],
            decoder: [128, 64, 64, 48],
            confidence: 16,
            lifting_conv: [128, 128, 128],
            lifting_dense: [256, 256],
            dw_kernel: 5,
        }
    }

    pub fn map_height(&self) -> usize {
        self.input_height / 4
    }

    pub fn map_width(&self) -> usize {
        self.input_width / 4
    }

    /// Spatial size after the lifting convolutions and pooling.
    pub fn lifting_grid(&self) -> (usize, usize) {
        (self.map_height() / 16, self.map_width() / 16)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_height == 0 || self.input_width == 0 || !self.input_height.is_multiple_of(64) || !self.input_width.is_multiple_of(64) {
            return Err(Error::InvalidArgument(format!(
                "input {}x{} must be a positive multiple of 64",
                self.input_height, self.input_width
            )));
        }
        let all = self
            .encoder
            .iter()
            .chain(&self.decoder)
            .chain(&self.lifting_conv)
            .chain(&self.lifting_dense)
            .chain(core::iter::once(&self.confidence));
        if all.into_iter().any(|&c| c == 0) {
            return Err(Error::InvalidArgument("channel widths must be positive".into()));
        }
        let mut cin = 2;
        for (i, &c) in self.encoder.iter().enumerate() {
            if c < cin {
                return Err(Error::InvalidArgument(format!(
                    "encoder block {i} narrows {cin} -> {c}; residual padding needs non-decreasing widths"
                )));
            }
            cin = c;
        }
        if self.dw_kernel.is_multiple_of(2) || self.dw_kernel == 0 {
            return Err(Error::InvalidArgument("depthwise kernel must be odd".into()));
        }
        Ok(())
    }

    /// Per-layer `(name, parameters, multiply-accumulates)`.
    pub fn layer_costs(&self) -> Vec<(&'static str, usize, usize)> {
        let k2 = self.dw_kernel * self.dw_kernel;
        let mut out = Vec::new();
        let (mut h, mut w) = (self.input_height, self.input_width);
        let mut sizes = [(0, 0); 6];
        let mut cin = 2;
        for (i, &c) in self.encoder.iter().enumerate() {
            h /= 2;
            w /= 2;
            sizes[i] = (h, w);
            let params = cin * k2 + cin + c * cin + c;
            out.push(("encoder", params, h * w * cin * k2 + h * w * c * cin));
            cin = c;
        }
        for seg in [false, true] {
            for k in 0..4 {
                let cprev = if k == 0 { self.encoder[5] } else { self.decoder[k - 1] };
                let ci = cprev + self.encoder[4 - k];
                let co = self.decoder[k];
                let (hh, ww) = sizes[4 - k];
                let name = if seg { "segmentation_decoder" } else { "heatmap_decoder" };
                out.push((name, ci * k2 + ci + co * ci + co, hh * ww * ci * k2 + hh * ww * co * ci));
                if !seg {
                    out.push(("heatmap_heads", NUM_JOINTS * co + NUM_JOINTS, hh * ww * NUM_JOINTS * co));
                }
            }
            if seg {
                let co = self.decoder[3];
                out.push(("segmentation_head", co + 1, self.map_height() * self.map_width() * co));
            }
        }
        let ws = [1, self.confidence, self.confidence, self.confidence, 1];
        let plane = self.map_height() * self.map_width();
        for l in 0..4 {
            out.push(("confidence_decoder", ws[l + 1] * ws[l] * 9 + ws[l + 1] + 1, plane * ws[l + 1] * ws[l] * 9));
        }
        let (mut h, mut w) = (self.map_height(), self.map_width());
        let mut cin = NUM_JOINTS;
        for &c in &self.lifting_conv {
            h /= 2;
            w /= 2;
            out.push(("lifting_conv", c * cin * 16 + 2 * c, h * w * c * cin * 16));
            cin = c;
        }
        let (gh, gw) = self.lifting_grid();
        let mut fin = cin * gh * gw;
        for fout in [self.lifting_dense[0], self.lifting_dense[1], 3 * NUM_JOINTS] {
            out.push(("lifting_dense", fin * fout + fout, fin * fout));
            fin = fout;
        }
        out
    }

    /// Number of learnable parameters.
    pub fn param_count(&self) -> usize {
        self.layer_costs().iter().map(|l| l.1).sum()
    }

    /// FLOPs of one forward pass, counted as 2 x multiply-accumulates of
    /// the convolution and dense layers.
    pub fn flops(&self) -> usize {
        2 * self.layer_costs().iter().map(|l| l.2).sum::<usize>()
    }
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig::toy()
    }
}

//! Inter-frame temporal aggregation.
//!
//! LQ and predictive frames are embedded by two shared 3×3 convolutions. The
//! LQ features are motion-compensated along the codec's motion vectors, both
//! priors are correlated with the centre frame and turned into a softmax
//! gate, and the gated stack is fused by a small U-Net and aggregated by a
//! deformable convolution.

use cpga_tensor::{Bound, Float, ParamId, ParamStore, Var};
use rand::Rng;

use super::layers::{lrelu, Conv, Upsample};
use super::{GateAxis, ModelConfig, ModelError};

/// Which frame stack a feature extractor embeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameSource {
    Lq,
    Pred,
}

/// Per-frame features, both as a list of `(N, C, H, W)` maps and as one
/// `(N, (2T+1)·C, H, W)` stack.
pub struct FrameFeatures<F: Float> {
    pub frames: Vec<Var<F>>,
    pub stack: Var<F>,
}

#[derive(Clone, Debug)]
pub struct Ita {
    frames: usize,
    channels: usize,
    slope: f64,
    gate_axis: GateAxis,
    feat_lq: Conv,
    feat_pred: Conv,
    fuse_in: Conv,
    enc0: Conv,
    down1: Conv,
    down2: Conv,
    bottom: Conv,
    up2: Upsample,
    dec1: Conv,
    up1: Upsample,
    fuse_out: Conv,
    offset: Conv,
    dcn_weight: ParamId,
    dcn_bias: ParamId,
}

impl Ita {
    pub fn new<F: Float, R: Rng>(cfg: &ModelConfig, store: &mut ParamStore<F>, rng: &mut R) -> Self {
        let (c, t) = (cfg.channels, cfg.frames());
        let k = cfg.dcn_kernel;
        let dcn_weight = store.add_fan_in("ita.dcn.weight", &[c, c, k, k], c * k * k, rng);
        let dcn_bias = store.add_fan_in("ita.dcn.bias", &[c], c * k * k, rng);
        Ita {
            frames: t,
            channels: c,
            slope: cfg.leaky_slope,
            gate_axis: cfg.gate_axis,
            feat_lq: Conv::new(store, "ita.feat_lq", 1, c, 3, 1, rng),
            feat_pred: Conv::new(store, "ita.feat_pred", 1, c, 3, 1, rng),
            fuse_in: Conv::new(store, "ita.fuse.in", t * c, c, 3, 1, rng),
            enc0: Conv::new(store, "ita.fuse.enc0", c, c, 3, 1, rng),
            down1: Conv::new(store, "ita.fuse.down1", c, 2 * c, 3, 2, rng),
            down2: Conv::new(store, "ita.fuse.down2", 2 * c, 4 * c, 3, 2, rng),
            bottom: Conv::new(store, "ita.fuse.bottom", 4 * c, 4 * c, 3, 1, rng),
            up2: Upsample::new(store, "ita.fuse.up2", 4 * c, 2 * c, rng),
            dec1: Conv::new(store, "ita.fuse.dec1", 2 * c, 2 * c, 3, 1, rng),
            up1: Upsample::new(store, "ita.fuse.up1", 2 * c, c, rng),
            fuse_out: Conv::new(store, "ita.fuse.out", c, c, 3, 1, rng),
            offset: Conv::zeros(store, "ita.dcn.offset", c, 2 * k * k, 3),
            dcn_weight,
            dcn_bias,
        }
    }

    /// Embed every frame of a `(N, 2T+1, H, W)` stack with one shared 3×3
    /// convolution.
    pub fn extract_features<F: Float>(&self, p: &Bound<F>, planes: &Var<F>, which: FrameSource) -> Result<FrameFeatures<F>, ModelError> {
        let g = p.graph();
        let (n, t, h, w) = dims(planes)?;
        if t != self.frames {
            return Err(ModelError::Shape(format!("expected {} frames, got {t}", self.frames)));
        }
        let conv = match which {
            FrameSource::Lq => &self.feat_lq,
            FrameSource::Pred => &self.feat_pred,
        };
        let flat = g.reshape(planes, &[n * t, 1, h, w]);
        let feats = conv.forward(p, &flat);
        let c = self.channels;
        let stack = g.reshape(&feats, &[n, t * c, h, w]);
        let frames = (0..t).map(|i| g.narrow_channels(&stack, i * c, c)).collect();
        Ok(FrameFeatures { frames, stack })
    }

    /// `F̃_0 = Ĩ_0`, `F̃_i = warp(Ĩ_{i−1}, MV_i)`. `mv` is `(N, 2·(2T+1), H, W)`
    /// holding normalized `(dx, dy)` per frame; `search_range` undoes the
    /// normalization.
    pub fn build_aligned<F: Float>(&self, p: &Bound<F>, lq: &[Var<F>], mv: &Var<F>, search_range: f64) -> Vec<Var<F>> {
        let g = p.graph();
        let mut out = Vec::with_capacity(lq.len());
        out.push(lq[0].clone());
        for i in 1..lq.len() {
            let flow = g.scale(&g.narrow_channels(mv, 2 * i, 2), F::lit(search_range));
            out.push(g.warp(&lq[i - 1], &flow));
        }
        out
    }

    /// Softmax gates `(N, 2T+1, C, H, W)` from `Ĩ_t ⊙ P̃_i + Ĩ_t ⊙ F̃_i`.
    pub fn gates<F: Float>(&self, p: &Bound<F>, lq: &[Var<F>], pred: &[Var<F>], aligned: &[Var<F>]) -> Var<F> {
        let g = p.graph();
        let center = &lq[lq.len() / 2];
        let logits: Vec<Var<F>> = pred
            .iter()
            .zip(aligned)
            .map(|(pf, af)| g.add(&g.mul(center, pf), &g.mul(center, af)))
            .collect();
        let refs: Vec<&Var<F>> = logits.iter().collect();
        let (n, _, h, w) = lq[0].dims4();
        let stacked = g.reshape(&g.concat_channels(&refs), &[n, self.frames, self.channels, h, w]);
        let axis = match self.gate_axis {
            GateAxis::Channel => 2,
            GateAxis::Temporal => 1,
        };
        g.softmax(&stacked, axis)
    }

    /// Gated compensated stack `F^c`, shaped `(N, (2T+1)·C, H, W)`.
    pub fn correlate_and_gate<F: Float>(&self, p: &Bound<F>, lq: &FrameFeatures<F>, pred: &[Var<F>], aligned: &[Var<F>]) -> Var<F> {
        let g = p.graph();
        let gates = self.gates(p, &lq.frames, pred, aligned);
        let shape = lq.stack.shape().to_vec();
        g.mul(&lq.stack, &g.reshape(&gates, &shape))
    }

    /// FusionNet: 3×3 conv to `C`, then a three-level encoder/decoder with
    /// additive skips.
    pub fn fuse<F: Float>(&self, p: &Bound<F>, stack: &Var<F>) -> Result<Var<F>, ModelError> {
        let (_, _, h, w) = dims(stack)?;
        if h % 4 != 0 || w % 4 != 0 {
            return Err(ModelError::Shape(format!("fusion input {w}x{h} is not divisible by 4")));
        }
        let g = p.graph();
        let act = |x: &Var<F>| lrelu(p, x, self.slope);
        let x0 = act(&self.fuse_in.forward(p, stack));
        let e0 = act(&self.enc0.forward(p, &x0));
        let e1 = act(&self.down1.forward(p, &e0));
        let e2 = act(&self.down2.forward(p, &e1));
        let b = act(&self.bottom.forward(p, &e2));
        let u1 = g.add(&act(&self.up2.forward(p, &b)), &e1);
        let d1 = act(&self.dec1.forward(p, &u1));
        let u0 = g.add(&act(&self.up1.forward(p, &d1)), &e0);
        Ok(self.fuse_out.forward(p, &u0))
    }

    /// Offsets predicted from `F^f`; deformable convolution over `F^f`.
    pub fn deform_aggregate<F: Float>(&self, p: &Bound<F>, fused: &Var<F>) -> Var<F> {
        let offsets = self.offset.forward(p, fused);
        self.deform_with_offsets(p, fused, &offsets)
    }

    pub fn deform_with_offsets<F: Float>(&self, p: &Bound<F>, x: &Var<F>, offsets: &Var<F>) -> Var<F> {
        p.graph().deform_conv2d(x, offsets, &p.p(self.dcn_weight), Some(&p.p(self.dcn_bias)))
    }

    pub fn dcn_params(&self) -> (ParamId, ParamId) {
        (self.dcn_weight, self.dcn_bias)
    }

    /// `F^ta` from LQ frames, predictive frames and motion maps.
    pub fn forward<F: Float>(&self, p: &Bound<F>, lq: &Var<F>, pred: &Var<F>, mv: &Var<F>, search_range: f64) -> Result<Var<F>, ModelError> {
        let lq_f = self.extract_features(p, lq, FrameSource::Lq)?;
        let pred_f = self.extract_features(p, pred, FrameSource::Pred)?;
        let aligned = self.build_aligned(p, &lq_f.frames, mv, search_range);
        let stack = self.correlate_and_gate(p, &lq_f, &pred_f.frames, &aligned);
        let fused = self.fuse(p, &stack)?;
        Ok(self.deform_aggregate(p, &fused))
    }
}

fn dims<F: Float>(x: &Var<F>) -> Result<(usize, usize, usize, usize), ModelError> {
    match *x.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        ref s => Err(ModelError::Shape(format!("expected a 4-D tensor, got shape {s:?}"))),
    }
}

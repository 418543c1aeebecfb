//! Quality enhancement head: two 3×3 conv + LeakyReLU layers, shift
//! channel-attention blocks, and a zero-initialized reconstruction conv whose
//! output is added to the centre LQ frame.

use cpga_tensor::{Bound, Float, ParamStore, ShiftAxis, Var};
use rand::Rng;

use super::layers::{lrelu, Conv};
use super::ModelConfig;

/// Contiguous channel window shifted by `amount` pixels: the first half
/// moves forward along the axis, the second half backward.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShiftSpec {
    pub axis: ShiftAxis,
    pub start: usize,
    pub len: usize,
    pub amount: usize,
}

impl ShiftSpec {
    pub fn apply<F: Float>(&self, p: &Bound<F>, x: &Var<F>) -> Var<F> {
        if self.len == 0 || self.amount == 0 {
            return x.clone();
        }
        p.graph().channel_shift(x, self.axis, self.start, self.len, self.amount)
    }
}

/// Residual block with squeeze-and-excitation channel attention.
#[derive(Clone, Debug)]
pub struct Cab {
    conv1: Conv,
    conv2: Conv,
    squeeze: Conv,
    excite: Conv,
    slope: f64,
}

impl Cab {
    pub fn new<F: Float, R: Rng>(cfg: &ModelConfig, store: &mut ParamStore<F>, name: &str, rng: &mut R) -> Self {
        let c = cfg.channels;
        let r = c / cfg.ca_reduction;
        Cab {
            conv1: Conv::new(store, &format!("{name}.conv1"), c, c, 3, 1, rng),
            conv2: Conv::new(store, &format!("{name}.conv2"), c, c, 3, 1, rng),
            squeeze: Conv::new(store, &format!("{name}.squeeze"), c, r, 1, 1, rng),
            excite: Conv::new(store, &format!("{name}.excite"), r, c, 1, 1, rng),
            slope: cfg.leaky_slope,
        }
    }

    /// Per-channel gate `(N, C, 1, 1)` for the body output `y`.
    pub fn channel_gate<F: Float>(&self, p: &Bound<F>, y: &Var<F>) -> Var<F> {
        let g = p.graph();
        let pooled = g.mean_spatial(y);
        let s = lrelu(p, &self.squeeze.forward(p, &pooled), self.slope);
        g.sigmoid(&self.excite.forward(p, &s))
    }

    pub fn body<F: Float>(&self, p: &Bound<F>, x: &Var<F>) -> Var<F> {
        let h = lrelu(p, &self.conv1.forward(p, x), self.slope);
        self.conv2.forward(p, &h)
    }

    pub fn forward<F: Float>(&self, p: &Bound<F>, x: &Var<F>) -> Var<F> {
        let g = p.graph();
        let y = self.body(p, x);
        let gate = self.channel_gate(p, &y);
        g.add(&g.mul_channel(&y, &gate), x)
    }
}

#[derive(Clone, Debug)]
pub struct Qe {
    head1: Conv,
    head2: Conv,
    blocks: Vec<(Cab, Cab)>,
    tail: Conv,
    shift_h: ShiftSpec,
    shift_v: ShiftSpec,
    slope: f64,
}

impl Qe {
    pub fn new<F: Float, R: Rng>(cfg: &ModelConfig, store: &mut ParamStore<F>, rng: &mut R) -> Self {
        let c = cfg.channels;
        let len = if cfg.shifts { cfg.shift_len() } else { 0 };
        let start = cfg.shift_start();
        Qe {
            head1: Conv::new(store, "qe.head1", c, c, 3, 1, rng),
            head2: Conv::new(store, "qe.head2", c, c, 3, 1, rng),
            blocks: (0..cfg.scab_blocks)
                .map(|i| (Cab::new(cfg, store, &format!("qe.scab{i}.cab_h"), rng), Cab::new(cfg, store, &format!("qe.scab{i}.cab_v"), rng)))
                .collect(),
            tail: Conv::zeros(store, "qe.tail", c, 1, 3),
            shift_h: ShiftSpec { axis: ShiftAxis::Horizontal, start, len, amount: cfg.shift_w },
            shift_v: ShiftSpec { axis: ShiftAxis::Vertical, start, len, amount: cfg.shift_h },
            slope: cfg.leaky_slope,
        }
    }

    /// `(horizontal-shift CAB, vertical-shift CAB)` per block.
    pub fn blocks(&self) -> &[(Cab, Cab)] {
        &self.blocks
    }

    pub fn shifts(&self) -> (ShiftSpec, ShiftSpec) {
        (self.shift_h, self.shift_v)
    }

    /// Predicted residual `(N, 1, H, W)`.
    pub fn residual<F: Float>(&self, p: &Bound<F>, fsa: &Var<F>) -> Var<F> {
        let mut x = lrelu(p, &self.head1.forward(p, fsa), self.slope);
        x = lrelu(p, &self.head2.forward(p, &x), self.slope);
        for (cab_h, cab_v) in &self.blocks {
            x = cab_h.forward(p, &self.shift_h.apply(p, &x));
            x = cab_v.forward(p, &self.shift_v.apply(p, &x));
        }
        self.tail.forward(p, &x)
    }

    /// Enhanced centre frame, unclamped.
    pub fn forward<F: Float>(&self, p: &Bound<F>, fsa: &Var<F>, lq_center: &Var<F>) -> Var<F> {
        p.graph().add(lq_center, &self.residual(p, fsa))
    }
}

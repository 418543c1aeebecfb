//! Multi-scale non-local aggregation.
//!
//! A three-level pyramid of the temporally aggregated feature and of the
//! centre residual frame feeds one non-local aggregation unit per scale,
//! processed coarse to fine.

use cpga_tensor::{attention_maps, Bound, Float, ParamStore, Tensor, Var};
use rand::Rng;

use super::layers::{Conv, Upsample};
use super::{ModelConfig, ModelError};

pub const LEVELS: usize = 3;

/// Feature and residual pyramids, finest level first.
pub struct ScalePyramid<F: Float> {
    pub features: Vec<Var<F>>,
    pub residuals: Vec<Var<F>>,
}

/// Residual-guided non-local unit.
#[derive(Clone, Debug)]
pub struct Nlau {
    guide: Conv,
    query: Conv,
    key: Conv,
    value: Conv,
    out: Conv,
    fuse: Option<Conv>,
    inner: usize,
}

impl Nlau {
    fn new<F: Float, R: Rng>(cfg: &ModelConfig, store: &mut ParamStore<F>, name: &str, with_fuse: bool, rng: &mut R) -> Self {
        let c = cfg.channels;
        let d = c / cfg.nlau_reduction;
        Nlau {
            guide: Conv::new(store, &format!("{name}.guide"), 2 * c, c, 1, 1, rng),
            query: Conv::new(store, &format!("{name}.query"), c, d, 1, 1, rng),
            key: Conv::new(store, &format!("{name}.key"), c, d, 1, 1, rng),
            value: Conv::new(store, &format!("{name}.value"), c, c, 1, 1, rng),
            out: Conv::new(store, &format!("{name}.out"), c, c, 1, 1, rng),
            fuse: with_fuse.then(|| Conv::new(store, &format!("{name}.fuse"), 2 * c, c, 3, 1, rng)),
            inner: d,
        }
    }

    fn scale<F: Float>(&self) -> F {
        F::lit(1.0 / (self.inner as f64).sqrt())
    }

    fn query_key<F: Float>(&self, p: &Bound<F>, f: &Var<F>, r: &Var<F>) -> (Var<F>, Var<F>) {
        let guide = self.guide.forward(p, &p.graph().concat_channels(&[f, r]));
        (self.query.forward(p, &guide), self.key.forward(p, &guide))
    }

    /// Spatial feature `S`: 1×1 projection of the attention-weighted values.
    pub fn spatial<F: Float>(&self, p: &Bound<F>, f: &Var<F>, r: &Var<F>, window: Option<usize>) -> Var<F> {
        let (q, k) = self.query_key(p, f, r);
        let v = self.value.forward(p, f);
        let attended = p.graph().spatial_attention(&q, &k, &v, self.scale(), window);
        self.out.forward(p, &attended)
    }

    /// Attention probabilities, one `(L × L)` matrix per batch item and window.
    pub fn attention<F: Float>(&self, p: &Bound<F>, f: &Var<F>, r: &Var<F>, window: Option<usize>) -> Vec<Tensor<F>> {
        let (q, k) = self.query_key(p, f, r);
        attention_maps(q.value(), k.value(), self.scale(), window)
    }

    /// `Fu + S`, where `Fu` fuses the upsampled coarser output when present.
    pub fn forward<F: Float>(&self, p: &Bound<F>, f: &Var<F>, r: &Var<F>, up: Option<&Var<F>>, window: Option<usize>) -> Var<F> {
        let g = p.graph();
        let s = self.spatial(p, f, r, window);
        let fused = match (up, &self.fuse) {
            (Some(up), Some(conv)) => conv.forward(p, &g.concat_channels(&[f, up])),
            (None, _) => f.clone(),
            (Some(_), None) => panic!("coarsest unit takes no upsampled input"),
        };
        g.add(&fused, &s)
    }
}

#[derive(Clone, Debug)]
pub struct Mna {
    residual_in: Conv,
    down_feat: [Conv; 2],
    down_res: [Conv; 2],
    units: [Nlau; LEVELS],
    up: [Upsample; 2],
    window: usize,
    window_above: usize,
}

impl Mna {
    pub fn new<F: Float, R: Rng>(cfg: &ModelConfig, store: &mut ParamStore<F>, rng: &mut R) -> Self {
        let c = cfg.channels;
        Mna {
            residual_in: Conv::new(store, "mna.residual_in", 1, c, 3, 1, rng),
            down_feat: [Conv::new(store, "mna.down_feat1", c, c, 3, 2, rng), Conv::new(store, "mna.down_feat2", c, c, 3, 2, rng)],
            down_res: [Conv::new(store, "mna.down_res1", c, c, 3, 2, rng), Conv::new(store, "mna.down_res2", c, c, 3, 2, rng)],
            units: [
                Nlau::new(cfg, store, "mna.nlau0", true, rng),
                Nlau::new(cfg, store, "mna.nlau1", true, rng),
                Nlau::new(cfg, store, "mna.nlau2", false, rng),
            ],
            up: [Upsample::new(store, "mna.up1", c, c, rng), Upsample::new(store, "mna.up2", c, c, rng)],
            window: cfg.attention_window,
            window_above: cfg.window_above,
        }
    }

    pub fn unit(&self, scale: usize) -> &Nlau {
        &self.units[scale]
    }

    /// Scale-0 attention window for an `h × w` input; coarser scales are
    /// always global.
    pub fn window_for(&self, h: usize, w: usize) -> Option<usize> {
        (h > self.window_above || w > self.window_above).then_some(self.window)
    }

    pub fn build_pyramid<F: Float>(&self, p: &Bound<F>, fta: &Var<F>, residual: &Var<F>) -> Result<ScalePyramid<F>, ModelError> {
        let (_, _, h, w) = fta.dims4();
        if h % 4 != 0 || w % 4 != 0 {
            return Err(ModelError::Shape(format!("pyramid input {w}x{h} is not divisible by 4")));
        }
        if residual.shape() != [fta.shape()[0], 1, h, w] {
            return Err(ModelError::Shape(format!("residual shape {:?} does not match feature {:?}", residual.shape(), fta.shape())));
        }
        let mut features = vec![fta.clone()];
        let mut residuals = vec![self.residual_in.forward(p, residual)];
        for s in 0..2 {
            features.push(self.down_feat[s].forward(p, &features[s]));
            residuals.push(self.down_res[s].forward(p, &residuals[s]));
        }
        Ok(ScalePyramid { features, residuals })
    }

    /// Coarse-to-fine aggregation: `A2 = U2(F2,R2)`, `A1 = U1(F1,R1,up(A2))`,
    /// `F^sa = U0(F0,R0,up(A1))`.
    pub fn aggregate<F: Float>(&self, p: &Bound<F>, pyr: &ScalePyramid<F>) -> Var<F> {
        let (_, _, h, w) = pyr.features[0].dims4();
        self.aggregate_windowed(p, pyr, self.window_for(h, w))
    }

    /// As [`Mna::aggregate`] with an explicit scale-0 window.
    pub fn aggregate_windowed<F: Float>(&self, p: &Bound<F>, pyr: &ScalePyramid<F>, window: Option<usize>) -> Var<F> {
        let a2 = self.units[2].forward(p, &pyr.features[2], &pyr.residuals[2], None, None);
        let a1 = self.units[1].forward(p, &pyr.features[1], &pyr.residuals[1], Some(&self.up[1].forward(p, &a2)), None);
        self.units[0].forward(p, &pyr.features[0], &pyr.residuals[0], Some(&self.up[0].forward(p, &a1)), window)
    }

    pub fn forward<F: Float>(&self, p: &Bound<F>, fta: &Var<F>, residual: &Var<F>) -> Result<Var<F>, ModelError> {
        let pyr = self.build_pyramid(p, fta, residual)?;
        Ok(self.aggregate(p, &pyr))
    }
}

//! The enhancement network: temporal aggregation, multi-scale non-local
//! aggregation and the quality-enhancement head, composed end to end.

mod config;
pub mod ita;
mod layers;
pub mod mna;
pub mod qe;

pub use config::{ConfigError, GateAxis, ModelConfig, PriorFlags};
pub use layers::{Conv, Upsample};

use cpga_tensor::{Bound, Float, Graph, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use ita::Ita;
use mna::Mna;
use qe::Qe;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(#[from] ConfigError),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// A batch of clips as network-ready tensors.
///
/// `lq`, `pred`: `(N, 2T+1, H, W)` in `[0, 1]`; `mv`: `(N, 2·(2T+1), H, W)`,
/// `(dx, dy)` per frame divided by the search range; `residual`: centre
/// residual `(N, 1, H, W)` divided by 255; `gt`: `(N, 1, H, W)` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipBatch<F> {
    pub lq: Tensor<F>,
    pub pred: Tensor<F>,
    pub mv: Tensor<F>,
    pub residual: Tensor<F>,
    pub gt: Tensor<F>,
    pub search_range: f64,
}

impl<F: Float> ClipBatch<F> {
    pub fn len(&self) -> usize {
        self.lq.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frames(&self) -> usize {
        self.lq.shape()[1]
    }

    /// Centre LQ frame `(N, 1, H, W)`.
    pub fn lq_center(&self) -> Tensor<F> {
        self.lq.narrow_channels(self.frames() / 2, 1)
    }

    /// Replace disabled priors by their stand-ins.
    pub fn with_priors(&self, flags: PriorFlags) -> ClipBatch<F> {
        let mut out = self.clone();
        if !flags.mv {
            out.mv = Tensor::zeros(self.mv.shape().to_vec());
        }
        if !flags.pred {
            out.pred = self.lq.clone();
        }
        if !flags.resid {
            out.residual = Tensor::zeros(self.residual.shape().to_vec());
        }
        out
    }

    pub fn cast<G: Float>(&self) -> ClipBatch<G> {
        ClipBatch {
            lq: self.lq.cast(),
            pred: self.pred.cast(),
            mv: self.mv.cast(),
            residual: self.residual.cast(),
            gt: self.gt.cast(),
            search_range: self.search_range,
        }
    }
}

/// Forward-pass inputs as graph variables.
pub struct ModelInputs<F: Float> {
    pub lq: Var<F>,
    pub pred: Var<F>,
    pub mv: Var<F>,
    pub residual: Var<F>,
    pub search_range: f64,
}

impl<F: Float> ModelInputs<F> {
    /// Constants built from `batch` after prior substitution per `flags`.
    pub fn constants(g: &Graph<F>, batch: &ClipBatch<F>, flags: PriorFlags) -> Self {
        let b = batch.with_priors(flags);
        ModelInputs {
            lq: g.constant(b.lq),
            pred: g.constant(b.pred),
            mv: g.constant(b.mv),
            residual: g.constant(b.residual),
            search_range: batch.search_range,
        }
    }
}

/// The full network and its parameters.
#[derive(Clone, Debug)]
pub struct Cpga<F: Float> {
    config: ModelConfig,
    pub params: ParamStore<F>,
    pub ita: Ita,
    pub mna: Mna,
    pub qe: Qe,
}

impl<F: Float> Cpga<F> {
    /// Fresh parameters from `config.init_seed`: fan-in scaled uniform for
    /// every convolution except the zero-initialized deformable offset
    /// predictor and reconstruction conv.
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut params = ParamStore::new();
        let ita = Ita::new(&config, &mut params, &mut rng);
        let mna = Mna::new(&config, &mut params, &mut rng);
        let qe = Qe::new(&config, &mut params, &mut rng);
        Ok(Cpga { config, params, ita, mna, qe })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Same architecture and parameter values in another precision.
    pub fn cast<G: Float>(&self) -> Cpga<G> {
        Cpga { config: self.config.clone(), params: self.params.cast(), ita: self.ita.clone(), mna: self.mna.clone(), qe: self.qe.clone() }
    }

    pub fn check_batch(&self, batch: &ClipBatch<F>) -> Result<(), ModelError> {
        let t = self.config.frames();
        let [n, frames, h, w] = *batch.lq.shape() else {
            return Err(ModelError::Shape(format!("lq must be (N, {t}, H, W), got {:?}", batch.lq.shape())));
        };
        if frames != t {
            return Err(ModelError::Shape(format!("clip has {frames} frames, model expects {t}")));
        }
        if h % 4 != 0 || w % 4 != 0 {
            return Err(ModelError::Shape(format!("{w}x{h} is not divisible by 4; pad for evaluation first")));
        }
        let expect = [
            ("pred", &batch.pred, vec![n, t, h, w]),
            ("mv", &batch.mv, vec![n, 2 * t, h, w]),
            ("residual", &batch.residual, vec![n, 1, h, w]),
        ];
        for (name, tensor, shape) in expect {
            if tensor.shape() != shape.as_slice() {
                return Err(ModelError::Shape(format!("{name} is {:?}, expected {shape:?}", tensor.shape())));
            }
        }
        Ok(())
    }

    /// Enhanced centre frames `(N, 1, H, W)`, unclamped.
    pub fn forward(&self, p: &Bound<F>, x: &ModelInputs<F>) -> Result<Var<F>, ModelError> {
        let g = p.graph();
        let fta = self.ita.forward(p, &x.lq, &x.pred, &x.mv, x.search_range)?;
        let fsa = self.mna.forward(p, &fta, &x.residual)?;
        let center = g.narrow_channels(&x.lq, self.config.frames() / 2, 1);
        Ok(self.qe.forward(p, &fsa, &center))
    }

    /// Inference on a batch with this model's prior flags applied.
    pub fn enhance(&self, batch: &ClipBatch<F>) -> Result<Tensor<F>, ModelError> {
        self.check_batch(batch)?;
        let g = Graph::inference();
        let p = Bound::new(&g, &self.params);
        let inputs = ModelInputs::constants(&g, batch, self.config.priors);
        let out = self.forward(&p, &inputs)?;
        Ok(out.value().clone())
    }
}

use cpga_tensor::{Bound, ConvSpec, Float, ParamId, ParamStore, Padding, Tensor, Var};
use rand::Rng;

/// Square convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: ConvSpec,
}

impl Conv {
    pub fn new<F: Float, R: Rng>(store: &mut ParamStore<F>, name: &str, ci: usize, co: usize, k: usize, stride: usize, rng: &mut R) -> Self {
        let fan_in = ci * k * k;
        let weight = store.add_fan_in(format!("{name}.weight"), &[co, ci, k, k], fan_in, rng);
        let bias = store.add_fan_in(format!("{name}.bias"), &[co], fan_in, rng);
        Conv { weight, bias, spec: ConvSpec { stride, pad: k / 2, padding: Padding::Zeros } }
    }

    /// All-zero weights and bias.
    pub fn zeros<F: Float>(store: &mut ParamStore<F>, name: &str, ci: usize, co: usize, k: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), Tensor::zeros(vec![co, ci, k, k]));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![co]));
        Conv { weight, bias, spec: ConvSpec::same(k) }
    }

    pub fn forward<F: Float>(&self, p: &Bound<F>, x: &Var<F>) -> Var<F> {
        p.graph().conv2d(x, &p.p(self.weight), Some(&p.p(self.bias)), self.spec)
    }
}

/// Stride-2 transposed 3×3 convolution that exactly doubles height and width.
#[derive(Clone, Debug)]
pub struct Upsample {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Upsample {
    pub fn new<F: Float, R: Rng>(store: &mut ParamStore<F>, name: &str, ci: usize, co: usize, rng: &mut R) -> Self {
        let fan_in = co * 9;
        let weight = store.add_fan_in(format!("{name}.weight"), &[ci, co, 3, 3], fan_in, rng);
        let bias = store.add_fan_in(format!("{name}.bias"), &[co], fan_in, rng);
        Upsample { weight, bias }
    }

    pub fn forward<F: Float>(&self, p: &Bound<F>, x: &Var<F>) -> Var<F> {
        p.graph().conv_transpose2d(x, &p.p(self.weight), Some(&p.p(self.bias)), 2, 1, 1)
    }
}

pub(crate) fn lrelu<F: Float>(p: &Bound<F>, x: &Var<F>, slope: f64) -> Var<F> {
    p.graph().leaky_relu(x, F::lit(slope))
}

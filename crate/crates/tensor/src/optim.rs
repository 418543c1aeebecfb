use crate::{Float, ParamId, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Parameters without a gradient in a step keep
/// their value and moments.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor<F>>,
    second: Vec<Tensor<F>>,
}

impl<F: Float> Adam<F> {
    pub fn new(config: AdamConfig, store: &ParamStore<F>) -> Self {
        let zeros = |id| Tensor::zeros(store.get(id).shape().to_vec());
        Adam { config, step: 0, first: store.ids().map(zeros).collect(), second: store.ids().map(zeros).collect() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, id: ParamId) -> (&Tensor<F>, &Tensor<F>) {
        (&self.first[id.index()], &self.second[id.index()])
    }

    /// Restore saved state; moment shapes must match the store.
    pub fn restore(&mut self, step: u64, first: Vec<Tensor<F>>, second: Vec<Tensor<F>>) {
        assert_eq!(first.len(), self.first.len());
        assert_eq!(second.len(), self.second.len());
        for (a, b) in self.first.iter().zip(&first) {
            assert_eq!(a.shape(), b.shape());
        }
        self.step = step;
        self.first = first;
        self.second = second;
    }

    pub fn update(&mut self, store: &mut ParamStore<F>, grads: &[(ParamId, Tensor<F>)]) {
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let step_size = F::lit(c.lr / bc1);
        let inv_bc2_sqrt = F::lit(1.0 / bc2.sqrt());
        let eps = F::lit(c.eps);
        for (id, g) in grads {
            let m = &mut self.first[id.index()];
            let v = &mut self.second[id.index()];
            let p = store.get_mut(*id);
            for (((pv, mv), vv), &gv) in p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
                *mv = b1 * *mv + (F::one() - b1) * gv;
                *vv = b2 * *vv + (F::one() - b2) * gv * gv;
                *pv -= step_size * *mv / ((*vv).sqrt() * inv_bc2_sqrt + eps);
            }
        }
    }
}

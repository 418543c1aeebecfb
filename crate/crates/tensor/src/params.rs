use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use crate::{Float, Gradients, Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered parameter arrays.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F> {
    names: Vec<String>,
    values: Vec<Arc<Tensor<F>>>,
    index: HashMap<String, usize>,
}

impl<F: Float> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), values: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(Arc::new(value));
        ParamId(self.names.len() - 1)
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn add_fan_in<R: Rng + ?Sized>(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut R) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        self.add(name, Tensor::uniform(shape.to_vec(), -bound, bound, rng))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.values[id.0]
    }

    pub fn shared(&self, id: ParamId) -> Arc<Tensor<F>> {
        Arc::clone(&self.values[id.0])
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        Arc::make_mut(&mut self.values[id.0])
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<F>) {
        assert_eq!(self.values[id.0].shape(), value.shape(), "shape change for {}", self.names[id.0]);
        self.values[id.0] = Arc::new(value);
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.numel()).sum()
    }

    pub fn cast<G: Float>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(|v| Arc::new(v.cast())).collect(),
            index: self.index.clone(),
        }
    }
}

/// Parameters bound to one graph: each parameter becomes a single leaf the
/// first time it is used.
pub struct Bound<'a, F: Float> {
    graph: &'a Graph<F>,
    store: &'a ParamStore<F>,
    vars: RefCell<Vec<Option<Var<F>>>>,
}

impl<'a, F: Float> Bound<'a, F> {
    pub fn new(graph: &'a Graph<F>, store: &'a ParamStore<F>) -> Self {
        Bound { graph, store, vars: RefCell::new(vec![None; store.len()]) }
    }

    pub fn graph(&self) -> &'a Graph<F> {
        self.graph
    }

    pub fn store(&self) -> &'a ParamStore<F> {
        self.store
    }

    pub fn p(&self, id: ParamId) -> Var<F> {
        let mut vars = self.vars.borrow_mut();
        vars[id.0].get_or_insert_with(|| self.graph.leaf_shared(self.store.shared(id))).clone()
    }

    /// Gradients of every parameter that took part in the forward pass.
    pub fn collect(&self, grads: &mut Gradients<F>) -> Vec<(ParamId, Tensor<F>)> {
        let vars = self.vars.borrow();
        vars.iter()
            .enumerate()
            .filter_map(|(i, v)| v.as_ref().and_then(|v| grads.take(v)).map(|g| (ParamId(i), g)))
            .collect()
    }
}

use std::cell::RefCell;
use std::sync::Arc;

use crate::{Float, Tensor};

type BackwardFn<F> = Box<dyn Fn(&Tensor<F>, &[bool]) -> Vec<Option<Tensor<F>>>>;

struct Node<F> {
    inputs: Vec<Option<usize>>,
    backward: Option<BackwardFn<F>>,
}

/// Handle to a value produced on a [`Graph`].
///
/// Values that do not depend on any grad-requiring leaf carry no node id and
/// are never visited by the backward pass.
#[derive(Clone, Debug)]
pub struct Var<F> {
    id: Option<usize>,
    value: Arc<Tensor<F>>,
}

impl<F: Float> Var<F> {
    pub fn value(&self) -> &Tensor<F> {
        &self.value
    }

    pub fn shared(&self) -> Arc<Tensor<F>> {
        Arc::clone(&self.value)
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        self.value.dims4()
    }

    pub fn requires_grad(&self) -> bool {
        self.id.is_some()
    }
}

/// Tape of recorded operations for one forward pass.
///
/// A graph built with [`Graph::inference`] records nothing, so intermediate
/// values are freed as soon as their handles drop.
pub struct Graph<F> {
    nodes: RefCell<Vec<Node<F>>>,
    grad_enabled: bool,
}

impl<F: Float> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Float> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: RefCell::new(Vec::new()), grad_enabled: true }
    }

    pub fn inference() -> Self {
        Graph { nodes: RefCell::new(Vec::new()), grad_enabled: false }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A value that receives a gradient.
    pub fn leaf(&self, value: Tensor<F>) -> Var<F> {
        self.leaf_shared(Arc::new(value))
    }

    pub fn leaf_shared(&self, value: Arc<Tensor<F>>) -> Var<F> {
        if !self.grad_enabled {
            return Var { id: None, value };
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { inputs: Vec::new(), backward: None });
        Var { id: Some(nodes.len() - 1), value }
    }

    /// A value treated as data: no gradient flows into it.
    pub fn constant(&self, value: Tensor<F>) -> Var<F> {
        Var { id: None, value: Arc::new(value) }
    }

    pub fn constant_shared(&self, value: Arc<Tensor<F>>) -> Var<F> {
        Var { id: None, value }
    }

    /// Which of `inputs` need a gradient from the op about to be recorded.
    pub fn needs(&self, inputs: &[&Var<F>]) -> Vec<bool> {
        inputs.iter().map(|v| self.grad_enabled && v.id.is_some()).collect()
    }

    /// Register an op result. `backward` maps the output gradient to one
    /// optional gradient per input; it is only asked for inputs flagged in
    /// its second argument.
    pub fn record(
        &self,
        value: Tensor<F>,
        inputs: &[&Var<F>],
        backward: impl Fn(&Tensor<F>, &[bool]) -> Vec<Option<Tensor<F>>> + 'static,
    ) -> Var<F> {
        let value = Arc::new(value);
        if !self.grad_enabled || inputs.iter().all(|v| v.id.is_none()) {
            return Var { id: None, value };
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { inputs: inputs.iter().map(|v| v.id).collect(), backward: Some(Box::new(backward)) });
        Var { id: Some(nodes.len() - 1), value }
    }

    /// Reverse pass seeded with ones at `root`.
    pub fn backward(&self, root: &Var<F>) -> Gradients<F> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<F>>> = (0..nodes.len()).map(|_| None).collect();
        let Some(root_id) = root.id else {
            return Gradients { grads };
        };
        grads[root_id] = Some(Tensor::full(root.value.shape().to_vec(), F::one()));
        for id in (0..=root_id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad_out) = grads[id].take() else {
                continue;
            };
            let needs: Vec<bool> = node.inputs.iter().map(|i| i.is_some()).collect();
            let input_grads = backward(&grad_out, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (input, g) in node.inputs.iter().zip(input_grads) {
                if let (Some(i), Some(g)) = (input, g) {
                    match grads[*i].as_mut() {
                        Some(acc) => acc.add_assign(&g),
                        None => grads[*i] = Some(g),
                    }
                }
            }
        }
        Gradients { grads }
    }
}

/// Gradients of leaves after [`Graph::backward`].
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Float> Gradients<F> {
    pub fn get(&self, var: &Var<F>) -> Option<&Tensor<F>> {
        var.id.and_then(|i| self.grads.get(i)).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: &Var<F>) -> Option<Tensor<F>> {
        var.id.and_then(|i| self.grads.get_mut(i)).and_then(|g| g.take())
    }
}

//! Small reverse-mode automatic differentiation engine over dense NCHW
//! tensors, with the layer kernels a compressed-video restoration network
//! needs: convolutions, bilinear warping, deformable convolution, windowed
//! spatial attention and partial channel shifts.
//!
//! Ops are methods on [`Graph`]. A graph built with [`Graph::new`] records a
//! tape for [`Graph::backward`]; [`Graph::inference`] records nothing.

mod float;
pub mod gemm;
mod graph;
pub mod ops;
mod optim;
mod params;
mod tensor;

pub use float::Float;
pub use graph::{Gradients, Graph, Var};
pub use ops::attention::{attention_maps, attention_probs, attention_windows};
pub use ops::conv::{ConvSpec, Padding};
pub use ops::shift::ShiftAxis;
pub use optim::{Adam, AdamConfig};
pub use params::{Bound, ParamId, ParamStore};
pub use tensor::Tensor;

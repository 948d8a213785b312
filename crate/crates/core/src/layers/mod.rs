//! Differentiable building blocks with hand-derived backward passes.
//!
//! Every layer follows the same contract: `forward` returns the output plus
//! whatever cache its `backward` needs, `backward` consumes the original
//! input, the cache and the upstream gradient, and returns gradients for the
//! input and every parameter tensor. Parameters only change through
//! [`adam::AdamState::step`].

pub mod adam;
pub mod conv;
pub mod dense;
pub mod lstm;
pub mod transform;

pub use adam::{AdamHyper, AdamState};
pub use conv::{maxpool_backward, maxpool_forward, Conv1DLayer, ConvGrads, ConvOutput, PoolOutput};
pub use dense::{softmax_cross_entropy, DenseGrads, DenseLayer};
pub use lstm::{LstmCache, LstmGrads, LstmLayer, LstmOutput};
pub use transform::{TransformLayer, TransformParams, TransformVariant};

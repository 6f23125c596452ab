//! Small trainable models: dense feed-forward networks (logistic regression
//! as the zero-hidden-layer case), losses, optimizers, and the plateau
//! scheduler that defines convergence.
//!
//! Batch normalization is deliberately absent; only plain dense layers are
//! supported.

mod mlp;
mod optim;
mod params;
mod sched;

pub use mlp::{
    backward, backward_hidden, backward_with_input_grad, forward, forward_hidden, init_params,
    loss, Activation, ForwardCache, Head, MlpSpec, Targets,
};
pub use optim::OptimizerState;
pub use params::{ParamVector, Segment, SegmentKind, ShapeRegistry};
pub use sched::{MetricMode, PlateauDecision, PlateauScheduler};

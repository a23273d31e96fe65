//! Long-term action anticipation with knowledge-graph-rectified attention.
//!
//! Given the first few seconds of an activity, the model in this crate
//! predicts which actions follow and for how long. A transformer
//! encoder–decoder does the sequence work; a symbolic object–affordance
//! knowledge graph conditions its attention through learned rectification
//! matrices, so that objects visible early ("a tomato and a bowl are on the
//! board") steer long-horizon predictions.
//!
//! Module map:
//!
//! * [`tensor`] — dense tensors, the reverse-mode tape, Adam, checkpoints.
//! * [`graph`] — the knowledge graph, importance-gated propagation, context
//!   vectors.
//! * [`model`] — input projection, rectified attention, encoder/decoder,
//!   prediction heads.
//! * [`data`] — action grammar, seeded episode generator, windowing,
//!   duration decoding, on-disk dataset format.
//! * [`metrics`] — mean-over-classes accuracy, segment edit distance,
//!   next-action accuracy.
//! * [`train`] / [`eval`] — composite loss, the training loop, and the
//!   evaluation grid with its reports.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`): training
//! defaults to `f32`, while gradient checks run in `f64`.

pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Concrete aliases for the two supported widths.
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape32 = tensor::tape::Tape<f32>;
pub type Tape64 = tensor::tape::Tape<f64>;
pub type Params32 = tensor::params::ParamStore<f32>;
pub type Params64 = tensor::params::ParamStore<f64>;

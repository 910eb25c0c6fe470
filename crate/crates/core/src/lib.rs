//! Alignment-augmented music captioning at desk scale.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: dense f64 tensors with reverse-mode autodiff.
//! * [`nn`]: attention, feed-forward, layer norm, embeddings, encoder and
//!   decoder layers.
//! * [`model`]: music and lyrics encoders, contrastive alignment head,
//!   cross-attention fusion and caption decoder.
//! * [`data`]: seeded synthetic paired corpus, vocabulary and file formats.
//! * [`metrics`]: ROUGE, METEOR-lite, retrieval precision/recall and the
//!   InfoNCE mutual-information bound.
//! * [`trainer`]: optimization loop, checkpoints and the experiment drivers.
//! * [`gradsuite`]: finite-difference checks of every differentiable op.

pub mod data;
pub mod error;
pub mod gradsuite;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};

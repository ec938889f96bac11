//! Distant-supervision relation extraction with a relation-tie graph classifier.
//!
//! Sentence bags are encoded with a piecewise convolutional network under
//! relation-queried selective attention; the relation classifier is a set of
//! embeddings propagated over a co-occurrence graph and regularized by a
//! mutual-exclusion penalty. The crate also ships the synthetic planted-ties
//! corpus generator and the held-out PR-curve evaluation used to verify the
//! topology-recovery behaviour at desk scale.

pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod tensor;
pub mod trainer;

pub use corpus::{Bag, RelationMap, SentenceInstance, SynthSpec, Vocabulary};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Activation, GcnParams, TiesGraph};
pub use tensor::{Tape, Tensor, TensorError, VarId};
pub use trainer::{ModelParams, Precision, TrainConfig};

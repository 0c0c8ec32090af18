//! Few-shot text classification over heterogeneous sources.
//!
//! The model is an episodically trained prototypical classifier whose
//! metric is conditioned per task: support texts are augmented with their
//! label names, a masked-reconstruction objective over those label tokens
//! shapes a task embedding, a differentiable clustering tree routes the
//! task embedding through learnable cluster centers, and the resulting
//! cluster knowledge modulates sample embeddings before nearest-prototype
//! inference.
//!
//! Crate layout:
//! - [`numerics`]: dense arrays, the gradient tape, finite-difference checks
//! - [`corpus`]: multi-source labeled text, class-disjoint splits, synthesis
//! - [`episodes`]: N-way K-shot task sampling
//! - [`encoder`]: bag-of-embeddings text encoder with a masked-LM head
//! - [`lomlm`]: label-token masking, reconstruction loss, task embeddings
//! - [`htc`]: the hierarchical task-clustering tree
//! - [`modulate`]: cluster-conditioned feature scaling and shifting
//! - [`protonet`]: prototypes and distance-softmax classification
//! - [`trainer`]: joint objective, Adam updates, early stopping, checkpoints
//! - [`evalkit`]: meta-testing, ablations, sweeps, assignment heatmaps

pub mod corpus;
pub mod encoder;
pub mod episodes;
pub mod evalkit;
pub mod htc;
pub mod lomlm;
pub mod modulate;
pub mod numerics;
pub mod protonet;
pub mod rng;
pub mod trainer;

pub use corpus::{CorpusRegistry, Document, SourceDataset, SynthSpec, Vocab};
pub use episodes::Episode;
pub use htc::{TaskTrace, TreeConfig};
pub use numerics::{Array, ParameterStore, Tape, Var};
pub use rng::Rng;
pub use trainer::{Checkpoint, LossReport, TrainConfig};

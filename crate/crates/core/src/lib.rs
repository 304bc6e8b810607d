//! Prompted meta-learning for few-shot knowledge graph completion.
//!
//! A task is one unseen relation given by `K` support triples. The model
//! encodes entities with attentive neighbor aggregation, summarizes the
//! support set relationally and semantically, retrieves a prompt from a
//! learnable pool, fuses everything into a meta-representation, adapts it
//! with one gradient step on the support loss and ranks query candidates
//! with a TransD-style translational score.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod kg;
pub mod model;
pub mod neighbor;
pub mod numerics;
pub mod scorer;
pub mod semantics;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::Config;
pub use dataset::Dataset;
pub use error::{Error, Result};
pub use eval::{compute_metrics, evaluate, rank_candidates, Metrics, Summary};
pub use model::{inner_descent, run_episode, EpisodeContext, EpisodeOutput, InnerDescent, Mode, ModelParams};
pub use train::{train, TrainOutcome, TrainReport};

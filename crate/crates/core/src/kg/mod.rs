//! Knowledge-graph storage, task ingestion, sampling, synthetic data and
//! semantic embedding construction.

pub mod embeddings;
pub mod graph;
pub mod sampling;
pub mod sif;
pub mod synthetic;
pub mod tasks;

pub use embeddings::{read_embedding_file, write_embedding_file, EmbeddingKind, EmbeddingTable};
pub use graph::{load_triples, Direction, EntityId, Kg, Neighbor, RelationId, Triple, Vocab};
pub use sampling::{evaluation_episode, negative_sample, sample_episode, Episode};
pub use sif::{sif_embed, sif_weight, SifOutput, DEFAULT_SIF_A};
pub use synthetic::{generate_synthetic, SyntheticDataset, SyntheticManifest, SyntheticSpec};
pub use tasks::{check_disjoint, load_candidates, load_tasks, CandidateEntry, CandidateFile, FewShotTask, Query, TaskFile};

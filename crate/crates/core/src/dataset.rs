//! A loaded dataset directory: background graph, task splits and optional
//! pretrained embeddings.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kg::synthetic::{
    CANDIDATES_FILE, ENTITY_RELATIONAL_FILE, ENTITY_SEMANTIC_FILE, RELATION_RELATIONAL_FILE, TEST_TASKS_FILE,
    TRAIN_TASKS_FILE, TRIPLES_FILE, VALID_TASKS_FILE,
};
use crate::kg::{
    check_disjoint, load_candidates, load_tasks, load_triples, read_embedding_file, CandidateFile, EmbeddingKind,
    EmbeddingTable, FewShotTask, Kg,
};

/// Seed offset for the neighbor subsampling stream.
const NEIGHBOR_STREAM: u64 = 0x6e65_6967_6862_6f72;

#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub kg: Kg,
    pub train: Vec<FewShotTask>,
    pub valid: Vec<FewShotTask>,
    pub test: Vec<FewShotTask>,
    pub candidates: CandidateFile,
    pub entity_relational: Option<EmbeddingTable>,
    /// Rows for background relations only.
    pub relation_relational: Option<EmbeddingTable>,
    pub entity_semantic: Option<EmbeddingTable>,
}

fn optional_table(path: &Path, kind: EmbeddingKind, vocab: &crate::kg::Vocab) -> Result<Option<EmbeddingTable>> {
    if !path.exists() {
        return Ok(None);
    }
    let rows = read_embedding_file(path)?;
    EmbeddingTable::from_named_rows(kind, vocab, &rows).map(Some)
}

impl Dataset {
    /// Loads the standard file layout from `dir`. Embedding files are
    /// optional; a missing table is initialized randomly by the model.
    pub fn load(dir: impl AsRef<Path>, k: usize, max_neighbors: usize, seed: u64) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let mut kg = load_triples(dir.join(TRIPLES_FILE))?;
        if kg.num_entities() == 0 {
            return Err(Error::Empty("background graph"));
        }
        let entity_relational = optional_table(&dir.join(ENTITY_RELATIONAL_FILE), EmbeddingKind::RelationalEntity, kg.entities())?;
        let relation_relational =
            optional_table(&dir.join(RELATION_RELATIONAL_FILE), EmbeddingKind::RelationalRelation, kg.relations())?;
        let entity_semantic = optional_table(&dir.join(ENTITY_SEMANTIC_FILE), EmbeddingKind::SemanticEntity, kg.entities())?;
        if let (Some(r), Some(s)) = (&entity_relational, &entity_semantic) {
            if r.dim() != s.dim() {
                return Err(Error::dims("semantic vs relational entity dim", &[r.dim()], &[s.dim()]));
            }
        }
        if let (Some(e), Some(r)) = (&entity_relational, &relation_relational) {
            if e.dim() != r.dim() {
                return Err(Error::dims("relation vs entity dim", &[e.dim()], &[r.dim()]));
            }
        }

        let candidates = load_candidates(dir.join(CANDIDATES_FILE))?;
        let train = load_tasks(dir.join(TRAIN_TASKS_FILE), &mut kg, k, Some(&candidates))?;
        let valid = load_tasks(dir.join(VALID_TASKS_FILE), &mut kg, k, Some(&candidates))?;
        let test = load_tasks(dir.join(TEST_TASKS_FILE), &mut kg, k, Some(&candidates))?;
        check_disjoint(&[&train, &valid, &test])?;
        if train.is_empty() {
            return Err(Error::Empty("training tasks"));
        }
        kg.build_neighbor_index(max_neighbors, &mut ChaCha8Rng::seed_from_u64(seed ^ NEIGHBOR_STREAM));
        Ok(Self {
            dir,
            kg,
            train,
            valid,
            test,
            candidates,
            entity_relational,
            relation_relational,
            entity_semantic,
        })
    }

    /// Embedding width implied by the pretrained tables, if any.
    pub fn embedding_dim(&self) -> Option<usize> {
        [&self.entity_relational, &self.relation_relational, &self.entity_semantic]
            .into_iter()
            .flatten()
            .map(EmbeddingTable::dim)
            .next()
    }

    /// Loads another task file against this dataset's graph, e.g. for
    /// evaluation with a different support size.
    pub fn load_extra_tasks(&mut self, path: impl AsRef<Path>, k: usize) -> Result<Vec<FewShotTask>> {
        load_tasks(path, &mut self.kg, k, Some(&self.candidates))
    }
}

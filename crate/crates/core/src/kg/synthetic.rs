//! Synthetic few-shot datasets with planted type-pair patterns.
//!
//! Entities carry a latent type. Every relation links one head type to one
//! tail type, and several few-shot relations share each pattern so that
//! knowledge about a pattern transfers from training to held-out relations.
//! Semantic embeddings are the type centroid plus Gaussian noise; relational
//! embeddings are random.
//!
//! The noise doubles as a latent attribute. A few-shot relation of pattern
//! `p` maps head `h` to one of the `tail_choices` tail-type entities whose
//! noise lies nearest to `noise(h) + offset(p)`, so within-type structure is
//! visible only through the semantic embeddings. Patterns may share a type
//! pair, in which case only the offset tells them apart. Held-out relations
//! take their heads from a different half of the head type than training
//! relations of the same pattern.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::embeddings::format_embedding_rows;
use super::tasks::{candidate_key, CandidateEntry, CandidateFile, TaskFile};
use crate::error::{Error, Result};

pub const TRIPLES_FILE: &str = "triples.tsv";
pub const TRAIN_TASKS_FILE: &str = "train_tasks.json";
pub const VALID_TASKS_FILE: &str = "valid_tasks.json";
pub const TEST_TASKS_FILE: &str = "test_tasks.json";
pub const CANDIDATES_FILE: &str = "candidates.json";
pub const ENTITY_RELATIONAL_FILE: &str = "entity_relational.txt";
pub const RELATION_RELATIONAL_FILE: &str = "relation_relational.txt";
pub const ENTITY_SEMANTIC_FILE: &str = "entity_semantic.txt";
pub const SPEC_FILE: &str = "spec.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub num_types: usize,
    pub entities_per_type: usize,
    /// Few-shot relations; relation `i` follows pattern `i % num_patterns`.
    pub num_relations: usize,
    pub num_patterns: usize,
    /// Distinct (head type, tail type) pairs the patterns are spread over.
    /// Patterns sharing a pair differ only in their semantic offset.
    pub type_pairs: usize,
    pub triples_per_relation: usize,
    pub valid_relations: usize,
    pub test_relations: usize,
    pub background_relations: usize,
    pub background_triples_per_relation: usize,
    pub semantic_noise: f64,
    /// Tails per head a few-shot relation may pick from, nearest first.
    pub tail_choices: usize,
    /// Per-pattern offset spread as a multiple of `semantic_noise`.
    pub offset_scale: f64,
    pub dim: usize,
    /// Capped at the number of entities.
    pub candidates_per_query: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_types: 6,
            entities_per_type: 50,
            num_relations: 30,
            num_patterns: 10,
            type_pairs: 5,
            triples_per_relation: 40,
            valid_relations: 4,
            test_relations: 6,
            background_relations: 12,
            background_triples_per_relation: 80,
            semantic_noise: 0.1,
            tail_choices: 3,
            offset_scale: 3.0,
            dim: 16,
            candidates_per_query: 100,
        }
    }
}

impl SyntheticSpec {
    pub fn num_entities(&self) -> usize {
        self.num_types * self.entities_per_type
    }

    pub fn effective_patterns(&self) -> usize {
        self.num_patterns.min(self.num_types * self.num_types).max(1)
    }

    pub fn effective_type_pairs(&self) -> usize {
        self.type_pairs.clamp(1, self.effective_patterns())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synthetic spec: {m}")));
        let pairs = self.entities_per_type * self.entities_per_type;
        if self.num_types == 0 || self.entities_per_type == 0 {
            return bad("need at least one type and one entity per type".into());
        }
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.num_relations < self.valid_relations + self.test_relations + 1 {
            return bad("num_relations must exceed valid_relations + test_relations".into());
        }
        if self.triples_per_relation < 2 || self.triples_per_relation > pairs.saturating_sub(self.entities_per_type) {
            return bad(format!(
                "triples_per_relation must be in [2, {}]",
                pairs.saturating_sub(self.entities_per_type)
            ));
        }
        if self.background_relations < self.num_types {
            return bad("background_relations must be at least num_types".into());
        }
        if self.background_triples_per_relation == 0 || self.background_triples_per_relation > pairs / 2 {
            return bad(format!("background_triples_per_relation must be in [1, {}]", pairs / 2));
        }
        if !(self.offset_scale >= 0.0) {
            return bad("offset_scale must be non-negative".into());
        }
        if self.tail_choices == 0 {
            return bad("tail_choices must be positive".into());
        }
        if self.candidates_per_query == 0 {
            return bad("candidates_per_query must be positive".into());
        }
        if !(self.semantic_noise >= 0.0) {
            return bad("semantic_noise must be non-negative".into());
        }
        Ok(())
    }
}

/// Ground-truth structure written next to the dataset files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticManifest {
    pub spec: SyntheticSpec,
    pub seed: u64,
    pub entity_types: BTreeMap<String, usize>,
    /// Few-shot relation name to its (head type, tail type) pair.
    pub relation_patterns: BTreeMap<String, (usize, usize)>,
    /// Few-shot relation name to its pattern index.
    pub relation_pattern_ids: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub manifest: SyntheticManifest,
    pub entity_names: Vec<String>,
    pub relation_names: Vec<String>,
    pub background: Vec<[String; 3]>,
    pub train: TaskFile,
    pub valid: TaskFile,
    pub test: TaskFile,
    pub candidates: CandidateFile,
    pub entity_relational: Vec<Vec<f64>>,
    pub relation_relational: Vec<Vec<f64>>,
    pub entity_semantic: Vec<Vec<f64>>,
}

fn gaussian_rows(n: usize, dim: usize, std: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    if std == 0.0 {
        return vec![vec![0.0; dim]; n];
    }
    let normal = Normal::new(0.0, std).expect("valid std");
    (0..n).map(|_| (0..dim).map(|_| normal.sample(rng)).collect()).collect()
}

/// Distinct (head, tail) pairs drawn from the given entity ranges.
fn sample_pairs(
    heads: std::ops::Range<usize>,
    tails: std::ops::Range<usize>,
    count: usize,
    rng: &mut impl Rng,
) -> Vec<(usize, usize)> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let h = rng.random_range(heads.clone());
        let t = rng.random_range(tails.clone());
        if h != t && seen.insert((h, t)) {
            out.push((h, t));
        }
    }
    out
}

pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nt, ept, dim) = (spec.num_types, spec.entities_per_type, spec.dim);
    let n_ent = spec.num_entities();
    let type_range = |a: usize| a * ept..(a + 1) * ept;

    let entity_names: Vec<String> = (0..n_ent).map(|i| format!("type{}_ent{}", i / ept, i % ept)).collect();
    let entity_types: Vec<usize> = (0..n_ent).map(|i| i / ept).collect();

    let mut all_pairs: Vec<(usize, usize)> = (0..nt).flat_map(|a| (0..nt).map(move |b| (a, b))).collect();
    all_pairs.shuffle(&mut rng);
    let n_pairs = spec.effective_type_pairs();
    let patterns: Vec<(usize, usize)> = (0..spec.effective_patterns()).map(|p| all_pairs[p % n_pairs]).collect();

    // Background graph; every entity takes part in at least one triple.
    let bg_patterns: Vec<(usize, usize)> = (0..spec.background_relations)
        .map(|j| (j % nt, rng.random_range(0..nt)))
        .collect();
    let mut bg_pairs: Vec<Vec<(usize, usize)>> = bg_patterns
        .iter()
        .map(|&(a, b)| sample_pairs(type_range(a), type_range(b), spec.background_triples_per_relation, &mut rng))
        .collect();
    let mut covered = vec![false; n_ent];
    for pairs in &bg_pairs {
        for &(h, t) in pairs {
            covered[h] = true;
            covered[t] = true;
        }
    }
    for e in 0..n_ent {
        if covered[e] {
            continue;
        }
        let a = entity_types[e];
        let options: Vec<usize> = (0..spec.background_relations).filter(|j| j % nt == a).collect();
        let j = *options.choose(&mut rng).expect("background_relations >= num_types");
        loop {
            let t = rng.random_range(type_range(bg_patterns[j].1));
            if t != e && !bg_pairs[j].contains(&(e, t)) {
                bg_pairs[j].push((e, t));
                covered[t] = true;
                break;
            }
        }
    }
    let bg_names: Vec<String> = (0..spec.background_relations).map(|j| format!("bg{j}")).collect();
    let background: Vec<[String; 3]> = bg_pairs
        .iter()
        .enumerate()
        .flat_map(|(j, pairs)| {
            pairs
                .iter()
                .map(|&(h, t)| [entity_names[h].clone(), bg_names[j].clone(), entity_names[t].clone()])
                .collect::<Vec<_>>()
        })
        .collect();

    let std = 1.0 / (dim as f64).sqrt();
    let centroids = gaussian_rows(nt, dim, std, &mut rng);
    let latent = gaussian_rows(n_ent, dim, spec.semantic_noise, &mut rng);
    let offsets = gaussian_rows(patterns.len(), dim, spec.semantic_noise * spec.offset_scale, &mut rng);

    // Per pattern, training relations draw heads from one half of the head
    // type and held-out relations from the other, so held-out facts are new
    // while the pattern itself transfers.
    let held_out = spec.valid_relations + spec.test_relations > 0;
    let head_halves: Vec<(Vec<usize>, Vec<usize>)> = patterns
        .iter()
        .map(|&(a, _)| {
            let mut heads: Vec<usize> = type_range(a).collect();
            heads.shuffle(&mut rng);
            let rest = heads.split_off(heads.len().div_ceil(2));
            if held_out && !rest.is_empty() {
                (heads, rest)
            } else {
                let all = [heads, rest].concat();
                (all.clone(), all)
            }
        })
        .collect();

    // Few-shot relations.
    let n_train = spec.num_relations - spec.valid_relations - spec.test_relations;
    let rel_names: Vec<String> = (0..spec.num_relations).map(|i| format!("rel{i}")).collect();
    let mut relation_patterns = BTreeMap::new();
    let mut relation_pattern_ids = BTreeMap::new();
    let (mut train, mut valid, mut test) = (TaskFile::new(), TaskFile::new(), TaskFile::new());
    let mut candidates = CandidateFile::new();
    for (i, name) in rel_names.iter().enumerate() {
        let p = i % patterns.len();
        let (a, b) = patterns[p];
        relation_patterns.insert(name.clone(), (a, b));
        relation_pattern_ids.insert(name.clone(), p);
        let heads = if i < n_train { &head_halves[p].0 } else { &head_halves[p].1 };
        let mut options: Vec<(usize, usize)> = Vec::new();
        for &h in heads {
            let target: Vec<f64> = latent[h].iter().zip(&offsets[p]).map(|(z, o)| z + o).collect();
            // Shuffling first spreads ties at random when the noise is zero.
            let mut tails: Vec<usize> = type_range(b).filter(|&t| t != h).collect();
            tails.shuffle(&mut rng);
            let dist = |t: usize| -> f64 { latent[t].iter().zip(&target).map(|(x, y)| (x - y) * (x - y)).sum() };
            tails.sort_by(|&x, &y| dist(x).total_cmp(&dist(y)));
            options.extend(tails.into_iter().take(spec.tail_choices).map(|t| (h, t)));
        }
        if options.len() < spec.triples_per_relation {
            return Err(Error::Config(format!(
                "synthetic spec: pattern {p} admits only {} triples, fewer than triples_per_relation",
                options.len()
            )));
        }
        let pairs: Vec<(usize, usize)> = options.choose_multiple(&mut rng, spec.triples_per_relation).copied().collect();
        let rows: Vec<[String; 3]> = pairs
            .iter()
            .map(|&(h, t)| [entity_names[h].clone(), name.clone(), entity_names[t].clone()])
            .collect();

        let mut tails_of: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for &(h, t) in &pairs {
            tails_of.entry(h).or_default().insert(t);
        }
        for (h, truths) in &tails_of {
            let mut chosen: BTreeSet<usize> = truths.clone();
            let others: Vec<usize> = (0..n_ent).filter(|e| !truths.contains(e)).collect();
            let extra = spec.candidates_per_query.saturating_sub(chosen.len()).min(others.len());
            chosen.extend(others.choose_multiple(&mut rng, extra).copied());
            candidates.insert(
                candidate_key(&entity_names[*h], name),
                CandidateEntry {
                    truths: truths.iter().map(|&t| entity_names[t].clone()).collect(),
                    candidates: chosen.iter().map(|&c| entity_names[c].clone()).collect(),
                },
            );
        }

        let split = if i < n_train {
            &mut train
        } else if i < n_train + spec.valid_relations {
            &mut valid
        } else {
            &mut test
        };
        split.insert(name.clone(), rows);
    }

    let entity_relational = gaussian_rows(n_ent, dim, std, &mut rng);
    let mut relation_names = bg_names;
    relation_names.extend(rel_names);
    let relation_relational = gaussian_rows(relation_names.len(), dim, std, &mut rng);
    let entity_semantic: Vec<Vec<f64>> = entity_types
        .iter()
        .zip(&latent)
        .map(|(&a, z)| centroids[a].iter().zip(z).map(|(c, z)| c + z).collect())
        .collect();

    Ok(SyntheticDataset {
        manifest: SyntheticManifest {
            spec: spec.clone(),
            seed,
            entity_types: entity_names.iter().cloned().zip(entity_types.iter().copied()).collect(),
            relation_patterns,
            relation_pattern_ids,
        },
        entity_names,
        relation_names,
        background,
        train,
        valid,
        test,
        candidates,
        entity_relational,
        relation_relational,
        entity_semantic,
    })
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

impl SyntheticDataset {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tsv = String::new();
        for [h, r, t] in &self.background {
            tsv.push_str(&format!("{h}\t{r}\t{t}\n"));
        }
        write_file(dir, TRIPLES_FILE, &tsv)?;
        write_file(dir, TRAIN_TASKS_FILE, &to_json(&self.train))?;
        write_file(dir, VALID_TASKS_FILE, &to_json(&self.valid))?;
        write_file(dir, TEST_TASKS_FILE, &to_json(&self.test))?;
        write_file(dir, CANDIDATES_FILE, &to_json(&self.candidates))?;
        let rows = |names: &[String], rows: &[Vec<f64>]| {
            format_embedding_rows(names.iter().map(String::as_str).zip(rows.iter().map(Vec::as_slice)))
        };
        write_file(dir, ENTITY_RELATIONAL_FILE, &rows(&self.entity_names, &self.entity_relational))?;
        write_file(dir, RELATION_RELATIONAL_FILE, &rows(&self.relation_names, &self.relation_relational))?;
        write_file(dir, ENTITY_SEMANTIC_FILE, &rows(&self.entity_names, &self.entity_semantic))?;
        write_file(dir, SPEC_FILE, &to_json(&self.manifest))
    }
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<SyntheticManifest> {
    let path = dir.as_ref().join(SPEC_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path, source })
}

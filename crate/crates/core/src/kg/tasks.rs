use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::{EntityId, Kg, RelationId, Triple};
use crate::error::{Error, Result};

/// A query of a few-shot task: rank `tail` among `candidates` for `head`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Query {
    pub head: EntityId,
    pub tail: EntityId,
    /// Empty when no candidate list was supplied (training splits).
    pub candidates: Vec<EntityId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FewShotTask {
    pub relation: RelationId,
    pub support: Vec<Triple>,
    pub queries: Vec<Query>,
}

impl FewShotTask {
    /// Every triple of the task, support first.
    pub fn triples(&self) -> Vec<Triple> {
        self.support
            .iter()
            .copied()
            .chain(self.queries.iter().map(|q| Triple::new(q.head, self.relation, q.tail)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.support.len() + self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `{"true": [...], "candidates": [...]}` for one `head<TAB>relation` key.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateEntry {
    #[serde(rename = "true")]
    pub truths: Vec<String>,
    pub candidates: Vec<String>,
}

/// Candidate file contents keyed by `head<TAB>relation`.
pub type CandidateFile = BTreeMap<String, CandidateEntry>;

/// Task file contents: relation name to its `[head, relation, tail]` triples.
pub type TaskFile = BTreeMap<String, Vec<[String; 3]>>;

pub fn candidate_key(head: &str, relation: &str) -> String {
    format!("{head}\t{relation}")
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_candidates(path: impl AsRef<Path>) -> Result<CandidateFile> {
    read_json(path.as_ref())
}

/// Loads a task file. The first `k` triples of each relation form the
/// support set and the rest become queries. When `candidates` is given,
/// every query gets its candidate list with other true tails of the same
/// head filtered out.
pub fn load_tasks(
    path: impl AsRef<Path>,
    kg: &mut Kg,
    k: usize,
    candidates: Option<&CandidateFile>,
) -> Result<Vec<FewShotTask>> {
    let raw: TaskFile = read_json(path.as_ref())?;
    tasks_from_file(&raw, kg, k, candidates)
}

pub fn tasks_from_file(
    raw: &TaskFile,
    kg: &mut Kg,
    k: usize,
    candidates: Option<&CandidateFile>,
) -> Result<Vec<FewShotTask>> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let mut tasks = Vec::with_capacity(raw.len());
    for (rel_name, rows) in raw {
        let relation = kg.intern_task_relation(rel_name)?;
        let mut triples = Vec::with_capacity(rows.len());
        for [h, r, t] in rows {
            if r != rel_name {
                return Err(Error::UnknownName {
                    kind: "relation in task",
                    name: format!("{r} (listed under {rel_name})"),
                });
            }
            triples.push(Triple::new(kg.entity(h)?, relation, kg.entity(t)?));
        }
        if triples.len() < k + 1 {
            return Err(Error::TooFewTriples {
                relation: rel_name.clone(),
                available: triples.len(),
                required: k + 1,
            });
        }
        let mut tails_of: HashMap<EntityId, HashSet<EntityId>> = HashMap::new();
        for t in &triples {
            tails_of.entry(t.head).or_default().insert(t.tail);
        }
        let mut queries = Vec::with_capacity(triples.len() - k);
        for t in &triples[k..] {
            let list = match candidates {
                None => Vec::new(),
                Some(file) => query_candidates(kg, file, rel_name, t, &tails_of[&t.head])?,
            };
            queries.push(Query {
                head: t.head,
                tail: t.tail,
                candidates: list,
            });
        }
        kg.register_facts(triples.iter().copied());
        tasks.push(FewShotTask {
            relation,
            support: triples[..k].to_vec(),
            queries,
        });
    }
    Ok(tasks)
}

fn query_candidates(
    kg: &Kg,
    file: &CandidateFile,
    rel_name: &str,
    t: &Triple,
    known_tails: &HashSet<EntityId>,
) -> Result<Vec<EntityId>> {
    let head = kg.entity_name(t.head);
    let entry = file.get(&candidate_key(head, rel_name)).ok_or_else(|| Error::UnknownName {
        kind: "candidate key",
        name: candidate_key(head, rel_name),
    })?;
    let mut filtered: HashSet<EntityId> = known_tails.clone();
    for name in &entry.truths {
        filtered.insert(kg.entity(name)?);
    }
    filtered.remove(&t.tail);
    let mut list = Vec::with_capacity(entry.candidates.len());
    let mut seen = HashSet::new();
    for name in &entry.candidates {
        let c = kg.entity(name)?;
        if !filtered.contains(&c) && seen.insert(c) {
            list.push(c);
        }
    }
    if !seen.contains(&t.tail) {
        return Err(Error::MissingTrueTail {
            head: head.to_string(),
            relation: rel_name.to_string(),
            tail: kg.entity_name(t.tail).to_string(),
        });
    }
    Ok(list)
}

/// Fails if any relation occurs in more than one split.
pub fn check_disjoint(splits: &[&[FewShotTask]]) -> Result<()> {
    let mut seen = HashSet::new();
    for split in splits {
        let mut local = HashSet::new();
        for task in split.iter() {
            local.insert(task.relation);
        }
        for r in local {
            if !seen.insert(r) {
                return Err(Error::SplitOverlap(format!("{r}")));
            }
        }
    }
    Ok(())
}

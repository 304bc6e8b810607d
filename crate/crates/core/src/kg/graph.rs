use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub usize);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self { head, relation, tail }
    }
}

/// Interned name table; ids are assigned in order of first appearance.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), self.names.len() - 1);
        self.names.len() - 1
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Out,
    In,
}

/// One element of an entity's neighborhood: the relation and the entity on
/// the other end of a background triple.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Neighbor {
    pub relation: RelationId,
    pub entity: EntityId,
    pub direction: Direction,
}

/// Triple store over a background graph.
///
/// `triples` and the neighbor index cover the background graph only. The
/// membership set additionally holds any few-shot facts registered with
/// [`Kg::register_facts`], so negative sampling never produces a true triple.
#[derive(Clone, Debug, Default)]
pub struct Kg {
    entities: Vocab,
    relations: Vocab,
    triples: Vec<Triple>,
    facts: HashSet<Triple>,
    neighbors: Vec<Vec<Neighbor>>,
    background_relations: usize,
    duplicates: usize,
}

impl Kg {
    pub fn from_named_triples<'a>(triples: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>) -> Self {
        let mut kg = Kg::default();
        for (h, r, t) in triples {
            let triple = Triple::new(
                EntityId(kg.entities.intern(h)),
                RelationId(kg.relations.intern(r)),
                EntityId(kg.entities.intern(t)),
            );
            if kg.facts.insert(triple) {
                kg.triples.push(triple);
            } else {
                kg.duplicates += 1;
            }
        }
        kg.background_relations = kg.relations.len();
        kg
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    /// Number of duplicate lines dropped while loading.
    pub fn duplicates_dropped(&self) -> usize {
        self.duplicates
    }

    pub fn entity(&self, name: &str) -> Result<EntityId> {
        self.entities.get(name).map(EntityId).ok_or_else(|| Error::UnknownName {
            kind: "entity",
            name: name.to_string(),
        })
    }

    pub fn relation(&self, name: &str) -> Result<RelationId> {
        self.relations.get(name).map(RelationId).ok_or_else(|| Error::UnknownName {
            kind: "relation",
            name: name.to_string(),
        })
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        self.entities.name(id.0)
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        self.relations.name(id.0)
    }

    /// Relations of the background graph occupy ids `0..n`.
    pub fn num_background_relations(&self) -> usize {
        self.background_relations
    }

    /// True if the relation occurs in the background graph.
    pub fn is_background_relation(&self, r: RelationId) -> bool {
        r.0 < self.background_relations
    }

    /// Adds a relation name that does not occur in the background graph
    /// (a few-shot task relation).
    pub fn intern_task_relation(&mut self, name: &str) -> Result<RelationId> {
        if let Some(id) = self.relations.get(name) {
            if id < self.background_relations {
                return Err(Error::TaskRelationInBackground(name.to_string()));
            }
            return Ok(RelationId(id));
        }
        Ok(RelationId(self.relations.intern(name)))
    }

    pub fn register_facts(&mut self, facts: impl IntoIterator<Item = Triple>) {
        self.facts.extend(facts);
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.facts.contains(triple)
    }

    /// Builds the per-entity neighborhood from background triples. Lists
    /// longer than `cap` are replaced by a uniform random subsample of size
    /// `cap` (kept in triple order).
    pub fn build_neighbor_index(&mut self, cap: usize, rng: &mut impl Rng) {
        assert!(cap >= 1, "neighbor cap must be positive");
        let mut index = vec![Vec::new(); self.entities.len()];
        for t in &self.triples {
            index[t.head.0].push(Neighbor {
                relation: t.relation,
                entity: t.tail,
                direction: Direction::Out,
            });
            index[t.tail.0].push(Neighbor {
                relation: t.relation,
                entity: t.head,
                direction: Direction::In,
            });
        }
        for list in index.iter_mut() {
            if list.len() > cap {
                let mut keep = rand::seq::index::sample(rng, list.len(), cap).into_vec();
                keep.sort_unstable();
                *list = keep.into_iter().map(|i| list[i]).collect();
            }
        }
        self.neighbors = index;
    }

    pub fn has_neighbor_index(&self) -> bool {
        !self.neighbors.is_empty() || self.entities.is_empty()
    }

    /// Indexed neighborhood of `e`; empty before the index is built.
    pub fn neighbors(&self, e: EntityId) -> &[Neighbor] {
        self.neighbors.get(e.0).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Reads a `head<TAB>relation<TAB>tail` file.
pub fn load_triples(path: impl AsRef<Path>) -> Result<Kg> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 || parts.iter().any(|p| p.is_empty()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected head<TAB>relation<TAB>tail, got {line:?}"),
            });
        }
        rows.push((parts[0], parts[1], parts[2]));
    }
    let kg = Kg::from_named_triples(rows);
    if kg.duplicates > 0 {
        log::warn!("{}: dropped {} duplicate triples", path.display(), kg.duplicates);
    }
    Ok(kg)
}

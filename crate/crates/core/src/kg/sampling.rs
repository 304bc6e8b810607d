use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use super::graph::{EntityId, Kg, RelationId, Triple};
use super::tasks::FewShotTask;
use crate::error::{Error, Result};

const NEGATIVE_RETRIES: usize = 100;

/// Uniformly samples a tail `t'` with `(head, relation, t')` not a known fact.
pub fn negative_sample(kg: &Kg, head: EntityId, relation: RelationId, rng: &mut impl Rng) -> Result<EntityId> {
    let n = kg.num_entities();
    if n == 0 {
        return Err(Error::SaturatedRelation {
            head: head.0,
            relation: relation.0,
        });
    }
    for _ in 0..NEGATIVE_RETRIES {
        let t = EntityId(rng.random_range(0..n));
        if !kg.contains(&Triple::new(head, relation, t)) {
            return Ok(t);
        }
    }
    let valid: Vec<EntityId> = (0..n)
        .map(EntityId)
        .filter(|&t| !kg.contains(&Triple::new(head, relation, t)))
        .collect();
    valid.choose(rng).copied().ok_or(Error::SaturatedRelation {
        head: head.0,
        relation: relation.0,
    })
}

/// One few-shot episode with one corrupted tail per positive.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub relation: RelationId,
    pub support: Vec<Triple>,
    pub support_negatives: Vec<EntityId>,
    pub queries: Vec<Triple>,
    pub query_negatives: Vec<EntityId>,
    /// Per-query ranking candidates; empty for training episodes.
    pub candidates: Vec<Vec<EntityId>>,
    /// Seeds stochastic regularization inside the episode.
    pub rng_seed: u64,
}

/// Draws a disjoint support/query split from all triples of `task`.
pub fn sample_episode(
    kg: &Kg,
    task: &FewShotTask,
    k: usize,
    num_queries: usize,
    rng: &mut impl Rng,
) -> Result<Episode> {
    let mut triples = task.triples();
    if k == 0 || triples.len() < k + 1 {
        return Err(Error::TooFewTriples {
            relation: kg.relation_name(task.relation).to_string(),
            available: triples.len(),
            required: k + 1,
        });
    }
    triples.shuffle(rng);
    let nq = num_queries.max(1).min(triples.len() - k);
    let support = triples[..k].to_vec();
    let queries = triples[k..k + nq].to_vec();
    let support_negatives = negatives_for(kg, &support, rng)?;
    let query_negatives = negatives_for(kg, &queries, rng)?;
    Ok(Episode {
        relation: task.relation,
        support,
        support_negatives,
        queries,
        query_negatives,
        candidates: Vec::new(),
        rng_seed: rng.random(),
    })
}

/// Evaluation episode: the task's fixed support set and every query with its
/// candidate list.
pub fn evaluation_episode(kg: &Kg, task: &FewShotTask, rng: &mut impl Rng) -> Result<Episode> {
    let queries: Vec<Triple> = task
        .queries
        .iter()
        .map(|q| Triple::new(q.head, task.relation, q.tail))
        .collect();
    Ok(Episode {
        relation: task.relation,
        support_negatives: negatives_for(kg, &task.support, rng)?,
        support: task.support.clone(),
        query_negatives: negatives_for(kg, &queries, rng)?,
        queries,
        candidates: task.queries.iter().map(|q| q.candidates.clone()).collect(),
        rng_seed: rng.random(),
    })
}

fn negatives_for(kg: &Kg, triples: &[Triple], rng: &mut impl Rng) -> Result<Vec<EntityId>> {
    triples
        .iter()
        .map(|t| negative_sample(kg, t.head, t.relation, rng))
        .collect()
}

//! Candidate ranking and MRR / Hits@N.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::kg::{evaluation_episode, EntityId, FewShotTask, Kg};
use crate::model::{adapted_score, entity_representations, run_episode, EpisodeContext, Mode, ModelParams};

/// Seed offset for evaluation negatives.
const EVAL_STREAM: u64 = 0x6576_616c;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mrr: f64,
    pub hits1: f64,
    pub hits5: f64,
    pub hits10: f64,
    pub queries: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(flatten)]
    pub overall: Summary,
    pub per_relation: BTreeMap<String, Summary>,
}

impl std::ops::Deref for Metrics {
    type Target = Summary;

    fn deref(&self) -> &Summary {
        &self.overall
    }
}

/// Mean reciprocal rank and Hits@{1,5,10} of 1-based ranks.
pub fn summarize(ranks: &[usize]) -> Result<Summary> {
    if ranks.is_empty() {
        return Err(Error::Empty("ranks"));
    }
    if ranks.contains(&0) {
        return Err(Error::Config("ranks are 1-based".into()));
    }
    let n = ranks.len() as f64;
    let frac = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    Ok(Summary {
        mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
        hits1: frac(1),
        hits5: frac(5),
        hits10: frac(10),
        queries: ranks.len(),
    })
}

pub fn compute_metrics(ranks: &[usize]) -> Result<Metrics> {
    Ok(Metrics {
        overall: summarize(ranks)?,
        per_relation: BTreeMap::new(),
    })
}

/// Equal scores (including 0.0 and -0.0) tie and fall back to the id.
fn order(a: (f64, EntityId), b: (f64, EntityId)) -> Ordering {
    a.0.partial_cmp(&b.0).unwrap_or_else(|| a.0.total_cmp(&b.0)).then(a.1.cmp(&b.1))
}

/// 1-based rank of `truth` when candidates are sorted by ascending score,
/// ties broken by ascending entity id.
pub fn rank_candidates(scored: &[(EntityId, f64)], truth: EntityId) -> Result<usize> {
    let own = scored
        .iter()
        .find(|(e, _)| *e == truth)
        .map(|&(e, s)| (s, e))
        .ok_or_else(|| Error::UnknownName {
            kind: "true tail in candidates",
            name: truth.to_string(),
        })?;
    Ok(1 + scored.iter().filter(|&&(e, s)| order((s, e), own) == Ordering::Less).count())
}

/// Adapts to each task's support set and ranks every query's candidates.
/// Parameters are only read.
pub fn evaluate(params: &ModelParams, cfg: &Config, kg: &Kg, tasks: &[FewShotTask]) -> Result<Metrics> {
    if tasks.is_empty() {
        return Err(Error::Empty("evaluation tasks"));
    }
    let reps = entity_representations(params, kg)?;
    let mut all = Vec::new();
    let mut per_relation = BTreeMap::new();
    for (i, task) in tasks.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ EVAL_STREAM ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let episode = evaluation_episode(kg, task, &mut rng)?;
        let out = run_episode(params, cfg, kg, &episode, Mode::Eval, &EpisodeContext::default())?;
        let mut ranks = Vec::with_capacity(task.queries.len());
        for q in &task.queries {
            if q.candidates.is_empty() {
                return Err(Error::Empty("candidate list"));
            }
            let scored = q
                .candidates
                .iter()
                .map(|&c| adapted_score(params, &reps, &out.adapted, q.head, c).map(|s| (c, s)))
                .collect::<Result<Vec<_>>>()?;
            ranks.push(rank_candidates(&scored, q.tail)?);
        }
        all.extend_from_slice(&ranks);
        per_relation.insert(kg.relation_name(task.relation).to_string(), summarize(&ranks)?);
    }
    Ok(Metrics {
        overall: summarize(&all)?,
        per_relation,
    })
}

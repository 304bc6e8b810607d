//! Learnable state and the per-episode forward/backward pipeline.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::Config;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::fusion::{FusionNodes, FusionParams, MetaRepresentation};
use crate::kg::{EntityId, Episode, Kg};
use crate::neighbor::{encode_neighbors, enhance_entity, NeighborNodes, NeighborParams};
use crate::numerics::{KinkPattern, NodeId, Tape, Tensor};
use crate::scorer::{inner_update, margin_node, project, project_node, score_node, sgd_step};
use crate::semantics::{pool_tuning_node, retrieve_prompt, task_semantic_embedding, MspPool, SelfAttnNodes, SelfAttnParams};

/// Row-indexed parameter tables; gradients for these are kept sparse.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Table {
    EntityRelational,
    RelationRelational,
    EntitySemantic,
    EntityProjection,
    Pool,
}

impl Table {
    pub const ALL: [Table; 5] = [
        Table::EntityRelational,
        Table::RelationRelational,
        Table::EntitySemantic,
        Table::EntityProjection,
        Table::Pool,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Table::EntityRelational => "entity_relational",
            Table::RelationRelational => "relation_relational",
            Table::EntitySemantic => "entity_semantic",
            Table::EntityProjection => "entity_projection",
            Table::Pool => "pool",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// `[E, d]`
    pub entity_relational: Tensor,
    /// `[R_background, d]`
    pub relation_relational: Tensor,
    /// `[E, d]`
    pub entity_semantic: Tensor,
    /// `[E, d]`
    pub entity_projection: Tensor,
    /// `[d]`
    pub relation_projection: Tensor,
    pub neighbor: NeighborParams,
    pub self_attention: SelfAttnParams,
    pub pool: MspPool,
    pub fusion: FusionParams,
}

fn gaussian(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor {
    let normal = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| normal.sample(rng)).collect()).expect("sized")
}

impl ModelParams {
    /// Random parameters for `num_entities` entities and `num_relations`
    /// background relations.
    pub fn random(cfg: &Config, num_entities: usize, num_relations: usize, d: usize, rng: &mut impl Rng) -> Self {
        let std = 1.0 / (d as f64).sqrt();
        let dk = cfg.key_dim.unwrap_or(d);
        let mut p = Self {
            entity_relational: gaussian(&[num_entities.max(1), d], std, rng),
            relation_relational: gaussian(&[num_relations.max(1), d], std, rng),
            entity_semantic: gaussian(&[num_entities.max(1), d], std, rng),
            entity_projection: gaussian(&[num_entities.max(1), d], std, rng),
            relation_projection: gaussian(&[d], std, rng),
            neighbor: NeighborParams::random(d, dk, rng),
            self_attention: SelfAttnParams::random(2 * d, rng),
            pool: MspPool::random(cfg.pool_size, 2 * d, rng),
            fusion: FusionParams::random(d, rng),
        };
        p.apply_config(cfg);
        p
    }

    /// Random initialization with pretrained tables copied in where present.
    pub fn init(cfg: &Config, data: &Dataset, rng: &mut impl Rng) -> Result<Self> {
        let d = match (cfg.dim, data.embedding_dim()) {
            (Some(c), Some(f)) if c != f => return Err(Error::dims("configured dim vs embedding files", &[c], &[f])),
            (Some(c), _) => c,
            (None, Some(f)) => f,
            (None, None) => return Err(Error::Config("dim = auto needs embedding files in the dataset".into())),
        };
        let mut p = Self::random(cfg, data.kg.num_entities(), data.kg.num_background_relations(), d, rng);
        if let Some(t) = &data.entity_relational {
            p.entity_relational = t.matrix.clone();
        }
        if let Some(t) = &data.relation_relational {
            p.relation_relational = t.matrix.clone();
        }
        if let Some(t) = &data.entity_semantic {
            p.entity_semantic = t.matrix.clone();
        }
        p.validate()?;
        Ok(p)
    }

    /// Copies the non-tensor switches from `cfg`.
    pub fn apply_config(&mut self, cfg: &Config) {
        self.neighbor.query = cfg.neighbor_query;
        self.neighbor.combine = cfg.attention_combine;
        self.fusion.mode = cfg.fusion_prompt;
        for m in [&mut self.neighbor.g_n, &mut self.neighbor.f_n, &mut self.fusion.phi, &mut self.fusion.g_fp] {
            m.slope = cfg.leaky_slope;
        }
    }

    pub fn dim(&self) -> usize {
        self.relation_projection.len()
    }

    pub fn num_entities(&self) -> usize {
        self.entity_relational.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let e = self.entity_relational.rows();
        for (t, want) in [
            (Table::EntityRelational, [e, d]),
            (Table::EntitySemantic, [e, d]),
            (Table::EntityProjection, [e, d]),
            (Table::RelationRelational, [self.relation_relational.rows(), d]),
            (Table::Pool, [self.pool.size(), 2 * d]),
        ] {
            if self.table(t).shape() != want {
                return Err(Error::dims(t.name(), &want, self.table(t).shape()));
            }
        }
        self.neighbor.validate(d)?;
        self.self_attention.validate(2 * d)?;
        self.fusion.validate(d)
    }

    pub fn table(&self, t: Table) -> &Tensor {
        match t {
            Table::EntityRelational => &self.entity_relational,
            Table::RelationRelational => &self.relation_relational,
            Table::EntitySemantic => &self.entity_semantic,
            Table::EntityProjection => &self.entity_projection,
            Table::Pool => &self.pool.entries,
        }
    }

    pub fn table_mut(&mut self, t: Table) -> &mut Tensor {
        match t {
            Table::EntityRelational => &mut self.entity_relational,
            Table::RelationRelational => &mut self.relation_relational,
            Table::EntitySemantic => &mut self.entity_semantic,
            Table::EntityProjection => &mut self.entity_projection,
            Table::Pool => &mut self.pool.entries,
        }
    }

    /// Non-table tensors in a fixed order.
    pub fn dense(&self) -> Vec<(String, &Tensor)> {
        let mut v = self.neighbor.tensors();
        v.extend(self.self_attention.tensors());
        v.extend(self.fusion.tensors());
        v.push(("relation_projection".into(), &self.relation_projection));
        v
    }

    pub fn dense_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.neighbor.tensors_mut();
        v.extend(self.self_attention.tensors_mut());
        v.extend(self.fusion.tensors_mut());
        v.push(&mut self.relation_projection);
        v
    }

    /// Every tensor with its stable name: tables first, then dense tensors.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v: Vec<(String, &Tensor)> = Table::ALL.iter().map(|&t| (t.name().to_string(), self.table(t))).collect();
        v.extend(self.dense());
        v
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        if let Some(&t) = Table::ALL.iter().find(|t| t.name() == name) {
            return Some(self.table_mut(t));
        }
        let idx = self.dense().iter().position(|(n, _)| n == name)?;
        self.dense_mut().into_iter().nth(idx)
    }

    pub fn register_dense(&self, tape: &mut Tape) -> DenseNodes {
        DenseNodes {
            neighbor: self.neighbor.register(tape),
            self_attention: self.self_attention.register(tape),
            fusion: self.fusion.register(tape),
            relation_projection: tape.leaf(self.relation_projection.clone()),
        }
    }
}

/// Tape handles for every dense tensor, in [`ModelParams::dense`] order.
#[derive(Clone, Debug)]
pub struct DenseNodes {
    pub neighbor: NeighborNodes,
    pub self_attention: SelfAttnNodes,
    pub fusion: FusionNodes,
    pub relation_projection: NodeId,
}

impl DenseNodes {
    pub fn ids(&self) -> Vec<NodeId> {
        let mut v = self.neighbor.ids();
        v.extend(self.self_attention.ids());
        v.extend(self.fusion.ids());
        v.push(self.relation_projection);
        v
    }
}

/// Gradient of one scalar loss: dense tensors in [`ModelParams::dense`]
/// order plus the touched table rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub dense: Vec<Tensor>,
    pub rows: BTreeMap<(Table, usize), Vec<f64>>,
}

impl Gradients {
    pub fn zeros(params: &ModelParams) -> Self {
        Self {
            dense: params.dense().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect(),
            rows: BTreeMap::new(),
        }
    }

    /// `self += c * other`
    pub fn add_scaled(&mut self, other: &Gradients, c: f64) {
        for (a, b) in self.dense.iter_mut().zip(&other.dense) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += c * y;
            }
        }
        for (key, row) in &other.rows {
            let dst = self.rows.entry(*key).or_insert_with(|| vec![0.0; row.len()]);
            for (x, y) in dst.iter_mut().zip(row) {
                *x += c * y;
            }
        }
    }

    /// Dense gradient of one whole table.
    pub fn table_dense(&self, params: &ModelParams, t: Table) -> Tensor {
        let mut out = Tensor::zeros(params.table(t).shape());
        for (&(tt, r), row) in &self.rows {
            if tt == t {
                out.row_mut(r).copy_from_slice(row);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch-level inputs to one episode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeContext {
    /// Pool index already retrieved for this task; recomputed when `None`.
    pub prompt_index: Option<usize>,
    /// Pool indices used as negative prompts in the pool-tuning loss.
    pub negatives: Vec<usize>,
    /// Inner-loop gradients to use instead of recomputing them.
    pub frozen_inner: Option<Vec<Tensor>>,
}

/// Episode-local copies after the inner update.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedState {
    pub mr: Tensor,
    pub relation_projection: Tensor,
    /// Updated projection vectors of support entities; others are unchanged.
    pub entity_projection: HashMap<EntityId, Tensor>,
}

impl AdaptedState {
    pub fn projection<'a>(&'a self, params: &'a ModelParams, e: EntityId) -> &'a [f64] {
        match self.entity_projection.get(&e) {
            Some(t) => t.data(),
            None => params.entity_projection.row(e.0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeOutput {
    pub loss_support: f64,
    /// Zero in eval mode.
    pub loss_query: f64,
    pub loss_pt: f64,
    pub total: f64,
    pub meta: MetaRepresentation,
    pub adapted: AdaptedState,
    pub inner_grads: Vec<Tensor>,
    pub gradients: Option<Gradients>,
    pub kink: KinkPattern,
}

/// One episode's tape with leaves created on first use.
struct Graph<'a> {
    params: &'a ModelParams,
    kg: &'a Kg,
    tape: Tape,
    dense: DenseNodes,
    rows: BTreeMap<(Table, usize), NodeId>,
    enhanced: HashMap<EntityId, NodeId>,
    combined: HashMap<EntityId, NodeId>,
}

impl<'a> Graph<'a> {
    fn new(params: &'a ModelParams, kg: &'a Kg) -> Self {
        let mut tape = Tape::new();
        let dense = params.register_dense(&mut tape);
        Self {
            params,
            kg,
            tape,
            dense,
            rows: BTreeMap::new(),
            enhanced: HashMap::new(),
            combined: HashMap::new(),
        }
    }

    fn row(&mut self, t: Table, i: usize) -> Result<NodeId> {
        if let Some(&n) = self.rows.get(&(t, i)) {
            return Ok(n);
        }
        let table = self.params.table(t);
        if i >= table.rows() {
            return Err(Error::dims(t.name(), &[table.rows()], &[i]));
        }
        let n = self.tape.leaf(Tensor::vector(table.row(i).to_vec()));
        self.rows.insert((t, i), n);
        Ok(n)
    }

    fn enhanced(&mut self, e: EntityId) -> Result<NodeId> {
        if let Some(&n) = self.enhanced.get(&e) {
            return Ok(n);
        }
        let target = self.row(Table::EntityRelational, e.0)?;
        let mut pairs = Vec::new();
        for nb in self.kg.neighbors(e) {
            pairs.push((self.row(Table::RelationRelational, nb.relation.0)?, self.row(Table::EntityRelational, nb.entity.0)?));
        }
        let nodes = self.dense.neighbor.clone();
        let out = nodes.encode(&mut self.tape, target, &pairs)?;
        self.enhanced.insert(e, out);
        Ok(out)
    }

    fn combined(&mut self, e: EntityId) -> Result<NodeId> {
        if let Some(&n) = self.combined.get(&e) {
            return Ok(n);
        }
        let r = self.enhanced(e)?;
        let s = self.row(Table::EntitySemantic, e.0)?;
        let out = self.tape.add(r, s)?;
        self.combined.insert(e, out);
        Ok(out)
    }

    fn score(&mut self, h: EntityId, t: EntityId, mr: NodeId, r_p: NodeId, proj: &HashMap<EntityId, NodeId>) -> Result<NodeId> {
        let side = |g: &mut Self, e: EntityId| -> Result<NodeId> {
            let x = g.combined(e)?;
            let p = match proj.get(&e) {
                Some(&p) => p,
                None => g.row(Table::EntityProjection, e.0)?,
            };
            project_node(&mut g.tape, x, p, r_p)
        };
        let hp = side(self, h)?;
        let tp = side(self, t)?;
        score_node(&mut self.tape, hp, mr, tp)
    }

    fn hinge(
        &mut self,
        triples: &[crate::kg::Triple],
        negatives: &[EntityId],
        mr: NodeId,
        r_p: NodeId,
        proj: &HashMap<EntityId, NodeId>,
        margin: f64,
    ) -> Result<NodeId> {
        let mut pos = Vec::with_capacity(triples.len());
        let mut neg = Vec::with_capacity(triples.len());
        for (tr, &n) in triples.iter().zip(negatives) {
            pos.push(self.score(tr.head, tr.tail, mr, r_p, proj)?);
            neg.push(self.score(tr.head, n, mr, r_p, proj)?);
        }
        margin_node(&mut self.tape, &pos, &neg, margin)
    }
}

/// Raw support pair vectors `[h_s; t_s]`.
pub fn semantic_pairs(params: &ModelParams, episode: &Episode) -> Vec<Tensor> {
    episode
        .support
        .iter()
        .map(|t| {
            let mut v = params.entity_semantic.row(t.head.0).to_vec();
            v.extend_from_slice(params.entity_semantic.row(t.tail.0));
            Tensor::vector(v)
        })
        .collect()
}

/// First-pass retrieval: the pool index this episode's task would select.
pub fn retrieve_for_episode(params: &ModelParams, episode: &Episode) -> Result<usize> {
    let s_r = task_semantic_embedding(&semantic_pairs(params, episode), &params.self_attention)?;
    Ok(retrieve_prompt(&params.pool, &s_r)?.0)
}

fn dropout_mask(d: usize, rate: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 / (1.0 - rate);
    Tensor::vector((0..d).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect())
}

/// Runs the full pipeline on one episode: neighbor encoding, task
/// embeddings, retrieval, fusion, support loss, inner update, and in train
/// mode the query and pool-tuning losses with gradients for every parameter.
pub fn run_episode(
    params: &ModelParams,
    cfg: &Config,
    kg: &Kg,
    episode: &Episode,
    mode: Mode,
    ctx: &EpisodeContext,
) -> Result<EpisodeOutput> {
    if episode.support.is_empty() {
        return Err(Error::Empty("support set"));
    }
    let loss_cfg = cfg.loss();
    let d = params.dim();
    let mut g = Graph::new(params, kg);

    let mut rel_pairs = Vec::with_capacity(episode.support.len());
    for t in &episode.support {
        let h = g.enhanced(t.head)?;
        let tl = g.enhanced(t.tail)?;
        rel_pairs.push(g.tape.concat(&[h, tl])?);
    }
    let rel_stack = g.tape.stack(&rel_pairs)?;
    let sa = g.dense.self_attention;
    let r_r = sa.forward(&mut g.tape, rel_stack)?;

    let ab = cfg.ablate;
    let mut prompt_index = None;
    let mut sem_pairs = Vec::new();
    let (p_r, fp_r) = if ab.semantic {
        (g.tape.leaf(Tensor::zeros(&[2 * d])), g.tape.leaf(Tensor::zeros(&[d])))
    } else {
        for t in &episode.support {
            let h = g.row(Table::EntitySemantic, t.head.0)?;
            let tl = g.row(Table::EntitySemantic, t.tail.0)?;
            sem_pairs.push(g.tape.concat(&[h, tl])?);
        }
        let sem_stack = g.tape.stack(&sem_pairs)?;
        let s_r = sa.forward(&mut g.tape, sem_stack)?;
        let p_r = if ab.pool {
            s_r
        } else {
            let idx = match ctx.prompt_index {
                Some(i) => i,
                None => retrieve_prompt(&params.pool, g.tape.value(s_r))?.0,
            };
            g.tape.record_choice(idx);
            prompt_index = Some(idx);
            g.row(Table::Pool, idx)?
        };
        let fp_r = if ab.fusion_prompt {
            g.tape.leaf(Tensor::zeros(&[d]))
        } else {
            let f = g.dense.fusion.clone();
            f.fusion_prompt(&mut g.tape, s_r, r_r)?
        };
        (p_r, fp_r)
    };
    let fusion = g.dense.fusion.clone();
    let mut mr = fusion.fuse(&mut g.tape, r_r, p_r, fp_r)?;
    if mode == Mode::Train && cfg.dropout > 0.0 {
        let mask = g.tape.leaf(dropout_mask(d, cfg.dropout, episode.rng_seed));
        mr = g.tape.mul(mr, mask)?;
    }
    let mr_value = g.tape.value(mr).clone();

    // Support loss and the inner step on mr, r_p and support projections.
    let r_p = g.dense.relation_projection;
    let base_proj = HashMap::new();
    let loss_s = g.hinge(&episode.support, &episode.support_negatives, mr, r_p, &base_proj, loss_cfg.margin)?;
    let support_entities: BTreeSet<EntityId> = episode
        .support
        .iter()
        .flat_map(|t| [t.head, t.tail])
        .chain(episode.support_negatives.iter().copied())
        .collect();
    let mut inner_nodes = vec![mr, r_p];
    for &e in &support_entities {
        inner_nodes.push(g.row(Table::EntityProjection, e.0)?);
    }
    let (updated, inner_grads) = match &ctx.frozen_inner {
        Some(frozen) => {
            if frozen.len() != inner_nodes.len() {
                return Err(Error::dims("frozen inner gradients", &[inner_nodes.len()], &[frozen.len()]));
            }
            (sgd_step(&mut g.tape, &inner_nodes, frozen, loss_cfg.inner_lr)?, frozen.clone())
        }
        None => inner_update(&mut g.tape, loss_s, &inner_nodes, loss_cfg.inner_lr)?,
    };
    let (mr_a, r_p_a) = (updated[0], updated[1]);
    let adapted_proj: HashMap<EntityId, NodeId> = support_entities.iter().copied().zip(updated[2..].iter().copied()).collect();
    let adapted = AdaptedState {
        mr: g.tape.value(mr_a).clone(),
        relation_projection: g.tape.value(r_p_a).clone(),
        entity_projection: adapted_proj.iter().map(|(&e, &n)| (e, g.tape.value(n).clone())).collect(),
    };
    let loss_support = g.tape.value(loss_s).item();

    let meta = MetaRepresentation {
        mr: mr_value,
        relation: episode.relation,
        prompt_index,
    };
    if mode == Mode::Eval {
        return Ok(EpisodeOutput {
            loss_support,
            loss_query: 0.0,
            loss_pt: 0.0,
            total: 0.0,
            meta,
            adapted,
            inner_grads,
            gradients: None,
            kink: g.tape.kink_pattern(),
        });
    }

    let loss_q = g.hinge(&episode.queries, &episode.query_negatives, mr_a, r_p_a, &adapted_proj, loss_cfg.margin)?;
    let mut total = loss_q;
    let mut loss_pt = 0.0;
    if loss_cfg.lambda > 0.0 && prompt_index.is_some() {
        let mut negs = Vec::with_capacity(ctx.negatives.len());
        for &j in &ctx.negatives {
            negs.push(g.row(Table::Pool, j)?);
        }
        let pt = pool_tuning_node(&mut g.tape, p_r, &sem_pairs, &negs, cfg.temperature)?;
        loss_pt = g.tape.value(pt).item();
        let weighted = g.tape.scale(pt, loss_cfg.lambda);
        total = g.tape.add(loss_q, weighted)?;
    }

    let dense_ids = g.dense.ids();
    let row_keys: Vec<(Table, usize)> = g.rows.keys().copied().collect();
    let mut wrt = dense_ids.clone();
    wrt.extend(row_keys.iter().map(|k| g.rows[k]));
    let mut grads = g.tape.gradients(total, &wrt)?;
    let row_grads = grads.split_off(dense_ids.len());
    let gradients = Gradients {
        dense: grads,
        rows: row_keys.into_iter().zip(row_grads.into_iter().map(Tensor::into_data)).collect(),
    };
    Ok(EpisodeOutput {
        loss_support,
        loss_query: g.tape.value(loss_q).item(),
        loss_pt,
        total: g.tape.value(total).item(),
        meta,
        adapted,
        inner_grads,
        gradients: Some(gradients),
        kink: g.tape.kink_pattern(),
    })
}

/// Combined representation `e_r' + e_s` of one entity, untaped.
pub fn entity_representation(params: &ModelParams, kg: &Kg, e: EntityId) -> Result<Tensor> {
    let own = Tensor::vector(params.entity_relational.row(e.0).to_vec());
    let batch = encode_neighbors(kg, e, &params.relation_relational, &params.entity_relational);
    let r = enhance_entity(&own, &batch, &params.neighbor)?;
    r.zip_map(&Tensor::vector(params.entity_semantic.row(e.0).to_vec()), |a, b| a + b)
}

pub fn entity_representations(params: &ModelParams, kg: &Kg) -> Result<Vec<Tensor>> {
    (0..params.num_entities()).map(|i| entity_representation(params, kg, EntityId(i))).collect()
}

/// Support hinge loss under an adapted state.
pub fn adapted_support_loss(params: &ModelParams, cfg: &Config, kg: &Kg, episode: &Episode, adapted: &AdaptedState) -> Result<f64> {
    let mut reps: Vec<Option<Tensor>> = vec![None; params.num_entities()];
    let mut rep = |e: EntityId| -> Result<()> {
        if reps[e.0].is_none() {
            reps[e.0] = Some(entity_representation(params, kg, e)?);
        }
        Ok(())
    };
    for (t, &n) in episode.support.iter().zip(&episode.support_negatives) {
        rep(t.head)?;
        rep(t.tail)?;
        rep(n)?;
    }
    let dense: Vec<Tensor> = reps.into_iter().map(|r| r.unwrap_or_else(|| Tensor::zeros(&[0]))).collect();
    let margin = cfg.loss().margin;
    let mut loss = 0.0;
    for (t, &n) in episode.support.iter().zip(&episode.support_negatives) {
        let pos = adapted_score(params, &dense, adapted, t.head, t.tail)?;
        let neg = adapted_score(params, &dense, adapted, t.head, n)?;
        loss += (pos + margin - neg).max(0.0);
    }
    Ok(loss)
}

/// Outcome of one inner step with halving backtracking.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnerDescent {
    pub before: f64,
    pub after: f64,
    /// Step size finally taken.
    pub lr: f64,
    pub halvings: u32,
}

/// Takes the inner step at `cfg`'s inner rate, halving it until the support
/// loss does not increase or `max_halvings` is reached.
pub fn inner_descent(params: &ModelParams, cfg: &Config, kg: &Kg, episode: &Episode, max_halvings: u32) -> Result<InnerDescent> {
    let mut cfg = cfg.clone();
    let mut lr = cfg.inner_lr();
    let mut halvings = 0;
    loop {
        cfg.inner_lr = Some(lr);
        let out = run_episode(params, &cfg, kg, episode, Mode::Eval, &EpisodeContext::default())?;
        let after = adapted_support_loss(params, &cfg, kg, episode, &out.adapted)?;
        if after <= out.loss_support || halvings == max_halvings {
            return Ok(InnerDescent {
                before: out.loss_support,
                after,
                lr,
                halvings,
            });
        }
        lr *= 0.5;
        halvings += 1;
    }
}

/// Score of `(h, t)` under the adapted state, given precomputed entity
/// representations.
pub fn adapted_score(params: &ModelParams, reps: &[Tensor], adapted: &AdaptedState, h: EntityId, t: EntityId) -> Result<f64> {
    let rp = &adapted.relation_projection;
    let hp = project(&reps[h.0], &Tensor::vector(adapted.projection(params, h).to_vec()), rp)?;
    let tp = project(&reps[t.0], &Tensor::vector(adapted.projection(params, t).to_vec()), rp)?;
    crate::scorer::score_triple(&hp, &adapted.mr, &tp)
}

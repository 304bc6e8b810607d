//! Attentive aggregation of an entity's one-hop neighborhood.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, Kg};
use crate::numerics::{MlpNodes, MlpParams, NodeId, Tape, Tensor};

/// Which embedding is projected by `W_q` to form the attention query.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeighborQuery {
    /// The target entity being encoded.
    #[default]
    Target,
    /// The neighbor's own entity embedding.
    Neighbor,
}

/// How the projected query and key are turned into an attention logit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionCombine {
    /// `g_n([q; k])`, a single layer with LeakyReLU.
    #[default]
    Concat,
    /// `q·k / sqrt(d_k)`; `g_n` is unused.
    Dot,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborParams {
    /// `[d, d_k]`
    pub w_q: Tensor,
    /// `[2d, d_k]`
    pub w_k: Tensor,
    /// `2 d_k -> 1`, LeakyReLU on the output.
    pub g_n: MlpParams,
    /// `2d -> d -> d`
    pub f_n: MlpParams,
    pub query: NeighborQuery,
    pub combine: AttentionCombine,
}

impl NeighborParams {
    pub fn random(d: usize, d_k: usize, rng: &mut impl Rng) -> Self {
        Self {
            w_q: crate::numerics::Linear::random(d, d_k, rng).weight,
            w_k: crate::numerics::Linear::random(2 * d, d_k, rng).weight,
            g_n: MlpParams::random(&[2 * d_k, 1], true, rng),
            f_n: MlpParams::random(&[2 * d, d, d], false, rng),
            query: NeighborQuery::default(),
            combine: AttentionCombine::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn key_dim(&self) -> usize {
        self.w_q.cols()
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let dk = self.key_dim();
        let check = |ctx, want: &[usize], got: &[usize]| {
            if want != got {
                Err(Error::dims(ctx, want, got))
            } else {
                Ok(())
            }
        };
        check("W_q", &[d, dk], self.w_q.shape())?;
        check("W_k", &[2 * d, dk], self.w_k.shape())?;
        check("g_n", &[2 * dk, 1], &[self.g_n.input_dim(), self.g_n.output_dim()])?;
        check("f_n", &[2 * d, d], &[self.f_n.input_dim(), self.f_n.output_dim()])?;
        if self.g_n.layers.len() != 1 {
            return Err(Error::Config("g_n must be a single layer".into()));
        }
        self.g_n.validate()?;
        self.f_n.validate()
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("neighbor.w_q".to_string(), &self.w_q), ("neighbor.w_k".to_string(), &self.w_k)];
        out.extend(mlp_named("neighbor.g_n", &self.g_n));
        out.extend(mlp_named("neighbor.f_n", &self.f_n));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.w_q, &mut self.w_k];
        out.extend(self.g_n.tensors_mut());
        out.extend(self.f_n.tensors_mut());
        out
    }

    pub fn register(&self, tape: &mut Tape) -> NeighborNodes {
        NeighborNodes {
            w_q: tape.leaf(self.w_q.clone()),
            w_k: tape.leaf(self.w_k.clone()),
            g_n: self.g_n.register(tape),
            f_n: self.f_n.register(tape),
            query: self.query,
            combine: self.combine,
        }
    }
}

pub(crate) fn mlp_named<'a>(prefix: &str, mlp: &'a MlpParams) -> Vec<(String, &'a Tensor)> {
    mlp.layers
        .iter()
        .enumerate()
        .flat_map(|(i, l)| [(format!("{prefix}.{i}.w"), &l.weight), (format!("{prefix}.{i}.b"), &l.bias)])
        .collect()
}

/// Relational embeddings of an entity's indexed neighbors, in index order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NeighborBatch {
    pub relations: Vec<Tensor>,
    pub entities: Vec<Tensor>,
}

impl NeighborBatch {
    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    /// `[r_i; e_i]`
    pub fn tuple(&self, i: usize) -> Tensor {
        let mut v = self.relations[i].data().to_vec();
        v.extend_from_slice(self.entities[i].data());
        Tensor::vector(v)
    }
}

/// Looks up `[r_i; e_i]` for every indexed neighbor of `e`.
pub fn encode_neighbors(kg: &Kg, e: EntityId, relation_table: &Tensor, entity_table: &Tensor) -> NeighborBatch {
    let mut batch = NeighborBatch::default();
    for n in kg.neighbors(e) {
        batch.relations.push(Tensor::vector(relation_table.row(n.relation.0).to_vec()));
        batch.entities.push(Tensor::vector(entity_table.row(n.entity.0).to_vec()));
    }
    batch
}

/// Tape handles for [`NeighborParams`].
#[derive(Clone, Debug)]
pub struct NeighborNodes {
    pub w_q: NodeId,
    pub w_k: NodeId,
    pub g_n: MlpNodes,
    pub f_n: MlpNodes,
    pub query: NeighborQuery,
    pub combine: AttentionCombine,
}

impl NeighborNodes {
    pub fn ids(&self) -> Vec<NodeId> {
        let mut v = vec![self.w_q, self.w_k];
        v.extend(self.g_n.ids());
        v.extend(self.f_n.ids());
        v
    }

    /// Attention weights `[n]` over the neighbor tuples `[n, 2d]`;
    /// `entities` is `[n, d]` and only read in neighbor-query mode.
    pub fn attention(&self, tape: &mut Tape, target: NodeId, tuples: NodeId, entities: NodeId) -> Result<NodeId> {
        let n = tape.value(tuples).rows();
        let dk = tape.value(self.w_q).cols();
        let keys = tape.matmul(tuples, self.w_k)?;
        let logits = match (self.combine, self.query) {
            (AttentionCombine::Concat, query) => {
                let (w, b) = self.g_n.layers[0];
                let wq = tape.slice_rows(w, 0, dk)?;
                let wk = tape.slice_rows(w, dk, 2 * dk)?;
                let sk = tape.matmul(keys, wk)?;
                let raw = match query {
                    NeighborQuery::Target => {
                        let q = tape.matmul(target, self.w_q)?;
                        let sq = tape.matmul(q, wq)?;
                        let sqb = tape.add(sq, b)?;
                        tape.add_row(sk, sqb)?
                    }
                    NeighborQuery::Neighbor => {
                        let q = tape.matmul(entities, self.w_q)?;
                        let sq = tape.matmul(q, wq)?;
                        let s = tape.add(sk, sq)?;
                        tape.add_row(s, b)?
                    }
                };
                let flat = tape.reshape(raw, &[n])?;
                if self.g_n.output_activation {
                    tape.leaky_relu(flat, self.g_n.slope)
                } else {
                    flat
                }
            }
            (AttentionCombine::Dot, NeighborQuery::Target) => {
                let q = tape.matmul(target, self.w_q)?;
                let qc = tape.reshape(q, &[dk, 1])?;
                let s = tape.matmul(keys, qc)?;
                let flat = tape.reshape(s, &[n])?;
                tape.scale(flat, 1.0 / (dk as f64).sqrt())
            }
            (AttentionCombine::Dot, NeighborQuery::Neighbor) => {
                let q = tape.matmul(entities, self.w_q)?;
                let prod = tape.mul(q, keys)?;
                let ones = tape.leaf(Tensor::new(vec![dk, 1], vec![1.0; dk])?);
                let s = tape.matmul(prod, ones)?;
                let flat = tape.reshape(s, &[n])?;
                tape.scale(flat, 1.0 / (dk as f64).sqrt())
            }
        };
        tape.softmax(logits)
    }

    /// `f_n(Σ a_i n_i) + target`
    pub fn aggregate(&self, tape: &mut Tape, target: NodeId, tuples: NodeId, weights: NodeId) -> Result<NodeId> {
        let pooled = tape.matmul(weights, tuples)?;
        let f = self.f_n.forward(tape, pooled)?;
        tape.add(f, target)
    }

    /// Full encoder from per-neighbor `(relation, entity)` row nodes. An
    /// empty neighborhood returns `target` itself.
    pub fn encode(&self, tape: &mut Tape, target: NodeId, neighbors: &[(NodeId, NodeId)]) -> Result<NodeId> {
        if neighbors.is_empty() {
            return Ok(target);
        }
        let mut tuples = Vec::with_capacity(neighbors.len());
        for &(r, e) in neighbors {
            tuples.push(tape.concat(&[r, e])?);
        }
        let tuples = tape.stack(&tuples)?;
        let entities = match self.query {
            NeighborQuery::Neighbor => {
                let rows: Vec<NodeId> = neighbors.iter().map(|&(_, e)| e).collect();
                tape.stack(&rows)?
            }
            NeighborQuery::Target => tuples,
        };
        let weights = self.attention(tape, target, tuples, entities)?;
        self.aggregate(tape, target, tuples, weights)
    }
}

fn batch_nodes(tape: &mut Tape, batch: &NeighborBatch) -> Result<(NodeId, NodeId)> {
    let tuples: Vec<Tensor> = (0..batch.len()).map(|i| batch.tuple(i)).collect();
    let rows: Vec<&[f64]> = tuples.iter().map(Tensor::data).collect();
    let t = tape.leaf(Tensor::from_rows(&rows)?);
    let ents: Vec<&[f64]> = batch.entities.iter().map(Tensor::data).collect();
    let e = tape.leaf(Tensor::from_rows(&ents)?);
    Ok((t, e))
}

/// Softmax-normalized attention of `e_emb` over a non-empty batch.
pub fn attention_weights(e_emb: &Tensor, batch: &NeighborBatch, params: &NeighborParams) -> Result<Tensor> {
    if batch.is_empty() {
        return Err(Error::NoNeighbors);
    }
    let mut tape = Tape::new();
    let nodes = params.register(&mut tape);
    let target = tape.leaf(e_emb.clone());
    let (tuples, entities) = batch_nodes(&mut tape, batch)?;
    let w = nodes.attention(&mut tape, target, tuples, entities)?;
    Ok(tape.value(w).clone())
}

/// `f_n(Σ a_i n_i) + e_emb`, or `e_emb` for an empty batch.
pub fn aggregate(e_emb: &Tensor, batch: &NeighborBatch, weights: &Tensor, params: &NeighborParams) -> Result<Tensor> {
    if batch.is_empty() {
        return Ok(e_emb.clone());
    }
    if weights.len() != batch.len() {
        return Err(Error::dims("attention weights", &[batch.len()], weights.shape()));
    }
    let mut tape = Tape::new();
    let nodes = params.register(&mut tape);
    let target = tape.leaf(e_emb.clone());
    let (tuples, _) = batch_nodes(&mut tape, batch)?;
    let w = tape.leaf(weights.clone());
    let out = nodes.aggregate(&mut tape, target, tuples, w)?;
    Ok(tape.value(out).clone())
}

/// Neighbor-enhanced relational embedding of one entity, untaped.
pub fn enhance_entity(e_emb: &Tensor, batch: &NeighborBatch, params: &NeighborParams) -> Result<Tensor> {
    if batch.is_empty() {
        return Ok(e_emb.clone());
    }
    let w = attention_weights(e_emb, batch, params)?;
    aggregate(e_emb, batch, &w, params)
}

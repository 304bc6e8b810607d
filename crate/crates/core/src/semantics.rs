//! Task-semantic embeddings, the meta-semantic prompt pool, and the
//! contrastive pool-tuning loss.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::ops::cosine_slice;
use crate::numerics::{NodeId, Tape, Tensor};

/// Single-head scaled dot-product self-attention over pair vectors, followed
/// by mean pooling. All projections are square.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfAttnParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
}

impl SelfAttnParams {
    pub fn random(dim: usize, rng: &mut impl Rng) -> Self {
        let mut m = || crate::numerics::Linear::random(dim, dim, rng).weight;
        Self {
            w_q: m(),
            w_k: m(),
            w_v: m(),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_v.rows()
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        for (ctx, w) in [("f_sa W_q", &self.w_q), ("f_sa W_k", &self.w_k), ("f_sa W_v", &self.w_v)] {
            if w.shape() != [dim, dim] {
                return Err(Error::dims(ctx, &[dim, dim], w.shape()));
            }
        }
        Ok(())
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("self_attention.w_q".into(), &self.w_q),
            ("self_attention.w_k".into(), &self.w_k),
            ("self_attention.w_v".into(), &self.w_v),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w_q, &mut self.w_k, &mut self.w_v]
    }

    pub fn register(&self, tape: &mut Tape) -> SelfAttnNodes {
        SelfAttnNodes {
            w_q: tape.leaf(self.w_q.clone()),
            w_k: tape.leaf(self.w_k.clone()),
            w_v: tape.leaf(self.w_v.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SelfAttnNodes {
    pub w_q: NodeId,
    pub w_k: NodeId,
    pub w_v: NodeId,
}

impl SelfAttnNodes {
    pub fn ids(&self) -> Vec<NodeId> {
        vec![self.w_q, self.w_k, self.w_v]
    }

    /// `mean_rows(softmax(X W_q (X W_k)ᵀ / sqrt(D)) X W_v)` for `X: [K, D]`.
    pub fn forward(&self, tape: &mut Tape, pairs: NodeId) -> Result<NodeId> {
        let dim = tape.value(self.w_v).rows();
        let q = tape.matmul(pairs, self.w_q)?;
        let k = tape.matmul(pairs, self.w_k)?;
        let v = tape.matmul(pairs, self.w_v)?;
        let kt = tape.transpose(k)?;
        let s = tape.matmul(q, kt)?;
        let s = tape.scale(s, 1.0 / (dim as f64).sqrt());
        let a = tape.softmax(s)?;
        let y = tape.matmul(a, v)?;
        Ok(tape.mean_rows(y))
    }
}

fn stack_pairs(pairs: &[Tensor]) -> Result<Tensor> {
    if pairs.is_empty() {
        return Err(Error::Empty("support pairs"));
    }
    let rows: Vec<&[f64]> = pairs.iter().map(Tensor::data).collect();
    Tensor::from_rows(&rows)
}

/// Aggregates support pair vectors `[h; t]` into one task vector.
pub fn task_semantic_embedding(pairs: &[Tensor], params: &SelfAttnParams) -> Result<Tensor> {
    let x = stack_pairs(pairs)?;
    if x.cols() != params.dim() {
        return Err(Error::dims("support pair", &[params.dim()], &[x.cols()]));
    }
    let mut tape = Tape::new();
    let nodes = params.register(&mut tape);
    let xi = tape.leaf(x);
    let out = nodes.forward(&mut tape, xi)?;
    Ok(tape.value(out).clone())
}

/// Learnable bank of `M` prompt vectors of width `D_s`.
#[derive(Clone, Debug, PartialEq)]
pub struct MspPool {
    pub entries: Tensor,
}

impl MspPool {
    /// Entries drawn from `N(0, 1/sqrt(D_s))`; never the zero vector.
    pub fn random(size: usize, dim: usize, rng: &mut impl Rng) -> Self {
        assert!(size >= 1 && dim >= 1);
        let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("positive std");
        let mut data = Vec::with_capacity(size * dim);
        for _ in 0..size {
            loop {
                let row: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
                if row.iter().any(|&v| v != 0.0) {
                    data.extend(row);
                    break;
                }
            }
        }
        Self {
            entries: Tensor::matrix(size, dim, data).expect("sized"),
        }
    }

    pub fn size(&self) -> usize {
        self.entries.rows()
    }

    pub fn dim(&self) -> usize {
        self.entries.cols()
    }

    pub fn entry(&self, i: usize) -> Tensor {
        Tensor::vector(self.entries.row(i).to_vec())
    }

    /// Plain gradient step `P -= lr * grad`.
    pub fn apply_gradient(&mut self, grad: &Tensor, lr: f64) -> Result<()> {
        if grad.shape() != self.entries.shape() {
            return Err(Error::dims("pool gradient", self.entries.shape(), grad.shape()));
        }
        for (p, g) in self.entries.data_mut().iter_mut().zip(grad.data()) {
            *p -= lr * g;
        }
        Ok(())
    }
}

/// Cosine similarity of `query` to every pool entry.
pub fn retrieval_scores(pool: &MspPool, query: &Tensor) -> Result<Vec<f64>> {
    if query.len() != pool.dim() {
        return Err(Error::dims("prompt query", &[pool.dim()], query.shape()));
    }
    if query.norm() == 0.0 {
        return Err(Error::ZeroVector("task semantic embedding"));
    }
    (0..pool.size()).map(|j| cosine_slice(query.data(), pool.entries.row(j))).collect()
}

/// Index and copy of the pool entry most cosine-similar to `s_r`; ties go to
/// the lowest index.
pub fn retrieve_prompt(pool: &MspPool, s_r: &Tensor) -> Result<(usize, Tensor)> {
    let scores = retrieval_scores(pool, s_r)?;
    let mut best = 0;
    for (j, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = j;
        }
    }
    Ok((best, pool.entry(best)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoolTuningConfig {
    pub temperature: f64,
    pub num_negatives: usize,
    pub weight: f64,
}

impl Default for PoolTuningConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            num_negatives: 1024,
            weight: 0.05,
        }
    }
}

impl PoolTuningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if !(self.weight >= 0.0) {
            return Err(Error::Config("pool-tuning weight must be non-negative".into()));
        }
        Ok(())
    }
}

/// InfoNCE over the support pairs. Each term's denominator holds the
/// positive itself plus every negative prompt.
pub fn pool_tuning_node(
    tape: &mut Tape,
    prompt: NodeId,
    pairs: &[NodeId],
    negatives: &[NodeId],
    temperature: f64,
) -> Result<NodeId> {
    if pairs.is_empty() {
        return Err(Error::Empty("support pairs"));
    }
    let dim = tape.value(prompt).len();
    for &x in pairs.iter().chain(negatives) {
        if tape.value(x).len() != dim {
            return Err(Error::dims("pool tuning", &[dim], tape.shape(x)));
        }
    }
    let inv_t = 1.0 / temperature;
    // A negative drawn m times contributes m·exp(c/τ) = exp(c/τ + ln m).
    let mut distinct: Vec<(NodeId, usize)> = Vec::new();
    for &n in negatives {
        match distinct.iter_mut().find(|(id, _)| *id == n) {
            Some((_, m)) => *m += 1,
            None => distinct.push((n, 1)),
        }
    }
    let mut neg = Vec::with_capacity(distinct.len());
    for (n, m) in distinct {
        let c = tape.cosine(prompt, n)?;
        let logit = tape.scale(c, inv_t);
        neg.push(if m > 1 { tape.add_scalar(logit, (m as f64).ln()) } else { logit });
    }
    let mut terms = Vec::with_capacity(pairs.len());
    for &x in pairs {
        let c = tape.cosine(prompt, x)?;
        let pos = tape.scale(c, inv_t);
        let mut all = Vec::with_capacity(neg.len() + 1);
        all.push(pos);
        all.extend_from_slice(&neg);
        let logits = tape.concat(&all)?;
        let lse = tape.log_sum_exp(logits);
        terms.push(tape.sub(lse, pos)?);
    }
    let stacked = tape.concat(&terms)?;
    let total = tape.sum(stacked);
    Ok(tape.scale(total, 1.0 / pairs.len() as f64))
}

pub fn pool_tuning_loss(prompt: &Tensor, pairs: &[Tensor], negatives: &[Tensor], temperature: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.leaf(prompt.clone());
    let xs: Vec<NodeId> = pairs.iter().map(|x| tape.leaf(x.clone())).collect();
    let ns: Vec<NodeId> = negatives.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = pool_tuning_node(&mut tape, p, &xs, &ns, temperature)?;
    Ok(tape.value(out).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn singleton_attention_is_value_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = SelfAttnParams::random(4, &mut rng);
        let x = Tensor::vector(vec![0.1, -0.4, 0.7, 0.2]);
        let out = task_semantic_embedding(std::slice::from_ref(&x), &p).unwrap();
        let mut want = [0.0; 4];
        for (i, xi) in x.data().iter().enumerate() {
            for j in 0..4 {
                want[j] += xi * p.w_v.data()[i * 4 + j];
            }
        }
        for (a, b) in out.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
        let twice = task_semantic_embedding(&[x.clone(), x], &p).unwrap();
        for (a, b) in out.data().iter().zip(twice.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn empty_support_errors() {
        let p = SelfAttnParams::random(2, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(task_semantic_embedding(&[], &p).is_err());
    }

    #[test]
    fn retrieval_finds_itself_and_handles_singletons() {
        let pool = MspPool::random(8, 3, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(retrieve_prompt(&pool, &pool.entry(5)).unwrap().0, 5);
        let one = MspPool::random(1, 3, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(retrieve_prompt(&one, &Tensor::vector(vec![1.0, 0.0, 0.0])).unwrap().0, 0);
        assert!(retrieve_prompt(&pool, &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn degenerate_pool_losses() {
        let p = Tensor::vector(vec![1.0, 0.0]);
        let x = Tensor::vector(vec![0.3, 0.9]);
        assert_eq!(pool_tuning_loss(&p, &[x.clone()], &[], 0.1).unwrap(), 0.0);
        let negs = vec![x.clone(); 4];
        let l = pool_tuning_loss(&p, &[x], &negs, 0.1).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
    }
}

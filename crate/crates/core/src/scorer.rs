//! Dynamic projection, translational scoring, hinge losses and the
//! first-order inner update.

use crate::error::{Error, Result};
use crate::numerics::{NodeId, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub margin: f64,
    pub inner_lr: f64,
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            inner_lr: 0.0005,
            lambda: 0.05,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::Config("margin must be positive".into()));
        }
        if !(self.inner_lr >= 0.0) {
            return Err(Error::Config("inner learning rate must be non-negative".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        Ok(())
    }
}

/// `h = h_relational + h_semantic`
pub fn combine_entity(relational: &Tensor, semantic: &Tensor) -> Result<Tensor> {
    relational.zip_map(semantic, |a, b| a + b)
}

/// `r_p (e_pᵀ e) + e`
pub fn project(e: &Tensor, e_p: &Tensor, r_p: &Tensor) -> Result<Tensor> {
    if e.len() != e_p.len() || e.len() != r_p.len() {
        return Err(Error::dims("project", e.shape(), &[e_p.len(), r_p.len()]));
    }
    let s: f64 = e.data().iter().zip(e_p.data()).map(|(a, b)| a * b).sum();
    r_p.zip_map(e, |r, x| r * s + x)
}

/// `‖h + mr − t‖₂`
pub fn score_triple(h_proj: &Tensor, mr: &Tensor, t_proj: &Tensor) -> Result<f64> {
    let hm = h_proj.zip_map(mr, |a, b| a + b)?;
    Ok(hm.zip_map(t_proj, |a, b| a - b)?.norm())
}

/// `Σ max(0, pos + γ − neg)`
pub fn margin_loss(positive: &[f64], negative: &[f64], margin: f64) -> Result<f64> {
    if positive.len() != negative.len() {
        return Err(Error::dims("margin loss", &[positive.len()], &[negative.len()]));
    }
    Ok(positive.iter().zip(negative).map(|(p, n)| (p + margin - n).max(0.0)).sum())
}

pub fn total_loss(loss_q: f64, loss_pt: f64, lambda: f64) -> f64 {
    loss_q + lambda * loss_pt
}

pub fn project_node(tape: &mut Tape, e: NodeId, e_p: NodeId, r_p: NodeId) -> Result<NodeId> {
    let s = tape.dot(e_p, e)?;
    let scaled = tape.scale_by(r_p, s)?;
    tape.add(scaled, e)
}

pub fn score_node(tape: &mut Tape, h_proj: NodeId, mr: NodeId, t_proj: NodeId) -> Result<NodeId> {
    let hm = tape.add(h_proj, mr)?;
    let diff = tape.sub(hm, t_proj)?;
    Ok(tape.norm(diff))
}

pub fn margin_node(tape: &mut Tape, positive: &[NodeId], negative: &[NodeId], margin: f64) -> Result<NodeId> {
    if positive.len() != negative.len() || positive.is_empty() {
        return Err(Error::dims("margin loss", &[positive.len()], &[negative.len()]));
    }
    let mut terms = Vec::with_capacity(positive.len());
    for (&p, &n) in positive.iter().zip(negative) {
        let d = tape.sub(p, n)?;
        let shifted = tape.add_scalar(d, margin);
        terms.push(tape.relu(shifted));
    }
    let all = tape.concat(&terms)?;
    Ok(tape.sum(all))
}

/// `x − lr·g` for each leaf, with `g` recorded as a constant so the outer
/// gradient passes straight through the step.
pub fn sgd_step(tape: &mut Tape, nodes: &[NodeId], grads: &[Tensor], lr: f64) -> Result<Vec<NodeId>> {
    let mut out = Vec::with_capacity(nodes.len());
    for (&x, g) in nodes.iter().zip(grads) {
        if lr == 0.0 {
            out.push(x);
            continue;
        }
        let gi = tape.leaf(g.scale(lr));
        out.push(tape.sub(x, gi)?);
    }
    Ok(out)
}

/// One gradient step of `loss` on `nodes`. Returns the updated nodes and the
/// gradients used.
pub fn inner_update(tape: &mut Tape, loss: NodeId, nodes: &[NodeId], lr: f64) -> Result<(Vec<NodeId>, Vec<Tensor>)> {
    let grads = tape.gradients(loss, nodes)?;
    let updated = sgd_step(tape, nodes, &grads, lr)?;
    Ok((updated, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_degenerate_cases() {
        let e = Tensor::vector(vec![1.0, -2.0, 0.5]);
        let z = Tensor::zeros(&[3]);
        let v = Tensor::vector(vec![0.3, 0.1, -0.7]);
        assert_eq!(project(&e, &z, &v).unwrap(), e);
        assert_eq!(project(&e, &v, &z).unwrap(), e);
    }

    #[test]
    fn perfect_translation_scores_zero() {
        let h = Tensor::vector(vec![1.0, 2.0]);
        let t = Tensor::vector(vec![-1.0, 5.0]);
        let mr = t.zip_map(&h, |a, b| a - b).unwrap();
        assert_eq!(score_triple(&h, &mr, &t).unwrap(), 0.0);
    }

    #[test]
    fn hinge_cases() {
        assert_eq!(margin_loss(&[0.5, 1.0], &[1.5, 3.0], 1.0).unwrap(), 0.0);
        assert_eq!(margin_loss(&[2.0, 3.0], &[2.0, 3.0], 1.0).unwrap(), 2.0);
        assert!(margin_loss(&[1.0], &[], 1.0).is_err());
    }

    #[test]
    fn total_loss_arithmetic() {
        assert!((total_loss(1.0, 2.0, 0.05) - 1.1).abs() < 1e-15);
        assert_eq!(total_loss(1.0, 7.0, 0.0), 1.0);
    }

    #[test]
    fn zero_rate_step_is_identity() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        let y = t.dot(x, x).unwrap();
        let (u, _) = inner_update(&mut t, y, &[x], 0.0).unwrap();
        assert_eq!(t.value(u[0]), t.value(x));
    }
}

//! Recorded computation graph with reverse-mode gradients.
//!
//! Every operation appends a node holding its forward value. Nodes only
//! reference earlier nodes, so the node list is already in topological order
//! and the backward pass is a single reverse sweep.

use super::ops::{leaky_relu_scalar, log_sum_exp, softmax_slice};
use super::tensor::{dot, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Gather { src: NodeId, row: usize },
    Concat(Vec<NodeId>),
    Stack(Vec<NodeId>),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    SliceRows { src: NodeId, start: usize },
    AddRow(NodeId, NodeId),
    Reshape(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    ScaleBy { vector: NodeId, scalar: NodeId },
    Sum(NodeId),
    MeanRows(NodeId),
    Dot(NodeId, NodeId),
    Norm(NodeId),
    Cosine(NodeId, NodeId),
    LeakyRelu(NodeId, f64),
    Softmax(NodeId),
    LogSumExp(NodeId),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Piecewise-linear branch decisions and discrete selections taken while
/// recording. Two evaluations with equal patterns lie on the same smooth
/// piece of the recorded function.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KinkPattern {
    pub signs: Vec<bool>,
    pub choices: Vec<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    choices: Vec<usize>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        debug_assert!(value.is_finite(), "non-finite value from {op:?}");
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Records a discrete decision (e.g. an argmax index) taken outside the
    /// graph so gradient checks can detect when a perturbation flips it.
    pub fn record_choice(&mut self, choice: usize) {
        self.choices.push(choice);
    }

    pub fn kink_pattern(&self) -> KinkPattern {
        let signs = self
            .nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::LeakyRelu(x, _) => Some(self.nodes[x.0].value.data().iter().map(|&v| v >= 0.0).collect::<Vec<_>>()),
                Op::Norm(x) => Some(vec![self.nodes[x.0].value.norm() > 0.0]),
                _ => None,
            })
            .flatten()
            .collect();
        KinkPattern {
            signs,
            choices: self.choices.clone(),
        }
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Row `row` of a matrix node, or the whole node when it is a vector and
    /// `row == 0`.
    pub fn gather(&mut self, src: NodeId, row: usize) -> Result<NodeId> {
        let t = self.value(src);
        if row >= t.rows() {
            return Err(Error::dims("gather row", &[t.rows()], &[row]));
        }
        let value = Tensor::vector(t.row(row).to_vec());
        Ok(self.push(Op::Gather { src, row }, value))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Empty("concat input"));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor::vector(data)))
    }

    /// Stacks equally sized vectors into a `[n, d]` matrix.
    pub fn stack(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        let slices: Vec<&[f64]> = rows.iter().map(|&r| self.value(r).data()).collect();
        let value = Tensor::from_rows(&slices)?;
        Ok(self.push(Op::Stack(rows.to_vec()), value))
    }

    /// `a · b` where `a` is `[n]` (a row vector) or `[m, n]` and `b` is `[n, p]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.shape().len() != 2 || av.cols() != bv.rows() || av.shape().len() > 2 {
            return Err(Error::dims("matmul", &[av.cols(), 0], bv.shape()));
        }
        let (m, n, p) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![0.0; m * p];
        matmul_into(av.data(), bv.data(), &mut out, m, n, p);
        let shape = if av.shape().len() == 1 { vec![p] } else { vec![m, p] };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        if av.shape().len() != 2 {
            return Err(Error::dims("transpose", &[0, 0], av.shape()));
        }
        let value = transposed(av);
        Ok(self.push(Op::Transpose(a), value))
    }

    /// Rows `start..end` of a matrix node as a `[end - start, cols]` matrix.
    pub fn slice_rows(&mut self, src: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let t = self.value(src);
        if t.shape().len() != 2 || start >= end || end > t.rows() {
            return Err(Error::dims("slice_rows", &[start, end], t.shape()));
        }
        let c = t.cols();
        let value = Tensor::matrix(end - start, c, t.data()[start * c..end * c].to_vec())?;
        Ok(self.push(Op::SliceRows { src, start }, value))
    }

    /// Adds the vector `row` to every row of the `[n, p]` matrix `m`.
    pub fn add_row(&mut self, m: NodeId, row: NodeId) -> Result<NodeId> {
        let (mv, rv) = (self.value(m), self.value(row));
        if mv.shape().len() != 2 || rv.len() != mv.cols() {
            return Err(Error::dims("add_row", &[mv.cols()], rv.shape()));
        }
        let p = mv.cols();
        let mut data = mv.data().to_vec();
        for chunk in data.chunks_mut(p) {
            add_into(chunk, rv.data());
        }
        let value = Tensor::new(mv.shape().to_vec(), data)?;
        Ok(self.push(Op::AddRow(m, row), value))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(a).clone().reshape(shape.to_vec())?;
        Ok(self.push(Op::Reshape(a), value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), value))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a).scale(c);
        self.push(Op::Scale(a, c), value)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a).map(|v| v + c);
        self.push(Op::AddScalar(a), value)
    }

    /// `vector * scalar` where `scalar` is a one-element node.
    pub fn scale_by(&mut self, vector: NodeId, scalar: NodeId) -> Result<NodeId> {
        let s = self.value(scalar);
        if !s.is_scalar() {
            return Err(Error::dims("scale_by", &[1], s.shape()));
        }
        let s = s.item();
        let value = self.value(vector).scale(s);
        Ok(self.push(Op::ScaleBy { vector, scalar }, value))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(Op::Sum(a), value)
    }

    /// Mean over rows of a `[k, d]` matrix, giving `[d]`.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let (k, d) = (av.rows(), av.cols());
        let mut out = vec![0.0; d];
        for i in 0..k {
            for (o, v) in out.iter_mut().zip(av.row(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= k as f64);
        self.push(Op::MeanRows(a), Tensor::vector(out))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() != bv.len() {
            return Err(Error::dims("dot", av.shape(), bv.shape()));
        }
        let value = Tensor::scalar(dot(av.data(), bv.data()));
        Ok(self.push(Op::Dot(a, b), value))
    }

    /// Euclidean norm of all elements.
    pub fn norm(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(a).norm());
        self.push(Op::Norm(a), value)
    }

    pub fn cosine(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let c = super::ops::cosine_slice(self.value(a).data(), self.value(b).data())?;
        Ok(self.push(Op::Cosine(a, b), Tensor::scalar(c)))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let value = self.value(a).map(|v| leaky_relu_scalar(v, slope));
        self.push(Op::LeakyRelu(a, slope), value)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.leaky_relu(a, 0.0)
    }

    /// Softmax over the last axis (a vector, or each row of a matrix).
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        let mut out = Vec::with_capacity(av.len());
        for i in 0..av.rows() {
            out.extend(softmax_slice(av.row(i))?);
        }
        let value = Tensor::new(av.shape().to_vec(), out)?;
        Ok(self.push(Op::Softmax(a), value))
    }

    pub fn log_sum_exp(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::scalar(log_sum_exp(self.value(a).data()));
        self.push(Op::LogSumExp(a), value)
    }

    /// Exact reverse-mode gradients of the scalar `output` with respect to
    /// each node in `wrt`. Nodes that do not influence `output` get zeros.
    pub fn gradients(&self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<Tensor>> {
        let out = self.value(output);
        if !out.is_scalar() {
            return Err(Error::NonScalarOutput(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::new(out.shape().to_vec(), vec![1.0])?);

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        Ok(wrt
            .iter()
            .map(|&w| match grads.get(w.0).and_then(|g| g.clone()) {
                Some(g) => g,
                None => Tensor::zeros(self.shape(w)),
            })
            .collect())
    }

    fn backward_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Gather { src, row } => {
                let acc = slot(grads, *src, self.shape(*src));
                let c = acc.cols();
                let dst = &mut acc.data_mut()[row * c..(row + 1) * c];
                add_into(dst, gd);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    add_into(slot(grads, p, self.shape(p)).data_mut(), &gd[off..off + n]);
                    off += n;
                }
            }
            Op::Stack(rows) => {
                let d = node.value.cols();
                for (k, &r) in rows.iter().enumerate() {
                    add_into(slot(grads, r, self.shape(r)).data_mut(), &gd[k * d..(k + 1) * d]);
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, n, p) = (av.rows(), av.cols(), bv.cols());
                // dA = G · Bᵀ
                {
                    let da = slot(grads, *a, av.shape()).data_mut();
                    for r in 0..m {
                        let grow = &gd[r * p..(r + 1) * p];
                        for k in 0..n {
                            da[r * n + k] += dot(grow, &bv.data()[k * p..(k + 1) * p]);
                        }
                    }
                }
                // dB = Aᵀ · G
                let db = slot(grads, *b, bv.shape()).data_mut();
                for r in 0..m {
                    let grow = &gd[r * p..(r + 1) * p];
                    for k in 0..n {
                        let aval = av.data()[r * n + k];
                        if aval != 0.0 {
                            axpy(&mut db[k * p..(k + 1) * p], aval, grow);
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let gt = transposed(g);
                add_into(slot(grads, *a, self.shape(*a)).data_mut(), gt.data());
            }
            Op::SliceRows { src, start } => {
                let c = node.value.cols();
                let dst = slot(grads, *src, self.shape(*src)).data_mut();
                add_into(&mut dst[start * c..start * c + gd.len()], gd);
            }
            Op::AddRow(m, row) => {
                add_into(slot(grads, *m, self.shape(*m)).data_mut(), gd);
                let dr = slot(grads, *row, self.shape(*row)).data_mut();
                for chunk in gd.chunks(dr.len()) {
                    add_into(dr, chunk);
                }
            }
            Op::Reshape(a) => add_into(slot(grads, *a, self.shape(*a)).data_mut(), gd),
            Op::Add(a, b) => {
                add_into(slot(grads, *a, self.shape(*a)).data_mut(), gd);
                add_into(slot(grads, *b, self.shape(*b)).data_mut(), gd);
            }
            Op::Sub(a, b) => {
                add_into(slot(grads, *a, self.shape(*a)).data_mut(), gd);
                axpy(slot(grads, *b, self.shape(*b)).data_mut(), -1.0, gd);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = slot(grads, *a, av.shape()).data_mut();
                for ((d, &gi), &bi) in da.iter_mut().zip(gd).zip(bv.data()) {
                    *d += gi * bi;
                }
                let db = slot(grads, *b, bv.shape()).data_mut();
                for ((d, &gi), &ai) in db.iter_mut().zip(gd).zip(av.data()) {
                    *d += gi * ai;
                }
            }
            Op::Scale(a, c) => axpy(slot(grads, *a, self.shape(*a)).data_mut(), *c, gd),
            Op::AddScalar(a) => add_into(slot(grads, *a, self.shape(*a)).data_mut(), gd),
            Op::ScaleBy { vector, scalar } => {
                let s = self.value(*scalar).item();
                let vv = self.value(*vector);
                let ds = dot(gd, vv.data());
                axpy(slot(grads, *vector, vv.shape()).data_mut(), s, gd);
                slot(grads, *scalar, &[1]).data_mut()[0] += ds;
            }
            Op::Sum(a) => {
                let g0 = gd[0];
                slot(grads, *a, self.shape(*a)).data_mut().iter_mut().for_each(|d| *d += g0);
            }
            Op::MeanRows(a) => {
                let (k, d) = (self.value(*a).rows(), self.value(*a).cols());
                let da = slot(grads, *a, self.shape(*a)).data_mut();
                for r in 0..k {
                    axpy(&mut da[r * d..(r + 1) * d], 1.0 / k as f64, gd);
                }
            }
            Op::Dot(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                axpy(slot(grads, *a, av.shape()).data_mut(), gd[0], bv.data());
                axpy(slot(grads, *b, bv.shape()).data_mut(), gd[0], av.data());
            }
            Op::Norm(a) => {
                let n = node.value.item();
                if n > 0.0 {
                    let av = self.value(*a);
                    axpy(slot(grads, *a, av.shape()).data_mut(), gd[0] / n, av.data());
                }
            }
            Op::Cosine(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (na, nb) = (av.norm(), bv.norm());
                let c = node.value.item();
                let da = slot(grads, *a, av.shape()).data_mut();
                for ((d, &x), &y) in da.iter_mut().zip(av.data()).zip(bv.data()) {
                    *d += gd[0] * (y / (na * nb) - c * x / (na * na));
                }
                let db = slot(grads, *b, bv.shape()).data_mut();
                for ((d, &x), &y) in db.iter_mut().zip(av.data()).zip(bv.data()) {
                    *d += gd[0] * (x / (na * nb) - c * y / (nb * nb));
                }
            }
            Op::LeakyRelu(a, slope) => {
                let av = self.value(*a);
                let da = slot(grads, *a, av.shape()).data_mut();
                for ((d, &gi), &x) in da.iter_mut().zip(gd).zip(av.data()) {
                    *d += if x >= 0.0 { gi } else { slope * gi };
                }
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let d = y.cols();
                let da = slot(grads, *a, y.shape()).data_mut();
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = &gd[r * d..(r + 1) * d];
                    let inner = dot(gr, yr);
                    for k in 0..d {
                        da[r * d + k] += yr[k] * (gr[k] - inner);
                    }
                }
            }
            Op::LogSumExp(a) => {
                let av = self.value(*a);
                let p = softmax_slice(av.data()).expect("non-empty");
                axpy(slot(grads, *a, av.shape()).data_mut(), gd[0], &p);
            }
        }
    }
}

fn slot<'g>(grads: &'g mut [Option<Tensor>], id: NodeId, shape: &[usize]) -> &'g mut Tensor {
    grads[id.0].get_or_insert_with(|| Tensor::zeros(shape))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn axpy(dst: &mut [f64], a: f64, x: &[f64]) {
    for (d, s) in dst.iter_mut().zip(x) {
        *d += a * s;
    }
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, p: usize) {
    for r in 0..m {
        let orow = &mut out[r * p..(r + 1) * p];
        for k in 0..n {
            let av = a[r * n + k];
            if av != 0.0 {
                axpy(orow, av, &b[k * p..(k + 1) * p]);
            }
        }
    }
}

fn transposed(t: &Tensor) -> Tensor {
    let (r, c) = (t.rows(), t.cols());
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = t.data()[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out).expect("transpose keeps size")
}

//! Operation tape for one forward pass.
//!
//! Every op validates shapes, computes its value eagerly, checks the result
//! for non-finite entries and appends a node. Nodes only ever reference
//! earlier nodes, so walking the record backwards visits each node exactly
//! once in reverse topological order; gradients accumulate additively where
//! a node fans out.

use std::collections::HashMap;

use super::store::{ParamId, ParameterStore};
use super::{DiffError, Real, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
}

enum Op<F> {
    Const,
    Param(usize),
    Affine {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    /// Affine without the bias term; used inside recurrent cells.
    MatVec {
        x: NodeId,
        w: NodeId,
    },
    Activation {
        kind: Activation,
        x: NodeId,
    },
    Elementwise {
        kind: ElementwiseKind,
        a: NodeId,
        b: NodeId,
    },
    Concat {
        parts: Vec<NodeId>,
    },
    EmbedRow {
        table: NodeId,
        row: usize,
    },
    MeanStack {
        parts: Vec<NodeId>,
    },
    SumStack {
        parts: Vec<NodeId>,
    },
    Dot {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        c: F,
    },
    Softmax {
        x: NodeId,
    },
    SoftmaxXent {
        logits: NodeId,
        gold: usize,
        probs: Vec<F>,
    },
    WeightedSum {
        weights: NodeId,
        vectors: Vec<NodeId>,
    },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
}

pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    param_nodes: HashMap<usize, NodeId>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: &'static str, value: Tensor<F>, node_op: Op<F>) -> Result<NodeId, DiffError> {
        if !value.all_finite() {
            return Err(DiffError::NonFinite { op });
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, op: node_op });
        Ok(id)
    }

    fn check(&self, op: &'static str, id: NodeId) -> Result<&Tensor<F>, DiffError> {
        self.nodes
            .get(id.0)
            .map(|n| &n.value)
            .ok_or(DiffError::InvalidNode { op })
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Result<NodeId, DiffError> {
        self.push("constant", value, Op::Const)
    }

    /// Binds a parameter's current value as a leaf. Binding the same
    /// parameter twice on one tape returns the same node, so gradient
    /// accumulation at fan-out is handled by the node itself.
    pub fn param(&mut self, store: &ParameterStore<F>, id: ParamId) -> Result<NodeId, DiffError> {
        if let Some(&node) = self.param_nodes.get(&id.0) {
            return Ok(node);
        }
        let value = store.get(id).value().clone();
        let node = self.push("param", value, Op::Param(id.0))?;
        self.param_nodes.insert(id.0, node);
        Ok(node)
    }

    /// y = W^T x + b. `w` has shape [in x out]; `x` is a vector of length
    /// `in` or a matrix whose rows are each mapped independently.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let value = self.affine_value("affine", x, w, Some(b))?;
        self.push("affine", value, Op::Affine { x, w, b })
    }

    /// y = W^T x, without a bias.
    pub fn matvec(&mut self, x: NodeId, w: NodeId) -> Result<NodeId, DiffError> {
        let value = self.affine_value("matvec", x, w, None)?;
        self.push("matvec", value, Op::MatVec { x, w })
    }

    fn affine_value(
        &self,
        op: &'static str,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    ) -> Result<Tensor<F>, DiffError> {
        let xv = self.check(op, x)?;
        let wv = self.check(op, w)?;
        let (rows, cols) = match wv.shape() {
            Shape::Matrix { rows, cols } => (rows, cols),
            s => {
                return Err(DiffError::DimMismatch {
                    op,
                    left: format!("weight {s}"),
                    right: "matrix".into(),
                })
            }
        };
        let bias: Option<&Tensor<F>> = match b {
            Some(b) => {
                let bv = self.check(op, b)?;
                if bv.shape() != Shape::Vector(cols) {
                    return Err(DiffError::DimMismatch {
                        op,
                        left: format!("bias {}", bv.shape()),
                        right: format!("[{cols}]"),
                    });
                }
                Some(bv)
            }
            None => None,
        };
        let apply_row = |row: &[F], out: &mut [F]| {
            for (j, o) in out.iter_mut().enumerate() {
                let mut acc = bias.map_or(F::zero(), |bv| bv.data()[j]);
                for (i, &xi) in row.iter().enumerate() {
                    acc = acc + wv.data()[i * cols + j] * xi;
                }
                *o = acc;
            }
        };
        match xv.shape() {
            Shape::Vector(n) => {
                if n != rows {
                    return Err(DiffError::DimMismatch {
                        op,
                        left: format!("input {}", xv.shape()),
                        right: format!("weight {}", wv.shape()),
                    });
                }
                let mut out = Tensor::zeros(Shape::Vector(cols));
                apply_row(xv.data(), out.data_mut());
                Ok(out)
            }
            Shape::Matrix { rows: t, cols: n } => {
                if n != rows {
                    return Err(DiffError::DimMismatch {
                        op,
                        left: format!("input {}", xv.shape()),
                        right: format!("weight {}", wv.shape()),
                    });
                }
                let mut out = Tensor::zeros(Shape::Matrix { rows: t, cols });
                for r in 0..t {
                    let xrow = &xv.data()[r * n..(r + 1) * n];
                    apply_row(xrow, &mut out.data_mut()[r * cols..(r + 1) * cols]);
                }
                Ok(out)
            }
        }
    }

    pub fn activation(&mut self, kind: Activation, x: NodeId) -> Result<NodeId, DiffError> {
        let xv = self.check("activation", x)?;
        let mut value = xv.clone();
        for v in value.data_mut() {
            *v = match kind {
                Activation::Relu => {
                    if *v > F::zero() {
                        *v
                    } else {
                        F::zero()
                    }
                }
                Activation::Tanh => v.tanh(),
                Activation::Sigmoid => F::one() / (F::one() + (-*v).exp()),
            };
        }
        self.push("activation", value, Op::Activation { kind, x })
    }

    pub fn elementwise(
        &mut self,
        kind: ElementwiseKind,
        a: NodeId,
        b: NodeId,
    ) -> Result<NodeId, DiffError> {
        let av = self.check("elementwise", a)?;
        let bv = self.check("elementwise", b)?;
        if av.shape() != bv.shape() {
            return Err(DiffError::DimMismatch {
                op: "elementwise",
                left: av.shape().to_string(),
                right: bv.shape().to_string(),
            });
        }
        let mut value = av.clone();
        for (v, &r) in value.data_mut().iter_mut().zip(bv.data()) {
            *v = match kind {
                ElementwiseKind::Add => *v + r,
                ElementwiseKind::Sub => *v - r,
                ElementwiseKind::Mul => *v * r,
            };
        }
        self.push("elementwise", value, Op::Elementwise { kind, a, b })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.elementwise(ElementwiseKind::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.elementwise(ElementwiseKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.elementwise(ElementwiseKind::Mul, a, b)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, DiffError> {
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.check("concat", p)?;
            match pv.shape() {
                Shape::Vector(_) => data.extend_from_slice(pv.data()),
                s => {
                    return Err(DiffError::DimMismatch {
                        op: "concat",
                        left: s.to_string(),
                        right: "vector".into(),
                    })
                }
            }
        }
        self.push(
            "concat",
            Tensor::vector(data),
            Op::Concat {
                parts: parts.to_vec(),
            },
        )
    }

    /// One row of an embedding table as a vector.
    pub fn embed_row(&mut self, table: NodeId, row: usize) -> Result<NodeId, DiffError> {
        let tv = self.check("embed_row", table)?;
        let (rows, cols) = match tv.shape() {
            Shape::Matrix { rows, cols } => (rows, cols),
            s => {
                return Err(DiffError::DimMismatch {
                    op: "embed_row",
                    left: s.to_string(),
                    right: "matrix".into(),
                })
            }
        };
        if row >= rows {
            return Err(DiffError::IndexOutOfRange {
                op: "embed_row",
                index: row,
                len: rows,
            });
        }
        let data = tv.data()[row * cols..(row + 1) * cols].to_vec();
        self.push("embed_row", Tensor::vector(data), Op::EmbedRow { table, row })
    }

    pub fn mean_stack(&mut self, parts: &[NodeId]) -> Result<NodeId, DiffError> {
        let value = self.stack_value("mean_stack", parts, true)?;
        self.push(
            "mean_stack",
            value,
            Op::MeanStack {
                parts: parts.to_vec(),
            },
        )
    }

    pub fn sum_stack(&mut self, parts: &[NodeId]) -> Result<NodeId, DiffError> {
        let value = self.stack_value("sum_stack", parts, false)?;
        self.push(
            "sum_stack",
            value,
            Op::SumStack {
                parts: parts.to_vec(),
            },
        )
    }

    fn stack_value(
        &self,
        op: &'static str,
        parts: &[NodeId],
        mean: bool,
    ) -> Result<Tensor<F>, DiffError> {
        let first = parts
            .first()
            .ok_or(DiffError::InvalidNode { op })
            .and_then(|&p| self.check(op, p))?;
        let shape = first.shape();
        let mut value = Tensor::zeros(shape);
        for &p in parts {
            let pv = self.check(op, p)?;
            if pv.shape() != shape {
                return Err(DiffError::DimMismatch {
                    op,
                    left: shape.to_string(),
                    right: pv.shape().to_string(),
                });
            }
            for (v, &x) in value.data_mut().iter_mut().zip(pv.data()) {
                *v = *v + x;
            }
        }
        if mean {
            let k = F::from_f64(parts.len() as f64);
            for v in value.data_mut() {
                *v = *v / k;
            }
        }
        Ok(value)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let av = self.check("dot", a)?;
        let bv = self.check("dot", b)?;
        if av.shape() != bv.shape() || !matches!(av.shape(), Shape::Vector(_)) {
            return Err(DiffError::DimMismatch {
                op: "dot",
                left: av.shape().to_string(),
                right: bv.shape().to_string(),
            });
        }
        let mut acc = F::zero();
        for (&x, &y) in av.data().iter().zip(bv.data()) {
            acc = acc + x * y;
        }
        self.push("dot", Tensor::vector(vec![acc]), Op::Dot { a, b })
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId, DiffError> {
        let c = F::from_f64(c);
        let xv = self.check("scale", x)?;
        let mut value = xv.clone();
        for v in value.data_mut() {
            *v = *v * c;
        }
        self.push("scale", value, Op::Scale { x, c })
    }

    /// Numerically stabilized softmax over a vector.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, DiffError> {
        let xv = self.check("softmax", x)?;
        if !matches!(xv.shape(), Shape::Vector(_)) {
            return Err(DiffError::DimMismatch {
                op: "softmax",
                left: xv.shape().to_string(),
                right: "vector".into(),
            });
        }
        let probs = softmax_stable(xv.data());
        self.push("softmax", Tensor::vector(probs), Op::Softmax { x })
    }

    /// Softmax + cross-entropy against a gold index. Returns the probability
    /// vector (a plain value, not a node) and the scalar loss node
    /// -log(probs[gold]).
    pub fn softmax_xent(
        &mut self,
        logits: NodeId,
        gold: usize,
    ) -> Result<(Vec<F>, NodeId), DiffError> {
        let lv = self.check("softmax_xent", logits)?;
        let n = match lv.shape() {
            Shape::Vector(n) => n,
            s => {
                return Err(DiffError::DimMismatch {
                    op: "softmax_xent",
                    left: s.to_string(),
                    right: "vector".into(),
                })
            }
        };
        if gold >= n {
            return Err(DiffError::IndexOutOfRange {
                op: "softmax_xent",
                index: gold,
                len: n,
            });
        }
        let probs = softmax_stable(lv.data());
        let loss = -(probs[gold].ln());
        let node = self.push(
            "softmax_xent",
            Tensor::vector(vec![loss]),
            Op::SoftmaxXent {
                logits,
                gold,
                probs: probs.clone(),
            },
        )?;
        Ok((probs, node))
    }

    /// y = sum_k weights[k] * vectors[k].
    pub fn weighted_sum(&mut self, weights: NodeId, vectors: &[NodeId]) -> Result<NodeId, DiffError> {
        let wv = self.check("weighted_sum", weights)?;
        if wv.shape() != Shape::Vector(vectors.len()) {
            return Err(DiffError::DimMismatch {
                op: "weighted_sum",
                left: wv.shape().to_string(),
                right: format!("[{}]", vectors.len()),
            });
        }
        let first = vectors
            .first()
            .ok_or(DiffError::InvalidNode { op: "weighted_sum" })
            .and_then(|&v| self.check("weighted_sum", v))?;
        let shape = first.shape();
        let mut value = Tensor::zeros(shape);
        for (k, &v) in vectors.iter().enumerate() {
            let vv = self.check("weighted_sum", v)?;
            if vv.shape() != shape {
                return Err(DiffError::DimMismatch {
                    op: "weighted_sum",
                    left: shape.to_string(),
                    right: vv.shape().to_string(),
                });
            }
            let c = wv.data()[k];
            for (o, &x) in value.data_mut().iter_mut().zip(vv.data()) {
                *o = *o + c * x;
            }
        }
        self.push(
            "weighted_sum",
            value,
            Op::WeightedSum {
                weights,
                vectors: vectors.to_vec(),
            },
        )
    }

    /// Reverse pass from a scalar loss node. Parameter gradients accumulate
    /// into `store` (on top of whatever is already there).
    pub fn backward(&self, loss: NodeId, store: &mut ParameterStore<F>) -> Result<(), DiffError> {
        let loss_value = self.check("backward", loss)?;
        if loss_value.shape() != Shape::Vector(1) {
            return Err(DiffError::NonScalarLoss(loss_value.shape().to_string()));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::vector(vec![F::one()]));

        for idx in (0..self.nodes.len()).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Const => {}
                Op::Param(pi) => store.accumulate_grad(*pi, &g),
                Op::Affine { x, w, b } => {
                    self.backward_affine(&mut grads, &g, *x, *w, Some(*b));
                }
                Op::MatVec { x, w } => {
                    self.backward_affine(&mut grads, &g, *x, *w, None);
                }
                Op::Activation { kind, x } => {
                    let y = &self.nodes[idx].value;
                    let dst = self.grad_slot(&mut grads, *x);
                    for ((d, &gi), &yi) in dst.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        let slope = match kind {
                            Activation::Relu => {
                                if yi > F::zero() {
                                    F::one()
                                } else {
                                    F::zero()
                                }
                            }
                            Activation::Tanh => F::one() - yi * yi,
                            Activation::Sigmoid => yi * (F::one() - yi),
                        };
                        *d = *d + gi * slope;
                    }
                }
                Op::Elementwise { kind, a, b } => match kind {
                    ElementwiseKind::Add => {
                        self.add_grad(&mut grads, *a, g.data(), F::one());
                        self.add_grad(&mut grads, *b, g.data(), F::one());
                    }
                    ElementwiseKind::Sub => {
                        self.add_grad(&mut grads, *a, g.data(), F::one());
                        self.add_grad(&mut grads, *b, g.data(), -F::one());
                    }
                    ElementwiseKind::Mul => {
                        let av = self.nodes[a.0].value.data().to_vec();
                        let bv = self.nodes[b.0].value.data().to_vec();
                        let da = self.grad_slot(&mut grads, *a);
                        for ((d, &gi), &bi) in da.data_mut().iter_mut().zip(g.data()).zip(&bv) {
                            *d = *d + gi * bi;
                        }
                        let db = self.grad_slot(&mut grads, *b);
                        for ((d, &gi), &ai) in db.data_mut().iter_mut().zip(g.data()).zip(&av) {
                            *d = *d + gi * ai;
                        }
                    }
                },
                Op::Concat { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.nodes[p.0].value.len();
                        self.add_grad(&mut grads, p, &g.data()[offset..offset + len], F::one());
                        offset += len;
                    }
                }
                Op::EmbedRow { table, row } => {
                    let cols = g.len();
                    let dst = self.grad_slot(&mut grads, *table);
                    let start = row * cols;
                    for (d, &gi) in dst.data_mut()[start..start + cols].iter_mut().zip(g.data()) {
                        *d = *d + gi;
                    }
                }
                Op::MeanStack { parts } => {
                    let inv = F::one() / F::from_f64(parts.len() as f64);
                    for &p in parts {
                        self.add_grad(&mut grads, p, g.data(), inv);
                    }
                }
                Op::SumStack { parts } => {
                    for &p in parts {
                        self.add_grad(&mut grads, p, g.data(), F::one());
                    }
                }
                Op::Dot { a, b } => {
                    let g0 = g.data()[0];
                    let bv = self.nodes[b.0].value.data().to_vec();
                    let av = self.nodes[a.0].value.data().to_vec();
                    self.add_grad(&mut grads, *a, &bv, g0);
                    self.add_grad(&mut grads, *b, &av, g0);
                }
                Op::Scale { x, c } => {
                    self.add_grad(&mut grads, *x, g.data(), *c);
                }
                Op::Softmax { x } => {
                    let p = self.nodes[idx].value.data();
                    let mut inner = F::zero();
                    for (&gi, &pi) in g.data().iter().zip(p) {
                        inner = inner + gi * pi;
                    }
                    let dst = self.grad_slot(&mut grads, *x);
                    for ((d, &gi), &pi) in dst.data_mut().iter_mut().zip(g.data()).zip(p) {
                        *d = *d + pi * (gi - inner);
                    }
                }
                Op::SoftmaxXent { logits, gold, probs } => {
                    let g0 = g.data()[0];
                    let dst = self.grad_slot(&mut grads, *logits);
                    for (i, (d, &pi)) in dst.data_mut().iter_mut().zip(probs).enumerate() {
                        let target = if i == *gold { F::one() } else { F::zero() };
                        *d = *d + g0 * (pi - target);
                    }
                }
                Op::WeightedSum { weights, vectors } => {
                    let wv = self.nodes[weights.0].value.data().to_vec();
                    for (k, &v) in vectors.iter().enumerate() {
                        self.add_grad(&mut grads, v, g.data(), wv[k]);
                    }
                    let mut wgrad = vec![F::zero(); wv.len()];
                    for (k, &v) in vectors.iter().enumerate() {
                        let vv = self.nodes[v.0].value.data();
                        let mut acc = F::zero();
                        for (&gi, &vi) in g.data().iter().zip(vv) {
                            acc = acc + gi * vi;
                        }
                        wgrad[k] = acc;
                    }
                    self.add_grad(&mut grads, *weights, &wgrad, F::one());
                }
            }
        }
        Ok(())
    }

    fn backward_affine(
        &self,
        grads: &mut [Option<Tensor<F>>],
        g: &Tensor<F>,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    ) {
        let wv = self.nodes[w.0].value.clone();
        let xv = self.nodes[x.0].value.clone();
        let cols = match wv.shape() {
            Shape::Matrix { cols, .. } => cols,
            _ => unreachable!("validated at forward"),
        };
        let n = match wv.shape() {
            Shape::Matrix { rows, .. } => rows,
            _ => unreachable!(),
        };
        let rows_iter: Vec<(&[F], &[F])> = match xv.shape() {
            Shape::Vector(_) => vec![(xv.data(), g.data())],
            Shape::Matrix { rows: t, cols: nc } => (0..t)
                .map(|r| {
                    (
                        &xv.data()[r * nc..(r + 1) * nc],
                        &g.data()[r * cols..(r + 1) * cols],
                    )
                })
                .collect(),
        };
        {
            let dx = self.grad_slot(grads, x);
            let dxd = dx.data_mut();
            for (r, (_, grow)) in rows_iter.iter().enumerate() {
                for i in 0..n {
                    let mut acc = F::zero();
                    for (j, &gj) in grow.iter().enumerate() {
                        acc = acc + wv.data()[i * cols + j] * gj;
                    }
                    dxd[r * n + i] = dxd[r * n + i] + acc;
                }
            }
        }
        {
            let dw = self.grad_slot(grads, w);
            let dwd = dw.data_mut();
            for (xrow, grow) in &rows_iter {
                for (i, &xi) in xrow.iter().enumerate() {
                    for (j, &gj) in grow.iter().enumerate() {
                        dwd[i * cols + j] = dwd[i * cols + j] + xi * gj;
                    }
                }
            }
        }
        if let Some(b) = b {
            let db = self.grad_slot(grads, b);
            let dbd = db.data_mut();
            for (_, grow) in &rows_iter {
                for (j, &gj) in grow.iter().enumerate() {
                    dbd[j] = dbd[j] + gj;
                }
            }
        }
    }

    fn grad_slot<'a>(
        &self,
        grads: &'a mut [Option<Tensor<F>>],
        id: NodeId,
    ) -> &'a mut Tensor<F> {
        let shape = self.nodes[id.0].value.shape();
        grads[id.0].get_or_insert_with(|| Tensor::zeros(shape))
    }

    fn add_grad(&self, grads: &mut [Option<Tensor<F>>], id: NodeId, delta: &[F], scale: F) {
        let dst = self.grad_slot(grads, id);
        for (d, &v) in dst.data_mut().iter_mut().zip(delta) {
            *d = *d + v * scale;
        }
    }
}

/// Max-subtraction softmax on a plain slice.
pub fn softmax_stable<F: Real>(logits: &[F]) -> Vec<F> {
    let mut max = F::neg_infinity();
    for &v in logits {
        if v > max {
            max = v;
        }
    }
    let mut out: Vec<F> = logits.iter().map(|&v| (v - max).exp()).collect();
    let mut sum = F::zero();
    for &v in &out {
        sum = sum + v;
    }
    for v in &mut out {
        *v = *v / sum;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store_with<F: Real>(entries: &[(&str, Shape, &[f64])]) -> (ParameterStore<F>, Vec<ParamId>) {
        let mut store = ParameterStore::new();
        let ids = entries
            .iter()
            .map(|(name, shape, data)| {
                store
                    .register_tensor(name, Tensor::from_f64(*shape, data))
                    .unwrap()
            })
            .collect();
        (store, ids)
    }

    #[test]
    fn affine_zero_map_and_identity() {
        let (store, ids) = store_with::<f64>(&[
            (
                "w0",
                Shape::Matrix { rows: 2, cols: 2 },
                &[0.0, 0.0, 0.0, 0.0],
            ),
            ("b0", Shape::Vector(2), &[0.0, 0.0]),
            (
                "wi",
                Shape::Matrix { rows: 2, cols: 2 },
                &[1.0, 0.0, 0.0, 1.0],
            ),
        ]);
        let mut tape = Tape::new();
        let x = tape
            .constant(Tensor::vector(vec![3.0f64, -4.0]))
            .unwrap();
        let w0 = tape.param(&store, ids[0]).unwrap();
        let b0 = tape.param(&store, ids[1]).unwrap();
        let wi = tape.param(&store, ids[2]).unwrap();
        let zero = tape.affine(x, w0, b0).unwrap();
        assert_eq!(tape.value(zero).data(), &[0.0, 0.0]);
        let same = tape.affine(x, wi, b0).unwrap();
        assert_eq!(tape.value(same).data(), &[3.0, -4.0]);
    }

    #[test]
    fn affine_hand_case() {
        // x=[1,2], W=[[1,0],[1,1]], b=[0.5,-0.5] -> y=[3.5,1.5]
        let (store, ids) = store_with::<f64>(&[
            (
                "w",
                Shape::Matrix { rows: 2, cols: 2 },
                &[1.0, 0.0, 1.0, 1.0],
            ),
            ("b", Shape::Vector(2), &[0.5, -0.5]),
        ]);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0f64, 2.0])).unwrap();
        let w = tape.param(&store, ids[0]).unwrap();
        let b = tape.param(&store, ids[1]).unwrap();
        let y = tape.affine(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[3.5, 1.5]);
    }

    #[test]
    fn affine_shape_mismatch_names_both_shapes() {
        let (store, ids) = store_with::<f64>(&[
            (
                "w",
                Shape::Matrix { rows: 3, cols: 2 },
                &[0.0; 6],
            ),
            ("b", Shape::Vector(2), &[0.0, 0.0]),
        ]);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0f64, 2.0])).unwrap();
        let w = tape.param(&store, ids[0]).unwrap();
        let b = tape.param(&store, ids[1]).unwrap();
        let err = tape.affine(x, w, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2]") && msg.contains("[3x2]"), "{msg}");
    }

    #[test]
    fn activations_match_trivial_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape
            .constant(Tensor::vector(vec![-1.0, 2.0, 0.0]))
            .unwrap();
        let r = tape.activation(Activation::Relu, x).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 2.0, 0.0]);
        let t = tape.activation(Activation::Tanh, x).unwrap();
        assert_eq!(tape.value(t).data()[2], 0.0);
        let s = tape.activation(Activation::Sigmoid, x).unwrap();
        assert_eq!(tape.value(s).data()[2], 0.5);
    }

    #[test]
    fn elementwise_and_concat_values() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::vector(vec![1.0, -2.0])).unwrap();
        let z = tape.constant(Tensor::vector(vec![0.0, 0.0])).unwrap();
        let m = tape.mul(a, z).unwrap();
        assert_eq!(tape.value(m).data(), &[0.0, 0.0]);
        let one = tape.constant(Tensor::vector(vec![1.0])).unwrap();
        let two = tape.constant(Tensor::vector(vec![2.0, 3.0])).unwrap();
        let c = tape.concat(&[one, two]).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn sub_of_equal_nodes_routes_opposite_grads() {
        let (mut store, ids) =
            store_with::<f64>(&[("a", Shape::Vector(2), &[1.5, -2.0]), ("b", Shape::Vector(2), &[1.5, -2.0])]);
        let mut tape = Tape::new();
        let a = tape.param(&store, ids[0]).unwrap();
        let b = tape.param(&store, ids[1]).unwrap();
        let d = tape.sub(a, b).unwrap();
        assert_eq!(tape.value(d).data(), &[0.0, 0.0]);
        let w = tape.constant(Tensor::vector(vec![1.0, 1.0])).unwrap();
        let loss = tape.dot(d, w).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(ids[0]).grad().data(), &[1.0, 1.0]);
        assert_eq!(store.get(ids[1]).grad().data(), &[-1.0, -1.0]);
    }

    #[test]
    fn softmax_xent_uniform_and_hand_case() {
        let mut tape = Tape::<f64>::new();
        let uniform = tape.constant(Tensor::vector(vec![0.0; 7])).unwrap();
        let (probs, loss) = tape.softmax_xent(uniform, 3).unwrap();
        for p in &probs {
            assert!((p - 1.0 / 7.0).abs() < 1e-12);
        }
        assert!((tape.value(loss).data()[0] - (7.0f64).ln()).abs() < 1e-12);

        // logits [1,2,3], gold=2 -> loss = ln(e+e^2+e^3) - 3
        let logits = tape
            .constant(Tensor::vector(vec![1.0, 2.0, 3.0]))
            .unwrap();
        let (_, loss) = tape.softmax_xent(logits, 2).unwrap();
        let expect = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln() - 3.0;
        assert!((tape.value(loss).data()[0] - expect).abs() < 1e-12);
        assert!((expect - 0.4076).abs() < 5e-5);
    }

    #[test]
    fn softmax_xent_is_stable_for_huge_logits() {
        let mut tape = Tape::<f64>::new();
        let logits = tape
            .constant(Tensor::vector(vec![1000.0, 0.0]))
            .unwrap();
        let (probs, loss) = tape.softmax_xent(logits, 0).unwrap();
        assert!((probs[0] - 1.0).abs() < 1e-12);
        assert!(probs[1] < 1e-12);
        assert_eq!(tape.value(loss).data()[0], 0.0);
    }

    #[test]
    fn softmax_distribution_invariants() {
        let mut tape = Tape::<f64>::new();
        let x = tape
            .constant(Tensor::vector(vec![3.0, -1.0, 0.25, 9.0]))
            .unwrap();
        let p = tape.softmax(x).unwrap();
        let sum: f64 = tape.value(p).data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert!(tape.value(p).data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn gold_index_out_of_range_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.constant(Tensor::vector(vec![0.0, 0.0])).unwrap();
        assert!(matches!(
            tape.softmax_xent(logits, 2),
            Err(DiffError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn non_finite_intermediate_aborts_with_named_op() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::vector(vec![1e200])).unwrap();
        let err = tape.mul(x, x).unwrap_err(); // 1e400 overflows
        assert!(err.to_string().contains("elementwise"));
    }

    #[test]
    fn embed_row_rejects_out_of_range() {
        let (store, ids) = store_with::<f64>(&[(
            "table",
            Shape::Matrix { rows: 2, cols: 3 },
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        )]);
        let mut tape = Tape::new();
        let t = tape.param(&store, ids[0]).unwrap();
        let row = tape.embed_row(t, 1).unwrap();
        assert_eq!(tape.value(row).data(), &[4.0, 5.0, 6.0]);
        assert!(matches!(
            tape.embed_row(t, 2),
            Err(DiffError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn param_nodes_are_memoized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParameterStore::<f64>::new();
        let id = store
            .register("w", Shape::Vector(2), Init::Zeros, &mut rng)
            .unwrap();
        let mut tape = Tape::new();
        let a = tape.param(&store, id).unwrap();
        let b = tape.param(&store, id).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn matrix_affine_maps_rows_independently() {
        let (store, ids) = store_with::<f64>(&[
            (
                "w",
                Shape::Matrix { rows: 2, cols: 1 },
                &[1.0, 1.0],
            ),
            ("b", Shape::Vector(1), &[0.0]),
        ]);
        let mut tape = Tape::new();
        let x = tape
            .constant(Tensor::matrix(2, 2, vec![1.0f64, 2.0, 3.0, 4.0]))
            .unwrap();
        let w = tape.param(&store, ids[0]).unwrap();
        let b = tape.param(&store, ids[1]).unwrap();
        let y = tape.affine(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 7.0]);
    }
}

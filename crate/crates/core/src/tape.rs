//! Reverse-mode gradient tape over [`Tensor2`] values.
//!
//! A [`GradTape`] records every primitive applied during a forward pass.
//! Calling [`GradTape::backward`] on a scalar node replays the record in
//! reverse and accumulates exactly one gradient tensor per node. Nodes
//! created through [`GradTape::stop_gradient`] forward their value unchanged
//! and contribute nothing upstream, which is what the self-organizing loss
//! term relies on.

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// Handle to a node on a [`GradTape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Identity(NodeId),
    MatMul(NodeId, NodeId),
    /// Broadcast-add a 1 x m bias to every row of an n x m input.
    AddBias(NodeId, NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    GatherRows(NodeId, Vec<usize>),
    /// Select (row, col) entries into an n x 1 column.
    GatherEntries(NodeId, Vec<(usize, usize)>),
    SoftmaxRows(NodeId),
    LogSoftmaxRows(NodeId),
    /// (n x m, k x m) -> n x k matrix of squared Euclidean distances.
    PairwiseSqDist(NodeId, NodeId),
    SumAll(NodeId),
    /// Forwards a quantized value while routing the entire incoming gradient
    /// to `grad_to`; the straight-through estimator.
    StraightThrough { grad_to: NodeId },
}

struct Node {
    value: Tensor2,
    op: Op,
    stop: bool,
    /// False when no differentiable leaf is reachable from this node; the
    /// backward pass skips such branches entirely.
    needs_grad: bool,
}

/// Record of a forward computation, replayable in reverse.
#[derive(Default)]
pub struct GradTape {
    nodes: Vec<Node>,
}

/// Accumulated gradients from one backward pass, addressed by [`NodeId`].
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
}

impl Gradients {
    /// Gradient with respect to the given node; `None` when no path from the
    /// loss reaches it (mathematically a zero gradient).
    pub fn wrt(&self, id: NodeId) -> Option<&Tensor2> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient as an owned tensor, zero-filled when no path reached the node.
    pub fn wrt_or_zeros(&self, id: NodeId, shape: (usize, usize)) -> Tensor2 {
        match self.wrt(id) {
            Some(g) => g.clone(),
            None => Tensor2::zeros(shape.0, shape.1),
        }
    }
}

impl GradTape {
    pub fn new() -> Self {
        GradTape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor2 {
        &self.nodes[id.0].value
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, value: Tensor2, op: Op) -> NodeId {
        let needs_grad = match &op {
            Op::Leaf => true,
            Op::Identity(a)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Scale(a, _)
            | Op::GatherRows(a, _)
            | Op::GatherEntries(a, _)
            | Op::SoftmaxRows(a)
            | Op::LogSoftmaxRows(a)
            | Op::SumAll(a) => self.needs(*a),
            Op::MatMul(a, b)
            | Op::AddBias(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::PairwiseSqDist(a, b) => self.needs(*a) || self.needs(*b),
            Op::StraightThrough { grad_to, .. } => self.needs(*grad_to),
        };
        self.nodes.push(Node {
            value,
            op,
            stop: false,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Register an input or parameter tensor.
    pub fn leaf(&mut self, value: Tensor2) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Register a tensor that never receives a gradient (inputs, targets).
    pub fn constant(&mut self, value: Tensor2) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            stop: false,
            needs_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Identity in the forward pass, a gradient sink in the backward pass.
    pub fn stop_gradient(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).clone();
        self.nodes.push(Node {
            value,
            op: Op::Identity(input),
            stop: true,
            needs_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Forwards the value of `value_of` and hands its whole gradient to
    /// `grad_to`. Both nodes must have the same shape.
    pub fn straight_through(&mut self, value_of: NodeId, grad_to: NodeId) -> Result<NodeId> {
        let (a, b) = (self.value(value_of).shape(), self.value(grad_to).shape());
        if a != b {
            return Err(Error::shape(
                "GradTape::straight_through",
                format!("{}x{}", a.0, a.1),
                format!("{}x{}", b.0, b.1),
            ));
        }
        let value = self.value(value_of).clone();
        Ok(self.push(value, Op::StraightThrough { grad_to }))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add_bias(&mut self, input: NodeId, bias: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let b = self.value(bias);
        if b.rows() != 1 || b.cols() != x.cols() {
            return Err(Error::shape(
                "GradTape::add_bias",
                format!("1x{}", x.cols()),
                format!("{}x{}", b.rows(), b.cols()),
            ));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(b.row(0)) {
                *o += bv;
            }
        }
        // Recompute borrow: push after building the value.
        Ok(self.push(out, Op::AddBias(input, bias)))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).map(|v| v.max(0.0));
        self.push(value, Op::Relu(input))
    }

    pub fn tanh(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).map(f64::tanh);
        self.push(value, Op::Tanh(input))
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(value, Op::Sigmoid(input))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> NodeId {
        let value = self.value(input).map(|v| v * factor);
        self.push(value, Op::Scale(input, factor))
    }

    pub fn gather_rows(&mut self, input: NodeId, indices: &[usize]) -> Result<NodeId> {
        let x = self.value(input);
        if let Some(&bad) = indices.iter().find(|&&i| i >= x.rows()) {
            return Err(Error::shape(
                "GradTape::gather_rows",
                format!("row index < {}", x.rows()),
                format!("{bad}"),
            ));
        }
        let value = x.gather_rows(indices);
        Ok(self.push(value, Op::GatherRows(input, indices.to_vec())))
    }

    pub fn gather_entries(&mut self, input: NodeId, entries: &[(usize, usize) ]) -> Result<NodeId> {
        let x = self.value(input);
        let mut data = Vec::with_capacity(entries.len());
        for &(r, c) in entries {
            if r >= x.rows() || c >= x.cols() {
                return Err(Error::shape(
                    "GradTape::gather_entries",
                    format!("entry within {}x{}", x.rows(), x.cols()),
                    format!("({r}, {c})"),
                ));
            }
            data.push(x.get(r, c));
        }
        let value = Tensor2::from_vec(entries.len(), 1, data)?;
        Ok(self.push(value, Op::GatherEntries(input, entries.to_vec())))
    }

    pub fn softmax_rows(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let mut out = x.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(input))
    }

    pub fn log_softmax_rows(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let mut out = x.clone();
        for r in 0..out.rows() {
            log_softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::LogSoftmaxRows(input))
    }

    /// Squared Euclidean distances between every row of `points` (n x m) and
    /// every row of `anchors` (k x m), as an n x k matrix.
    pub fn pairwise_sq_dist(&mut self, points: NodeId, anchors: NodeId) -> Result<NodeId> {
        let p = self.value(points);
        let a = self.value(anchors);
        if p.cols() != a.cols() {
            return Err(Error::shape(
                "GradTape::pairwise_sq_dist",
                format!("point dim {}", p.cols()),
                format!("anchor dim {}", a.cols()),
            ));
        }
        let mut out = Tensor2::zeros(p.rows(), a.rows());
        for i in 0..p.rows() {
            for j in 0..a.rows() {
                out.set(i, j, p.row_sq_dist(i, a, j));
            }
        }
        Ok(self.push(out, Op::PairwiseSqDist(points, anchors)))
    }

    pub fn sum_all(&mut self, input: NodeId) -> NodeId {
        let value = Tensor2::scalar(self.value(input).sum());
        self.push(value, Op::SumAll(input))
    }

    /// Squared-error between same-shaped tensors: per-row sums of squared
    /// differences, averaged over rows.
    pub fn mean_sq_diff(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let rows = self.value(a).rows();
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        let total = self.sum_all(sq);
        Ok(self.scale(total, 1.0 / rows as f64))
    }

    /// Replay the tape in reverse from a scalar loss node.
    pub fn backward(&self, loss: NodeId, seed: f64) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::usage(
                "backward called on an empty tape; run a forward pass first",
            ));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::usage(format!(
                "backward called with node {} but the tape holds {} nodes",
                loss.0,
                self.nodes.len()
            )));
        }
        let loss_shape = self.nodes[loss.0].value.shape();
        if loss_shape != (1, 1) {
            return Err(Error::shape(
                "GradTape::backward",
                "scalar (1x1) loss".to_string(),
                format!("{}x{}", loss_shape.0, loss_shape.1),
            ));
        }

        let needs: Vec<bool> = self.nodes.iter().map(|n| n.needs_grad).collect();
        let mut grads: Vec<Option<Tensor2>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor2::scalar(seed));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.stop {
                // Value flowed forward, gradient stops here.
                grads[i] = Some(g);
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Identity(a) => accumulate(&mut grads, &needs, *a, &g),
                Op::MatMul(a, b) => {
                    if needs[a.0] {
                        let ga = g.matmul_transpose_rhs(self.value(*b))?;
                        accumulate(&mut grads, &needs, *a, &ga);
                    }
                    if needs[b.0] {
                        let gb = self.value(*a).matmul_transpose_lhs(&g)?;
                        accumulate(&mut grads, &needs, *b, &gb);
                    }
                }
                Op::AddBias(a, bias) => {
                    if needs[bias.0] {
                        accumulate(&mut grads, &needs, *bias, &g.column_sums());
                    }
                    accumulate(&mut grads, &needs, *a, &g);
                }
                Op::Relu(a) => {
                    if needs[a.0] {
                        let x = self.value(*a);
                        let ga = g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 })?;
                        accumulate(&mut grads, &needs, *a, &ga);
                    }
                }
                Op::Tanh(a) => {
                    if needs[a.0] {
                        let y = &node.value;
                        let ga = g.zip_map(y, |gv, yv| gv * (1.0 - yv * yv))?;
                        accumulate(&mut grads, &needs, *a, &ga);
                    }
                }
                Op::Sigmoid(a) => {
                    if needs[a.0] {
                        let y = &node.value;
                        let ga = g.zip_map(y, |gv, yv| gv * yv * (1.0 - yv))?;
                        accumulate(&mut grads, &needs, *a, &ga);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, &needs, *a, &g);
                    accumulate(&mut grads, &needs, *b, &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, &needs, *a, &g);
                    if needs[b.0] {
                        let neg = g.map(|v| -v);
                        accumulate(&mut grads, &needs, *b, &neg);
                    }
                }
                Op::Mul(a, b) => {
                    if needs[a.0] {
                        let ga = g.zip_map(self.value(*b), |gv, bv| gv * bv)?;
                        accumulate(&mut grads, &needs, *a, &ga);
                    }
                    if needs[b.0] {
                        let gb = g.zip_map(self.value(*a), |gv, av| gv * av)?;
                        accumulate(&mut grads, &needs, *b, &gb);
                    }
                }
                Op::Scale(a, factor) => {
                    if needs[a.0] {
                        let ga = g.map(|v| v * factor);
                        accumulate(&mut grads, &needs, *a, &ga);
                    }
                }
                Op::GatherRows(a, indices) => {
                    if needs[a.0] {
                        let src = self.value(*a);
                        let mut ga = Tensor2::zeros(src.rows(), src.cols());
                        for (r, &idx) in indices.iter().enumerate() {
                            let grow = g.row(r);
                            for (o, &gv) in ga.row_mut(idx).iter_mut().zip(grow) {
                                *o += gv;
                            }
                        }
                        accumulate(&mut grads, &needs, *a, &ga);
                    }
                }
                Op::GatherEntries(a, entries) => {
                    if needs[a.0] {
                        let src = self.value(*a);
                        let mut ga = Tensor2::zeros(src.rows(), src.cols());
                        for (r, &(er, ec)) in entries.iter().enumerate() {
                            let v = ga.get(er, ec) + g.get(r, 0);
                            ga.set(er, ec, v);
                        }
                        accumulate(&mut grads, &needs, *a, &ga);
                    }
                }
                Op::SoftmaxRows(a) => {
                    if needs[a.0] {
                        let y = &node.value;
                        let mut ga = Tensor2::zeros(y.rows(), y.cols());
                        for r in 0..y.rows() {
                            let dot: f64 =
                                g.row(r).iter().zip(y.row(r)).map(|(&gv, &yv)| gv * yv).sum();
                            for ((o, &gv), &yv) in
                                ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r))
                            {
                                *o = yv * (gv - dot);
                            }
                        }
                        accumulate(&mut grads, &needs, *a, &ga);
                    }
                }
                Op::LogSoftmaxRows(a) => {
                    if needs[a.0] {
                        let y = &node.value;
                        let mut ga = Tensor2::zeros(y.rows(), y.cols());
                        for r in 0..y.rows() {
                            let gsum: f64 = g.row(r).iter().sum();
                            for ((o, &gv), &yv) in
                                ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r))
                            {
                                *o = gv - yv.exp() * gsum;
                            }
                        }
                        accumulate(&mut grads, &needs, *a, &ga);
                    }
                }
                Op::PairwiseSqDist(points, anchors) => {
                    let p = self.value(*points);
                    let a = self.value(*anchors);
                    let mut gp = Tensor2::zeros(p.rows(), p.cols());
                    let mut ga = Tensor2::zeros(a.rows(), a.cols());
                    for i in 0..p.rows() {
                        for j in 0..a.rows() {
                            let gv = g.get(i, j);
                            if gv == 0.0 {
                                continue;
                            }
                            for c in 0..p.cols() {
                                let diff = p.get(i, c) - a.get(j, c);
                                let delta = 2.0 * gv * diff;
                                gp.set(i, c, gp.get(i, c) + delta);
                                ga.set(j, c, ga.get(j, c) - delta);
                            }
                        }
                    }
                    accumulate(&mut grads, &needs, *points, &gp);
                    accumulate(&mut grads, &needs, *anchors, &ga);
                }
                Op::SumAll(a) => {
                    if needs[a.0] {
                        let gv = g.scalar_value();
                        let src = self.value(*a);
                        let ga = Tensor2::filled(src.rows(), src.cols(), gv);
                        accumulate(&mut grads, &needs, *a, &ga);
                    }
                }
                Op::StraightThrough { grad_to, .. } => {
                    accumulate(&mut grads, &needs, *grad_to, &g);
                }
            }
            grads[i] = Some(g);
        }

        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor2>], needs: &[bool], target: NodeId, delta: &Tensor2) {
    if !needs[target.0] {
        return;
    }
    match &mut grads[target.0] {
        Some(existing) => existing.add_scaled(delta, 1.0),
        slot => *slot = Some(delta.clone()),
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    for v in row.iter_mut() {
        *v -= log_sum;
    }
}

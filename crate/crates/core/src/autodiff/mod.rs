//! Minimal reverse-mode differentiation engine.
//!
//! A [`Tape`] records tensor operations in execution order; [`Tape::backward`]
//! walks the record once in reverse and accumulates gradients. Values are
//! dense row-major f64 arrays. Matrix products go through ndarray; everything
//! else is explicit loops.
//!
//! The operation set is exactly what the detector and denoiser need: shared
//! linear transforms, pointwise nonlinearities, edge-feature assembly, max
//! aggregation over neighbors and nodes, quaternion rotation, and the two
//! loss heads.

mod init;
pub mod gradcheck;

pub use init::{init_he, init_uniform};

use crate::error::{Error, Result};
use crate::graph::NeighborGraph;
use ndarray::ArrayView2;
use std::sync::Arc;

/// Dense row-major tensor value.
#[derive(Debug, Clone, PartialEq)]
pub struct Data {
    shape: Vec<usize>,
    vals: Vec<f64>,
}

impl Data {
    pub fn new(shape: Vec<usize>, vals: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != vals.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {numel} values, got {}",
                vals.len()
            )));
        }
        Ok(Data { shape, vals })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Data {
            shape,
            vals: vec![0.0; numel],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Data {
            shape: vec![1],
            vals: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn vals(&self) -> &[f64] {
        &self.vals
    }

    pub fn vals_mut(&mut self) -> &mut [f64] {
        &mut self.vals
    }

    pub fn numel(&self) -> usize {
        self.vals.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.vals[0]
    }

    /// Rows when the trailing dimension is the channel axis.
    fn lead(&self) -> usize {
        self.numel() / self.last_dim()
    }

    fn last_dim(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }
}

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorRef(usize);

#[derive(Debug)]
enum Op {
    Leaf {
        requires_grad: bool,
    },
    Linear {
        x: usize,
        w: usize,
        b: usize,
    },
    MatMul {
        a: usize,
        b: usize,
    },
    /// a · bᵀ
    MatMulT {
        a: usize,
        b: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        x: usize,
        c: f64,
    },
    Relu {
        x: usize,
    },
    Sigmoid {
        x: usize,
    },
    Tanh {
        x: usize,
    },
    Sum {
        x: usize,
    },
    /// |x − target| for scalar x.
    AbsErr {
        x: usize,
    },
    EdgeFeatures {
        x: usize,
        graph: Arc<NeighborGraph>,
    },
    MaxNeighbors {
        e: usize,
    },
    MaxNodes {
        x: usize,
    },
    ConcatCols {
        xs: Vec<usize>,
    },
    NormalizeQuat {
        q: usize,
        degenerate: bool,
    },
    QuatToRot {
        q: usize,
    },
    /// α·min_j ‖base + d − p_j‖² + (1−α)·max_j ‖base + d − p_j‖²
    LossAlpha {
        d: usize,
        base: [f64; 3],
        alpha: f64,
    },
}

struct Node {
    op: Op,
    value: Arc<Data>,
    grad: Option<Data>,
    /// Op-specific integer memo (argmax winners, loss selections).
    aux: Vec<usize>,
}

/// Ordered record of executed operations. Construction order is the
/// topological order; backward visits each node exactly once in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    quat_anomalies: usize,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Times a predicted quaternion fell below the normalization threshold
    /// and was replaced by the identity.
    pub fn quat_anomalies(&self) -> usize {
        self.quat_anomalies
    }

    pub fn value(&self, t: TensorRef) -> &Data {
        &self.nodes[t.0].value
    }

    pub fn grad(&self, t: TensorRef) -> Option<&Data> {
        self.nodes[t.0].grad.as_ref()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, op: Op, value: Data, aux: Vec<usize>) -> TensorRef {
        self.nodes.push(Node {
            op,
            value: Arc::new(value),
            grad: None,
            aux,
        });
        TensorRef(self.nodes.len() - 1)
    }

    /// New leaf owning `data`. Parameters set `requires_grad`.
    pub fn leaf(&mut self, data: Data, requires_grad: bool) -> TensorRef {
        self.nodes.push(Node {
            op: Op::Leaf { requires_grad },
            value: Arc::new(data),
            grad: None,
            aux: Vec::new(),
        });
        TensorRef(self.nodes.len() - 1)
    }

    /// New leaf sharing `data` without copying (used to bind model
    /// parameters into per-sample tapes).
    pub fn leaf_shared(&mut self, data: Arc<Data>, requires_grad: bool) -> TensorRef {
        self.nodes.push(Node {
            op: Op::Leaf { requires_grad },
            value: data,
            grad: None,
            aux: Vec::new(),
        });
        TensorRef(self.nodes.len() - 1)
    }

    /// y = x·w + b. `x` may carry leading batch dimensions; the trailing
    /// dimension must equal w's row count.
    pub fn linear(&mut self, x: TensorRef, w: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if wv.shape().len() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "weight must be 2-d, got {:?}",
                wv.shape()
            )));
        }
        let (wi, wo) = (wv.shape()[0], wv.shape()[1]);
        if xv.last_dim() != wi {
            return Err(Error::ShapeMismatch(format!(
                "linear: input channels {} vs weight rows {}",
                xv.last_dim(),
                wi
            )));
        }
        if bv.numel() != wo {
            return Err(Error::ShapeMismatch(format!(
                "linear: bias length {} vs weight cols {}",
                bv.numel(),
                wo
            )));
        }
        let rows = xv.lead();
        let mut out = mat_mul(xv.vals(), rows, wi, wv.vals(), wo, false);
        for r in 0..rows {
            for c in 0..wo {
                out[r * wo + c] += bv.vals()[c];
            }
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = wo;
        Ok(self.push(Op::Linear { x: x.0, w: w.0, b: b.0 }, Data { shape, vals: out }, vec![]))
    }

    /// Plain matrix product a·b for 2-d tensors.
    pub fn matmul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, m) = dims2(av)?;
        let (m2, p) = dims2(bv)?;
        if m != m2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul: inner dims {m} vs {m2}"
            )));
        }
        let out = mat_mul(av.vals(), n, m, bv.vals(), p, false);
        Ok(self.push(
            Op::MatMul { a: a.0, b: b.0 },
            Data { shape: vec![n, p], vals: out },
            vec![],
        ))
    }

    /// a·bᵀ for 2-d tensors (rotating row vectors by a matrix transpose).
    pub fn matmul_t(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, m) = dims2(av)?;
        let (p, m2) = dims2(bv)?;
        if m != m2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul_t: inner dims {m} vs {m2}"
            )));
        }
        let out = mat_mul(av.vals(), n, m, bv.vals(), p, true);
        Ok(self.push(
            Op::MatMulT { a: a.0, b: b.0 },
            Data { shape: vec![n, p], vals: out },
            vec![],
        ))
    }

    pub fn add(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::ShapeMismatch(format!(
                "add: {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let vals = av.vals().iter().zip(bv.vals()).map(|(x, y)| x + y).collect();
        let shape = av.shape().to_vec();
        Ok(self.push(Op::Add { a: a.0, b: b.0 }, Data { shape, vals }, vec![]))
    }

    pub fn mul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::ShapeMismatch(format!(
                "mul: {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let vals = av.vals().iter().zip(bv.vals()).map(|(x, y)| x * y).collect();
        let shape = av.shape().to_vec();
        Ok(self.push(Op::Mul { a: a.0, b: b.0 }, Data { shape, vals }, vec![]))
    }

    pub fn scale(&mut self, x: TensorRef, c: f64) -> TensorRef {
        let xv = self.value(x);
        let vals = xv.vals().iter().map(|v| v * c).collect();
        let shape = xv.shape().to_vec();
        self.push(Op::Scale { x: x.0, c }, Data { shape, vals }, vec![])
    }

    pub fn relu(&mut self, x: TensorRef) -> TensorRef {
        let xv = self.value(x);
        let vals = xv.vals().iter().map(|&v| v.max(0.0)).collect();
        let shape = xv.shape().to_vec();
        self.push(Op::Relu { x: x.0 }, Data { shape, vals }, vec![])
    }

    pub fn sigmoid(&mut self, x: TensorRef) -> TensorRef {
        let xv = self.value(x);
        let vals = xv.vals().iter().map(|&v| sigmoid(v)).collect();
        let shape = xv.shape().to_vec();
        self.push(Op::Sigmoid { x: x.0 }, Data { shape, vals }, vec![])
    }

    pub fn tanh(&mut self, x: TensorRef) -> TensorRef {
        let xv = self.value(x);
        let vals = xv.vals().iter().map(|&v| v.tanh()).collect();
        let shape = xv.shape().to_vec();
        self.push(Op::Tanh { x: x.0 }, Data { shape, vals }, vec![])
    }

    pub fn sum(&mut self, x: TensorRef) -> TensorRef {
        let s: f64 = self.value(x).vals().iter().sum();
        self.push(Op::Sum { x: x.0 }, Data::scalar(s), vec![])
    }

    /// |x − target| for a scalar x; the detector's per-sample loss.
    pub fn abs_err(&mut self, x: TensorRef, target: f64) -> Result<TensorRef> {
        let xv = self.value(x);
        if !xv.is_scalar() {
            return Err(Error::ShapeMismatch(format!(
                "abs_err needs a scalar, got {:?}",
                xv.shape()
            )));
        }
        let diff = xv.item() - target;
        // aux[0] encodes the sign branch: 0 negative, 1 zero, 2 positive.
        let branch = if diff > 0.0 {
            2
        } else if diff < 0.0 {
            0
        } else {
            1
        };
        Ok(self.push(Op::AbsErr { x: x.0 }, Data::scalar(diff.abs()), vec![branch]))
    }

    /// For node features x (n, c) and a graph with k neighbors: the edge
    /// tensor (n, k, 2c) holding (x_i, x_j − x_i) per edge.
    pub fn edge_features(&mut self, x: TensorRef, graph: Arc<NeighborGraph>) -> Result<TensorRef> {
        let xv = self.value(x);
        let (n, c) = dims2(xv)?;
        if graph.node_count() != n {
            return Err(Error::LengthMismatch {
                what: "graph nodes vs feature rows",
                expected: n,
                got: graph.node_count(),
            });
        }
        let k = graph.k();
        let mut vals = vec![0.0; n * k * 2 * c];
        for i in 0..n {
            let xi = &xv.vals()[i * c..(i + 1) * c];
            for (s, &j) in graph.neighbors_of(i).iter().enumerate() {
                let xj = &xv.vals()[j * c..(j + 1) * c];
                let base = (i * k + s) * 2 * c;
                vals[base..base + c].copy_from_slice(xi);
                for t in 0..c {
                    vals[base + c + t] = xj[t] - xi[t];
                }
            }
        }
        Ok(self.push(
            Op::EdgeFeatures { x: x.0, graph },
            Data { shape: vec![n, k, 2 * c], vals },
            vec![],
        ))
    }

    /// Elementwise max over the neighbor axis: (n, k, c) → (n, c).
    /// Gradient routes to the first argmax on ties.
    pub fn max_over_neighbors(&mut self, e: TensorRef) -> Result<TensorRef> {
        let ev = self.value(e);
        if ev.shape().len() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "max_over_neighbors needs (n, k, c), got {:?}",
                ev.shape()
            )));
        }
        let (n, k, c) = (ev.shape()[0], ev.shape()[1], ev.shape()[2]);
        if k == 0 {
            return Err(Error::InvalidArgument(
                "max_over_neighbors: neighbor axis is empty".into(),
            ));
        }
        let mut vals = vec![0.0; n * c];
        let mut arg = vec![0usize; n * c];
        for i in 0..n {
            for t in 0..c {
                let mut best = ev.vals()[(i * k) * c + t];
                let mut best_s = 0usize;
                for s in 1..k {
                    let v = ev.vals()[(i * k + s) * c + t];
                    if v > best {
                        best = v;
                        best_s = s;
                    }
                }
                vals[i * c + t] = best;
                arg[i * c + t] = best_s;
            }
        }
        Ok(self.push(
            Op::MaxNeighbors { e: e.0 },
            Data { shape: vec![n, c], vals },
            arg,
        ))
    }

    /// Global max pool over the node axis: (n, c) → (1, c).
    pub fn max_over_nodes(&mut self, x: TensorRef) -> Result<TensorRef> {
        let xv = self.value(x);
        let (n, c) = dims2(xv)?;
        if n == 0 {
            return Err(Error::InvalidArgument(
                "max_over_nodes: node axis is empty".into(),
            ));
        }
        let mut vals = vec![0.0; c];
        let mut arg = vec![0usize; c];
        for t in 0..c {
            let mut best = xv.vals()[t];
            let mut best_i = 0usize;
            for i in 1..n {
                let v = xv.vals()[i * c + t];
                if v > best {
                    best = v;
                    best_i = i;
                }
            }
            vals[t] = best;
            arg[t] = best_i;
        }
        Ok(self.push(
            Op::MaxNodes { x: x.0 },
            Data { shape: vec![1, c], vals },
            arg,
        ))
    }

    /// Concatenates 2-d tensors with equal row counts along the channel axis.
    pub fn concat_cols(&mut self, xs: &[TensorRef]) -> Result<TensorRef> {
        if xs.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let (rows, _) = dims2(self.value(xs[0]))?;
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let (r, c) = dims2(self.value(x))?;
            if r != rows {
                return Err(Error::ShapeMismatch(format!(
                    "concat_cols: row counts {rows} vs {r}"
                )));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut vals = vec![0.0; rows * total];
        let mut offset = 0;
        for (&x, &c) in xs.iter().zip(&widths) {
            let xv = self.value(x);
            for r in 0..rows {
                vals[r * total + offset..r * total + offset + c]
                    .copy_from_slice(&xv.vals()[r * c..(r + 1) * c]);
            }
            offset += c;
        }
        Ok(self.push(
            Op::ConcatCols {
                xs: xs.iter().map(|t| t.0).collect(),
            },
            Data { shape: vec![rows, total], vals },
            vec![],
        ))
    }

    /// q/‖q‖ for a 4-vector. Below the 1e-8 norm threshold the result is the
    /// identity quaternion with zero gradient; the event is counted as an
    /// anomaly rather than an error so training never aborts mid-batch.
    pub fn normalize_quat(&mut self, q: TensorRef) -> Result<TensorRef> {
        let qv = self.value(q);
        if qv.numel() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "normalize_quat needs 4 values, got {:?}",
                qv.shape()
            )));
        }
        let norm = qv.vals().iter().map(|v| v * v).sum::<f64>().sqrt();
        let degenerate = norm < 1e-8;
        let vals = if degenerate {
            vec![1.0, 0.0, 0.0, 0.0]
        } else {
            qv.vals().iter().map(|v| v / norm).collect()
        };
        let shape = qv.shape().to_vec();
        if degenerate {
            self.quat_anomalies += 1;
        }
        Ok(self.push(
            Op::NormalizeQuat { q: q.0, degenerate },
            Data { shape, vals },
            vec![],
        ))
    }

    /// Standard unit-quaternion (w, x, y, z) to rotation matrix. The input
    /// is taken as already normalized.
    pub fn quat_to_rot(&mut self, q: TensorRef) -> Result<TensorRef> {
        let qv = self.value(q);
        if qv.numel() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "quat_to_rot needs 4 values, got {:?}",
                qv.shape()
            )));
        }
        let r = quat_rotation_entries(qv.vals());
        Ok(self.push(
            Op::QuatToRot { q: q.0 },
            Data { shape: vec![3, 3], vals: r.to_vec() },
            vec![],
        ))
    }

    /// The denoiser training loss for one point: with p̃ = base + d,
    /// α·min_j‖p̃ − p_j‖² + (1−α)·max_j‖p̃ − p_j‖² over the fixed
    /// neighborhood. Gradients flow through the selected terms only; the
    /// selection is treated as constant (first index on ties).
    pub fn loss_alpha(
        &mut self,
        d: TensorRef,
        base: [f64; 3],
        neighborhood: &[[f64; 3]],
        alpha: f64,
    ) -> Result<TensorRef> {
        let dv = self.value(d);
        if dv.numel() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "loss_alpha displacement needs 3 values, got {:?}",
                dv.shape()
            )));
        }
        if neighborhood.is_empty() {
            return Err(Error::InvalidArgument(
                "loss_alpha: empty neighborhood".into(),
            ));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in [0, 1], got {alpha}"
            )));
        }
        let p = [
            base[0] + dv.vals()[0],
            base[1] + dv.vals()[1],
            base[2] + dv.vals()[2],
        ];
        let mut min_d = f64::INFINITY;
        let mut max_d = f64::NEG_INFINITY;
        let mut j_min = 0usize;
        let mut j_max = 0usize;
        for (j, nb) in neighborhood.iter().enumerate() {
            let dsq = dist_sq3(p, *nb);
            if dsq < min_d {
                min_d = dsq;
                j_min = j;
            }
            if dsq > max_d {
                max_d = dsq;
                j_max = j;
            }
        }
        let loss = alpha * min_d + (1.0 - alpha) * max_d;
        // Backward needs the two selected target points; stash them by
        // storing the neighborhood rows in aux-adjacent value memory is
        // overkill — keep the coordinates in the op itself via base reuse.
        let nearest = neighborhood[j_min];
        let farthest = neighborhood[j_max];
        let op = Op::LossAlpha { d: d.0, base, alpha };
        let node = self.push(op, Data::scalar(loss), vec![j_min, j_max]);
        // Selected target coordinates, flattened behind the argmin/argmax
        // memo as bit patterns so backward does not need the neighborhood.
        let aux = &mut self.nodes[node.0].aux;
        for v in nearest.iter().chain(farthest.iter()) {
            aux.push(v.to_bits() as usize);
        }
        Ok(node)
    }

    /// Populates gradients of everything reachable from `loss`. Each call
    /// propagates a fresh unit seed from the loss and adds the result into
    /// the stored gradients, so repeated calls without [`Tape::zero_grads`]
    /// accumulate.
    pub fn backward(&mut self, loss: TensorRef) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut flow: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        flow[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            self.step_backward(id, &mut flow);
        }
        for (node, f) in self.nodes.iter_mut().zip(flow) {
            // constant leaves don't retain gradients
            if let Op::Leaf {
                requires_grad: false,
            } = node.op
            {
                continue;
            }
            if let Some(f) = f {
                let slot = node
                    .grad
                    .get_or_insert_with(|| Data::zeros(node.value.shape().to_vec()));
                add_into(slot, &f);
            }
        }
        Ok(())
    }

    fn step_backward(&self, id: usize, flow: &mut [Option<Vec<f64>>]) {
        let Some(g) = flow[id].clone() else {
            return;
        };
        match &self.nodes[id].op {
            Op::Leaf { .. } => {}
            Op::Linear { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                let xv = self.nodes[x].value.clone();
                let wv = self.nodes[w].value.clone();
                let rows = xv.lead();
                let (wi, wo) = (wv.shape()[0], wv.shape()[1]);
                // dx = g · wᵀ
                let dx = mat_mul(&g, rows, wo, wv.vals(), wi, true);
                flow_add(flow, x, &dx);
                // dw = xᵀ · g
                let dw = mat_mul_at_b(xv.vals(), rows, wi, &g, wo);
                flow_add(flow, w, &dw);
                // db = column sums of g
                let mut db = vec![0.0; wo];
                for r in 0..rows {
                    for c in 0..wo {
                        db[c] += g[r * wo + c];
                    }
                }
                flow_add(flow, b, &db);
            }
            Op::MatMul { a, b } => {
                let (a, b) = (*a, *b);
                let av = self.nodes[a].value.clone();
                let bv = self.nodes[b].value.clone();
                let (n, m) = (av.shape()[0], av.shape()[1]);
                let p = bv.shape()[1];
                let da = mat_mul(&g, n, p, bv.vals(), m, true);
                flow_add(flow, a, &da);
                let db = mat_mul_at_b(av.vals(), n, m, &g, p);
                flow_add(flow, b, &db);
            }
            Op::MatMulT { a, b } => {
                let (a, b) = (*a, *b);
                let av = self.nodes[a].value.clone();
                let bv = self.nodes[b].value.clone();
                let (n, m) = (av.shape()[0], av.shape()[1]);
                let p = bv.shape()[0];
                // y = a·bᵀ: da = g·b, db = gᵀ·a
                let da = mat_mul(&g, n, p, bv.vals(), m, false);
                flow_add(flow, a, &da);
                let db = mat_mul_at_b(&g, n, p, av.vals(), m);
                flow_add(flow, b, &db);
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                flow_add(flow, a, &g);
                flow_add(flow, b, &g);
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                let av = self.nodes[a].value.clone();
                let bv = self.nodes[b].value.clone();
                let da: Vec<f64> = g.iter().zip(bv.vals()).map(|(gi, bi)| gi * bi).collect();
                flow_add(flow, a, &da);
                let db: Vec<f64> = g.iter().zip(av.vals()).map(|(gi, ai)| gi * ai).collect();
                flow_add(flow, b, &db);
            }
            Op::Scale { x, c } => {
                let (x, c) = (*x, *c);
                let dx: Vec<f64> = g.iter().map(|gi| gi * c).collect();
                flow_add(flow, x, &dx);
            }
            Op::Relu { x } => {
                let x = *x;
                let xv = self.nodes[x].value.clone();
                let dx: Vec<f64> = g
                    .iter()
                    .zip(xv.vals())
                    .map(|(gi, &xi)| if xi > 0.0 { *gi } else { 0.0 })
                    .collect();
                flow_add(flow, x, &dx);
            }
            Op::Sigmoid { x } => {
                let x = *x;
                let yv = self.nodes[id].value.clone();
                let dx: Vec<f64> = g
                    .iter()
                    .zip(yv.vals())
                    .map(|(gi, &yi)| gi * yi * (1.0 - yi))
                    .collect();
                flow_add(flow, x, &dx);
            }
            Op::Tanh { x } => {
                let x = *x;
                let yv = self.nodes[id].value.clone();
                let dx: Vec<f64> = g
                    .iter()
                    .zip(yv.vals())
                    .map(|(gi, &yi)| gi * (1.0 - yi * yi))
                    .collect();
                flow_add(flow, x, &dx);
            }
            Op::Sum { x } => {
                let x = *x;
                let n = self.nodes[x].value.numel();
                let dx = vec![g[0]; n];
                flow_add(flow, x, &dx);
            }
            Op::AbsErr { x } => {
                let x = *x;
                let sign = match self.nodes[id].aux[0] {
                    0 => -1.0,
                    1 => 0.0,
                    _ => 1.0,
                };
                flow_add(flow, x, &[g[0] * sign]);
            }
            Op::EdgeFeatures { x, graph } => {
                let x = *x;
                let graph = graph.clone();
                let c = self.nodes[x].value.last_dim();
                let n = graph.node_count();
                let k = graph.k();
                let mut dx = vec![0.0; n * c];
                for i in 0..n {
                    for (s, &j) in graph.neighbors_of(i).iter().enumerate() {
                        let base = (i * k + s) * 2 * c;
                        for t in 0..c {
                            let g_abs = g[base + t];
                            let g_diff = g[base + c + t];
                            dx[i * c + t] += g_abs - g_diff;
                            dx[j * c + t] += g_diff;
                        }
                    }
                }
                flow_add(flow, x, &dx);
            }
            Op::MaxNeighbors { e } => {
                let e = *e;
                let eshape = self.nodes[e].value.shape().to_vec();
                let (k, c) = (eshape[1], eshape[2]);
                let n = eshape[0];
                let arg = self.nodes[id].aux.clone();
                let mut de = vec![0.0; n * k * c];
                for i in 0..n {
                    for t in 0..c {
                        let s = arg[i * c + t];
                        de[(i * k + s) * c + t] += g[i * c + t];
                    }
                }
                flow_add(flow, e, &de);
            }
            Op::MaxNodes { x } => {
                let x = *x;
                let xshape = self.nodes[x].value.shape().to_vec();
                let (n, c) = (xshape[0], xshape[1]);
                let arg = self.nodes[id].aux.clone();
                let mut dx = vec![0.0; n * c];
                for t in 0..c {
                    dx[arg[t] * c + t] += g[t];
                }
                flow_add(flow, x, &dx);
            }
            Op::ConcatCols { xs } => {
                let xs = xs.clone();
                let rows = self.nodes[id].value.shape()[0];
                let total = self.nodes[id].value.shape()[1];
                let mut offset = 0;
                for xid in xs {
                    let c = self.nodes[xid].value.last_dim();
                    let mut dx = vec![0.0; rows * c];
                    for r in 0..rows {
                        dx[r * c..(r + 1) * c]
                            .copy_from_slice(&g[r * total + offset..r * total + offset + c]);
                    }
                    flow_add(flow, xid, &dx);
                    offset += c;
                }
            }
            Op::NormalizeQuat { q, degenerate } => {
                let (q, degenerate) = (*q, *degenerate);
                if degenerate {
                    return;
                }
                let qv = self.nodes[q].value.clone();
                let norm = qv.vals().iter().map(|v| v * v).sum::<f64>().sqrt();
                let yv = self.nodes[id].value.clone();
                let dot: f64 = yv.vals().iter().zip(&g).map(|(y, gi)| y * gi).sum();
                let dq: Vec<f64> = g
                    .iter()
                    .zip(yv.vals())
                    .map(|(gi, yi)| (gi - yi * dot) / norm)
                    .collect();
                flow_add(flow, q, &dq);
            }
            Op::QuatToRot { q } => {
                let q = *q;
                let qv = self.nodes[q].value.clone();
                let dq = quat_rotation_backward(qv.vals(), &g);
                flow_add(flow, q, &dq);
            }
            Op::LossAlpha { d, base, alpha } => {
                let (d, base, alpha) = (*d, *base, *alpha);
                let aux = self.nodes[id].aux.clone();
                let near = [
                    f64::from_bits(aux[2] as u64),
                    f64::from_bits(aux[3] as u64),
                    f64::from_bits(aux[4] as u64),
                ];
                let far = [
                    f64::from_bits(aux[5] as u64),
                    f64::from_bits(aux[6] as u64),
                    f64::from_bits(aux[7] as u64),
                ];
                let dv = self.nodes[d].value.clone();
                let p = [
                    base[0] + dv.vals()[0],
                    base[1] + dv.vals()[1],
                    base[2] + dv.vals()[2],
                ];
                let mut dd = [0.0; 3];
                for t in 0..3 {
                    dd[t] = g[0]
                        * (2.0 * alpha * (p[t] - near[t])
                            + 2.0 * (1.0 - alpha) * (p[t] - far[t]));
                }
                flow_add(flow, d, &dd);
            }
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn dist_sq3(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn dims2(d: &Data) -> Result<(usize, usize)> {
    if d.shape().len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "expected a 2-d tensor, got {:?}",
            d.shape()
        )));
    }
    Ok((d.shape()[0], d.shape()[1]))
}

fn flow_add(flow: &mut [Option<Vec<f64>>], id: usize, inc: &[f64]) {
    match &mut flow[id] {
        Some(v) => {
            debug_assert_eq!(v.len(), inc.len());
            for (s, i) in v.iter_mut().zip(inc) {
                *s += i;
            }
        }
        None => flow[id] = Some(inc.to_vec()),
    }
}

fn add_into(slot: &mut Data, inc: &[f64]) {
    debug_assert_eq!(slot.vals.len(), inc.len());
    for (s, i) in slot.vals.iter_mut().zip(inc) {
        *s += i;
    }
}

/// a (n×m) times b (m×p), or times bᵀ when `transpose_b` with b stored
/// (p×m). ndarray's dot carries the heavy lifting.
fn mat_mul(a: &[f64], n: usize, m: usize, b: &[f64], p: usize, transpose_b: bool) -> Vec<f64> {
    let av = ArrayView2::from_shape((n, m), a).expect("lhs shape");
    let out = if transpose_b {
        let bv = ArrayView2::from_shape((p, m), b).expect("rhs shape");
        av.dot(&bv.t())
    } else {
        let bv = ArrayView2::from_shape((m, p), b).expect("rhs shape");
        av.dot(&bv)
    };
    out.into_raw_vec_and_offset().0
}

/// aᵀ (m×n as stored n×m) times b (n×p) → (m×p).
fn mat_mul_at_b(a: &[f64], n: usize, m: usize, b: &[f64], p: usize) -> Vec<f64> {
    let av = ArrayView2::from_shape((n, m), a).expect("lhs shape");
    let bv = ArrayView2::from_shape((n, p), b).expect("rhs shape");
    av.t().dot(&bv).into_raw_vec_and_offset().0
}

/// Rotation matrix entries for a unit quaternion (w, x, y, z), row-major.
pub(crate) fn quat_rotation_entries(q: &[f64]) -> [f64; 9] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    [
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - z * w),
        2.0 * (x * z + y * w),
        2.0 * (x * y + z * w),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - x * w),
        2.0 * (x * z - y * w),
        2.0 * (y * z + x * w),
        1.0 - 2.0 * (x * x + y * y),
    ]
}

/// d(loss)/dq given d(loss)/dR, for the rotation entries above.
fn quat_rotation_backward(q: &[f64], g: &[f64]) -> [f64; 4] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let dw = 2.0
        * (-z * g[1] + y * g[2] + z * g[3] - x * g[5] - y * g[6] + x * g[7]);
    let dx = 2.0
        * (y * g[1] + z * g[2] + y * g[3] - 2.0 * x * g[4] - w * g[5] + z * g[6] + w * g[7]
            - 2.0 * x * g[8]);
    let dy = 2.0
        * (-2.0 * y * g[0] + x * g[1] + w * g[2] + x * g[3] + z * g[5] - w * g[6] + z * g[7]
            - 2.0 * y * g[8]);
    let dz = 2.0
        * (-2.0 * z * g[0] - w * g[1] + x * g[2] + w * g[3] - 2.0 * z * g[4] + y * g[5]
            + x * g[6]
            + y * g[7]);
    [dw, dx, dy, dz]
}

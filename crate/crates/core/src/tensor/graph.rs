//! The computation tape: eagerly-evaluated operation records with reverse-mode
//! gradient propagation.

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node inside one [`Graph`]. Only meaningful for the graph that
/// produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { a: NodeId, b: NodeId },
    /// `bias == true` means `b` is a rank-1 vector added along the last axis.
    Add { a: NodeId, b: NodeId, bias: bool },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { a: NodeId, c: f64 },
    Shift { a: NodeId, c: f64 },
    Concat { inputs: Vec<NodeId>, axis: usize },
    Slice { a: NodeId, axis: usize, start: usize, end: usize },
    Relu { a: NodeId },
    Sigmoid { a: NodeId },
    Tanh { a: NodeId },
    Exp { a: NodeId },
    Log { a: NodeId },
    Softmax { a: NodeId },
    LayerNorm { a: NodeId, gamma: Option<NodeId>, beta: Option<NodeId>, eps: f64 },
    Conv1d { x: NodeId, w: NodeId, b: NodeId, window: usize },
    MaxOverTime { a: NodeId, argmax: Vec<usize> },
    Embedding { table: NodeId, ids: Vec<usize> },
    CrossEntropy { logits: NodeId, target: NodeId },
    BroadcastRows { v: NodeId, rows: usize },
    Transpose { a: NodeId },
    Reshape { a: NodeId },
    Sum { a: NodeId },
    Mean { a: NodeId },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// An ordered tape of operations. Nodes are appended (and evaluated) in
/// insertion order; `backward` revisits them in exact reverse order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// `C[m,n] = A[m,k] @ B[k,n]`, row-major.
pub(crate) fn matmul_2d(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += aip * brow[j];
            }
        }
    }
    c
}

fn transpose_2d(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a populated tensor as a leaf node.
    pub fn leaf(&mut self, tensor: Tensor) -> NodeId {
        self.push(Op::Leaf, tensor)
    }

    /// Leaf that never receives a gradient (masks, positional tables, noise).
    pub fn constant(&mut self, mut tensor: Tensor) -> NodeId {
        tensor.requires_grad = false;
        self.push(Op::Leaf, tensor)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Value of the final node; the graph's intermediate values are already
    /// cached on the tape for the backward pass.
    pub fn forward(&self) -> Result<&Tensor> {
        self.nodes
            .last()
            .map(|n| &n.value)
            .ok_or(Error::InvalidNode(0))
    }

    /// Gradient of the most recent `backward` call with respect to node `id`.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].value.grad.as_deref()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].value.shape
    }

    fn data(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value.data
    }

    // ── Forward ops ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_2d(self.data(a), self.data(b), m, k, n);
        Ok(self.push(Op::Matmul { a, b }, Tensor::new(vec![m, n], data)))
    }

    /// Elementwise add of equal shapes, or a rank-1 bias broadcast along the
    /// last axis when `b` is a vector of matching width.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa == sb {
            let data: Vec<f64> = self
                .data(a)
                .iter()
                .zip(self.data(b))
                .map(|(x, y)| x + y)
                .collect();
            return Ok(self.push(Op::Add { a, b, bias: false }, Tensor::new(sa, data)));
        }
        let last = *sa.last().unwrap_or(&0);
        if sb.len() == 1 && sb[0] == last {
            let bd = self.data(b).to_vec();
            let data: Vec<f64> = self
                .data(a)
                .iter()
                .enumerate()
                .map(|(i, x)| x + bd[i % last])
                .collect();
            return Ok(self.push(Op::Add { a, b, bias: true }, Tensor::new(sa, data)));
        }
        Err(shape_err("add", format!("{sa:?} + {sb:?}")))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa != sb {
            return Err(shape_err("sub", format!("{sa:?} - {sb:?}")));
        }
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.push(Op::Sub { a, b }, Tensor::new(sa, data)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa != sb {
            return Err(shape_err("multiply", format!("{sa:?} * {sb:?}")));
        }
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(Op::Mul { a, b }, Tensor::new(sa, data)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let shape = self.shape(a).to_vec();
        let data = self.data(a).iter().map(|x| x * c).collect();
        self.push(Op::Scale { a, c }, Tensor::new(shape, data))
    }

    pub fn shift(&mut self, a: NodeId, c: f64) -> NodeId {
        let shape = self.shape(a).to_vec();
        let data = self.data(a).iter().map(|x| x + c).collect();
        self.push(Op::Shift { a, c }, Tensor::new(shape, data))
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(shape_err("concatenate", "no inputs".into()));
        }
        let rank = self.shape(inputs[0]).len();
        if axis >= rank {
            return Err(shape_err("concatenate", format!("axis {axis} for rank {rank}")));
        }
        let mut out_shape = self.shape(inputs[0]).to_vec();
        out_shape[axis] = 0;
        for &id in inputs {
            let s = self.shape(id);
            if s.len() != rank
                || s.iter()
                    .zip(&out_shape)
                    .enumerate()
                    .any(|(d, (x, y))| d != axis && x != y)
            {
                return Err(shape_err(
                    "concatenate",
                    format!("incompatible shape {s:?} along axis {axis}"),
                ));
            }
            out_shape[axis] += s[axis];
        }
        // Row-major copy: iterate outer blocks, append each input's slice.
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let numel: usize = out_shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for o in 0..outer {
            for &id in inputs {
                let s_axis = self.shape(id)[axis];
                let chunk = s_axis * inner;
                let src = &self.data(id)[o * chunk..(o + 1) * chunk];
                data.extend_from_slice(src);
            }
        }
        Ok(self.push(
            Op::Concat { inputs: inputs.to_vec(), axis },
            Tensor::new(out_shape, data),
        ))
    }

    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        if axis >= sa.len() || start >= end || end > sa[axis] {
            return Err(shape_err(
                "slice",
                format!("range {start}..{end} on axis {axis} of {sa:?}"),
            ));
        }
        let mut out_shape = sa.clone();
        out_shape[axis] = end - start;
        let outer: usize = sa[..axis].iter().product();
        let inner: usize = sa[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(out_shape.iter().product());
        let src = self.data(a);
        for o in 0..outer {
            let base = o * sa[axis] * inner;
            data.extend_from_slice(&src[base + start * inner..base + end * inner]);
        }
        Ok(self.push(Op::Slice { a, axis, start, end }, Tensor::new(out_shape, data)))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape(a).to_vec();
        let data = self.data(a).iter().map(|&x| x.max(0.0)).collect();
        self.push(Op::Relu { a }, Tensor::new(shape, data))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape(a).to_vec();
        let data = self
            .data(a)
            .iter()
            .map(|&x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        self.push(Op::Sigmoid { a }, Tensor::new(shape, data))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape(a).to_vec();
        let data = self.data(a).iter().map(|&x| x.tanh()).collect();
        self.push(Op::Tanh { a }, Tensor::new(shape, data))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape(a).to_vec();
        let data = self.data(a).iter().map(|&x| x.exp()).collect();
        self.push(Op::Exp { a }, Tensor::new(shape, data))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape(a).to_vec();
        let data = self.data(a).iter().map(|&x| x.ln()).collect();
        self.push(Op::Log { a }, Tensor::new(shape, data))
    }

    /// Softmax along the last axis (temperature 1). Rank-1 tensors are a
    /// single row.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape(a).to_vec();
        let cols = *shape.last().unwrap();
        let src = self.data(a);
        let mut data = vec![0.0; src.len()];
        for (row_out, row_in) in data.chunks_mut(cols).zip(src.chunks(cols)) {
            let max = row_in.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &x) in row_out.iter_mut().zip(row_in) {
                *o = (x - max).exp();
                sum += *o;
            }
            for o in row_out.iter_mut() {
                *o /= sum;
            }
        }
        self.push(Op::Softmax { a }, Tensor::new(shape, data))
    }

    /// Per-position (row-wise) layer normalization with optional learned
    /// scale/shift vectors.
    pub fn layer_norm(
        &mut self,
        a: NodeId,
        gamma: Option<NodeId>,
        beta: Option<NodeId>,
        eps: f64,
    ) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        let cols = *shape.last().unwrap();
        for (name, id) in [("scale", gamma), ("shift", beta)] {
            if let Some(id) = id {
                let s = self.shape(id);
                if s != [cols] {
                    return Err(shape_err(
                        "layer_norm",
                        format!("{name} shape {s:?}, expected [{cols}]"),
                    ));
                }
            }
        }
        let src = self.data(a);
        let g = gamma.map(|id| self.data(id).to_vec());
        let b = beta.map(|id| self.data(id).to_vec());
        let mut data = vec![0.0; src.len()];
        for (row_out, row_in) in data.chunks_mut(cols).zip(src.chunks(cols)) {
            let mean = row_in.iter().sum::<f64>() / cols as f64;
            let var = row_in.iter().map(|&x| (x - mean).powi(2)).sum::<f64>() / cols as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for (j, (o, &x)) in row_out.iter_mut().zip(row_in).enumerate() {
                let norm = (x - mean) * inv_std;
                let scaled = match &g {
                    Some(g) => norm * g[j],
                    None => norm,
                };
                *o = match &b {
                    Some(b) => scaled + b[j],
                    None => scaled,
                };
            }
        }
        Ok(self.push(Op::LayerNorm { a, gamma, beta, eps }, Tensor::new(shape, data)))
    }

    /// 1-D convolution over the sequence axis. `x` is `T x C`, the kernel `w`
    /// is `(window*C) x M` (flattened window content by rows), `b` is `M`.
    /// Produces `(T - window + 1) x M`.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: NodeId, window: usize) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let sb = self.shape(b).to_vec();
        if sx.len() != 2 || sw.len() != 2 || sb.len() != 1 {
            return Err(shape_err("conv1d", format!("x {sx:?}, w {sw:?}, b {sb:?}")));
        }
        let (t, c) = (sx[0], sx[1]);
        let m = sw[1];
        if sw[0] != window * c || sb[0] != m || t < window {
            return Err(shape_err(
                "conv1d",
                format!("x {sx:?}, w {sw:?}, b {sb:?}, window {window}"),
            ));
        }
        let positions = t - window + 1;
        let xd = self.data(x);
        let wd = self.data(w);
        let bd = self.data(b);
        let mut data = vec![0.0; positions * m];
        for i in 0..positions {
            let out_row = &mut data[i * m..(i + 1) * m];
            out_row.copy_from_slice(bd);
            for j in 0..window {
                for ch in 0..c {
                    let xv = xd[(i + j) * c + ch];
                    if xv == 0.0 {
                        continue;
                    }
                    let wrow = &wd[(j * c + ch) * m..(j * c + ch + 1) * m];
                    for (o, &wv) in out_row.iter_mut().zip(wrow) {
                        *o += xv * wv;
                    }
                }
            }
        }
        Ok(self.push(
            Op::Conv1d { x, w, b, window },
            Tensor::new(vec![positions, m], data),
        ))
    }

    /// Column-wise max over the position axis: `P x M -> M`. The gradient is
    /// routed to the argmax position per feature; ties break to the lowest
    /// index.
    pub fn max_over_time(&mut self, a: NodeId) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 2 {
            return Err(shape_err("max_over_time", format!("{sa:?}")));
        }
        let (p, m) = (sa[0], sa[1]);
        let src = self.data(a);
        let mut out = vec![f64::NEG_INFINITY; m];
        let mut argmax = vec![0usize; m];
        for i in 0..p {
            for j in 0..m {
                let v = src[i * m + j];
                if v > out[j] {
                    out[j] = v;
                    argmax[j] = i;
                }
            }
        }
        Ok(self.push(Op::MaxOverTime { a, argmax }, Tensor::new(vec![m], out)))
    }

    /// Row lookup: `ids` select rows of the `V x D` table, producing `T x D`.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 {
            return Err(shape_err("embedding", format!("table {st:?}")));
        }
        let (v, d) = (st[0], st[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(shape_err("embedding", format!("id {bad} out of range {v}")));
        }
        let src = self.data(table);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        Ok(self.push(
            Op::Embedding { table, ids: ids.to_vec() },
            Tensor::new(vec![ids.len(), d], data),
        ))
    }

    /// Per-row cross-entropy between logits and a target distribution,
    /// computed through log-sum-exp. Both are `R x V`; output is length `R`.
    pub fn cross_entropy(&mut self, logits: NodeId, target: NodeId) -> Result<NodeId> {
        let (sl, st) = (self.shape(logits).to_vec(), self.shape(target).to_vec());
        if sl.len() != 2 || sl != st {
            return Err(shape_err("cross_entropy", format!("logits {sl:?}, target {st:?}")));
        }
        let (rows, v) = (sl[0], sl[1]);
        let ld = self.data(logits);
        let td = self.data(target);
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            let lrow = &ld[r * v..(r + 1) * v];
            let trow = &td[r * v..(r + 1) * v];
            let max = lrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + lrow.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            let tmass: f64 = trow.iter().sum();
            let dot: f64 = lrow.iter().zip(trow).map(|(l, t)| l * t).sum();
            out[r] = tmass * lse - dot;
        }
        Ok(self.push(Op::CrossEntropy { logits, target }, Tensor::new(vec![rows], out)))
    }

    /// Repeat a rank-1 vector as `rows` identical rows.
    pub fn broadcast_rows(&mut self, v: NodeId, rows: usize) -> Result<NodeId> {
        let sv = self.shape(v).to_vec();
        if sv.len() != 1 {
            return Err(shape_err("broadcast_rows", format!("{sv:?}")));
        }
        let d = sv[0];
        let src = self.data(v).to_vec();
        let mut data = Vec::with_capacity(rows * d);
        for _ in 0..rows {
            data.extend_from_slice(&src);
        }
        Ok(self.push(Op::BroadcastRows { v, rows }, Tensor::new(vec![rows, d], data)))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 2 {
            return Err(shape_err("transpose", format!("{sa:?}")));
        }
        let data = transpose_2d(self.data(a), sa[0], sa[1]);
        Ok(self.push(Op::Transpose { a }, Tensor::new(vec![sa[1], sa[0]], data)))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[a.0].value.numel() {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape(a)),
            ));
        }
        let data = self.data(a).to_vec();
        Ok(self.push(Op::Reshape { a }, Tensor::new(shape, data)))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.data(a).iter().sum();
        self.push(Op::Sum { a }, Tensor::scalar(s))
    }

    /// Mean of all elements, as a scalar node.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a.0].value.numel() as f64;
        let s: f64 = self.data(a).iter().sum();
        self.push(Op::Mean { a }, Tensor::scalar(s / n))
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Accumulate `d loss / d node` into every node's tensor, visiting the
    /// tape in exact reverse insertion order. The loss node must be scalar.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let loss_tensor = &self.nodes[loss.0].value;
        if !loss_tensor.is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: loss_tensor.shape.clone(),
            });
        }
        let n = self.nodes.len();
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|node| vec![0.0; node.value.numel()])
            .collect();
        grads[loss.0][0] = 1.0;

        for i in (0..n).rev() {
            let g = std::mem::take(&mut grads[i]);
            if g.iter().all(|&x| x == 0.0) {
                grads[i] = g;
                continue;
            }
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let (a, b) = (*a, *b);
                    let sa = self.shape(a).to_vec();
                    let sb = self.shape(b).to_vec();
                    let (m, k, nn) = (sa[0], sa[1], sb[1]);
                    let bt = transpose_2d(self.data(b), k, nn);
                    let da = matmul_2d(&g, &bt, m, nn, k);
                    let at = transpose_2d(self.data(a), m, k);
                    let db = matmul_2d(&at, &g, k, m, nn);
                    accumulate(&mut grads[a.0], &da);
                    accumulate(&mut grads[b.0], &db);
                }
                Op::Add { a, b, bias } => {
                    let (a, b, bias) = (*a, *b, *bias);
                    accumulate(&mut grads[a.0], &g);
                    if bias {
                        let width = self.shape(b)[0];
                        let gb = &mut grads[b.0];
                        for (idx, &gv) in g.iter().enumerate() {
                            gb[idx % width] += gv;
                        }
                    } else {
                        accumulate(&mut grads[b.0], &g);
                    }
                }
                Op::Sub { a, b } => {
                    let (a, b) = (*a, *b);
                    accumulate(&mut grads[a.0], &g);
                    for (gb, gv) in grads[b.0].iter_mut().zip(&g) {
                        *gb -= gv;
                    }
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    let bd = self.data(b).to_vec();
                    let ad = self.data(a).to_vec();
                    for ((ga, gv), bv) in grads[a.0].iter_mut().zip(&g).zip(&bd) {
                        *ga += gv * bv;
                    }
                    for ((gb, gv), av) in grads[b.0].iter_mut().zip(&g).zip(&ad) {
                        *gb += gv * av;
                    }
                }
                Op::Scale { a, c } => {
                    let (a, c) = (*a, *c);
                    for (ga, gv) in grads[a.0].iter_mut().zip(&g) {
                        *ga += gv * c;
                    }
                }
                Op::Shift { a, c } => {
                    let _ = c;
                    accumulate(&mut grads[a.0], &g);
                }
                Op::Concat { inputs, axis } => {
                    let inputs = inputs.clone();
                    let axis = *axis;
                    let out_shape = self.shape(NodeId(i)).to_vec();
                    let outer: usize = out_shape[..axis].iter().product();
                    let inner: usize = out_shape[axis + 1..].iter().product();
                    let mut offset = 0;
                    for o in 0..outer {
                        for &id in &inputs {
                            let s_axis = self.shape(id)[axis];
                            let chunk = s_axis * inner;
                            let dst = &mut grads[id.0][o * chunk..(o + 1) * chunk];
                            for (d, gv) in dst.iter_mut().zip(&g[offset..offset + chunk]) {
                                *d += gv;
                            }
                            offset += chunk;
                        }
                    }
                }
                Op::Slice { a, axis, start, end } => {
                    let (a, axis, start, end) = (*a, *axis, *start, *end);
                    let sa = self.shape(a).to_vec();
                    let outer: usize = sa[..axis].iter().product();
                    let inner: usize = sa[axis + 1..].iter().product();
                    let width = end - start;
                    let ga = &mut grads[a.0];
                    for o in 0..outer {
                        let base = o * sa[axis] * inner;
                        let src = &g[o * width * inner..(o + 1) * width * inner];
                        let dst = &mut ga[base + start * inner..base + end * inner];
                        for (d, gv) in dst.iter_mut().zip(src) {
                            *d += gv;
                        }
                    }
                }
                Op::Relu { a } => {
                    let a = *a;
                    let ad = self.data(a).to_vec();
                    for ((ga, gv), &x) in grads[a.0].iter_mut().zip(&g).zip(&ad) {
                        if x > 0.0 {
                            *ga += gv;
                        }
                    }
                }
                Op::Sigmoid { a } => {
                    let a = *a;
                    let out = self.data(NodeId(i)).to_vec();
                    for ((ga, gv), &s) in grads[a.0].iter_mut().zip(&g).zip(&out) {
                        *ga += gv * s * (1.0 - s);
                    }
                }
                Op::Tanh { a } => {
                    let a = *a;
                    let out = self.data(NodeId(i)).to_vec();
                    for ((ga, gv), &t) in grads[a.0].iter_mut().zip(&g).zip(&out) {
                        *ga += gv * (1.0 - t * t);
                    }
                }
                Op::Exp { a } => {
                    let a = *a;
                    let out = self.data(NodeId(i)).to_vec();
                    for ((ga, gv), &e) in grads[a.0].iter_mut().zip(&g).zip(&out) {
                        *ga += gv * e;
                    }
                }
                Op::Log { a } => {
                    let a = *a;
                    let ad = self.data(a).to_vec();
                    for ((ga, gv), &x) in grads[a.0].iter_mut().zip(&g).zip(&ad) {
                        *ga += gv / x;
                    }
                }
                Op::Softmax { a } => {
                    let a = *a;
                    let cols = *self.shape(NodeId(i)).last().unwrap();
                    let out = self.data(NodeId(i)).to_vec();
                    let ga = &mut grads[a.0];
                    for r in 0..out.len() / cols {
                        let s = &out[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = s.iter().zip(gr).map(|(si, gi)| si * gi).sum();
                        for j in 0..cols {
                            ga[r * cols + j] += s[j] * (gr[j] - dot);
                        }
                    }
                }
                Op::LayerNorm { a, gamma, beta, eps } => {
                    let (a, gamma, beta, eps) = (*a, *gamma, *beta, *eps);
                    let cols = *self.shape(a).last().unwrap();
                    let ad = self.data(a).to_vec();
                    let gd = gamma.map(|id| self.data(id).to_vec());
                    let rows = ad.len() / cols;
                    let mut da = vec![0.0; ad.len()];
                    let mut dgamma = vec![0.0; cols];
                    let mut dbeta = vec![0.0; cols];
                    for r in 0..rows {
                        let x = &ad[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let mean = x.iter().sum::<f64>() / cols as f64;
                        let var = x.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
                        let inv_std = 1.0 / (var + eps).sqrt();
                        // dy/dnorm includes gamma; accumulate gamma/beta grads too
                        let mut dnorm = vec![0.0; cols];
                        for j in 0..cols {
                            let norm = (x[j] - mean) * inv_std;
                            dgamma[j] += gr[j] * norm;
                            dbeta[j] += gr[j];
                            dnorm[j] = match &gd {
                                Some(gd) => gr[j] * gd[j],
                                None => gr[j],
                            };
                        }
                        let mean_dnorm = dnorm.iter().sum::<f64>() / cols as f64;
                        let mean_dnorm_norm = dnorm
                            .iter()
                            .enumerate()
                            .map(|(j, &dn)| dn * (x[j] - mean) * inv_std)
                            .sum::<f64>()
                            / cols as f64;
                        for j in 0..cols {
                            let norm = (x[j] - mean) * inv_std;
                            da[r * cols + j] =
                                inv_std * (dnorm[j] - mean_dnorm - norm * mean_dnorm_norm);
                        }
                    }
                    accumulate(&mut grads[a.0], &da);
                    if let Some(id) = gamma {
                        accumulate(&mut grads[id.0], &dgamma);
                    }
                    if let Some(id) = beta {
                        accumulate(&mut grads[id.0], &dbeta);
                    }
                }
                Op::Conv1d { x, w, b, window } => {
                    let (x, w, b, window) = (*x, *w, *b, *window);
                    let sx = self.shape(x).to_vec();
                    let (t, c) = (sx[0], sx[1]);
                    let m = self.shape(w)[1];
                    let positions = t - window + 1;
                    let xd = self.data(x).to_vec();
                    let wd = self.data(w).to_vec();
                    {
                        let gb = &mut grads[b.0];
                        for i_pos in 0..positions {
                            for (gbm, gv) in gb.iter_mut().zip(&g[i_pos * m..(i_pos + 1) * m]) {
                                *gbm += gv;
                            }
                        }
                    }
                    {
                        let gw = &mut grads[w.0];
                        for i_pos in 0..positions {
                            let gout = &g[i_pos * m..(i_pos + 1) * m];
                            for j in 0..window {
                                for ch in 0..c {
                                    let xv = xd[(i_pos + j) * c + ch];
                                    if xv == 0.0 {
                                        continue;
                                    }
                                    let wrow = &mut gw[(j * c + ch) * m..(j * c + ch + 1) * m];
                                    for (gwv, &gv) in wrow.iter_mut().zip(gout) {
                                        *gwv += xv * gv;
                                    }
                                }
                            }
                        }
                    }
                    {
                        let gx = &mut grads[x.0];
                        for i_pos in 0..positions {
                            let gout = &g[i_pos * m..(i_pos + 1) * m];
                            for j in 0..window {
                                for ch in 0..c {
                                    let wrow = &wd[(j * c + ch) * m..(j * c + ch + 1) * m];
                                    let acc: f64 =
                                        wrow.iter().zip(gout).map(|(wv, gv)| wv * gv).sum();
                                    gx[(i_pos + j) * c + ch] += acc;
                                }
                            }
                        }
                    }
                }
                Op::MaxOverTime { a, argmax } => {
                    let a = *a;
                    let argmax = argmax.clone();
                    let m = argmax.len();
                    let ga = &mut grads[a.0];
                    for (j, &i_pos) in argmax.iter().enumerate() {
                        ga[i_pos * m + j] += g[j];
                    }
                }
                Op::Embedding { table, ids } => {
                    let table = *table;
                    let ids = ids.clone();
                    let d = self.shape(table)[1];
                    let gt = &mut grads[table.0];
                    for (row, &id) in ids.iter().enumerate() {
                        let src = &g[row * d..(row + 1) * d];
                        let dst = &mut gt[id * d..(id + 1) * d];
                        for (dv, gv) in dst.iter_mut().zip(src) {
                            *dv += gv;
                        }
                    }
                }
                Op::CrossEntropy { logits, target } => {
                    let (logits, target) = (*logits, *target);
                    let sl = self.shape(logits).to_vec();
                    let (rows, v) = (sl[0], sl[1]);
                    let ld = self.data(logits).to_vec();
                    let td = self.data(target).to_vec();
                    let mut dl = vec![0.0; rows * v];
                    let mut dt = vec![0.0; rows * v];
                    for r in 0..rows {
                        let lrow = &ld[r * v..(r + 1) * v];
                        let trow = &td[r * v..(r + 1) * v];
                        let max = lrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let exps: Vec<f64> = lrow.iter().map(|&x| (x - max).exp()).collect();
                        let sum: f64 = exps.iter().sum();
                        let lse = max + sum.ln();
                        let tmass: f64 = trow.iter().sum();
                        for j in 0..v {
                            let soft = exps[j] / sum;
                            dl[r * v + j] = g[r] * (tmass * soft - trow[j]);
                            dt[r * v + j] = g[r] * (lse - lrow[j]);
                        }
                    }
                    accumulate(&mut grads[logits.0], &dl);
                    accumulate(&mut grads[target.0], &dt);
                }
                Op::BroadcastRows { v, rows } => {
                    let (v, rows) = (*v, *rows);
                    let d = self.shape(v)[0];
                    let gv = &mut grads[v.0];
                    for r in 0..rows {
                        for j in 0..d {
                            gv[j] += g[r * d + j];
                        }
                    }
                }
                Op::Transpose { a } => {
                    let a = *a;
                    let sa = self.shape(a).to_vec();
                    let da = transpose_2d(&g, sa[1], sa[0]);
                    accumulate(&mut grads[a.0], &da);
                }
                Op::Reshape { a } => {
                    accumulate(&mut grads[a.0], &g);
                }
                Op::Sum { a } => {
                    let a = *a;
                    let ga = &mut grads[a.0];
                    for gv in ga.iter_mut() {
                        *gv += g[0];
                    }
                }
                Op::Mean { a } => {
                    let a = *a;
                    let n = self.nodes[a.0].value.numel() as f64;
                    let ga = &mut grads[a.0];
                    for gv in ga.iter_mut() {
                        *gv += g[0] / n;
                    }
                }
            }
            grads[i] = g;
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.value.grad = Some(g);
        }
        Ok(())
    }
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

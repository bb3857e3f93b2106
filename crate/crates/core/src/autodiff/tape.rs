//! Operation tape and reverse-mode gradient pass.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`]. Only valid for the tape that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a node was produced; drives the backward pass.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `a[m,k] * b[k,n]`
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    /// `a[m,k] * b[n,k]^T` (saves an explicit transpose in attention)
    MatMulNt {
        a: NodeId,
        b: NodeId,
    },
    /// Elementwise add; `b` may be a single scalar broadcast over `a`.
    Add {
        a: NodeId,
        b: NodeId,
    },
    /// Elementwise multiply, equal shapes.
    Mul {
        a: NodeId,
        b: NodeId,
    },
    /// Multiply by a compile-time-known constant.
    Scale {
        a: NodeId,
        c: f64,
    },
    Tanh {
        a: NodeId,
    },
    Relu {
        a: NodeId,
    },
    /// `x[m,n] + bias[n]` broadcast over rows.
    AddRowBias {
        x: NodeId,
        bias: NodeId,
    },
    /// Sum of all entries, producing a scalar.
    Sum {
        a: NodeId,
    },
    /// Column means: `[m,n] -> [1,n]`.
    MeanRows {
        x: NodeId,
    },
    /// Row-wise softmax, `[m,n] -> [m,n]`.
    SoftmaxRows {
        x: NodeId,
    },
    /// Row-wise layer normalization with learned gain/bias of shape `[n]`.
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
    },
    /// Row gather: `table[v,d]` indexed by `ids` -> `[ids.len(), d]`.
    Embedding {
        table: NodeId,
        ids: Vec<usize>,
    },
    /// Stack row-blocks with a common column count.
    ConcatRows {
        parts: Vec<NodeId>,
    },
    /// Stack column-blocks with a common row count.
    ConcatCols {
        parts: Vec<NodeId>,
    },
    /// Column window `[m, len]` starting at `start`.
    SliceCols {
        x: NodeId,
        start: usize,
        len: usize,
    },
    /// Mean cross-entropy of row-wise softmax against integer labels.
    /// Softmax probabilities are cached at forward time for the backward.
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
}

/// Records a forward computation as a flat arena; inputs of every node
/// precede it, so one reverse sweep is a valid backpropagation order.
///
/// A tape is single-shot: build the graph, call [`Tape::backward`] once,
/// read gradients, drop it. Calling `backward` twice is a state error.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// True once `backward` has run.
    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, op: Op) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        let grad = vec![0.0; values.len()];
        self.nodes.push(Node {
            shape,
            values,
            grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    /// Forward values of a node.
    pub fn values(&self, id: NodeId) -> &[f64] {
        &self.node(id).values
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.node(id).shape
    }

    /// Accumulated gradient of a node (all zeros until `backward` runs).
    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.node(id).grad
    }

    fn dims2(&self, id: NodeId, op: &'static str) -> Result<(usize, usize)> {
        let shape = &self.node(id).shape;
        if shape.len() != 2 {
            return Err(Error::ShapeMismatch {
                op,
                lhs: shape.clone(),
                rhs: vec![],
            });
        }
        Ok((shape[0], shape[1]))
    }

    /// Registers an input/parameter tensor on the tape.
    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        self.push(t.shape().to_vec(), t.values().to_vec(), Op::Leaf)
    }

    /// Matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.node(a).shape.clone(),
                rhs: self.node(b).shape.clone(),
            });
        }
        let av = &self.node(a).values;
        let bv = &self.node(b).values;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = av[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += aip * bv[p * n + j];
                }
            }
        }
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b }))
    }

    /// Matrix product against a transposed right factor:
    /// `[m,k] x [n,k]^T -> [m,n]`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims2(a, "matmul_nt")?;
        let (n, k2) = self.dims2(b, "matmul_nt")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul_nt",
                lhs: self.node(a).shape.clone(),
                rhs: self.node(b).shape.clone(),
            });
        }
        let av = &self.node(a).values;
        let bv = &self.node(b).values;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += av[i * k + p] * bv[j * k + p];
                }
                out[i * n + j] = acc;
            }
        }
        Ok(self.push(vec![m, n], out, Op::MatMulNt { a, b }))
    }

    /// Elementwise add. The right operand may be a one-element tensor,
    /// which broadcasts over the left.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ashape, blen) = (self.node(a).shape.clone(), self.node(b).values.len());
        if blen == 1 {
            let s = self.node(b).values[0];
            let out: Vec<f64> = self.node(a).values.iter().map(|v| v + s).collect();
            return Ok(self.push(ashape, out, Op::Add { a, b }));
        }
        if self.node(a).shape != self.node(b).shape {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: self.node(a).shape.clone(),
                rhs: self.node(b).shape.clone(),
            });
        }
        let out: Vec<f64> = self
            .node(a)
            .values
            .iter()
            .zip(&self.node(b).values)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(ashape, out, Op::Add { a, b }))
    }

    /// Elementwise multiply of equal-shape tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.node(a).shape != self.node(b).shape {
            return Err(Error::ShapeMismatch {
                op: "mul",
                lhs: self.node(a).shape.clone(),
                rhs: self.node(b).shape.clone(),
            });
        }
        let shape = self.node(a).shape.clone();
        let out: Vec<f64> = self
            .node(a)
            .values
            .iter()
            .zip(&self.node(b).values)
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(shape, out, Op::Mul { a, b }))
    }

    /// Multiply every entry by a constant.
    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let shape = self.node(a).shape.clone();
        let out: Vec<f64> = self.node(a).values.iter().map(|v| v * c).collect();
        self.push(shape, out, Op::Scale { a, c })
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let shape = self.node(a).shape.clone();
        let out: Vec<f64> = self.node(a).values.iter().map(|v| v.tanh()).collect();
        self.push(shape, out, Op::Tanh { a })
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let shape = self.node(a).shape.clone();
        let out: Vec<f64> = self.node(a).values.iter().map(|v| v.max(0.0)).collect();
        self.push(shape, out, Op::Relu { a })
    }

    /// `x[m,n] + bias[n]`, bias broadcast over every row.
    pub fn add_row_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims2(x, "add_row_bias")?;
        if self.node(bias).values.len() != n {
            return Err(Error::ShapeMismatch {
                op: "add_row_bias",
                lhs: self.node(x).shape.clone(),
                rhs: self.node(bias).shape.clone(),
            });
        }
        let xv = &self.node(x).values;
        let bv = &self.node(bias).values;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = xv[i * n + j] + bv[j];
            }
        }
        Ok(self.push(vec![m, n], out, Op::AddRowBias { x, bias }))
    }

    /// Sum of every entry, producing a `[1]` scalar.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total: f64 = self.node(a).values.iter().sum();
        self.push(vec![1], vec![total], Op::Sum { a })
    }

    /// Column means over rows: `[m,n] -> [1,n]`.
    pub fn mean_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims2(x, "mean_rows")?;
        if m == 0 {
            return Err(Error::InvalidInput("mean_rows over zero rows".into()));
        }
        let xv = &self.node(x).values;
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += xv[i * n + j];
            }
        }
        for v in &mut out {
            *v /= m as f64;
        }
        Ok(self.push(vec![1, n], out, Op::MeanRows { x }))
    }

    /// Numerically stable row-wise softmax.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims2(x, "softmax_rows")?;
        let xv = &self.node(x).values;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            softmax_row(&xv[i * n..(i + 1) * n], &mut out[i * n..(i + 1) * n]);
        }
        Ok(self.push(vec![m, n], out, Op::SoftmaxRows { x }))
    }

    /// Row-wise layer normalization with learned per-column gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims2(x, "layer_norm")?;
        if self.node(gain).values.len() != n || self.node(bias).values.len() != n {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: self.node(x).shape.clone(),
                rhs: self.node(gain).shape.clone(),
            });
        }
        let xv = &self.node(x).values;
        let gv = &self.node(gain).values;
        let bv = &self.node(bias).values;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let (mean, inv_std) = row_norm_stats(row);
            for j in 0..n {
                out[i * n + j] = gv[j] * (row[j] - mean) * inv_std + bv[j];
            }
        }
        Ok(self.push(vec![m, n], out, Op::LayerNorm { x, gain, bias }))
    }

    /// Gathers rows of `table` by token id: `[v,d]` -> `[ids.len(), d]`.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (v, d) = self.dims2(table, "embedding")?;
        if ids.is_empty() {
            return Err(Error::InvalidInput("embedding lookup of zero ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::InvalidInput(format!(
                "token id {bad} out of range for vocabulary of {v}"
            )));
        }
        let tv = &self.node(table).values;
        let mut out = vec![0.0; ids.len() * d];
        for (t, &id) in ids.iter().enumerate() {
            out[t * d..(t + 1) * d].copy_from_slice(&tv[id * d..(id + 1) * d]);
        }
        Ok(self.push(
            vec![ids.len(), d],
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Vertically stacks blocks that share a column count.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::InvalidInput("concat_rows of zero parts".into()));
        }
        let (_, n) = self.dims2(parts[0], "concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (mp, np) = self.dims2(p, "concat_rows")?;
            if np != n {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.node(parts[0]).shape.clone(),
                    rhs: self.node(p).shape.clone(),
                });
            }
            rows += mp;
            out.extend_from_slice(&self.node(p).values);
        }
        Ok(self.push(
            vec![rows, n],
            out,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Horizontally stacks blocks that share a row count.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::InvalidInput("concat_cols of zero parts".into()));
        }
        let (m, _) = self.dims2(parts[0], "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0;
        for &p in parts {
            let (mp, np) = self.dims2(p, "concat_cols")?;
            if mp != m {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.node(parts[0]).shape.clone(),
                    rhs: self.node(p).shape.clone(),
                });
            }
            widths.push(np);
            total += np;
        }
        let mut out = vec![0.0; m * total];
        let mut col = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pv = &self.node(p).values;
            for i in 0..m {
                out[i * total + col..i * total + col + w].copy_from_slice(&pv[i * w..(i + 1) * w]);
            }
            col += w;
        }
        Ok(self.push(
            vec![m, total],
            out,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Column window `[start, start+len)` of a matrix.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.dims2(x, "slice_cols")?;
        if len == 0 || start + len > n {
            return Err(Error::InvalidInput(format!(
                "slice_cols window {start}..{} out of range for {n} columns",
                start + len
            )));
        }
        let xv = &self.node(x).values;
        let mut out = vec![0.0; m * len];
        for i in 0..m {
            out[i * len..(i + 1) * len].copy_from_slice(&xv[i * n + start..i * n + start + len]);
        }
        Ok(self.push(vec![m, len], out, Op::SliceCols { x, start, len }))
    }

    /// Mean cross-entropy between row-wise softmax of `logits[b,c]` and
    /// integer labels, fused for numerical stability. Returns a scalar.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (b, c) = self.dims2(logits, "softmax_cross_entropy")?;
        if labels.len() != b {
            return Err(Error::InvalidInput(format!(
                "{} labels for {} logit rows",
                labels.len(),
                b
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::InvalidInput(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let lv = &self.node(logits).values;
        let mut probs = vec![0.0; b * c];
        let mut total = 0.0;
        for i in 0..b {
            let row = &lv[i * c..(i + 1) * c];
            softmax_row(row, &mut probs[i * c..(i + 1) * c]);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[labels[i]];
        }
        let loss = total / b as f64;
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Runs reverse-mode accumulation from a scalar node. Single use: a
    /// second call on the same tape is a state error, as is a non-scalar
    /// target.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.consumed {
            return Err(Error::State(
                "backward already ran on this tape; build a fresh tape per step".into(),
            ));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::InvalidInput(
                "backward target not on this tape".into(),
            ));
        }
        if self.nodes[loss.0].values.len() != 1 {
            return Err(Error::InvalidInput(format!(
                "backward target must be a scalar, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.values.len()])
            .collect();
        grads[loss.0][0] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            let gout = grads[i].clone();
            if gout.iter().all(|&g| g == 0.0) {
                continue;
            }
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                    let n = self.nodes[b.0].shape[1];
                    let av = &self.nodes[a.0].values;
                    let bv = &self.nodes[b.0].values;
                    // dA = dC * B^T ; dB = A^T * dC
                    for i2 in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += gout[i2 * n + j] * bv[p * n + j];
                            }
                            grads[a.0][i2 * k + p] += acc;
                        }
                    }
                    for p in 0..k {
                        for j in 0..n {
                            let mut acc = 0.0;
                            for i2 in 0..m {
                                acc += av[i2 * k + p] * gout[i2 * n + j];
                            }
                            grads[b.0][p * n + j] += acc;
                        }
                    }
                }
                Op::MatMulNt { a, b } => {
                    let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                    let n = self.nodes[b.0].shape[0];
                    let av = &self.nodes[a.0].values;
                    let bv = &self.nodes[b.0].values;
                    // C = A * B^T  =>  dA = dC * B ; dB = dC^T * A
                    for i2 in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += gout[i2 * n + j] * bv[j * k + p];
                            }
                            grads[a.0][i2 * k + p] += acc;
                        }
                    }
                    for j in 0..n {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for i2 in 0..m {
                                acc += gout[i2 * n + j] * av[i2 * k + p];
                            }
                            grads[b.0][j * k + p] += acc;
                        }
                    }
                }
                Op::Add { a, b } => {
                    if self.nodes[b.0].values.len() == 1 {
                        for (ga, g) in grads[a.0].iter_mut().zip(&gout) {
                            *ga += g;
                        }
                        grads[b.0][0] += gout.iter().sum::<f64>();
                    } else {
                        for (ga, g) in grads[a.0].iter_mut().zip(&gout) {
                            *ga += g;
                        }
                        for (gb, g) in grads[b.0].iter_mut().zip(&gout) {
                            *gb += g;
                        }
                    }
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    for idx in 0..gout.len() {
                        grads[a.0][idx] += gout[idx] * self.nodes[b.0].values[idx];
                        grads[b.0][idx] += gout[idx] * self.nodes[a.0].values[idx];
                    }
                }
                Op::Scale { a, c } => {
                    let c = *c;
                    for (ga, g) in grads[a.0].iter_mut().zip(&gout) {
                        *ga += g * c;
                    }
                }
                Op::Tanh { a } => {
                    let yv = &self.nodes[i].values;
                    for ((ga, g), y) in grads[a.0].iter_mut().zip(&gout).zip(yv) {
                        *ga += g * (1.0 - y * y);
                    }
                }
                Op::Relu { a } => {
                    let xv = &self.nodes[a.0].values;
                    for ((ga, g), x) in grads[a.0].iter_mut().zip(&gout).zip(xv) {
                        if *x > 0.0 {
                            *ga += g;
                        }
                    }
                }
                Op::AddRowBias { x, bias } => {
                    let n = self.nodes[bias.0].values.len();
                    let m = self.nodes[x.0].shape[0];
                    for (gx, g) in grads[x.0].iter_mut().zip(&gout) {
                        *gx += g;
                    }
                    for i2 in 0..m {
                        for j in 0..n {
                            grads[bias.0][j] += gout[i2 * n + j];
                        }
                    }
                }
                Op::Sum { a } => {
                    let g = gout[0];
                    for ga in grads[a.0].iter_mut() {
                        *ga += g;
                    }
                }
                Op::MeanRows { x } => {
                    let (m, n) = (self.nodes[x.0].shape[0], self.nodes[x.0].shape[1]);
                    let inv = 1.0 / m as f64;
                    for i2 in 0..m {
                        for j in 0..n {
                            grads[x.0][i2 * n + j] += gout[j] * inv;
                        }
                    }
                }
                Op::SoftmaxRows { x } => {
                    let (m, n) = (self.nodes[x.0].shape[0], self.nodes[x.0].shape[1]);
                    let pv = &self.nodes[i].values;
                    for i2 in 0..m {
                        let p = &pv[i2 * n..(i2 + 1) * n];
                        let g = &gout[i2 * n..(i2 + 1) * n];
                        let dot: f64 = p.iter().zip(g).map(|(pj, gj)| pj * gj).sum();
                        for j in 0..n {
                            grads[x.0][i2 * n + j] += p[j] * (g[j] - dot);
                        }
                    }
                }
                Op::LayerNorm { x, gain, bias } => {
                    let (x, gain, bias) = (*x, *gain, *bias);
                    let (m, n) = (self.nodes[x.0].shape[0], self.nodes[x.0].shape[1]);
                    let xv = self.nodes[x.0].values.clone();
                    let gv = self.nodes[gain.0].values.clone();
                    for i2 in 0..m {
                        let row = &xv[i2 * n..(i2 + 1) * n];
                        let (mean, inv_std) = row_norm_stats(row);
                        let gr = &gout[i2 * n..(i2 + 1) * n];
                        // Backprop through normalize-then-affine: let
                        // h_j = g_out_j * gain_j; then
                        // dx_j = inv_std * (h_j - mean(h) - xhat_j * mean(h .* xhat)).
                        let mut mean_h = 0.0;
                        let mut mean_hx = 0.0;
                        for j in 0..n {
                            let xhat = (row[j] - mean) * inv_std;
                            let h = gr[j] * gv[j];
                            mean_h += h;
                            mean_hx += h * xhat;
                            grads[gain.0][j] += gr[j] * xhat;
                            grads[bias.0][j] += gr[j];
                        }
                        mean_h /= n as f64;
                        mean_hx /= n as f64;
                        for j in 0..n {
                            let xhat = (row[j] - mean) * inv_std;
                            let h = gr[j] * gv[j];
                            grads[x.0][i2 * n + j] += inv_std * (h - mean_h - xhat * mean_hx);
                        }
                    }
                }
                Op::Embedding { table, ids } => {
                    let d = self.nodes[table.0].shape[1];
                    for (t, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            grads[table.0][id * d + j] += gout[t * d + j];
                        }
                    }
                }
                Op::ConcatRows { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.nodes[p.0].values.len();
                        for (idx, g) in gout[offset..offset + len].iter().enumerate() {
                            grads[p.0][idx] += g;
                        }
                        offset += len;
                    }
                }
                Op::ConcatCols { parts } => {
                    let m = self.nodes[i].shape[0];
                    let total = self.nodes[i].shape[1];
                    let mut col = 0;
                    for &p in parts {
                        let w = self.nodes[p.0].shape[1];
                        for i2 in 0..m {
                            for j in 0..w {
                                grads[p.0][i2 * w + j] += gout[i2 * total + col + j];
                            }
                        }
                        col += w;
                    }
                }
                Op::SliceCols { x, start, len } => {
                    let n = self.nodes[x.0].shape[1];
                    let m = self.nodes[x.0].shape[0];
                    let (start, len) = (*start, *len);
                    for i2 in 0..m {
                        for j in 0..len {
                            grads[x.0][i2 * n + start + j] += gout[i2 * len + j];
                        }
                    }
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let (b, c) = (self.nodes[logits.0].shape[0], self.nodes[logits.0].shape[1]);
                    let g = gout[0] / b as f64;
                    for i2 in 0..b {
                        for j in 0..c {
                            let onehot = if labels[i2] == j { 1.0 } else { 0.0 };
                            grads[logits.0][i2 * c + j] += g * (probs[i2 * c + j] - onehot);
                        }
                    }
                }
            }
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.grad = g;
        }
        Ok(())
    }
}

/// Stable softmax of one row into `out`.
fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Mean and inverse standard deviation (population, with epsilon) of a row.
fn row_norm_stats(row: &[f64]) -> (f64, f64) {
    const LN_EPS: f64 = 1e-5;
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + LN_EPS).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matmul_forward_and_grad() {
        let mut tape = Tape::new();
        let a = tape.leaf(&Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.leaf(&Tensor::matrix(2, 2, vec![2.0, 3.0, 4.0, 5.0]).unwrap());
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.values(c), &[10.0, 13.0, 22.0, 29.0]);
        let s = tape.sum(c);
        tape.backward(s).unwrap();
        // d sum(A*B) / dA has every row equal to the row sums of B.
        assert_eq!(tape.grad(a), &[5.0, 9.0, 5.0, 9.0]);
        assert_eq!(tape.grad(b), &[4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn matmul_shape_mismatch_reports_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(&Tensor::zeros(vec![2, 3]));
        let b = tape.leaf(&Tensor::zeros(vec![4, 5]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
    }

    #[test]
    fn tanh_grad_uses_one_minus_square() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(0.5));
        let y = tape.tanh(x);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        let expect = 1.0 - 0.5_f64.tanh().powi(2);
        assert!(close(tape.grad(x)[0], expect, 1e-15));
        assert!(close(expect, 0.786448, 1e-6));
    }

    #[test]
    fn relu_grad_is_zero_at_and_below_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = tape.relu(x);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn cross_entropy_uniform_logits_matches_log_c() {
        let mut tape = Tape::new();
        let logits = tape.leaf(&Tensor::matrix(1, 4, vec![0.7; 4]).unwrap());
        let loss = tape.softmax_cross_entropy(logits, &[2]).unwrap();
        assert!(close(tape.values(loss)[0], 4.0_f64.ln(), 1e-15));
    }

    #[test]
    fn cross_entropy_confident_correct_is_tiny() {
        let mut tape = Tape::new();
        let logits = tape.leaf(&Tensor::matrix(1, 2, vec![10.0, -10.0]).unwrap());
        let loss = tape.softmax_cross_entropy(logits, &[0]).unwrap();
        let expect = (1.0 + (-20.0_f64).exp()).ln();
        assert!(close(tape.values(loss)[0], expect, 1e-15));
        assert!(tape.values(loss)[0] < 1e-8);
    }

    #[test]
    fn cross_entropy_grad_at_uniform_logits() {
        let mut tape = Tape::new();
        let logits = tape.leaf(&Tensor::matrix(2, 2, vec![0.0, 0.0, 0.0, 0.0]).unwrap());
        let loss = tape.softmax_cross_entropy(logits, &[0, 0]).unwrap();
        tape.backward(loss).unwrap();
        for row in 0..2 {
            assert!(close(tape.grad(logits)[row * 2], -0.25, 1e-15));
            assert!(close(tape.grad(logits)[row * 2 + 1], 0.25, 1e-15));
        }
    }

    #[test]
    fn backward_twice_is_a_state_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(1.0));
        let y = tape.tanh(x);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        let err = tape.backward(s).unwrap_err();
        assert!(matches!(err, Error::State(_)), "{err}");
    }

    #[test]
    fn backward_requires_scalar_target() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::zeros(vec![2, 2]));
        let y = tape.tanh(x);
        assert!(tape.backward(y).is_err());
    }

    #[test]
    fn embedding_rejects_out_of_range_ids() {
        let mut tape = Tape::new();
        let table = tape.leaf(&Tensor::zeros(vec![4, 3]));
        assert!(tape.embedding(table, &[0, 4]).is_err());
    }

    #[test]
    fn embedding_backward_scatters_and_accumulates() {
        let mut tape = Tape::new();
        let table = tape.leaf(&Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let e = tape.embedding(table, &[1, 1, 0]).unwrap();
        assert_eq!(tape.values(e), &[3.0, 4.0, 3.0, 4.0, 1.0, 2.0]);
        let s = tape.sum(e);
        tape.backward(s).unwrap();
        // Row 1 was gathered twice, so its gradient accumulates twice.
        assert_eq!(tape.grad(table), &[1.0, 1.0, 2.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn layer_norm_output_is_normalized() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::matrix(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let gain = tape.leaf(&Tensor::new(vec![4], vec![1.0; 4]).unwrap());
        let bias = tape.leaf(&Tensor::zeros(vec![4]));
        let y = tape.layer_norm(x, gain, bias).unwrap();
        let out = tape.values(y);
        let mean: f64 = out.iter().sum::<f64>() / 4.0;
        let var: f64 = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!(close(mean, 0.0, 1e-12));
        assert!(close(var, 1.0, 1e-4)); // epsilon pulls variance slightly under 1
    }

    #[test]
    fn softmax_rows_sum_to_one_even_for_large_logits() {
        let mut tape = Tape::new();
        let x =
            tape.leaf(&Tensor::matrix(2, 3, vec![700.0, 700.0, 0.0, -700.0, 0.0, 1.0]).unwrap());
        let p = tape.softmax_rows(x).unwrap();
        for row in tape.values(p).chunks(3) {
            let s: f64 = row.iter().sum();
            assert!(close(s, 1.0, 1e-12));
            assert!(row.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn concat_and_slice_round_trip_gradients() {
        let mut tape = Tape::new();
        let a = tape.leaf(&Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.leaf(&Tensor::matrix(2, 1, vec![5.0, 6.0]).unwrap());
        let cat = tape.concat_cols(&[a, b]).unwrap();
        assert_eq!(tape.values(cat), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let back = tape.slice_cols(cat, 2, 1).unwrap();
        assert_eq!(tape.values(back), &[5.0, 6.0]);
        let s = tape.sum(back);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a), &[0.0; 4]);
        assert_eq!(tape.grad(b), &[1.0, 1.0]);
    }

    #[test]
    fn nodes_reference_only_earlier_nodes() {
        // Topological invariant: the arena order is a valid evaluation order.
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::matrix(2, 3, vec![0.1; 6]).unwrap());
        let w = tape.leaf(&Tensor::matrix(3, 2, vec![0.2; 6]).unwrap());
        let h = tape.matmul(x, w).unwrap();
        let t = tape.tanh(h);
        let s = tape.sum(t);
        for i in 0..tape.node_count() {
            let before = i;
            let refs: Vec<usize> = match &tape.nodes[i].op {
                Op::Leaf => vec![],
                Op::MatMul { a, b }
                | Op::MatMulNt { a, b }
                | Op::Add { a, b }
                | Op::Mul { a, b } => {
                    vec![a.0, b.0]
                }
                Op::Scale { a, .. } | Op::Tanh { a } | Op::Relu { a } | Op::Sum { a } => vec![a.0],
                Op::AddRowBias { x, bias } => vec![x.0, bias.0],
                Op::MeanRows { x } | Op::SoftmaxRows { x } => vec![x.0],
                Op::LayerNorm { x, gain, bias } => vec![x.0, gain.0, bias.0],
                Op::Embedding { table, .. } => vec![table.0],
                Op::ConcatRows { parts } | Op::ConcatCols { parts } => {
                    parts.iter().map(|p| p.0).collect()
                }
                Op::SliceCols { x, .. } => vec![x.0],
                Op::SoftmaxCrossEntropy { logits, .. } => vec![logits.0],
            };
            assert!(refs.iter().all(|&r| r < before));
        }
        let _ = s;
    }
}

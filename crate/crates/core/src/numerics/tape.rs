//! Reverse-mode differentiation over a small, fixed set of tensor operations.
//!
//! A [`Tape`] records every operation applied during a forward pass as a node
//! holding its output value and the ids of its inputs. [`Tape::gradient`]
//! walks the nodes backwards, accumulating vector-Jacobian products into the
//! inputs, and returns the gradient of a scalar node with respect to every
//! node that was registered with [`Tape::param`].
//!
//! The operation set is exactly what the prototype encoder needs: a relu
//! convolution, pairwise squared distances, `exp(-x)`, row/column extrema,
//! concatenation, a matrix-vector product, fused softmax cross-entropy,
//! the prototype-diversity hinge, and the handful of reductions used by the
//! regression head. Extrema route their gradient to the first extremal index,
//! which matches the tie-breaking used everywhere else in the crate.

use crate::error::{Error, Result};
use crate::numerics::tensor::{softmax_unchecked, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Op {
    Leaf,
    Conv1dRelu {
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
    },
    PairwiseSqDist {
        protos: NodeId,
        reps: NodeId,
    },
    NegExp(NodeId),
    RowMax(NodeId),
    RowMin(NodeId),
    ColMin(NodeId),
    Concat(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    MatVec {
        mat: NodeId,
        vec: NodeId,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        target: usize,
    },
    DiversityHinge {
        protos: NodeId,
        margin: f64,
    },
    Sum(NodeId),
    WeightedSum(Vec<(NodeId, f64)>),
    SoftmaxCols(NodeId),
    MatMulTn {
        a: NodeId,
        b: NodeId,
    },
    MeanCols(NodeId),
    Linear {
        weight: NodeId,
        bias: NodeId,
        x: NodeId,
    },
    SquaredError {
        x: NodeId,
        target: f64,
    },
    AbsError {
        x: NodeId,
        target: f64,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv1dRelu { .. } => "conv1d_relu",
            Op::PairwiseSqDist { .. } => "pairwise_sq_dist",
            Op::NegExp(_) => "neg_exp",
            Op::RowMax(_) => "row_max",
            Op::RowMin(_) => "row_min",
            Op::ColMin(_) => "col_min",
            Op::Concat(_) => "concat",
            Op::ConcatCols(_) => "concat_cols",
            Op::MatVec { .. } => "mat_vec",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::DiversityHinge { .. } => "diversity_hinge",
            Op::Sum(_) => "sum",
            Op::WeightedSum(_) => "weighted_sum",
            Op::SoftmaxCols(_) => "softmax_cols",
            Op::MatMulTn { .. } => "matmul_tn",
            Op::MeanCols(_) => "mean_cols",
            Op::Linear { .. } => "linear",
            Op::SquaredError { .. } => "squared_error",
            Op::AbsError { .. } => "abs_error",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of a forward computation; the computation trace.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar output, indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `id`; zeros if the output does not depend on it.
    pub fn get(&self, id: NodeId) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }
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

    /// Constant input; gradients are not tracked through it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, op: Op) -> Result<NodeId> {
        let value = self.compute(&op)?;
        if !value.all_finite() {
            return Err(Error::Numeric(format!(
                "{} produced a non-finite value",
                op.name()
            )));
        }
        let requires_grad = self.inputs(&op).iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn inputs(&self, op: &Op) -> Vec<NodeId> {
        match op {
            Op::Leaf => vec![],
            Op::Conv1dRelu {
                input,
                kernels,
                bias,
            } => vec![*input, *kernels, *bias],
            Op::PairwiseSqDist { protos, reps } => vec![*protos, *reps],
            Op::NegExp(x)
            | Op::RowMax(x)
            | Op::RowMin(x)
            | Op::ColMin(x)
            | Op::Sum(x)
            | Op::SoftmaxCols(x)
            | Op::MeanCols(x) => vec![*x],
            Op::Concat(parts) | Op::ConcatCols(parts) => parts.clone(),
            Op::MatVec { mat, vec } => vec![*mat, *vec],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
            Op::DiversityHinge { protos, .. } => vec![*protos],
            Op::WeightedSum(terms) => terms.iter().map(|(id, _)| *id).collect(),
            Op::MatMulTn { a, b } => vec![*a, *b],
            Op::Linear { weight, bias, x } => vec![*weight, *bias, *x],
            Op::SquaredError { x, .. } | Op::AbsError { x, .. } => vec![*x],
        }
    }

    fn compute(&self, op: &Op) -> Result<Tensor> {
        let v = |id: &NodeId| &self.nodes[id.0].value;
        Ok(match op {
            Op::Leaf => unreachable!("leaves are never recomputed"),
            Op::Conv1dRelu {
                input,
                kernels,
                bias,
            } => conv1d_relu(v(input), v(kernels), v(bias))?,
            Op::PairwiseSqDist { protos, reps } => pairwise_sq_dist(v(protos), v(reps)),
            Op::NegExp(x) => {
                let x = v(x);
                Tensor::raw(x.shape().to_vec(), x.data().iter().map(|a| (-a).exp()).collect())
            }
            Op::RowMax(x) => {
                let x = v(x);
                Tensor::vector((0..x.rows()).map(|r| x.row(r)[first_max(x.row(r))]).collect())
            }
            Op::RowMin(x) => {
                let x = v(x);
                Tensor::vector((0..x.rows()).map(|r| x.row(r)[first_min(x.row(r))]).collect())
            }
            Op::ColMin(x) => {
                let x = v(x);
                Tensor::vector(
                    (0..x.cols())
                        .map(|c| x.at(col_first_min(x, c), c))
                        .collect(),
                )
            }
            Op::Concat(parts) => {
                Tensor::vector(parts.iter().flat_map(|p| v(p).data().iter().copied()).collect())
            }
            Op::ConcatCols(parts) => {
                let rows = v(&parts[0]).rows();
                let total: usize = parts.iter().map(|p| v(p).cols()).sum();
                let mut data = vec![0.0; rows * total];
                let mut offset = 0;
                for p in parts {
                    let t = v(p);
                    for r in 0..rows {
                        data[r * total + offset..r * total + offset + t.cols()]
                            .copy_from_slice(t.row(r));
                    }
                    offset += t.cols();
                }
                Tensor::raw(vec![rows, total], data)
            }
            Op::MatVec { mat, vec } => {
                let (m, x) = (v(mat), v(vec));
                Tensor::vector(
                    (0..m.rows())
                        .map(|r| m.row(r).iter().zip(x.data()).map(|(a, b)| a * b).sum())
                        .collect(),
                )
            }
            Op::SoftmaxCrossEntropy { logits, target } => {
                let l = v(logits).data();
                let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + l.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
                Tensor::scalar(lse - l[*target])
            }
            Op::DiversityHinge { protos, margin } => {
                let p = v(protos);
                let mut total = 0.0;
                for i in 0..p.rows() {
                    for j in 0..p.rows() {
                        if i != j {
                            let d = crate::numerics::sq_dist_unchecked(p.row(i), p.row(j));
                            total += (margin - d).max(0.0);
                        }
                    }
                }
                Tensor::scalar(total)
            }
            Op::Sum(x) => Tensor::scalar(v(x).data().iter().sum()),
            Op::WeightedSum(terms) => {
                Tensor::scalar(terms.iter().map(|(id, w)| w * v(id).item()).sum())
            }
            Op::SoftmaxCols(x) => {
                let x = v(x);
                let (rows, cols) = (x.rows(), x.cols());
                let mut out = vec![0.0; rows * cols];
                for c in 0..cols {
                    let col = softmax_unchecked(&x.column(c));
                    for r in 0..rows {
                        out[r * cols + c] = col[r];
                    }
                }
                Tensor::raw(vec![rows, cols], out)
            }
            Op::MatMulTn { a, b } => {
                let (a, b) = (v(a), v(b));
                let (m, h, s) = (a.rows(), a.cols(), b.cols());
                let mut out = vec![0.0; h * s];
                for i in 0..m {
                    for d in 0..h {
                        let aid = a.at(i, d);
                        let brow = b.row(i);
                        let orow = &mut out[d * s..(d + 1) * s];
                        for (o, bv) in orow.iter_mut().zip(brow) {
                            *o += aid * bv;
                        }
                    }
                }
                Tensor::raw(vec![h, s], out)
            }
            Op::MeanCols(x) => {
                let x = v(x);
                let cols = x.cols() as f64;
                Tensor::vector((0..x.rows()).map(|r| x.row(r).iter().sum::<f64>() / cols).collect())
            }
            Op::Linear { weight, bias, x } => {
                let dot: f64 = v(weight).data().iter().zip(v(x).data()).map(|(a, b)| a * b).sum();
                Tensor::scalar(dot + v(bias).item())
            }
            Op::SquaredError { x, target } => {
                let d = v(x).item() - target;
                Tensor::scalar(d * d)
            }
            Op::AbsError { x, target } => Tensor::scalar((v(x).item() - target).abs()),
        })
    }

    /// Relu convolution of an `N×T` input with `h×N×w` kernels and `h` biases.
    pub fn conv1d_relu(&mut self, input: NodeId, kernels: NodeId, bias: NodeId) -> Result<NodeId> {
        check_conv_shapes(self.shape(input), self.shape(kernels), self.shape(bias))?;
        self.push(Op::Conv1dRelu {
            input,
            kernels,
            bias,
        })
    }

    /// `D[i, j] = ‖protos[i] − reps[:, j]‖²` for `m×h` prototypes and `h×S` representations.
    pub fn pairwise_sq_dist(&mut self, protos: NodeId, reps: NodeId) -> Result<NodeId> {
        let (p, z) = (self.shape(protos), self.shape(reps));
        if p.len() != 2 || z.len() != 2 || p[1] != z[0] {
            return Err(Error::Shape(format!(
                "pairwise_sq_dist prototypes {p:?} vs representations {z:?}"
            )));
        }
        self.push(Op::PairwiseSqDist { protos, reps })
    }

    pub fn neg_exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::NegExp(x))
    }

    pub fn row_max(&mut self, x: NodeId) -> Result<NodeId> {
        self.require_matrix(x, "row_max")?;
        self.push(Op::RowMax(x))
    }

    pub fn row_min(&mut self, x: NodeId) -> Result<NodeId> {
        self.require_matrix(x, "row_min")?;
        self.push(Op::RowMin(x))
    }

    pub fn col_min(&mut self, x: NodeId) -> Result<NodeId> {
        self.require_matrix(x, "col_min")?;
        self.push(Op::ColMin(x))
    }

    /// Flattens and concatenates the parts into one vector.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Shape("concat of zero tensors".into()));
        }
        self.push(Op::Concat(parts.to_vec()))
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(first) = parts.first() else {
            return Err(Error::Shape("concat_cols of zero tensors".into()));
        };
        let rows = self.shape(*first).first().copied();
        for p in parts {
            self.require_matrix(*p, "concat_cols")?;
            if self.shape(*p).first().copied() != rows {
                return Err(Error::Shape("concat_cols row mismatch".into()));
            }
        }
        self.push(Op::ConcatCols(parts.to_vec()))
    }

    pub fn mat_vec(&mut self, mat: NodeId, vec: NodeId) -> Result<NodeId> {
        let (m, v) = (self.shape(mat), self.shape(vec));
        if m.len() != 2 || m[1] != self.value(vec).len() || v.len() != 1 {
            return Err(Error::Shape(format!("mat_vec {m:?} × {v:?}")));
        }
        self.push(Op::MatVec { mat, vec })
    }

    /// `−log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        if target >= self.value(logits).len() {
            return Err(Error::Shape(format!(
                "target {target} outside {} logits",
                self.value(logits).len()
            )));
        }
        self.push(Op::SoftmaxCrossEntropy { logits, target })
    }

    /// `Σ_{i≠j} max(0, margin − ‖p_i − p_j‖²)` over the rows of `protos`.
    pub fn diversity_hinge(&mut self, protos: NodeId, margin: f64) -> Result<NodeId> {
        self.require_matrix(protos, "diversity_hinge")?;
        self.push(Op::DiversityHinge { protos, margin })
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Sum(x))
    }

    /// `Σ w_k · x_k` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId> {
        if let Some((id, _)) = terms.iter().find(|(id, _)| !self.value(*id).is_scalar()) {
            return Err(Error::Shape(format!("weighted_sum term {} is not scalar", id.0)));
        }
        self.push(Op::WeightedSum(terms.to_vec()))
    }

    /// Softmax down each column.
    pub fn softmax_cols(&mut self, x: NodeId) -> Result<NodeId> {
        self.require_matrix(x, "softmax_cols")?;
        self.push(Op::SoftmaxCols(x))
    }

    /// `aᵀ · b` for `a: m×h`, `b: m×S`.
    pub fn matmul_tn(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(Error::Shape(format!("matmul_tn {sa:?}ᵀ × {sb:?}")));
        }
        self.push(Op::MatMulTn { a, b })
    }

    pub fn mean_cols(&mut self, x: NodeId) -> Result<NodeId> {
        self.require_matrix(x, "mean_cols")?;
        self.push(Op::MeanCols(x))
    }

    /// `weight · x + bias` with a scalar bias.
    pub fn linear(&mut self, weight: NodeId, bias: NodeId, x: NodeId) -> Result<NodeId> {
        if self.value(weight).len() != self.value(x).len() || !self.value(bias).is_scalar() {
            return Err(Error::Shape("linear weight/input/bias mismatch".into()));
        }
        self.push(Op::Linear { weight, bias, x })
    }

    pub fn squared_error(&mut self, x: NodeId, target: f64) -> Result<NodeId> {
        self.push(Op::SquaredError { x, target })
    }

    pub fn abs_error(&mut self, x: NodeId, target: f64) -> Result<NodeId> {
        self.push(Op::AbsError { x, target })
    }

    fn require_matrix(&self, x: NodeId, op: &str) -> Result<()> {
        if self.shape(x).len() != 2 {
            return Err(Error::Shape(format!(
                "{op} expects a matrix, got shape {:?}",
                self.shape(x)
            )));
        }
        Ok(())
    }

    /// Re-executes every recorded operation from the leaf values and returns
    /// the recomputed outputs in node order.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut replayed = Tape::new();
        for node in &self.nodes {
            match node.op {
                Op::Leaf => {
                    replayed.nodes.push(node.clone());
                }
                ref op => {
                    let value = replayed.compute(op)?;
                    replayed.nodes.push(Node {
                        value,
                        op: op.clone(),
                        requires_grad: node.requires_grad,
                    });
                }
            }
        }
        Ok(replayed.nodes.into_iter().map(|n| n.value).collect())
    }

    /// Gradient of the scalar node `output` with respect to every node.
    pub fn gradient(&self, output: NodeId) -> Result<Gradients> {
        if !self.value(output).is_scalar() {
            return Err(Error::Contract(format!(
                "gradient target must be scalar, got shape {:?}",
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::raw(
            self.value(output).shape().to_vec(),
            vec![1.0],
        ));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.backward(&node.op, idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let slot = grads[id.0].get_or_insert_with(|| Tensor::zeros(self.shape(id)));
        f(slot.data_mut());
    }

    fn backward(&self, op: &Op, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[idx].value;
        let g = g.data();
        match op {
            Op::Leaf => {}
            Op::Conv1dRelu {
                input,
                kernels,
                bias,
            } => {
                let (x, k) = (self.value(*input), self.value(*kernels));
                let (n_ch, t_len) = (x.rows(), x.cols());
                let (h, w) = (k.shape()[0], k.shape()[2]);
                let s = t_len - w + 1;
                let gp: Vec<f64> = g
                    .iter()
                    .zip(out.data())
                    .map(|(gv, o)| if *o > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *bias, |db| {
                    for o in 0..h {
                        db[o] += gp[o * s..(o + 1) * s].iter().sum::<f64>();
                    }
                });
                self.accumulate(grads, *kernels, |dk| {
                    for o in 0..h {
                        let grow = &gp[o * s..(o + 1) * s];
                        for c in 0..n_ch {
                            let xrow = x.row(c);
                            for t in 0..w {
                                let acc: f64 =
                                    grow.iter().zip(&xrow[t..t + s]).map(|(a, b)| a * b).sum();
                                dk[(o * n_ch + c) * w + t] += acc;
                            }
                        }
                    }
                });
                self.accumulate(grads, *input, |dx| {
                    let kd = k.data();
                    for o in 0..h {
                        let grow = &gp[o * s..(o + 1) * s];
                        for c in 0..n_ch {
                            for t in 0..w {
                                let kv = kd[(o * n_ch + c) * w + t];
                                let dxrow = &mut dx[c * t_len + t..c * t_len + t + s];
                                for (d, gv) in dxrow.iter_mut().zip(grow) {
                                    *d += kv * gv;
                                }
                            }
                        }
                    }
                });
            }
            Op::PairwiseSqDist { protos, reps } => {
                let (p, z) = (self.value(*protos), self.value(*reps));
                let (m, h, s) = (p.rows(), p.cols(), z.cols());
                self.accumulate(grads, *protos, |dp| {
                    for i in 0..m {
                        for d in 0..h {
                            let pid = p.at(i, d);
                            let zrow = z.row(d);
                            let acc: f64 = (0..s).map(|j| g[i * s + j] * (pid - zrow[j])).sum();
                            dp[i * h + d] += 2.0 * acc;
                        }
                    }
                });
                self.accumulate(grads, *reps, |dz| {
                    for i in 0..m {
                        for d in 0..h {
                            let pid = p.at(i, d);
                            let zrow = z.row(d);
                            for j in 0..s {
                                dz[d * s + j] -= 2.0 * g[i * s + j] * (pid - zrow[j]);
                            }
                        }
                    }
                });
            }
            Op::NegExp(x) => {
                self.accumulate(grads, *x, |dx| {
                    for ((d, gv), y) in dx.iter_mut().zip(g).zip(out.data()) {
                        *d -= gv * y;
                    }
                });
            }
            Op::RowMax(x) | Op::RowMin(x) => {
                let xv = self.value(*x);
                let is_max = matches!(op, Op::RowMax(_));
                self.accumulate(grads, *x, |dx| {
                    let cols = xv.cols();
                    for r in 0..xv.rows() {
                        let j = if is_max {
                            first_max(xv.row(r))
                        } else {
                            first_min(xv.row(r))
                        };
                        dx[r * cols + j] += g[r];
                    }
                });
            }
            Op::ColMin(x) => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, |dx| {
                    let cols = xv.cols();
                    for c in 0..cols {
                        dx[col_first_min(xv, c) * cols + c] += g[c];
                    }
                });
            }
            Op::Concat(parts) | Op::ConcatCols(parts) => {
                let by_cols = matches!(op, Op::ConcatCols(_));
                let total_cols = out.cols();
                let mut offset = 0;
                for p in parts {
                    let pv = self.value(*p);
                    let (rows, cols, n) = (pv.rows(), pv.cols(), pv.len());
                    self.accumulate(grads, *p, |dp| {
                        if by_cols {
                            for r in 0..rows {
                                for c in 0..cols {
                                    dp[r * cols + c] += g[r * total_cols + offset + c];
                                }
                            }
                        } else {
                            for (d, gv) in dp.iter_mut().zip(&g[offset..offset + n]) {
                                *d += gv;
                            }
                        }
                    });
                    offset += if by_cols { cols } else { n };
                }
            }
            Op::MatVec { mat, vec } => {
                let (m, v) = (self.value(*mat), self.value(*vec));
                let cols = m.cols();
                self.accumulate(grads, *mat, |dm| {
                    for r in 0..m.rows() {
                        for c in 0..cols {
                            dm[r * cols + c] += g[r] * v.data()[c];
                        }
                    }
                });
                self.accumulate(grads, *vec, |dv| {
                    for (r, gr) in g.iter().enumerate().take(m.rows()) {
                        for (d, mv) in dv.iter_mut().zip(m.row(r)) {
                            *d += gr * mv;
                        }
                    }
                });
            }
            Op::SoftmaxCrossEntropy { logits, target } => {
                let probs = softmax_unchecked(self.value(*logits).data());
                self.accumulate(grads, *logits, |dl| {
                    for (c, (d, p)) in dl.iter_mut().zip(&probs).enumerate() {
                        let y = if c == *target { 1.0 } else { 0.0 };
                        *d += g[0] * (p - y);
                    }
                });
            }
            Op::DiversityHinge { protos, margin } => {
                let p = self.value(*protos);
                let (m, h) = (p.rows(), p.cols());
                self.accumulate(grads, *protos, |dp| {
                    for i in 0..m {
                        for j in 0..m {
                            if i == j {
                                continue;
                            }
                            let d = crate::numerics::sq_dist_unchecked(p.row(i), p.row(j));
                            if margin - d > 0.0 {
                                for k in 0..h {
                                    let diff = 2.0 * (p.at(i, k) - p.at(j, k)) * g[0];
                                    dp[i * h + k] -= diff;
                                    dp[j * h + k] += diff;
                                }
                            }
                        }
                    }
                });
            }
            Op::Sum(x) => {
                self.accumulate(grads, *x, |dx| dx.iter_mut().for_each(|d| *d += g[0]));
            }
            Op::WeightedSum(terms) => {
                for (id, w) in terms {
                    self.accumulate(grads, *id, |dx| dx[0] += w * g[0]);
                }
            }
            Op::SoftmaxCols(x) => {
                let (rows, cols) = (out.rows(), out.cols());
                self.accumulate(grads, *x, |dx| {
                    for c in 0..cols {
                        let dot: f64 = (0..rows)
                            .map(|r| g[r * cols + c] * out.data()[r * cols + c])
                            .sum();
                        for r in 0..rows {
                            let y = out.data()[r * cols + c];
                            dx[r * cols + c] += y * (g[r * cols + c] - dot);
                        }
                    }
                });
            }
            Op::MatMulTn { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, h, s) = (av.rows(), av.cols(), bv.cols());
                self.accumulate(grads, *a, |da| {
                    for i in 0..m {
                        for d in 0..h {
                            da[i * h + d] += (0..s).map(|j| g[d * s + j] * bv.at(i, j)).sum::<f64>();
                        }
                    }
                });
                self.accumulate(grads, *b, |db| {
                    for i in 0..m {
                        for j in 0..s {
                            db[i * s + j] += (0..h).map(|d| g[d * s + j] * av.at(i, d)).sum::<f64>();
                        }
                    }
                });
            }
            Op::MeanCols(x) => {
                let xv = self.value(*x);
                let cols = xv.cols();
                self.accumulate(grads, *x, |dx| {
                    for r in 0..xv.rows() {
                        for c in 0..cols {
                            dx[r * cols + c] += g[r] / cols as f64;
                        }
                    }
                });
            }
            Op::Linear { weight, bias, x } => {
                let (wv, xv) = (self.value(*weight), self.value(*x));
                self.accumulate(grads, *weight, |dw| {
                    for (d, xi) in dw.iter_mut().zip(xv.data()) {
                        *d += g[0] * xi;
                    }
                });
                self.accumulate(grads, *x, |dx| {
                    for (d, wi) in dx.iter_mut().zip(wv.data()) {
                        *d += g[0] * wi;
                    }
                });
                self.accumulate(grads, *bias, |db| db[0] += g[0]);
            }
            Op::SquaredError { x, target } => {
                let d = self.value(*x).item() - target;
                self.accumulate(grads, *x, |dx| dx[0] += 2.0 * d * g[0]);
            }
            Op::AbsError { x, target } => {
                let d = self.value(*x).item() - target;
                let sign = if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                self.accumulate(grads, *x, |dx| dx[0] += sign * g[0]);
            }
        }
    }
}

fn first_max(row: &[f64]) -> usize {
    crate::numerics::argmax(row)
}

fn first_min(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x < row[best] {
            best = i;
        }
    }
    best
}

fn col_first_min(x: &Tensor, col: usize) -> usize {
    let mut best = 0;
    for r in 0..x.rows() {
        if x.at(r, col) < x.at(best, col) {
            best = r;
        }
    }
    best
}

fn check_conv_shapes(input: &[usize], kernels: &[usize], bias: &[usize]) -> Result<()> {
    if input.len() != 2 || kernels.len() != 3 || bias.len() != 1 {
        return Err(Error::Shape(format!(
            "conv1d expects N×T input, h×N×w kernels, h bias; got {input:?}, {kernels:?}, {bias:?}"
        )));
    }
    if kernels[1] != input[0] {
        return Err(Error::Shape(format!(
            "kernel channel count {} differs from input channel count {}",
            kernels[1], input[0]
        )));
    }
    if bias[0] != kernels[0] {
        return Err(Error::Shape(format!(
            "bias length {} differs from kernel count {}",
            bias[0], kernels[0]
        )));
    }
    if kernels[2] == 0 || kernels[2] > input[1] {
        return Err(Error::InvalidConfig(format!(
            "kernel width {} must be in 1..={}",
            kernels[2], input[1]
        )));
    }
    Ok(())
}

/// Relu convolution producing an `h × (T − w + 1)` matrix whose column `j`
/// is the representation of the window starting at `j`.
pub fn conv1d_relu(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    check_conv_shapes(input.shape(), kernels.shape(), bias.shape())?;
    if !input.all_finite() {
        return Err(Error::Numeric("conv1d input contains non-finite values".into()));
    }
    let (n_ch, t_len) = (input.rows(), input.cols());
    let (h, w) = (kernels.shape()[0], kernels.shape()[2]);
    let s = t_len - w + 1;
    let kd = kernels.data();
    let mut out = vec![0.0; h * s];
    for o in 0..h {
        let orow = &mut out[o * s..(o + 1) * s];
        orow.iter_mut().for_each(|v| *v = bias.data()[o]);
        for c in 0..n_ch {
            let xrow = input.row(c);
            for t in 0..w {
                let kv = kd[(o * n_ch + c) * w + t];
                for (acc, xv) in orow.iter_mut().zip(&xrow[t..t + s]) {
                    *acc += kv * xv;
                }
            }
        }
        orow.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    Ok(Tensor::raw(vec![h, s], out))
}

/// `m×S` matrix of squared distances between prototype rows and
/// representation columns.
pub fn pairwise_sq_dist(protos: &Tensor, reps: &Tensor) -> Tensor {
    let (m, h, s) = (protos.rows(), protos.cols(), reps.cols());
    let mut out = vec![0.0; m * s];
    for i in 0..m {
        let prow = protos.row(i);
        let orow = &mut out[i * s..(i + 1) * s];
        for (d, &pv) in prow.iter().enumerate().take(h) {
            let zrow = reps.row(d);
            for (o, zv) in orow.iter_mut().zip(zrow) {
                let diff = pv - zv;
                *o += diff * diff;
            }
        }
    }
    Tensor::raw(vec![m, s], out)
}

//! Reverse-mode automatic differentiation over dense matrices.
//!
//! The op vocabulary is fixed: it covers exactly the compute graph of the
//! training objective, which keeps every backward rule small enough to
//! audit by hand. A [`Tape`] records forward ops in topological order;
//! [`Tape::backward`] walks them in reverse, accumulating gradients into
//! fan-out nodes and releasing buffers as soon as they are consumed.
//!
//! The sparse operand of [`Tape::spmm_const`] is a constant: no gradient
//! flows through the adjacency, only through the dense input.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dense::{Mat, Scalar};
use crate::graph::Csr;

#[derive(Debug, Error)]
pub enum TapeError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op}: expected a square input, got {shape:?}")]
    NotSquare {
        op: &'static str,
        shape: (usize, usize),
    },
    #[error("backward requires a 1x1 loss node, got {0:?}")]
    NonScalarLoss((usize, usize)),
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

impl TensorId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Forward op kinds, used for instrumentation and reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Matmul,
    SpmmConst,
    Add,
    Relu,
    Dropout,
    RowL2Normalize,
    MseMean,
    GramRows,
    GramCols,
    SubIdentity,
    FrobNorm,
    Scale,
    MeanPair,
}

impl OpKind {
    pub const COUNT: usize = 14;

    pub const ALL: [OpKind; Self::COUNT] = [
        OpKind::Leaf,
        OpKind::Matmul,
        OpKind::SpmmConst,
        OpKind::Add,
        OpKind::Relu,
        OpKind::Dropout,
        OpKind::RowL2Normalize,
        OpKind::MseMean,
        OpKind::GramRows,
        OpKind::GramCols,
        OpKind::SubIdentity,
        OpKind::FrobNorm,
        OpKind::Scale,
        OpKind::MeanPair,
    ];

    fn index(self) -> usize {
        Self::ALL.iter().position(|&k| k == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Matmul => "matmul",
            OpKind::SpmmConst => "spmm_const",
            OpKind::Add => "add",
            OpKind::Relu => "relu",
            OpKind::Dropout => "dropout",
            OpKind::RowL2Normalize => "row_l2_normalize",
            OpKind::MseMean => "mse_mean",
            OpKind::GramRows => "gram_rows",
            OpKind::GramCols => "gram_cols",
            OpKind::SubIdentity => "sub_identity",
            OpKind::FrobNorm => "frob_norm",
            OpKind::Scale => "scale",
            OpKind::MeanPair => "mean_pair",
        }
    }
}

/// Row norms below this are clamped before division in `row_l2_normalize`.
pub const NORM_CLAMP: f64 = 1e-12;

enum Op<'g, T: Scalar> {
    Leaf,
    Matmul(TensorId, TensorId),
    SpmmConst {
        adj: &'g Csr<T>,
        dense: TensorId,
    },
    Add(TensorId, TensorId),
    Relu(TensorId),
    Dropout {
        input: TensorId,
        mask: Vec<bool>,
        inv_keep: T,
    },
    RowL2Normalize {
        input: TensorId,
        norms: Vec<T>,
    },
    MseMean(TensorId, TensorId),
    GramRows(TensorId),
    GramCols(TensorId),
    SubIdentity(TensorId),
    FrobNorm(TensorId),
    Scale {
        input: TensorId,
        factor: T,
    },
    MeanPair(TensorId, TensorId),
}

impl<T: Scalar> Op<'_, T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Matmul(..) => OpKind::Matmul,
            Op::SpmmConst { .. } => OpKind::SpmmConst,
            Op::Add(..) => OpKind::Add,
            Op::Relu(..) => OpKind::Relu,
            Op::Dropout { .. } => OpKind::Dropout,
            Op::RowL2Normalize { .. } => OpKind::RowL2Normalize,
            Op::MseMean(..) => OpKind::MseMean,
            Op::GramRows(..) => OpKind::GramRows,
            Op::GramCols(..) => OpKind::GramCols,
            Op::SubIdentity(..) => OpKind::SubIdentity,
            Op::FrobNorm(..) => OpKind::FrobNorm,
            Op::Scale { .. } => OpKind::Scale,
            Op::MeanPair(..) => OpKind::MeanPair,
        }
    }
}

struct Node<'g, T: Scalar> {
    op: Op<'g, T>,
    value: Option<Mat<T>>,
    grad: Option<Mat<T>>,
    requires_grad: bool,
}

impl<T: Scalar> Node<'_, T> {
    fn is_leaf(&self) -> bool {
        matches!(self.op, Op::Leaf)
    }
}

/// Allocation accounting for engine-owned buffers: values, gradients, and
/// op caches recorded on one tape. `constraint_peak_bytes` tracks the
/// largest Gram buffer (`gram_rows` / `gram_cols` output), the quantity
/// that separates the row- and column-constraint memory footprints.
#[derive(Debug, Clone, Default)]
pub struct TapeStats {
    pub current_bytes: usize,
    pub peak_bytes: usize,
    pub constraint_peak_bytes: usize,
    op_counts: [u64; OpKind::COUNT],
}

impl TapeStats {
    pub fn op_count(&self, kind: OpKind) -> u64 {
        self.op_counts[kind.index()]
    }

    fn note_alloc(&mut self, bytes: usize) {
        self.current_bytes += bytes;
        if self.current_bytes > self.peak_bytes {
            self.peak_bytes = self.current_bytes;
        }
    }

    fn note_free(&mut self, bytes: usize) {
        self.current_bytes = self.current_bytes.saturating_sub(bytes);
    }
}

/// Recorded compute graph. Single-threaded during construction and
/// backward; distinct tapes may run concurrently.
pub struct Tape<'g, T: Scalar> {
    nodes: Vec<Node<'g, T>>,
    stats: TapeStats,
}

impl<'g, T: Scalar> Default for Tape<'g, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'g, T: Scalar> Tape<'g, T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            stats: TapeStats::default(),
        }
    }

    pub fn stats(&self) -> &TapeStats {
        &self.stats
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a node. Panics if the buffer was released by
    /// `backward`.
    pub fn value(&self, id: TensorId) -> &Mat<T> {
        self.nodes[id.0]
            .value
            .as_ref()
            .expect("tensor value was released during backward")
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, id: TensorId) -> T {
        let v = self.value(id);
        assert_eq!(v.shape(), (1, 1), "scalar() on a non-scalar node");
        v.get(0, 0)
    }

    /// Gradient of a node, if one was computed and retained.
    pub fn grad(&self, id: TensorId) -> Option<&Mat<T>> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, id: TensorId) -> Option<Mat<T>> {
        self.nodes[id.0].grad.take()
    }

    fn shape(&self, id: TensorId) -> (usize, usize) {
        self.value(id).shape()
    }

    fn push(&mut self, op: Op<'g, T>, value: Mat<T>, requires_grad: bool) -> TensorId {
        let mut bytes = value.byte_size();
        match &op {
            Op::Dropout { mask, .. } => bytes += mask.len(),
            Op::RowL2Normalize { norms, .. } => bytes += norms.len() * std::mem::size_of::<T>(),
            _ => {}
        }
        self.stats.note_alloc(bytes);
        let kind = op.kind();
        self.stats.op_counts[kind.index()] += 1;
        if matches!(kind, OpKind::GramRows | OpKind::GramCols) {
            let b = value.byte_size();
            if b > self.stats.constraint_peak_bytes {
                self.stats.constraint_peak_bytes = b;
            }
        }
        self.nodes.push(Node {
            op,
            value: Some(value),
            grad: None,
            requires_grad,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn requires(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn leaf(&mut self, value: Mat<T>, requires_grad: bool) -> TensorId {
        self.push(Op::Leaf, value, requires_grad)
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TapeError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(TapeError::Shape {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let value = self.value(a).matmul(self.value(b));
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Op::Matmul(a, b), value, rg))
    }

    /// Product with a constant sparse matrix; no gradient flows into `adj`.
    pub fn spmm_const(&mut self, adj: &'g Csr<T>, dense: TensorId) -> Result<TensorId, TapeError> {
        let sd = self.shape(dense);
        if adj.cols() != sd.0 {
            return Err(TapeError::Shape {
                op: "spmm_const",
                lhs: (adj.rows(), adj.cols()),
                rhs: sd,
            });
        }
        let value = adj.spmm(self.value(dense)).expect("dims checked above");
        let rg = self.requires(dense);
        Ok(self.push(Op::SpmmConst { adj, dense }, value, rg))
    }

    /// Elementwise sum. When `b` is a single row it broadcasts over the
    /// rows of `a` (bias add).
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TapeError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let value = if sa == sb {
            self.value(a).add(self.value(b))
        } else if sb.0 == 1 && sb.1 == sa.1 {
            let va = self.value(a);
            let vb = self.value(b);
            let mut out = va.clone();
            let bias = vb.row(0).to_vec();
            for r in 0..sa.0 {
                for (x, &y) in out.row_mut(r).iter_mut().zip(&bias) {
                    *x = *x + y;
                }
            }
            out
        } else {
            return Err(TapeError::Shape {
                op: "add",
                lhs: sa,
                rhs: sb,
            });
        };
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Op::Add(a, b), value, rg))
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let value = self.value(a).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.requires(a);
        self.push(Op::Relu(a), value, rg)
    }

    /// Inverted dropout: kept entries are scaled by `1/(1-p)` at train time
    /// so evaluation needs no rescaling. The mask is drawn from the caller's
    /// generator and cached for backward.
    pub fn dropout(&mut self, a: TensorId, p: f64, rng: &mut ChaCha8Rng) -> TensorId {
        assert!((0.0..1.0).contains(&p), "dropout probability must be in [0, 1)");
        let va = self.value(a);
        let mask: Vec<bool> = (0..va.data().len())
            .map(|_| rng.random::<f64>() >= p)
            .collect();
        let inv_keep = T::from_f64(1.0 / (1.0 - p));
        let mut value = va.clone();
        for (x, &keep) in value.data_mut().iter_mut().zip(&mask) {
            *x = if keep { *x * inv_keep } else { T::zero() };
        }
        let rg = self.requires(a);
        self.push(Op::Dropout { input: a, mask, inv_keep }, value, rg)
    }

    /// Divide each row by `max(norm, 1e-12)`; zero rows stay zero.
    pub fn row_l2_normalize(&mut self, a: TensorId) -> TensorId {
        let va = self.value(a);
        let (rows, _cols) = va.shape();
        let mut norms = Vec::with_capacity(rows);
        let mut value = va.clone();
        for r in 0..rows {
            let raw: f64 = va.row(r).iter().map(|v| v.to_f64() * v.to_f64()).sum();
            let norm = raw.sqrt().max(NORM_CLAMP);
            norms.push(T::from_f64(norm));
            let inv = T::from_f64(1.0 / norm);
            for x in value.row_mut(r) {
                *x = *x * inv;
            }
        }
        let rg = self.requires(a);
        self.push(Op::RowL2Normalize { input: a, norms }, value, rg)
    }

    /// Mean of elementwise squared differences.
    pub fn mse_mean(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TapeError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TapeError::Shape {
                op: "mse_mean",
                lhs: sa,
                rhs: sb,
            });
        }
        let (va, vb) = (self.value(a), self.value(b));
        let total: f64 = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| {
                let d = x.to_f64() - y.to_f64();
                d * d
            })
            .sum();
        let value = Mat::from_vec(1, 1, vec![T::from_f64(total / (sa.0 * sa.1) as f64)]);
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Op::MseMean(a, b), value, rg))
    }

    /// `z zᵀ` (row Gram).
    pub fn gram_rows(&mut self, a: TensorId) -> TensorId {
        let va = self.value(a);
        let value = va.matmul_nt(va);
        let rg = self.requires(a);
        self.push(Op::GramRows(a), value, rg)
    }

    /// `zᵀ z` (column Gram).
    pub fn gram_cols(&mut self, a: TensorId) -> TensorId {
        let va = self.value(a);
        let value = va.matmul_tn(va);
        let rg = self.requires(a);
        self.push(Op::GramCols(a), value, rg)
    }

    pub fn sub_identity(&mut self, a: TensorId) -> Result<TensorId, TapeError> {
        let sa = self.shape(a);
        if sa.0 != sa.1 {
            return Err(TapeError::NotSquare {
                op: "sub_identity",
                shape: sa,
            });
        }
        let mut value = self.value(a).clone();
        for i in 0..sa.0 {
            let v = value.get(i, i);
            value.set(i, i, v - T::one());
        }
        let rg = self.requires(a);
        Ok(self.push(Op::SubIdentity(a), value, rg))
    }

    pub fn frob_norm(&mut self, a: TensorId) -> TensorId {
        let value = Mat::from_vec(1, 1, vec![self.value(a).frob_norm()]);
        let rg = self.requires(a);
        self.push(Op::FrobNorm(a), value, rg)
    }

    pub fn scale(&mut self, a: TensorId, factor: T) -> TensorId {
        let value = self.value(a).scale(factor);
        let rg = self.requires(a);
        self.push(Op::Scale { input: a, factor }, value, rg)
    }

    /// Elementwise mean of two same-shape tensors.
    pub fn mean_pair(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TapeError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TapeError::Shape {
                op: "mean_pair",
                lhs: sa,
                rhs: sb,
            });
        }
        let half = T::from_f64(0.5);
        let value = self.value(a).zip_map(self.value(b), |x, y| (x + y) * half);
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Op::MeanPair(a, b), value, rg))
    }

    /// Reverse pass from a scalar loss. Gradients accumulate across fan-out;
    /// value and gradient buffers of interior nodes are released as soon as
    /// they have been consumed. Gradients of leaves with `requires_grad`
    /// remain available through [`Tape::grad`].
    pub fn backward(&mut self, loss: TensorId) -> Result<(), TapeError> {
        let ls = self.shape(loss);
        if ls != (1, 1) {
            return Err(TapeError::NonScalarLoss(ls));
        }
        let seed = Mat::from_vec(1, 1, vec![T::one()]);
        self.stats.note_alloc(seed.byte_size());
        self.nodes[loss.0].grad = Some(seed);

        for i in (0..=loss.0).rev() {
            let grad = match self.nodes[i].grad.take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[i].requires_grad {
                self.stats.note_free(grad.byte_size());
                continue;
            }
            let contributions = self.backward_rule(i, &grad);
            for (target, c) in contributions {
                self.accumulate(target, c);
            }
            if self.nodes[i].is_leaf() {
                self.nodes[i].grad = Some(grad);
            } else {
                self.stats.note_free(grad.byte_size());
                if let Some(v) = self.nodes[i].value.take() {
                    self.stats.note_free(v.byte_size());
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, target: TensorId, contribution: Mat<T>) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        match &mut self.nodes[target.0].grad {
            Some(existing) => existing.add_assign(&contribution),
            slot @ None => {
                self.stats.note_alloc(contribution.byte_size());
                *slot = Some(contribution);
            }
        }
    }

    fn backward_rule(&self, i: usize, grad: &Mat<T>) -> Vec<(TensorId, Mat<T>)> {
        let mut out = Vec::with_capacity(2);
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                if self.requires(*a) {
                    out.push((*a, grad.matmul_nt(self.value(*b))));
                }
                if self.requires(*b) {
                    out.push((*b, self.value(*a).matmul_tn(grad)));
                }
            }
            Op::SpmmConst { adj, dense } => {
                if self.requires(*dense) {
                    out.push((*dense, adj.spmm_t(grad).expect("shape fixed at forward")));
                }
            }
            Op::Add(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                if self.requires(*a) {
                    out.push((*a, grad.clone()));
                }
                if self.requires(*b) {
                    if sa == sb {
                        out.push((*b, grad.clone()));
                    } else {
                        // Bias broadcast: sum the upstream gradient over rows.
                        let mut gb = Mat::zeros(1, sb.1);
                        for r in 0..grad.rows() {
                            for (acc, &g) in gb.row_mut(0).iter_mut().zip(grad.row(r)) {
                                *acc = *acc + g;
                            }
                        }
                        out.push((*b, gb));
                    }
                }
            }
            Op::Relu(a) => {
                if self.requires(*a) {
                    let va = self.value(*a);
                    let g = grad.zip_map(va, |g, x| if x > T::zero() { g } else { T::zero() });
                    out.push((*a, g));
                }
            }
            Op::Dropout {
                input,
                mask,
                inv_keep,
            } => {
                if self.requires(*input) {
                    let mut g = grad.clone();
                    for (x, &keep) in g.data_mut().iter_mut().zip(mask) {
                        *x = if keep { *x * *inv_keep } else { T::zero() };
                    }
                    out.push((*input, g));
                }
            }
            Op::RowL2Normalize { input, norms } => {
                if self.requires(*input) {
                    // d(z/||z||)/dz applied per row: (u - y (y.u)) / ||z||,
                    // with y the normalized row and the clamped norm.
                    let y = self.nodes[i].value.as_ref().expect("value alive");
                    let mut g = Mat::zeros(grad.rows(), grad.cols());
                    for r in 0..grad.rows() {
                        let yr = y.row(r);
                        let ur = grad.row(r);
                        let dot: f64 = yr
                            .iter()
                            .zip(ur)
                            .map(|(&a, &b)| a.to_f64() * b.to_f64())
                            .sum();
                        let dot = T::from_f64(dot);
                        let inv = T::one() / norms[r];
                        for ((o, &u), &yv) in g.row_mut(r).iter_mut().zip(ur).zip(yr) {
                            *o = (u - yv * dot) * inv;
                        }
                    }
                    out.push((*input, g));
                }
            }
            Op::MseMean(a, b) => {
                let g = grad.get(0, 0);
                let (va, vb) = (self.value(*a), self.value(*b));
                let n = T::from_f64((va.rows() * va.cols()) as f64);
                let coeff = T::from_f64(2.0) * g / n;
                if self.requires(*a) {
                    out.push((*a, va.zip_map(vb, |x, y| coeff * (x - y))));
                }
                if self.requires(*b) {
                    out.push((*b, va.zip_map(vb, |x, y| -coeff * (x - y))));
                }
            }
            Op::GramRows(a) => {
                if self.requires(*a) {
                    let sym = grad.add(&grad.transpose());
                    out.push((*a, sym.matmul(self.value(*a))));
                }
            }
            Op::GramCols(a) => {
                if self.requires(*a) {
                    let sym = grad.add(&grad.transpose());
                    out.push((*a, self.value(*a).matmul(&sym)));
                }
            }
            Op::SubIdentity(a) => {
                if self.requires(*a) {
                    out.push((*a, grad.clone()));
                }
            }
            Op::FrobNorm(a) => {
                if self.requires(*a) {
                    let s = self.nodes[i].value.as_ref().expect("value alive").get(0, 0);
                    let denom = T::from_f64(s.to_f64().max(NORM_CLAMP));
                    let coeff = grad.get(0, 0) / denom;
                    out.push((*a, self.value(*a).scale(coeff)));
                }
            }
            Op::Scale { input, factor } => {
                if self.requires(*input) {
                    out.push((*input, grad.scale(*factor)));
                }
            }
            Op::MeanPair(a, b) => {
                let half = grad.scale(T::from_f64(0.5));
                if self.requires(*a) {
                    out.push((*a, half.clone()));
                }
                if self.requires(*b) {
                    out.push((*b, half));
                }
            }
        }
        out
    }

    /// Branch decisions taken during the forward pass: ReLU sign masks,
    /// clamped rows in `row_l2_normalize`, and near-zero Frobenius norms.
    /// Two runs of the same graph with different inputs are only
    /// finite-difference comparable when their signatures agree.
    fn branch_signature(&self, kink_eps: f64) -> Vec<Vec<bool>> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => {
                    let va = self.nodes[a.0].value.as_ref().expect("value alive");
                    sig.push(va.data().iter().map(|&v| v > T::zero()).collect());
                }
                Op::RowL2Normalize { norms, .. } => {
                    sig.push(
                        norms
                            .iter()
                            .map(|&n| n.to_f64() <= NORM_CLAMP || n.to_f64() <= kink_eps)
                            .collect(),
                    );
                }
                Op::FrobNorm(_) => {
                    let v = node.value.as_ref().expect("value alive").get(0, 0);
                    sig.push(vec![v.to_f64() <= kink_eps]);
                }
                _ => {}
            }
        }
        sig
    }

    /// Ops whose forward pass landed in a non-differentiable region at the
    /// evaluation point itself (clamped norms); finite differences are
    /// meaningless there.
    fn degenerate_ops(&self, kink_eps: f64) -> Vec<&'static str> {
        let mut ops = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::RowL2Normalize { norms, .. } => {
                    if norms.iter().any(|&n| n.to_f64() <= kink_eps.max(NORM_CLAMP)) {
                        ops.push(OpKind::RowL2Normalize.name());
                    }
                }
                Op::FrobNorm(_) => {
                    let v = node.value.as_ref().expect("value alive").get(0, 0);
                    if v.to_f64() <= kink_eps {
                        ops.push(OpKind::FrobNorm.name());
                    }
                }
                _ => {}
            }
        }
        ops
    }
}

/// Location of one checked coordinate: (input index, row, col).
pub type CoordRef = (usize, usize, usize);

#[derive(Debug, Clone)]
pub struct SkippedCoord {
    pub input: usize,
    pub row: usize,
    pub col: usize,
    pub reason: String,
}

/// Outcome of a finite-difference check of one graph.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst relative error over all checked coordinates:
    /// `|g_analytic - g_fd| / max(1, |g_analytic|)`.
    pub max_rel_err: f64,
    pub worst: Option<CoordRef>,
    pub per_input_max: Vec<f64>,
    pub skipped: Vec<SkippedCoord>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err <= tolerance
    }
}

/// Compare tape gradients against central finite differences.
///
/// `build` reconstructs the same graph for every evaluation; its RNG is
/// reseeded identically each time so stochastic ops (dropout) replay the
/// same masks. Coordinates whose perturbed runs take different branches
/// (a ReLU flip, a clamp toggle) are skipped and reported instead of
/// producing a bogus difference quotient.
pub fn grad_check<'g, F>(
    build: F,
    inputs: &[Mat<f64>],
    epsilon: f64,
    seed: u64,
) -> Result<GradCheckReport, TapeError>
where
    F: Fn(&mut Tape<'g, f64>, &[TensorId], &mut ChaCha8Rng) -> Result<TensorId, TapeError>,
{
    let run = |mats: &[Mat<f64>]| -> Result<(Tape<'g, f64>, TensorId), TapeError> {
        let mut tape: Tape<'g, f64> = Tape::new();
        let ids: Vec<TensorId> = mats.iter().map(|m| tape.leaf(m.clone(), true)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let loss = build(&mut tape, &ids, &mut rng)?;
        let shape = tape.value(loss).shape();
        if shape != (1, 1) {
            return Err(TapeError::NonScalarLoss(shape));
        }
        Ok((tape, loss))
    };

    let kink_eps = 10.0 * epsilon;
    let (mut base_tape, base_loss) = run(inputs)?;
    let degenerate = base_tape.degenerate_ops(kink_eps);
    if !degenerate.is_empty() {
        let mut skipped = Vec::new();
        for (k, m) in inputs.iter().enumerate() {
            for r in 0..m.rows() {
                for c in 0..m.cols() {
                    skipped.push(SkippedCoord {
                        input: k,
                        row: r,
                        col: c,
                        reason: format!("{} at a non-differentiable point", degenerate[0]),
                    });
                }
            }
        }
        return Ok(GradCheckReport {
            max_rel_err: 0.0,
            worst: None,
            per_input_max: vec![0.0; inputs.len()],
            skipped,
            checked: 0,
        });
    }

    base_tape.backward(base_loss)?;
    let leaf_ids: Vec<TensorId> = (0..inputs.len()).map(TensorId).collect();
    let analytic: Vec<Mat<f64>> = leaf_ids
        .iter()
        .zip(inputs)
        .map(|(&id, m)| {
            base_tape
                .grad(id)
                .cloned()
                .unwrap_or_else(|| Mat::zeros(m.rows(), m.cols()))
        })
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        per_input_max: vec![0.0; inputs.len()],
        skipped: Vec::new(),
        checked: 0,
    };

    let mut work: Vec<Mat<f64>> = inputs.to_vec();
    for k in 0..inputs.len() {
        for r in 0..inputs[k].rows() {
            for c in 0..inputs[k].cols() {
                let orig = work[k].get(r, c);
                work[k].set(r, c, orig + epsilon);
                let (tape_plus, loss_plus) = run(&work)?;
                work[k].set(r, c, orig - epsilon);
                let (tape_minus, loss_minus) = run(&work)?;
                work[k].set(r, c, orig);

                if tape_plus.branch_signature(kink_eps) != tape_minus.branch_signature(kink_eps) {
                    report.skipped.push(SkippedCoord {
                        input: k,
                        row: r,
                        col: c,
                        reason: "branch change within epsilon (non-differentiable)".to_string(),
                    });
                    continue;
                }
                let fd = (tape_plus.scalar(loss_plus) - tape_minus.scalar(loss_minus))
                    / (2.0 * epsilon);
                let ga = analytic[k].get(r, c);
                let rel = (ga - fd).abs() / ga.abs().max(1.0);
                report.checked += 1;
                if rel > report.per_input_max[k] {
                    report.per_input_max[k] = rel;
                }
                if rel > report.max_rel_err {
                    report.max_rel_err = rel;
                    report.worst = Some((k, r, c));
                }
            }
        }
    }
    Ok(report)
}

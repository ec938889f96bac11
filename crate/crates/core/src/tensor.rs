//! Dense tensors and a tape-based reverse-mode gradient engine.
//!
//! The tape records exactly the kernels the model needs: matrix products,
//! same-padded 1-D convolution, piecewise max pooling, row softmax, fused
//! negative log-likelihood, elementwise activations, embedding-row gathers
//! and a handful of structural ops (concat, stack, reshape, sums). Nodes are
//! append-only, so reverse iteration over the tape is a valid reverse
//! topological order and `backward` is a single pass.
//!
//! All arithmetic is `f64`. A model evaluation owns its tape; values are
//! immutable once a node is created and only gradient slots accumulate.

use thiserror::Error;

/// Errors raised by tensor construction and tape operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        limit: usize,
    },
    #[error("{op}: {message}")]
    InvalidArgument { op: &'static str, message: String },
}

fn invalid(op: &'static str, message: impl Into<String>) -> TensorError {
    TensorError::InvalidArgument {
        op,
        message: message.into(),
    }
}

/// Dense row-major tensor with an optional accumulated-gradient slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(invalid(
                "Tensor::new",
                format!(
                    "shape {:?} implies {} elements, got {}",
                    shape,
                    expected,
                    values.len()
                ),
            ));
        }
        Ok(Self {
            shape,
            values,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; len],
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            values: vec![value],
            grad: None,
        }
    }

    /// 1-D tensor from a flat vector.
    pub fn from_vec(values: Vec<f64>) -> Self {
        Self {
            shape: vec![values.len()],
            values,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) {
        debug_assert_eq!(grad.len(), self.values.len());
        self.grad = Some(grad);
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of rows when viewed as a matrix (shape `[r, c]`).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
            && self
                .grad
                .as_ref()
                .is_none_or(|g| g.iter().all(|v| v.is_finite()))
    }

    /// Row slice of a `[r, c]` matrix.
    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.values[r * cols..(r + 1) * cols]
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `[m,n] x [n,p] -> [m,p]`
    Matmul { a: VarId, b: VarId },
    /// `[m,n] x [p,n]ᵀ -> [m,p]`
    MatmulNt { a: VarId, b: VarId },
    /// seq `[t,din]`, filters `[w,din,dout]`, bias `[dout]` -> `[t,dout]`
    Conv1dSame {
        seq: VarId,
        filters: VarId,
        bias: VarId,
    },
    /// featmap `[t,c]` -> `[3*c]`, segment-major; `argmax[seg*c + ch]` is the
    /// winning row, `None` for an empty segment.
    PiecewiseMaxPool {
        input: VarId,
        argmax: Vec<Option<usize>>,
    },
    SoftmaxRow { input: VarId },
    NllFromLogits { logits: VarId, gold: usize },
    Tanh { input: VarId },
    Relu { input: VarId },
    /// Gather rows of `table` (`[v,d]`) by index -> `[ids.len(),d]`.
    EmbedRows { table: VarId, ids: Vec<usize> },
    /// Column-wise concatenation of matrices with equal row count.
    ConcatCols { parts: Vec<VarId> },
    /// Stack 1-D tensors of equal length into a matrix.
    StackRows { parts: Vec<VarId> },
    /// Single row of a matrix as a 1-D tensor.
    Row { input: VarId, index: usize },
    Add { a: VarId, b: VarId },
    AddN { parts: Vec<VarId> },
    /// Elementwise product.
    Mul { a: VarId, b: VarId },
    Scale { input: VarId, factor: f64 },
    /// Sum of all elements -> scalar.
    Sum { input: VarId },
    Reshape { input: VarId },
}

struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
}

/// Append-only record of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, op: Op) -> VarId {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        debug_assert!(
            values.iter().all(|v| v.is_finite()),
            "non-finite forward value"
        );
        let grad = vec![0.0; values.len()];
        self.nodes.push(Node {
            shape,
            values,
            grad,
            op,
        });
        VarId(self.nodes.len() - 1)
    }

    pub fn shape(&self, id: VarId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn values(&self, id: VarId) -> &[f64] {
        &self.nodes[id.0].values
    }

    pub fn grad(&self, id: VarId) -> &[f64] {
        &self.nodes[id.0].grad
    }

    pub fn scalar_value(&self, id: VarId) -> f64 {
        self.nodes[id.0].values[0]
    }

    fn rows_cols(&self, id: VarId) -> (usize, usize) {
        let s = &self.nodes[id.0].shape;
        match s.len() {
            1 => (1, s[0]),
            2 => (s[0], s[1]),
            _ => panic!("expected matrix or vector, got shape {s:?}"),
        }
    }

    /// New leaf node from an existing tensor's values.
    pub fn leaf(&mut self, tensor: &Tensor) -> VarId {
        self.push(tensor.shape.clone(), tensor.values.clone(), Op::Leaf)
    }

    pub fn leaf_from(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<VarId, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(invalid(
                "leaf",
                format!(
                    "shape {:?} needs {} values, got {}",
                    shape,
                    expected,
                    values.len()
                ),
            ));
        }
        Ok(self.push(shape, values, Op::Leaf))
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        let (m, n) = self.rows_cols(a);
        let (n2, p) = self.rows_cols(b);
        if n != n2 {
            return Err(TensorError::DimensionMismatch {
                op: "matmul",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let out = mat_mul(self.values(a), self.values(b), m, n, p);
        Ok(self.push(vec![m, p], out, Op::Matmul { a, b }))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        let (m, n) = self.rows_cols(a);
        let (p, n2) = self.rows_cols(b);
        if n != n2 {
            return Err(TensorError::DimensionMismatch {
                op: "matmul_nt",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let av = self.values(a);
        let bv = self.values(b);
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            let ar = &av[i * n..(i + 1) * n];
            for j in 0..p {
                let br = &bv[j * n..(j + 1) * n];
                out[i * p + j] = dot(ar, br);
            }
        }
        Ok(self.push(vec![m, p], out, Op::MatmulNt { a, b }))
    }

    /// Zero-padded convolution over the row axis; output length equals input
    /// length. Filters are `[w, d_in, d_out]` with odd `w`.
    pub fn conv1d_same(
        &mut self,
        seq: VarId,
        filters: VarId,
        bias: VarId,
    ) -> Result<VarId, TensorError> {
        let seq_shape = self.shape(seq).to_vec();
        let filt_shape = self.shape(filters).to_vec();
        if seq_shape.len() != 2 || filt_shape.len() != 3 {
            return Err(TensorError::DimensionMismatch {
                op: "conv1d_same",
                left: seq_shape,
                right: filt_shape,
            });
        }
        let (t, d_in) = (seq_shape[0], seq_shape[1]);
        let (w, f_in, d_out) = (filt_shape[0], filt_shape[1], filt_shape[2]);
        if w % 2 == 0 {
            return Err(invalid(
                "conv1d_same",
                format!("kernel width must be odd, got {w}"),
            ));
        }
        if f_in != d_in || self.values(bias).len() != d_out {
            return Err(TensorError::DimensionMismatch {
                op: "conv1d_same",
                left: seq_shape,
                right: filt_shape,
            });
        }
        if t == 0 {
            return Err(invalid("conv1d_same", "sequence must have at least one row"));
        }
        let pad = (w - 1) / 2;
        let sv = self.values(seq);
        let fv = self.values(filters);
        let bv = self.values(bias);
        let mut out = vec![0.0; t * d_out];
        for pos in 0..t {
            let dst = &mut out[pos * d_out..(pos + 1) * d_out];
            dst.copy_from_slice(bv);
            for u in 0..w {
                let src_row = pos as isize + u as isize - pad as isize;
                if src_row < 0 || src_row >= t as isize {
                    continue;
                }
                let row = &sv[src_row as usize * d_in..(src_row as usize + 1) * d_in];
                let f_base = u * d_in * d_out;
                for (i, &x) in row.iter().enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    let fr = &fv[f_base + i * d_out..f_base + (i + 1) * d_out];
                    for (acc, &fw) in dst.iter_mut().zip(fr) {
                        *acc += x * fw;
                    }
                }
            }
        }
        Ok(self.push(vec![t, d_out], out, Op::Conv1dSame { seq, filters, bias }))
    }

    /// Per-channel max over the three row segments `[0..=s1]`, `(s1..=s2]`,
    /// `(s2..t-1]`. Empty segments pool to zero. Output is segment-major
    /// `[3*channels]`; ties pick the lowest row.
    pub fn piecewise_max_pool(
        &mut self,
        input: VarId,
        split1: usize,
        split2: usize,
    ) -> Result<VarId, TensorError> {
        let shape = self.shape(input).to_vec();
        let (t, c) = (shape[0], shape[1]);
        if split1 > split2 || split2 >= t {
            return Err(TensorError::IndexOutOfRange {
                op: "piecewise_max_pool",
                index: split2.max(split1),
                limit: t,
            });
        }
        let segments = [
            (0usize, split1 + 1),
            (split1 + 1, split2 + 1),
            (split2 + 1, t),
        ];
        let v = self.values(input);
        let mut out = vec![0.0; 3 * c];
        let mut argmax = vec![None; 3 * c];
        for (seg, &(start, end)) in segments.iter().enumerate() {
            if start >= end {
                continue; // empty segment: zeros, no gradient route
            }
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut best_row = start;
                for row in start..end {
                    let x = v[row * c + ch];
                    if x > best {
                        best = x;
                        best_row = row;
                    }
                }
                out[seg * c + ch] = best;
                argmax[seg * c + ch] = Some(best_row);
            }
        }
        Ok(self.push(vec![3 * c], out, Op::PiecewiseMaxPool { input, argmax }))
    }

    /// Max-shifted softmax over a flat tensor.
    pub fn softmax_row(&mut self, input: VarId) -> Result<VarId, TensorError> {
        let v = self.values(input);
        if v.is_empty() {
            return Err(invalid("softmax_row", "empty input"));
        }
        let out = softmax(v);
        Ok(self.push(self.shape(input).to_vec(), out, Op::SoftmaxRow { input }))
    }

    /// `-log softmax(logits)[gold]` in fused log-sum-exp form; scalar output.
    pub fn nll_from_logits(&mut self, logits: VarId, gold: usize) -> Result<VarId, TensorError> {
        let v = self.values(logits);
        if gold >= v.len() {
            return Err(TensorError::IndexOutOfRange {
                op: "nll_from_logits",
                index: gold,
                limit: v.len(),
            });
        }
        let loss = log_sum_exp(v) - v[gold];
        Ok(self.push(vec![1], vec![loss], Op::NllFromLogits { logits, gold }))
    }

    pub fn tanh(&mut self, input: VarId) -> VarId {
        let out: Vec<f64> = self.values(input).iter().map(|x| x.tanh()).collect();
        self.push(self.shape(input).to_vec(), out, Op::Tanh { input })
    }

    pub fn relu(&mut self, input: VarId) -> VarId {
        let out: Vec<f64> = self.values(input).iter().map(|x| x.max(0.0)).collect();
        self.push(self.shape(input).to_vec(), out, Op::Relu { input })
    }

    /// Gather rows of a `[v,d]` table; gradient scatter-adds onto the rows.
    pub fn embed_rows(&mut self, table: VarId, ids: &[usize]) -> Result<VarId, TensorError> {
        let (v, d) = self.rows_cols(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(TensorError::IndexOutOfRange {
                op: "embed_rows",
                index: bad,
                limit: v,
            });
        }
        let tv = self.values(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        Ok(self.push(
            vec![ids.len(), d],
            out,
            Op::EmbedRows {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn concat_cols(&mut self, parts: &[VarId]) -> Result<VarId, TensorError> {
        if parts.is_empty() {
            return Err(invalid("concat_cols", "no parts"));
        }
        let rows = self.rows_cols(parts[0]).0;
        let mut total_cols = 0;
        for &p in parts {
            let (r, c) = self.rows_cols(p);
            if r != rows {
                return Err(TensorError::DimensionMismatch {
                    op: "concat_cols",
                    left: self.shape(parts[0]).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
            total_cols += c;
        }
        let mut out = Vec::with_capacity(rows * total_cols);
        for r in 0..rows {
            for &p in parts {
                let c = self.rows_cols(p).1;
                let v = self.values(p);
                out.extend_from_slice(&v[r * c..(r + 1) * c]);
            }
        }
        Ok(self.push(
            vec![rows, total_cols],
            out,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Stack equal-length 1-D tensors into the rows of a matrix.
    pub fn stack_rows(&mut self, parts: &[VarId]) -> Result<VarId, TensorError> {
        if parts.is_empty() {
            return Err(invalid("stack_rows", "no parts"));
        }
        let d = self.values(parts[0]).len();
        let mut out = Vec::with_capacity(parts.len() * d);
        for &p in parts {
            if self.values(p).len() != d {
                return Err(TensorError::DimensionMismatch {
                    op: "stack_rows",
                    left: self.shape(parts[0]).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
            out.extend_from_slice(self.values(p));
        }
        Ok(self.push(
            vec![parts.len(), d],
            out,
            Op::StackRows {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Row `index` of a matrix as a 1-D tensor.
    pub fn row(&mut self, input: VarId, index: usize) -> Result<VarId, TensorError> {
        let (r, c) = self.rows_cols(input);
        if index >= r {
            return Err(TensorError::IndexOutOfRange {
                op: "row",
                index,
                limit: r,
            });
        }
        let out = self.values(input)[index * c..(index + 1) * c].to_vec();
        Ok(self.push(vec![c], out, Op::Row { input, index }))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        if self.values(a).len() != self.values(b).len() {
            return Err(TensorError::DimensionMismatch {
                op: "add",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let out: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add { a, b }))
    }

    /// Elementwise sum of any number of same-shape tensors.
    pub fn add_n(&mut self, parts: &[VarId]) -> Result<VarId, TensorError> {
        if parts.is_empty() {
            return Err(invalid("add_n", "no parts"));
        }
        let len = self.values(parts[0]).len();
        let mut out = vec![0.0; len];
        for &p in parts {
            if self.values(p).len() != len {
                return Err(TensorError::DimensionMismatch {
                    op: "add_n",
                    left: self.shape(parts[0]).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
            for (o, x) in out.iter_mut().zip(self.values(p)) {
                *o += x;
            }
        }
        Ok(self.push(
            self.shape(parts[0]).to_vec(),
            out,
            Op::AddN {
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        if self.values(a).len() != self.values(b).len() {
            return Err(TensorError::DimensionMismatch {
                op: "mul",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let out: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, input: VarId, factor: f64) -> VarId {
        let out: Vec<f64> = self.values(input).iter().map(|x| x * factor).collect();
        self.push(self.shape(input).to_vec(), out, Op::Scale { input, factor })
    }

    pub fn sum(&mut self, input: VarId) -> VarId {
        let s: f64 = self.values(input).iter().sum();
        self.push(vec![1], vec![s], Op::Sum { input })
    }

    pub fn reshape(&mut self, input: VarId, shape: Vec<usize>) -> Result<VarId, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != self.values(input).len() {
            return Err(TensorError::DimensionMismatch {
                op: "reshape",
                left: self.shape(input).to_vec(),
                right: shape,
            });
        }
        let out = self.values(input).to_vec();
        Ok(self.push(shape, out, Op::Reshape { input }))
    }

    /// Reverse pass from a scalar root. Gradients accumulate into every node
    /// reachable from the root; leaves keep theirs for the caller to read.
    pub fn backward(&mut self, root: VarId) -> Result<(), TensorError> {
        if self.values(root).len() != 1 {
            return Err(invalid(
                "backward",
                format!("root must be scalar, got shape {:?}", self.shape(root)),
            ));
        }
        for node in &mut self.nodes {
            node.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        self.nodes[root.0].grad[0] = 1.0;
        for idx in (0..=root.0).rev() {
            if self.nodes[idx].grad.iter().all(|&g| g == 0.0) {
                continue;
            }
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let (m, n) = self.rows_cols(a);
                    let p = self.rows_cols(b).1;
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    {
                        // dA += G · Bᵀ
                        let bv = std::mem::take(&mut self.nodes[b.0].values);
                        let da = &mut self.nodes[a.0].grad;
                        for i in 0..m {
                            let grow = &g[i * p..(i + 1) * p];
                            let darow = &mut da[i * n..(i + 1) * n];
                            for (j, dv) in darow.iter_mut().enumerate() {
                                let mut acc = 0.0;
                                for (k, &gk) in grow.iter().enumerate() {
                                    acc += gk * bv[j * p + k];
                                }
                                *dv += acc;
                            }
                        }
                        self.nodes[b.0].values = bv;
                    }
                    {
                        // dB += Aᵀ · G
                        let av = std::mem::take(&mut self.nodes[a.0].values);
                        let db = &mut self.nodes[b.0].grad;
                        for i in 0..m {
                            let grow = &g[i * p..(i + 1) * p];
                            let arow = &av[i * n..(i + 1) * n];
                            for (j, &aj) in arow.iter().enumerate() {
                                if aj == 0.0 {
                                    continue;
                                }
                                let dbrow = &mut db[j * p..(j + 1) * p];
                                for (dv, &gk) in dbrow.iter_mut().zip(grow) {
                                    *dv += aj * gk;
                                }
                            }
                        }
                        self.nodes[a.0].values = av;
                    }
                    self.nodes[idx].grad = g;
                }
                Op::MatmulNt { a, b } => {
                    let (m, n) = self.rows_cols(a);
                    let p = self.rows_cols(b).0;
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    {
                        // dA += G · B
                        let bv = self.nodes[b.0].values.clone();
                        let da = &mut self.nodes[a.0].grad;
                        for i in 0..m {
                            for j in 0..p {
                                let gij = g[i * p + j];
                                if gij == 0.0 {
                                    continue;
                                }
                                let brow = &bv[j * n..(j + 1) * n];
                                let darow = &mut da[i * n..(i + 1) * n];
                                for (dv, &bk) in darow.iter_mut().zip(brow) {
                                    *dv += gij * bk;
                                }
                            }
                        }
                    }
                    {
                        // dB += Gᵀ · A
                        let av = self.nodes[a.0].values.clone();
                        let db = &mut self.nodes[b.0].grad;
                        for i in 0..m {
                            for j in 0..p {
                                let gij = g[i * p + j];
                                if gij == 0.0 {
                                    continue;
                                }
                                let arow = &av[i * n..(i + 1) * n];
                                let dbrow = &mut db[j * n..(j + 1) * n];
                                for (dv, &ak) in dbrow.iter_mut().zip(arow) {
                                    *dv += gij * ak;
                                }
                            }
                        }
                    }
                    self.nodes[idx].grad = g;
                }
                Op::Conv1dSame { seq, filters, bias } => {
                    let (t, d_in) = self.rows_cols(seq);
                    let filt_shape = self.nodes[filters.0].shape.clone();
                    let (w, d_out) = (filt_shape[0], filt_shape[2]);
                    let pad = (w - 1) / 2;
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let sv = self.nodes[seq.0].values.clone();
                    let fv = self.nodes[filters.0].values.clone();
                    for pos in 0..t {
                        let grow = &g[pos * d_out..(pos + 1) * d_out];
                        for u in 0..w {
                            let src_row = pos as isize + u as isize - pad as isize;
                            if src_row < 0 || src_row >= t as isize {
                                continue;
                            }
                            let src = src_row as usize;
                            let f_base = u * d_in * d_out;
                            for i in 0..d_in {
                                let x = sv[src * d_in + i];
                                let fr = &fv[f_base + i * d_out..f_base + (i + 1) * d_out];
                                let mut dseq_acc = 0.0;
                                for (o, &gk) in grow.iter().enumerate() {
                                    dseq_acc += gk * fr[o];
                                }
                                self.nodes[seq.0].grad[src * d_in + i] += dseq_acc;
                                if x != 0.0 {
                                    let df = &mut self.nodes[filters.0].grad
                                        [f_base + i * d_out..f_base + (i + 1) * d_out];
                                    for (dv, &gk) in df.iter_mut().zip(grow) {
                                        *dv += x * gk;
                                    }
                                }
                            }
                        }
                        let dbias = &mut self.nodes[bias.0].grad;
                        for (dv, &gk) in dbias.iter_mut().zip(grow) {
                            *dv += gk;
                        }
                    }
                    self.nodes[idx].grad = g;
                }
                Op::PiecewiseMaxPool { input, argmax } => {
                    let c = self.rows_cols(input).1;
                    let g = self.nodes[idx].grad.clone();
                    let din = &mut self.nodes[input.0].grad;
                    for (slot, src) in argmax.iter().enumerate() {
                        if let Some(row) = src {
                            din[row * c + slot % c] += g[slot];
                        }
                    }
                }
                Op::SoftmaxRow { input } => {
                    let y = self.nodes[idx].values.clone();
                    let g = self.nodes[idx].grad.clone();
                    let gy: f64 = g.iter().zip(&y).map(|(gi, yi)| gi * yi).sum();
                    let din = &mut self.nodes[input.0].grad;
                    for i in 0..y.len() {
                        din[i] += y[i] * (g[i] - gy);
                    }
                }
                Op::NllFromLogits { logits, gold } => {
                    let g = self.nodes[idx].grad[0];
                    let p = softmax(&self.nodes[logits.0].values);
                    let din = &mut self.nodes[logits.0].grad;
                    for (i, pi) in p.iter().enumerate() {
                        let indicator = if i == gold { 1.0 } else { 0.0 };
                        din[i] += g * (pi - indicator);
                    }
                }
                Op::Tanh { input } => {
                    let y = self.nodes[idx].values.clone();
                    let g = self.nodes[idx].grad.clone();
                    let din = &mut self.nodes[input.0].grad;
                    for i in 0..y.len() {
                        din[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
                Op::Relu { input } => {
                    let x = self.nodes[input.0].values.clone();
                    let g = self.nodes[idx].grad.clone();
                    let din = &mut self.nodes[input.0].grad;
                    for i in 0..x.len() {
                        if x[i] > 0.0 {
                            din[i] += g[i];
                        }
                    }
                }
                Op::EmbedRows { table, ids } => {
                    let d = self.rows_cols(table).1;
                    let g = self.nodes[idx].grad.clone();
                    let dt = &mut self.nodes[table.0].grad;
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            dt[id * d + j] += g[r * d + j];
                        }
                    }
                }
                Op::ConcatCols { parts } => {
                    let rows = self.rows_cols(parts[0]).0;
                    let total_cols = self.nodes[idx].shape[1];
                    let g = self.nodes[idx].grad.clone();
                    for r in 0..rows {
                        let mut offset = 0;
                        for &p in &parts {
                            let c = self.rows_cols(p).1;
                            let dp = &mut self.nodes[p.0].grad;
                            for j in 0..c {
                                dp[r * c + j] += g[r * total_cols + offset + j];
                            }
                            offset += c;
                        }
                    }
                }
                Op::StackRows { parts } => {
                    let d = self.nodes[idx].shape[1];
                    let g = self.nodes[idx].grad.clone();
                    for (r, &p) in parts.iter().enumerate() {
                        let dp = &mut self.nodes[p.0].grad;
                        for j in 0..d {
                            dp[j] += g[r * d + j];
                        }
                    }
                }
                Op::Row { input, index } => {
                    let c = self.rows_cols(input).1;
                    let g = self.nodes[idx].grad.clone();
                    let din = &mut self.nodes[input.0].grad;
                    for j in 0..c {
                        din[index * c + j] += g[j];
                    }
                }
                Op::Add { a, b } => {
                    let g = self.nodes[idx].grad.clone();
                    for (i, gi) in g.iter().enumerate() {
                        self.nodes[a.0].grad[i] += gi;
                    }
                    for (i, gi) in g.iter().enumerate() {
                        self.nodes[b.0].grad[i] += gi;
                    }
                }
                Op::AddN { parts } => {
                    let g = self.nodes[idx].grad.clone();
                    for &p in &parts {
                        for (i, gi) in g.iter().enumerate() {
                            self.nodes[p.0].grad[i] += gi;
                        }
                    }
                }
                Op::Mul { a, b } => {
                    let g = self.nodes[idx].grad.clone();
                    let av = self.nodes[a.0].values.clone();
                    let bv = self.nodes[b.0].values.clone();
                    for i in 0..g.len() {
                        self.nodes[a.0].grad[i] += g[i] * bv[i];
                    }
                    for i in 0..g.len() {
                        self.nodes[b.0].grad[i] += g[i] * av[i];
                    }
                }
                Op::Scale { input, factor } => {
                    let g = self.nodes[idx].grad.clone();
                    let din = &mut self.nodes[input.0].grad;
                    for i in 0..g.len() {
                        din[i] += g[i] * factor;
                    }
                }
                Op::Sum { input } => {
                    let g = self.nodes[idx].grad[0];
                    self.nodes[input.0].grad.iter_mut().for_each(|d| *d += g);
                }
                Op::Reshape { input } => {
                    let g = self.nodes[idx].grad.clone();
                    let din = &mut self.nodes[input.0].grad;
                    for i in 0..g.len() {
                        din[i] += g[i];
                    }
                }
            }
        }
        debug_assert!(
            self.nodes
                .iter()
                .all(|n| n.grad.iter().all(|g| g.is_finite())),
            "non-finite gradient after backward"
        );
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mat_mul(a: &[f64], b: &[f64], m: usize, n: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * p..(k + 1) * p];
            let orow = &mut out[i * p..(i + 1) * p];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

pub(crate) fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

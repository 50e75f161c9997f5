//! Dense f64 tensors on a reverse-mode differentiation tape.
//!
//! The graph is define-by-run: every forward call appends a node, `backward`
//! walks the tape in reverse. Tensors are row-major, 64-bit, and immutable
//! once created; only gradient buffers are filled in afterwards.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank-{expected} operand, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("softmax: row {row} has no finite entry")]
    DegenerateRow { row: usize },
    #[error("backward: loss must be scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("backward: graph already consumed by a previous backward call")]
    GraphConsumed,
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
}

/// Dense n-dimensional real array, row-major.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Handle to a tensor on a particular graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Detach,
    Matmul { a: usize, b: usize },
    Matvec { w: usize, x: usize },
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, c: f64 },
    AddScalar { a: usize },
    Neg { a: usize },
    Sigmoid { a: usize },
    Relu { a: usize },
    Exp { a: usize },
    Ln { a: usize },
    Sqrt { a: usize },
    Softplus { a: usize },
    SoftmaxRows { a: usize },
    LogSumExp { a: usize },
    Sum { a: usize },
    MeanAxis0 { a: usize },
    Concat { a: usize, b: usize },
    Index { a: usize, i: usize },
    GatherRows { a: usize, rows: Vec<usize> },
    Transpose { a: usize },
    Reshape { a: usize },
    TopkMask { a: usize, kept: Vec<bool> },
    LayerNorm { x: usize, gain: usize, bias: usize, eps: f64 },
}

struct Node {
    tensor: Tensor,
    op: Op,
}

/// A single differentiation tape. Confined to one thread of execution;
/// distinct graphs share no state.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(
        &mut self,
        data: Vec<f64>,
        shape: Vec<usize>,
        requires_grad: bool,
    ) -> Result<TensorId, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::Domain {
                op: "leaf",
                detail: format!("shape {:?} implies {} elements, data has {}", shape, numel, data.len()),
            });
        }
        Ok(self.push(
            Tensor {
                shape,
                data,
                requires_grad,
                grad: None,
            },
            Op::Leaf,
        ))
    }

    pub fn constant(&mut self, data: Vec<f64>, shape: Vec<usize>) -> Result<TensorId, TensorError> {
        self.leaf(data, shape, false)
    }

    pub fn scalar(&mut self, v: f64) -> TensorId {
        self.leaf(vec![v], vec![1], false).expect("scalar leaf")
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].tensor
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].tensor.data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].tensor.shape
    }

    pub fn scalar_value(&self, id: TensorId) -> f64 {
        self.nodes[id.0].tensor.data[0]
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].tensor.grad.as_deref()
    }

    fn push(&mut self, tensor: Tensor, op: Op) -> TensorId {
        self.nodes.push(Node { tensor, op });
        TensorId(self.nodes.len() - 1)
    }

    fn any_grad(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].tensor.requires_grad)
    }

    /// Cuts the gradient flow: forward identity, backward zero.
    pub fn detach(&mut self, a: TensorId) -> TensorId {
        let t = &self.nodes[a.0].tensor;
        let tensor = Tensor {
            shape: t.shape.clone(),
            data: t.data.clone(),
            requires_grad: false,
            grad: None,
        };
        self.push(tensor, Op::Detach)
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 {
            return Err(TensorError::RankMismatch { op: "matmul", expected: 2, shape: sa });
        }
        if sb.len() != 2 {
            return Err(TensorError::RankMismatch { op: "matmul", expected: 2, shape: sb });
        }
        if sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch { op: "matmul", lhs: sa, rhs: sb });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let da = self.data(a);
        let db = self.data(b);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = da[i * k + p];
                if av == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += av * db[p * n + j];
                }
            }
        }
        let rg = self.any_grad(&[a.0, b.0]);
        Ok(self.push(
            Tensor { shape: vec![m, n], data: out, requires_grad: rg, grad: None },
            Op::Matmul { a: a.0, b: b.0 },
        ))
    }

    /// W[m,k] · x[k] -> [m]
    pub fn matvec(&mut self, w: TensorId, x: TensorId) -> Result<TensorId, TensorError> {
        let (sw, sx) = (self.shape(w).to_vec(), self.shape(x).to_vec());
        if sw.len() != 2 {
            return Err(TensorError::RankMismatch { op: "matvec", expected: 2, shape: sw });
        }
        if sx.len() != 1 {
            return Err(TensorError::RankMismatch { op: "matvec", expected: 1, shape: sx });
        }
        if sw[1] != sx[0] {
            return Err(TensorError::ShapeMismatch { op: "matvec", lhs: sw, rhs: sx });
        }
        let (m, k) = (sw[0], sw[1]);
        let dw = self.data(w);
        let dx = self.data(x);
        let mut out = vec![0.0; m];
        for i in 0..m {
            let mut s = 0.0;
            for j in 0..k {
                s += dw[i * k + j] * dx[j];
            }
            out[i] = s;
        }
        let rg = self.any_grad(&[w.0, x.0]);
        Ok(self.push(
            Tensor { shape: vec![m], data: out, requires_grad: rg, grad: None },
            Op::Matvec { w: w.0, x: x.0 },
        ))
    }

    fn binary_shapes(
        &self,
        op: &'static str,
        a: TensorId,
        b: TensorId,
    ) -> Result<Vec<usize>, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (na, nb) = (self.tensor(a).numel(), self.tensor(b).numel());
        if sa == sb {
            Ok(sa.to_vec())
        } else if na == 1 {
            Ok(sb.to_vec())
        } else if nb == 1 {
            Ok(sa.to_vec())
        } else {
            Err(TensorError::ShapeMismatch { op, lhs: sa.to_vec(), rhs: sb.to_vec() })
        }
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let shape = self.binary_shapes("add", a, b)?;
        let (da, db) = (&self.nodes[a.0].tensor.data, &self.nodes[b.0].tensor.data);
        let n = shape.iter().product();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            out.push(da[i % da.len()] + db[i % db.len()]);
        }
        let rg = self.any_grad(&[a.0, b.0]);
        Ok(self.push(
            Tensor { shape, data: out, requires_grad: rg, grad: None },
            Op::Add { a: a.0, b: b.0 },
        ))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let shape = self.binary_shapes("mul", a, b)?;
        let (da, db) = (&self.nodes[a.0].tensor.data, &self.nodes[b.0].tensor.data);
        let n = shape.iter().product();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            out.push(da[i % da.len()] * db[i % db.len()]);
        }
        let rg = self.any_grad(&[a.0, b.0]);
        Ok(self.push(
            Tensor { shape, data: out, requires_grad: rg, grad: None },
            Op::Mul { a: a.0, b: b.0 },
        ))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let nb = self.neg(b);
        self.add(a, nb)
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let t = &self.nodes[a.0].tensor;
        let out: Vec<f64> = t.data.iter().map(|v| v * c).collect();
        let tensor = Tensor {
            shape: t.shape.clone(),
            data: out,
            requires_grad: t.requires_grad,
            grad: None,
        };
        self.push(tensor, Op::Scale { a: a.0, c })
    }

    pub fn add_scalar(&mut self, a: TensorId, c: f64) -> TensorId {
        let t = &self.nodes[a.0].tensor;
        let out: Vec<f64> = t.data.iter().map(|v| v + c).collect();
        let tensor = Tensor {
            shape: t.shape.clone(),
            data: out,
            requires_grad: t.requires_grad,
            grad: None,
        };
        self.push(tensor, Op::AddScalar { a: a.0 })
    }

    pub fn neg(&mut self, a: TensorId) -> TensorId {
        let t = &self.nodes[a.0].tensor;
        let out: Vec<f64> = t.data.iter().map(|v| -v).collect();
        let tensor = Tensor {
            shape: t.shape.clone(),
            data: out,
            requires_grad: t.requires_grad,
            grad: None,
        };
        self.push(tensor, Op::Neg { a: a.0 })
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let t = &self.nodes[a.0].tensor;
        let out: Vec<f64> = t.data.iter().map(|&v| sigmoid_scalar(v)).collect();
        let tensor = Tensor {
            shape: t.shape.clone(),
            data: out,
            requires_grad: t.requires_grad,
            grad: None,
        };
        self.push(tensor, Op::Sigmoid { a: a.0 })
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let t = &self.nodes[a.0].tensor;
        let out: Vec<f64> = t.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let tensor = Tensor {
            shape: t.shape.clone(),
            data: out,
            requires_grad: t.requires_grad,
            grad: None,
        };
        self.push(tensor, Op::Relu { a: a.0 })
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        let t = &self.nodes[a.0].tensor;
        let out: Vec<f64> = t.data.iter().map(|v| v.exp()).collect();
        let tensor = Tensor {
            shape: t.shape.clone(),
            data: out,
            requires_grad: t.requires_grad,
            grad: None,
        };
        self.push(tensor, Op::Exp { a: a.0 })
    }

    pub fn ln(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let t = &self.nodes[a.0].tensor;
        if let Some(v) = t.data.iter().find(|v| **v <= 0.0) {
            return Err(TensorError::Domain {
                op: "ln",
                detail: format!("non-positive input {v}"),
            });
        }
        let out: Vec<f64> = t.data.iter().map(|v| v.ln()).collect();
        let tensor = Tensor {
            shape: t.shape.clone(),
            data: out,
            requires_grad: t.requires_grad,
            grad: None,
        };
        Ok(self.push(tensor, Op::Ln { a: a.0 }))
    }

    pub fn sqrt(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let t = &self.nodes[a.0].tensor;
        if let Some(v) = t.data.iter().find(|v| **v < 0.0) {
            return Err(TensorError::Domain {
                op: "sqrt",
                detail: format!("negative input {v}"),
            });
        }
        let out: Vec<f64> = t.data.iter().map(|v| v.sqrt()).collect();
        let tensor = Tensor {
            shape: t.shape.clone(),
            data: out,
            requires_grad: t.requires_grad,
            grad: None,
        };
        Ok(self.push(tensor, Op::Sqrt { a: a.0 }))
    }

    /// ln(1 + e^x), computed stably.
    pub fn softplus(&mut self, a: TensorId) -> TensorId {
        let t = &self.nodes[a.0].tensor;
        let out: Vec<f64> = t.data.iter().map(|&v| softplus_scalar(v)).collect();
        let tensor = Tensor {
            shape: t.shape.clone(),
            data: out,
            requires_grad: t.requires_grad,
            grad: None,
        };
        self.push(tensor, Op::Softplus { a: a.0 })
    }

    /// Row-wise softmax. Rank-1 input is treated as a single row.
    /// Entries equal to -inf map to exactly 0; a row with no finite entry
    /// is an error.
    pub fn softmax_rows(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let t = &self.nodes[a.0].tensor;
        let (rows, cols) = match t.shape.as_slice() {
            [n] => (1usize, *n),
            [m, n] => (*m, *n),
            s => {
                return Err(TensorError::RankMismatch { op: "softmax_rows", expected: 2, shape: s.to_vec() })
            }
        };
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &t.data[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return Err(TensorError::DegenerateRow { row: r });
            }
            let mut denom = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = if v == f64::NEG_INFINITY { 0.0 } else { (v - max).exp() };
                out[r * cols + j] = e;
                denom += e;
            }
            for j in 0..cols {
                out[r * cols + j] /= denom;
            }
        }
        let shape = t.shape.clone();
        let rg = t.requires_grad;
        Ok(self.push(
            Tensor { shape, data: out, requires_grad: rg, grad: None },
            Op::SoftmaxRows { a: a.0 },
        ))
    }

    /// ln Σ e^{x_j} over a rank-1 input, max-shifted for stability.
    pub fn logsumexp(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let t = &self.nodes[a.0].tensor;
        if t.shape.len() != 1 {
            return Err(TensorError::RankMismatch { op: "logsumexp", expected: 1, shape: t.shape.clone() });
        }
        let max = t.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = t.data.iter().map(|v| (v - max).exp()).sum();
        let out = max + s.ln();
        let rg = t.requires_grad;
        Ok(self.push(
            Tensor { shape: vec![1], data: vec![out], requires_grad: rg, grad: None },
            Op::LogSumExp { a: a.0 },
        ))
    }

    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let t = &self.nodes[a.0].tensor;
        let s: f64 = t.data.iter().sum();
        let rg = t.requires_grad;
        self.push(
            Tensor { shape: vec![1], data: vec![s], requires_grad: rg, grad: None },
            Op::Sum { a: a.0 },
        )
    }

    /// Mean over rows: [n, d] -> [d].
    pub fn mean_axis0(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let t = &self.nodes[a.0].tensor;
        let [n, d] = *t.shape.as_slice() else {
            return Err(TensorError::RankMismatch { op: "mean_axis0", expected: 2, shape: t.shape.clone() });
        };
        let mut out = vec![0.0; d];
        for r in 0..n {
            for j in 0..d {
                out[j] += t.data[r * d + j];
            }
        }
        for v in &mut out {
            *v /= n as f64;
        }
        let rg = t.requires_grad;
        Ok(self.push(
            Tensor { shape: vec![d], data: out, requires_grad: rg, grad: None },
            Op::MeanAxis0 { a: a.0 },
        ))
    }

    pub fn concat(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 1 || sb.len() != 1 {
            return Err(TensorError::RankMismatch { op: "concat", expected: 1, shape: if sa.len() != 1 { sa } else { sb } });
        }
        let mut out = self.data(a).to_vec();
        out.extend_from_slice(self.data(b));
        let shape = vec![sa[0] + sb[0]];
        let rg = self.any_grad(&[a.0, b.0]);
        Ok(self.push(
            Tensor { shape, data: out, requires_grad: rg, grad: None },
            Op::Concat { a: a.0, b: b.0 },
        ))
    }

    /// Picks a single element of a rank-1 tensor as a scalar.
    pub fn index(&mut self, a: TensorId, i: usize) -> Result<TensorId, TensorError> {
        let t = &self.nodes[a.0].tensor;
        if t.shape.len() != 1 {
            return Err(TensorError::RankMismatch { op: "index", expected: 1, shape: t.shape.clone() });
        }
        if i >= t.data.len() {
            return Err(TensorError::IndexOutOfRange { op: "index", index: i, len: t.data.len() });
        }
        let v = t.data[i];
        let rg = t.requires_grad;
        Ok(self.push(
            Tensor { shape: vec![1], data: vec![v], requires_grad: rg, grad: None },
            Op::Index { a: a.0, i },
        ))
    }

    /// Row lookup into a [v, d] table; gradients scatter-add back into rows.
    pub fn gather_rows(&mut self, a: TensorId, rows: Vec<usize>) -> Result<TensorId, TensorError> {
        let t = &self.nodes[a.0].tensor;
        let [v, d] = *t.shape.as_slice() else {
            return Err(TensorError::RankMismatch { op: "gather_rows", expected: 2, shape: t.shape.clone() });
        };
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in &rows {
            if r >= v {
                return Err(TensorError::IndexOutOfRange { op: "gather_rows", index: r, len: v });
            }
            out.extend_from_slice(&t.data[r * d..(r + 1) * d]);
        }
        let shape = vec![rows.len(), d];
        let rg = t.requires_grad;
        Ok(self.push(
            Tensor { shape, data: out, requires_grad: rg, grad: None },
            Op::GatherRows { a: a.0, rows },
        ))
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let t = &self.nodes[a.0].tensor;
        let [m, n] = *t.shape.as_slice() else {
            return Err(TensorError::RankMismatch { op: "transpose", expected: 2, shape: t.shape.clone() });
        };
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = t.data[i * n + j];
            }
        }
        let rg = t.requires_grad;
        Ok(self.push(
            Tensor { shape: vec![n, m], data: out, requires_grad: rg, grad: None },
            Op::Transpose { a: a.0 },
        ))
    }

    pub fn reshape(&mut self, a: TensorId, shape: Vec<usize>) -> Result<TensorId, TensorError> {
        let t = &self.nodes[a.0].tensor;
        let numel: usize = shape.iter().product();
        if numel != t.numel() {
            return Err(TensorError::Domain {
                op: "reshape",
                detail: format!("cannot reshape {:?} into {:?}", t.shape, shape),
            });
        }
        let tensor = Tensor {
            shape,
            data: t.data.clone(),
            requires_grad: t.requires_grad,
            grad: None,
        };
        Ok(self.push(tensor, Op::Reshape { a: a.0 }))
    }

    /// Extracts row `r` of a rank-2 tensor as a rank-1 tensor.
    pub fn row(&mut self, a: TensorId, r: usize) -> Result<TensorId, TensorError> {
        let d = match self.shape(a) {
            [_, d] => *d,
            s => {
                return Err(TensorError::RankMismatch { op: "row", expected: 2, shape: s.to_vec() })
            }
        };
        let g = self.gather_rows(a, vec![r])?;
        self.reshape(g, vec![d])
    }

    /// Keeps the row-wise top-k entries verbatim, masks the rest to -inf.
    /// Ties break toward the lowest column index.
    pub fn topk_mask(&mut self, a: TensorId, k: usize) -> Result<TensorId, TensorError> {
        if k < 1 {
            return Err(TensorError::Domain { op: "topk_mask", detail: "k must be >= 1".into() });
        }
        let t = &self.nodes[a.0].tensor;
        let [m, n] = *t.shape.as_slice() else {
            return Err(TensorError::RankMismatch { op: "topk_mask", expected: 2, shape: t.shape.clone() });
        };
        let mut out = vec![f64::NEG_INFINITY; m * n];
        let mut kept = vec![false; m * n];
        for r in 0..m {
            let row = &t.data[r * n..(r + 1) * n];
            let mut idx: Vec<usize> = (0..n).collect();
            // stable sort keeps the lowest column index first among ties
            idx.sort_by(|&i, &j| row[j].partial_cmp(&row[i]).unwrap());
            for &j in idx.iter().take(k.min(n)) {
                out[r * n + j] = row[j];
                kept[r * n + j] = true;
            }
        }
        let shape = t.shape.clone();
        let rg = t.requires_grad;
        Ok(self.push(
            Tensor { shape, data: out, requires_grad: rg, grad: None },
            Op::TopkMask { a: a.0, kept },
        ))
    }

    /// Normalizes a rank-1 input to zero mean / unit population variance,
    /// then applies the gain/bias affine transform.
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gain: TensorId,
        bias: TensorId,
        eps: f64,
    ) -> Result<TensorId, TensorError> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 1 {
            return Err(TensorError::RankMismatch { op: "layer_norm", expected: 1, shape: sx });
        }
        let d = sx[0];
        if d < 2 {
            return Err(TensorError::Domain { op: "layer_norm", detail: format!("size {d} < 2") });
        }
        if eps <= 0.0 {
            return Err(TensorError::Domain { op: "layer_norm", detail: format!("eps {eps} must be positive") });
        }
        for (name, other) in [("gain", gain), ("bias", bias)] {
            if self.shape(other) != sx.as_slice() {
                return Err(TensorError::ShapeMismatch {
                    op: if name == "gain" { "layer_norm gain" } else { "layer_norm bias" },
                    lhs: sx,
                    rhs: self.shape(other).to_vec(),
                });
            }
        }
        let xd = self.data(x);
        let mean = xd.iter().sum::<f64>() / d as f64;
        let var = xd.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let inv_std = 1.0 / (var + eps).sqrt();
        let gd = self.data(gain);
        let bd = self.data(bias);
        let xd = self.data(x);
        let out: Vec<f64> = (0..d).map(|j| gd[j] * (xd[j] - mean) * inv_std + bd[j]).collect();
        let rg = self.any_grad(&[x.0, gain.0, bias.0]);
        Ok(self.push(
            Tensor { shape: vec![d], data: out, requires_grad: rg, grad: None },
            Op::LayerNorm { x: x.0, gain: gain.0, bias: bias.0, eps },
        ))
    }

    /// Reverse pass from a scalar loss. Gradients are reset then filled;
    /// calling backward twice on the same graph is an error.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), TensorError> {
        if self.consumed {
            return Err(TensorError::GraphConsumed);
        }
        let lt = &self.nodes[loss.0].tensor;
        if lt.numel() != 1 {
            return Err(TensorError::NonScalarLoss { shape: lt.shape.clone() });
        }
        self.consumed = true;
        for node in &mut self.nodes {
            node.tensor.grad = None;
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        // nodes are appended after their parents, so reverse index order is
        // a valid reverse-topological order; nodes after the loss cannot
        // contribute and are skipped
        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else { continue };
            if self.nodes[i].tensor.requires_grad {
                self.accumulate_parents(i, &gout, &mut grads);
                self.nodes[i].tensor.grad = Some(gout);
            }
        }
        // tensors the loss does not depend on get an explicit zero gradient
        for node in &mut self.nodes {
            if node.tensor.requires_grad && node.tensor.grad.is_none() {
                node.tensor.grad = Some(vec![0.0; node.tensor.numel()]);
            }
        }
        Ok(())
    }

    fn accumulate_parents(&self, i: usize, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let mut add_to = |target: usize, f: &mut dyn FnMut(&mut Vec<f64>)| {
            if !self.nodes[target].tensor.requires_grad {
                return;
            }
            let buf = grads[target]
                .get_or_insert_with(|| vec![0.0; self.nodes[target].tensor.numel()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf | Op::Detach => {}
            Op::Matmul { a, b } => {
                let sa = &self.nodes[*a].tensor.shape;
                let (m, k) = (sa[0], sa[1]);
                let nn = self.nodes[*b].tensor.shape[1];
                let da = &self.nodes[*a].tensor.data;
                let db = &self.nodes[*b].tensor.data;
                add_to(*a, &mut |g| {
                    // dA = dC · Bᵀ
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..nn {
                                s += gout[i * nn + j] * db[p * nn + j];
                            }
                            g[i * k + p] += s;
                        }
                    }
                });
                add_to(*b, &mut |g| {
                    // dB = Aᵀ · dC
                    for p in 0..k {
                        for j in 0..nn {
                            let mut s = 0.0;
                            for i in 0..m {
                                s += da[i * k + p] * gout[i * nn + j];
                            }
                            g[p * nn + j] += s;
                        }
                    }
                });
            }
            Op::Matvec { w, x } => {
                let sw = &self.nodes[*w].tensor.shape;
                let (m, k) = (sw[0], sw[1]);
                let dw = &self.nodes[*w].tensor.data;
                let dx = &self.nodes[*x].tensor.data;
                add_to(*w, &mut |g| {
                    for i in 0..m {
                        for j in 0..k {
                            g[i * k + j] += gout[i] * dx[j];
                        }
                    }
                });
                add_to(*x, &mut |g| {
                    for j in 0..k {
                        let mut s = 0.0;
                        for i in 0..m {
                            s += gout[i] * dw[i * k + j];
                        }
                        g[j] += s;
                    }
                });
            }
            Op::Add { a, b } => {
                for &p in &[*a, *b] {
                    let np = self.nodes[p].tensor.numel();
                    add_to(p, &mut |g| {
                        for (idx, &gv) in gout.iter().enumerate() {
                            g[idx % np] += gv;
                        }
                    });
                }
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                let (da, db) = (&self.nodes[a].tensor.data, &self.nodes[b].tensor.data);
                let (na, nb) = (da.len(), db.len());
                add_to(a, &mut |g| {
                    for (idx, &gv) in gout.iter().enumerate() {
                        g[idx % na] += gv * db[idx % nb];
                    }
                });
                add_to(b, &mut |g| {
                    for (idx, &gv) in gout.iter().enumerate() {
                        g[idx % nb] += gv * da[idx % na];
                    }
                });
            }
            Op::Scale { a, c } => {
                let c = *c;
                add_to(*a, &mut |g| {
                    for (gi, &gv) in g.iter_mut().zip(gout) {
                        *gi += gv * c;
                    }
                });
            }
            Op::AddScalar { a } => {
                add_to(*a, &mut |g| {
                    for (gi, &gv) in g.iter_mut().zip(gout) {
                        *gi += gv;
                    }
                });
            }
            Op::Neg { a } => {
                add_to(*a, &mut |g| {
                    for (gi, &gv) in g.iter_mut().zip(gout) {
                        *gi -= gv;
                    }
                });
            }
            Op::Sigmoid { a } => {
                let y = &node.tensor.data;
                add_to(*a, &mut |g| {
                    for (idx, &gv) in gout.iter().enumerate() {
                        g[idx] += gv * y[idx] * (1.0 - y[idx]);
                    }
                });
            }
            Op::Relu { a } => {
                // subgradient at 0 is 0
                let xin = &self.nodes[*a].tensor.data;
                add_to(*a, &mut |g| {
                    for (idx, &gv) in gout.iter().enumerate() {
                        if xin[idx] > 0.0 {
                            g[idx] += gv;
                        }
                    }
                });
            }
            Op::Exp { a } => {
                let y = &node.tensor.data;
                add_to(*a, &mut |g| {
                    for (idx, &gv) in gout.iter().enumerate() {
                        g[idx] += gv * y[idx];
                    }
                });
            }
            Op::Ln { a } => {
                let xin = &self.nodes[*a].tensor.data;
                add_to(*a, &mut |g| {
                    for (idx, &gv) in gout.iter().enumerate() {
                        g[idx] += gv / xin[idx];
                    }
                });
            }
            Op::Sqrt { a } => {
                let y = &node.tensor.data;
                add_to(*a, &mut |g| {
                    for (idx, &gv) in gout.iter().enumerate() {
                        g[idx] += gv * 0.5 / y[idx];
                    }
                });
            }
            Op::Softplus { a } => {
                let xin = &self.nodes[*a].tensor.data;
                add_to(*a, &mut |g| {
                    for (idx, &gv) in gout.iter().enumerate() {
                        g[idx] += gv * sigmoid_scalar(xin[idx]);
                    }
                });
            }
            Op::SoftmaxRows { a } => {
                let y = &node.tensor.data;
                let shape = &node.tensor.shape;
                let (rows, cols) = match shape.as_slice() {
                    [n] => (1usize, *n),
                    [m, n] => (*m, *n),
                    _ => unreachable!(),
                };
                add_to(*a, &mut |g| {
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &gout[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
                        for j in 0..cols {
                            g[r * cols + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LogSumExp { a } => {
                let xin = &self.nodes[*a].tensor.data;
                let max = xin.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = xin.iter().map(|v| (v - max).exp()).sum();
                add_to(*a, &mut |g| {
                    for (idx, gi) in g.iter_mut().enumerate() {
                        *gi += gout[0] * (xin[idx] - max).exp() / denom;
                    }
                });
            }
            Op::Sum { a } => {
                add_to(*a, &mut |g| {
                    for gi in g.iter_mut() {
                        *gi += gout[0];
                    }
                });
            }
            Op::MeanAxis0 { a } => {
                let [n, d] = *self.nodes[*a].tensor.shape.as_slice() else { unreachable!() };
                add_to(*a, &mut |g| {
                    for r in 0..n {
                        for j in 0..d {
                            g[r * d + j] += gout[j] / n as f64;
                        }
                    }
                });
            }
            Op::Concat { a, b } => {
                let na = self.nodes[*a].tensor.numel();
                add_to(*a, &mut |g| {
                    for (gi, &gv) in g.iter_mut().zip(&gout[..na]) {
                        *gi += gv;
                    }
                });
                add_to(*b, &mut |g| {
                    for (gi, &gv) in g.iter_mut().zip(&gout[na..]) {
                        *gi += gv;
                    }
                });
            }
            Op::Index { a, i: idx } => {
                let idx = *idx;
                add_to(*a, &mut |g| {
                    g[idx] += gout[0];
                });
            }
            Op::GatherRows { a, rows } => {
                let d = self.nodes[*a].tensor.shape[1];
                add_to(*a, &mut |g| {
                    for (out_r, &src_r) in rows.iter().enumerate() {
                        for j in 0..d {
                            g[src_r * d + j] += gout[out_r * d + j];
                        }
                    }
                });
            }
            Op::Transpose { a } => {
                let [n, m] = *node.tensor.shape.as_slice() else { unreachable!() };
                add_to(*a, &mut |g| {
                    for i in 0..m {
                        for j in 0..n {
                            g[i * n + j] += gout[j * m + i];
                        }
                    }
                });
            }
            Op::Reshape { a } => {
                add_to(*a, &mut |g| {
                    for (gi, &gv) in g.iter_mut().zip(gout) {
                        *gi += gv;
                    }
                });
            }
            Op::TopkMask { a, kept } => {
                add_to(*a, &mut |g| {
                    for (idx, &gv) in gout.iter().enumerate() {
                        if kept[idx] {
                            g[idx] += gv;
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let d = self.nodes[*x].tensor.numel();
                let xd = &self.nodes[*x].tensor.data;
                let gd = &self.nodes[*gain].tensor.data;
                let mean = xd.iter().sum::<f64>() / d as f64;
                let var = xd.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
                let inv_std = 1.0 / (var + eps).sqrt();
                let xhat: Vec<f64> = xd.iter().map(|v| (v - mean) * inv_std).collect();
                add_to(*gain, &mut |g| {
                    for j in 0..d {
                        g[j] += gout[j] * xhat[j];
                    }
                });
                add_to(*bias, &mut |g| {
                    for j in 0..d {
                        g[j] += gout[j];
                    }
                });
                add_to(*x, &mut |g| {
                    let gy: Vec<f64> = (0..d).map(|j| gout[j] * gd[j]).collect();
                    let mean_gy = gy.iter().sum::<f64>() / d as f64;
                    let mean_gy_xhat =
                        gy.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        g[j] += (gy[j] - mean_gy - xhat[j] * mean_gy_xhat) * inv_std;
                    }
                });
            }
        }
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

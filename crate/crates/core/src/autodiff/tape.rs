//! Reverse-mode tape over dense `f64` tensors.
//!
//! A forward pass records primitive ops in topological order; `backward`
//! replays them once in reverse, accumulating exact vector-Jacobian products.
//! Tapes are single-threaded; independent tapes may run on independent
//! threads. Double-backward is unsupported: a second `backward` on the same
//! tape is an error.

use crate::autodiff::tensor::{
    axpy, dot, matmul_acc, matmul_tb_acc, matvec_acc, vecmat_acc, Tensor,
};
use crate::error::{Error, Result};

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(VarId, VarId),
    AddN(Vec<VarId>),
    Sub(VarId, VarId),
    Neg(VarId),
    Mul(VarId, VarId),
    Scale(VarId, f64),
    AddScalar(VarId),
    MatVec(VarId, VarId),
    VecMat(VarId, VarId),
    Matmul(VarId, VarId),
    /// A * B^T with B stored row-major (n x k).
    MatmulTB(VarId, VarId),
    Relu(VarId),
    Elu(VarId),
    Sigmoid(VarId),
    Softplus(VarId),
    Abs(VarId),
    /// Softmax over the last axis ([n] whole, [r,c] per row).
    Softmax(VarId),
    /// Per-row (or whole-vector) layer normalization without affine params.
    LayerNorm(VarId, f64),
    /// out[o][t] = b[o] + sum_{k,ci} w[o][ci][k] * x[ci][t - k*dilation]
    CausalConv { x: VarId, w: VarId, b: VarId, dilation: usize },
    /// out[o][t] = b[o] + sum_{k,ci} w[o][ci][k] * x[ci][t + k*dilation]
    AntiCausalConv { x: VarId, w: VarId, b: VarId, dilation: usize },
    /// Concatenate along axis 0 (vectors end-to-end, matrices stacked by rows).
    Concat0(Vec<VarId>),
    Sum(VarId),
    Mean(VarId),
    Index(VarId, usize),
    SliceV { a: VarId, start: usize, len: usize },
    /// Column j of an [r, c] matrix -> [r].
    Col { a: VarId, col: usize },
    /// Row i of an [r, c] matrix -> [c].
    Row { a: VarId, row: usize },
    /// [r, c] -> [c, r].
    Transpose(VarId),
    /// out[i][j] = m[i][j] + v[j] for m [r, c], v [c].
    AddRowBroadcast(VarId, VarId),
    Reshape(VarId),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Wengert tape. Values live on the tape; gradients are materialized by
/// `backward` and read back per leaf.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> VarId {
        self.nodes.push(Node { op, value });
        VarId(self.nodes.len() - 1)
    }

    /// Register an input. Leaves are the only nodes gradients are read from.
    pub fn leaf(&mut self, value: Tensor) -> VarId {
        self.push(Op::Leaf, value)
    }

    pub fn scalar(&mut self, x: f64) -> VarId {
        self.leaf(Tensor::scalar(x))
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: VarId) -> &[usize] {
        &self.nodes[id.0].value.shape
    }

    fn same_shape(&self, op: &'static str, a: VarId, b: VarId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        Ok(())
    }

    // ---- elementwise ---------------------------------------------------

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.same_shape("add", a, b)?;
        let v = Tensor {
            shape: self.shape(a).to_vec(),
            data: self.value(a).data.iter().zip(&self.value(b).data).map(|(x, y)| x + y).collect(),
        };
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn add_n(&mut self, ids: &[VarId]) -> Result<VarId> {
        let first = *ids.first().ok_or_else(|| Error::Empty("add_n of no inputs".into()))?;
        let mut data = self.value(first).data.clone();
        for &id in &ids[1..] {
            self.same_shape("add_n", first, id)?;
            for (d, x) in data.iter_mut().zip(&self.value(id).data) {
                *d += x;
            }
        }
        let v = Tensor { shape: self.shape(first).to_vec(), data };
        Ok(self.push(Op::AddN(ids.to_vec()), v))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.same_shape("sub", a, b)?;
        let v = Tensor {
            shape: self.shape(a).to_vec(),
            data: self.value(a).data.iter().zip(&self.value(b).data).map(|(x, y)| x - y).collect(),
        };
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn neg(&mut self, a: VarId) -> VarId {
        let v = Tensor {
            shape: self.shape(a).to_vec(),
            data: self.value(a).data.iter().map(|x| -x).collect(),
        };
        self.push(Op::Neg(a), v)
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.same_shape("mul", a, b)?;
        let v = Tensor {
            shape: self.shape(a).to_vec(),
            data: self.value(a).data.iter().zip(&self.value(b).data).map(|(x, y)| x * y).collect(),
        };
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> VarId {
        let v = Tensor {
            shape: self.shape(a).to_vec(),
            data: self.value(a).data.iter().map(|x| c * x).collect(),
        };
        self.push(Op::Scale(a, c), v)
    }

    pub fn add_scalar(&mut self, a: VarId, c: f64) -> VarId {
        let v = Tensor {
            shape: self.shape(a).to_vec(),
            data: self.value(a).data.iter().map(|x| x + c).collect(),
        };
        self.push(Op::AddScalar(a), v)
    }

    // ---- activations ---------------------------------------------------

    pub fn relu(&mut self, a: VarId) -> VarId {
        let v = Tensor {
            shape: self.shape(a).to_vec(),
            data: self.value(a).data.iter().map(|x| x.max(0.0)).collect(),
        };
        self.push(Op::Relu(a), v)
    }

    pub fn elu(&mut self, a: VarId) -> VarId {
        let v = Tensor {
            shape: self.shape(a).to_vec(),
            data: self
                .value(a)
                .data
                .iter()
                .map(|&x| if x > 0.0 { x } else { x.exp() - 1.0 })
                .collect(),
        };
        self.push(Op::Elu(a), v)
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        let v = Tensor {
            shape: self.shape(a).to_vec(),
            data: self.value(a).data.iter().map(|&x| sigmoid(x)).collect(),
        };
        self.push(Op::Sigmoid(a), v)
    }

    pub fn softplus(&mut self, a: VarId) -> VarId {
        let v = Tensor {
            shape: self.shape(a).to_vec(),
            data: self.value(a).data.iter().map(|&x| softplus(x)).collect(),
        };
        self.push(Op::Softplus(a), v)
    }

    pub fn abs(&mut self, a: VarId) -> VarId {
        let v = Tensor {
            shape: self.shape(a).to_vec(),
            data: self.value(a).data.iter().map(|x| x.abs()).collect(),
        };
        self.push(Op::Abs(a), v)
    }

    // ---- linear algebra --------------------------------------------------

    /// y = W x with W [m, k], x [k].
    pub fn matvec(&mut self, w: VarId, x: VarId) -> Result<VarId> {
        let (ws, xs) = (self.shape(w).to_vec(), self.shape(x).to_vec());
        if ws.len() != 2 || xs.len() != 1 || ws[1] != xs[0] {
            return Err(Error::ShapeMismatch {
                op: "matvec",
                detail: format!("W {:?} x {:?}", ws, xs),
            });
        }
        let (m, k) = (ws[0], ws[1]);
        let mut y = vec![0.0; m];
        matvec_acc(&mut y, &self.value(w).data, &self.value(x).data, m, k);
        Ok(self.push(Op::MatVec(w, x), Tensor::vector(y)))
    }

    /// y = x^T A with x [r], A [r, c].
    pub fn vecmat(&mut self, x: VarId, a: VarId) -> Result<VarId> {
        let (xs, as_) = (self.shape(x).to_vec(), self.shape(a).to_vec());
        if xs.len() != 1 || as_.len() != 2 || as_[0] != xs[0] {
            return Err(Error::ShapeMismatch {
                op: "vecmat",
                detail: format!("x {:?} A {:?}", xs, as_),
            });
        }
        let (r, c) = (as_[0], as_[1]);
        let mut y = vec![0.0; c];
        vecmat_acc(&mut y, &self.value(x).data, &self.value(a).data, r, c);
        Ok(self.push(Op::VecMat(x, a), Tensor::vector(y)))
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("A {:?} B {:?}", sa, sb),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut c = vec![0.0; m * n];
        matmul_acc(&mut c, &self.value(a).data, &self.value(b).data, m, k, n);
        Ok(self.push(Op::Matmul(a, b), Tensor::matrix(m, n, c)?))
    }

    /// C = A B^T with A [m, k], B [n, k].
    pub fn matmul_tb(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::ShapeMismatch {
                op: "matmul_tb",
                detail: format!("A {:?} B {:?}", sa, sb),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut c = vec![0.0; m * n];
        matmul_tb_acc(&mut c, &self.value(a).data, &self.value(b).data, m, k, n);
        Ok(self.push(Op::MatmulTB(a, b), Tensor::matrix(m, n, c)?))
    }

    // ---- normalization ---------------------------------------------------

    /// Softmax over the last axis: whole vector for [n], per row for [r, c].
    pub fn softmax(&mut self, a: VarId) -> VarId {
        let t = self.value(a);
        let cols = *t.shape.last().unwrap_or(&1);
        let mut data = t.data.clone();
        for row in data.chunks_mut(cols) {
            softmax_inplace(row);
        }
        let v = Tensor { shape: t.shape.clone(), data };
        self.push(Op::Softmax(a), v)
    }

    /// Layer norm without affine: whole vector for [n], per row for [r, c].
    pub fn layer_norm(&mut self, a: VarId, eps: f64) -> VarId {
        let t = self.value(a);
        let cols = *t.shape.last().unwrap_or(&1);
        let mut data = t.data.clone();
        for row in data.chunks_mut(cols) {
            layer_norm_inplace(row, eps);
        }
        let v = Tensor { shape: t.shape.clone(), data };
        self.push(Op::LayerNorm(a, eps), v)
    }

    // ---- convolutions ----------------------------------------------------

    /// Dilated causal 1-D convolution. x [ci, T], w [co, ci, W], b [co].
    /// Output position t reads input positions t, t-d, ..., t-(W-1)d
    /// (out-of-range positions contribute zero).
    pub fn causal_conv(&mut self, x: VarId, w: VarId, b: VarId, dilation: usize) -> Result<VarId> {
        let v = self.conv_value(x, w, b, dilation, false)?;
        Ok(self.push(Op::CausalConv { x, w, b, dilation }, v))
    }

    /// Anti-causal mirror: output position t reads t, t+d, ..., t+(W-1)d.
    pub fn anti_causal_conv(
        &mut self,
        x: VarId,
        w: VarId,
        b: VarId,
        dilation: usize,
    ) -> Result<VarId> {
        let v = self.conv_value(x, w, b, dilation, true)?;
        Ok(self.push(Op::AntiCausalConv { x, w, b, dilation }, v))
    }

    fn conv_value(
        &self,
        x: VarId,
        w: VarId,
        b: VarId,
        dilation: usize,
        anti: bool,
    ) -> Result<Tensor> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 2 || sw.len() != 3 || sb.len() != 1 || sw[1] != sx[0] || sw[0] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: if anti { "anti_causal_conv" } else { "causal_conv" },
                detail: format!("x {:?} w {:?} b {:?}", sx, sw, sb),
            });
        }
        if dilation == 0 {
            return Err(Error::InvalidArgument("conv dilation must be >= 1".into()));
        }
        let (ci, t_len) = (sx[0], sx[1]);
        let (co, width) = (sw[0], sw[2]);
        let out = crate::autodiff::tensor::conv1d_forward(
            &self.value(x).data,
            &self.value(w).data,
            &self.value(b).data,
            ci,
            t_len,
            co,
            width,
            dilation,
            anti,
        );
        Tensor::new(vec![co, t_len], out)
    }

    // ---- structure -------------------------------------------------------

    /// Concatenate along axis 0. Vectors join end to end; [r, c] matrices
    /// stack rows (all must share the trailing dimension).
    pub fn concat0(&mut self, ids: &[VarId]) -> Result<VarId> {
        let first = *ids.first().ok_or_else(|| Error::Empty("concat0 of no inputs".into()))?;
        let trailing: Vec<usize> = self.shape(first)[1..].to_vec();
        let mut rows = 0usize;
        let mut data = Vec::new();
        for &id in ids {
            let s = self.shape(id);
            if s[1..] != trailing[..] {
                return Err(Error::ShapeMismatch {
                    op: "concat0",
                    detail: format!("{:?} vs {:?}", self.shape(first), s),
                });
            }
            rows += s[0];
            data.extend_from_slice(&self.value(id).data);
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&trailing);
        Ok(self.push(Op::Concat0(ids.to_vec()), Tensor { shape, data }))
    }

    pub fn sum(&mut self, a: VarId) -> VarId {
        let s: f64 = self.value(a).data.iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: VarId) -> VarId {
        let t = self.value(a);
        let s: f64 = t.data.iter().sum();
        let m = s / t.numel() as f64;
        self.push(Op::Mean(a), Tensor::scalar(m))
    }

    pub fn index(&mut self, a: VarId, i: usize) -> Result<VarId> {
        if i >= self.value(a).numel() {
            return Err(Error::InvalidArgument(format!(
                "index {} out of bounds for {:?}",
                i,
                self.shape(a)
            )));
        }
        let x = self.value(a).data[i];
        Ok(self.push(Op::Index(a, i), Tensor::scalar(x)))
    }

    pub fn slice(&mut self, a: VarId, start: usize, len: usize) -> Result<VarId> {
        if start + len > self.value(a).numel() {
            return Err(Error::InvalidArgument(format!(
                "slice {}..{} out of bounds for {:?}",
                start,
                start + len,
                self.shape(a)
            )));
        }
        let data = self.value(a).data[start..start + len].to_vec();
        Ok(self.push(Op::SliceV { a, start, len }, Tensor::vector(data)))
    }

    /// Column `col` of an [r, c] matrix as an [r] vector.
    pub fn col(&mut self, a: VarId, col: usize) -> Result<VarId> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || col >= s[1] {
            return Err(Error::InvalidArgument(format!("col {} of shape {:?}", col, s)));
        }
        let (r, c) = (s[0], s[1]);
        let data: Vec<f64> = (0..r).map(|i| self.value(a).data[i * c + col]).collect();
        Ok(self.push(Op::Col { a, col }, Tensor::vector(data)))
    }

    /// Row `row` of an [r, c] matrix as a [c] vector.
    pub fn row(&mut self, a: VarId, row: usize) -> Result<VarId> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || row >= s[0] {
            return Err(Error::InvalidArgument(format!("row {} of shape {:?}", row, s)));
        }
        let c = s[1];
        let data = self.value(a).data[row * c..(row + 1) * c].to_vec();
        Ok(self.push(Op::Row { a, row }, Tensor::vector(data)))
    }

    pub fn transpose(&mut self, a: VarId) -> Result<VarId> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "transpose",
                detail: format!("expected a matrix, got {:?}", s),
            });
        }
        let (r, c) = (s[0], s[1]);
        let src = &self.value(a).data;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        Ok(self.push(Op::Transpose(a), Tensor::matrix(c, r, data)?))
    }

    /// m [r, c] plus v [c] added to every row.
    pub fn add_row_broadcast(&mut self, m: VarId, v: VarId) -> Result<VarId> {
        let (sm, sv) = (self.shape(m).to_vec(), self.shape(v).to_vec());
        if sm.len() != 2 || sv.len() != 1 || sm[1] != sv[0] {
            return Err(Error::ShapeMismatch {
                op: "add_row_broadcast",
                detail: format!("m {:?} v {:?}", sm, sv),
            });
        }
        let (r, c) = (sm[0], sm[1]);
        let vv = &self.value(v).data;
        let mut data = self.value(m).data.clone();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += vv[j];
            }
        }
        Ok(self.push(Op::AddRowBroadcast(m, v), Tensor::matrix(r, c, data)?))
    }

    pub fn reshape(&mut self, a: VarId, shape: Vec<usize>) -> Result<VarId> {
        let n: usize = shape.iter().product();
        if n != self.value(a).numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {:?}", self.shape(a), shape),
            });
        }
        let v = Tensor { shape, data: self.value(a).data.clone() };
        Ok(self.push(Op::Reshape(a), v))
    }

    // ---- backward --------------------------------------------------------

    /// Reverse pass from a scalar output. Errors if the output is not scalar
    /// or if this tape already ran backward.
    pub fn backward(&mut self, out: VarId) -> Result<()> {
        if self.value(out).numel() != 1 {
            return Err(Error::NonScalarOutput(self.shape(out).to_vec()));
        }
        self.backward_seeded(out, Tensor::scalar(1.0))
    }

    /// Reverse pass with an explicit seed (vector-Jacobian product).
    pub fn backward_seeded(&mut self, out: VarId, seed: Tensor) -> Result<()> {
        if self.consumed {
            return Err(Error::BackwardConsumed);
        }
        if seed.shape != self.value(out).shape {
            return Err(Error::ShapeMismatch {
                op: "backward_seeded",
                detail: format!("seed {:?} vs out {:?}", seed.shape, self.value(out).shape),
            });
        }
        self.consumed = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[out.0] = Some(seed);
        for i in (0..self.nodes.len()).rev() {
            if self.grads[i].is_none() {
                continue;
            }
            let g = self.grads[i].take().unwrap();
            self.apply_vjp(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    /// Gradient of the last backward output w.r.t. `id` (zeros if none flowed).
    pub fn grad(&self, id: VarId) -> Tensor {
        match &self.grads.get(id.0).and_then(|g| g.as_ref()) {
            Some(g) => (*g).clone(),
            None => Tensor::zeros(self.shape(id).to_vec()),
        }
    }

    fn acc(&mut self, id: VarId, delta: &[f64]) {
        match &mut self.grads[id.0] {
            Some(g) => axpy(&mut g.data, 1.0, delta),
            None => {
                let mut g = Tensor::zeros(self.shape(id).to_vec());
                g.data.copy_from_slice(delta);
                self.grads[id.0] = Some(g);
            }
        }
    }

    fn acc_scaled(&mut self, id: VarId, scale: f64, delta: &[f64]) {
        if self.grads[id.0].is_none() {
            self.grads[id.0] = Some(Tensor::zeros(self.shape(id).to_vec()));
        }
        if let Some(g) = &mut self.grads[id.0] {
            axpy(&mut g.data, scale, delta);
        }
    }

    fn apply_vjp(&mut self, i: usize, g: &Tensor) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(a, &g.data);
                self.acc(b, &g.data);
            }
            Op::AddN(ids) => {
                for id in ids {
                    self.acc(id, &g.data);
                }
            }
            Op::Sub(a, b) => {
                self.acc(a, &g.data);
                self.acc_scaled(b, -1.0, &g.data);
            }
            Op::Neg(a) => self.acc_scaled(a, -1.0, &g.data),
            Op::Mul(a, b) => {
                let da: Vec<f64> =
                    g.data.iter().zip(&self.nodes[b.0].value.data).map(|(gi, bi)| gi * bi).collect();
                let db: Vec<f64> =
                    g.data.iter().zip(&self.nodes[a.0].value.data).map(|(gi, ai)| gi * ai).collect();
                self.acc(a, &da);
                self.acc(b, &db);
            }
            Op::Scale(a, c) => self.acc_scaled(a, c, &g.data),
            Op::AddScalar(a) => self.acc(a, &g.data),
            Op::MatVec(w, x) => {
                let (m, k) = (self.shape(w)[0], self.shape(w)[1]);
                let mut dw = vec![0.0; m * k];
                let xv = &self.nodes[x.0].value.data;
                for r in 0..m {
                    axpy(&mut dw[r * k..(r + 1) * k], g.data[r], xv);
                }
                let mut dx = vec![0.0; k];
                vecmat_acc(&mut dx, &g.data, &self.nodes[w.0].value.data, m, k);
                self.acc(w, &dw);
                self.acc(x, &dx);
            }
            Op::VecMat(x, a) => {
                let (r, c) = (self.shape(a)[0], self.shape(a)[1]);
                let mut dx = vec![0.0; r];
                let av = &self.nodes[a.0].value.data;
                for i in 0..r {
                    dx[i] = dot(&g.data, &av[i * c..(i + 1) * c]);
                }
                let mut da = vec![0.0; r * c];
                let xv = &self.nodes[x.0].value.data;
                for i in 0..r {
                    axpy(&mut da[i * c..(i + 1) * c], xv[i], &g.data);
                }
                self.acc(x, &dx);
                self.acc(a, &da);
            }
            Op::Matmul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                // dA = g B^T, dB = A^T g
                let mut da = vec![0.0; m * k];
                matmul_tb_acc(&mut da, &g.data, &self.nodes[b.0].value.data, m, n, k);
                let mut db = vec![0.0; k * n];
                let av = &self.nodes[a.0].value.data;
                for i in 0..m {
                    for p in 0..k {
                        let aip = av[i * k + p];
                        if aip != 0.0 {
                            axpy(&mut db[p * n..(p + 1) * n], aip, &g.data[i * n..(i + 1) * n]);
                        }
                    }
                }
                self.acc(a, &da);
                self.acc(b, &db);
            }
            Op::MatmulTB(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[0];
                // C = A B^T: dA = g B, dB = g^T A
                let mut da = vec![0.0; m * k];
                matmul_acc(&mut da, &g.data, &self.nodes[b.0].value.data, m, n, k);
                let mut db = vec![0.0; n * k];
                let av = &self.nodes[a.0].value.data;
                for i in 0..m {
                    for j in 0..n {
                        let gij = g.data[i * n + j];
                        if gij != 0.0 {
                            axpy(&mut db[j * k..(j + 1) * k], gij, &av[i * k..(i + 1) * k]);
                        }
                    }
                }
                self.acc(a, &da);
                self.acc(b, &db);
            }
            Op::Relu(a) => {
                let d: Vec<f64> = g
                    .data
                    .iter()
                    .zip(&self.nodes[a.0].value.data)
                    .map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 })
                    .collect();
                self.acc(a, &d);
            }
            Op::Elu(a) => {
                let d: Vec<f64> = g
                    .data
                    .iter()
                    .zip(&self.nodes[a.0].value.data)
                    .map(|(gi, xi)| if *xi > 0.0 { *gi } else { gi * xi.exp() })
                    .collect();
                self.acc(a, &d);
            }
            Op::Sigmoid(a) => {
                let d: Vec<f64> = g
                    .data
                    .iter()
                    .zip(&self.nodes[i].value.data)
                    .map(|(gi, yi)| gi * yi * (1.0 - yi))
                    .collect();
                self.acc(a, &d);
            }
            Op::Softplus(a) => {
                let d: Vec<f64> = g
                    .data
                    .iter()
                    .zip(&self.nodes[a.0].value.data)
                    .map(|(gi, xi)| gi * sigmoid(*xi))
                    .collect();
                self.acc(a, &d);
            }
            Op::Abs(a) => {
                let d: Vec<f64> = g
                    .data
                    .iter()
                    .zip(&self.nodes[a.0].value.data)
                    .map(|(gi, xi)| gi * sign0(*xi))
                    .collect();
                self.acc(a, &d);
            }
            Op::Softmax(a) => {
                let y = &self.nodes[i].value;
                let cols = *y.shape.last().unwrap_or(&1);
                let mut d = vec![0.0; y.numel()];
                for (r, (yrow, grow)) in y.data.chunks(cols).zip(g.data.chunks(cols)).enumerate() {
                    let s = dot(grow, yrow);
                    for c in 0..cols {
                        d[r * cols + c] = yrow[c] * (grow[c] - s);
                    }
                }
                self.acc(a, &d);
            }
            Op::LayerNorm(a, eps) => {
                let x = &self.nodes[a.0].value;
                let y = &self.nodes[i].value;
                let cols = *x.shape.last().unwrap_or(&1);
                let mut d = vec![0.0; x.numel()];
                for r in 0..x.numel() / cols {
                    let xr = &x.data[r * cols..(r + 1) * cols];
                    let yr = &y.data[r * cols..(r + 1) * cols];
                    let gr = &g.data[r * cols..(r + 1) * cols];
                    let n = cols as f64;
                    let mu = xr.iter().sum::<f64>() / n;
                    let var = xr.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
                    let s = (var + eps).sqrt();
                    let gmean = gr.iter().sum::<f64>() / n;
                    let gy = dot(gr, yr) / n;
                    for c in 0..cols {
                        d[r * cols + c] = (gr[c] - gmean - yr[c] * gy) / s;
                    }
                }
                self.acc(a, &d);
            }
            Op::CausalConv { x, w, b, dilation } => {
                self.conv_vjp(x, w, b, dilation, false, &g.data)
            }
            Op::AntiCausalConv { x, w, b, dilation } => {
                self.conv_vjp(x, w, b, dilation, true, &g.data)
            }
            Op::Concat0(ids) => {
                let mut off = 0usize;
                for id in ids {
                    let n = self.nodes[id.0].value.numel();
                    let piece = g.data[off..off + n].to_vec();
                    self.acc(id, &piece);
                    off += n;
                }
            }
            Op::Sum(a) => {
                let n = self.nodes[a.0].value.numel();
                let d = vec![g.data[0]; n];
                self.acc(a, &d);
            }
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.numel();
                let d = vec![g.data[0] / n as f64; n];
                self.acc(a, &d);
            }
            Op::Index(a, idx) => {
                let mut d = vec![0.0; self.nodes[a.0].value.numel()];
                d[idx] = g.data[0];
                self.acc(a, &d);
            }
            Op::SliceV { a, start, len } => {
                let mut d = vec![0.0; self.nodes[a.0].value.numel()];
                d[start..start + len].copy_from_slice(&g.data);
                self.acc(a, &d);
            }
            Op::Col { a, col } => {
                let (r, c) = (self.shape(a)[0], self.shape(a)[1]);
                let mut d = vec![0.0; r * c];
                for row in 0..r {
                    d[row * c + col] = g.data[row];
                }
                self.acc(a, &d);
            }
            Op::Row { a, row } => {
                let c = self.shape(a)[1];
                let mut d = vec![0.0; self.nodes[a.0].value.numel()];
                d[row * c..(row + 1) * c].copy_from_slice(&g.data);
                self.acc(a, &d);
            }
            Op::Transpose(a) => {
                let (r, c) = (self.shape(a)[0], self.shape(a)[1]);
                // g has shape [c, r]; transpose it back
                let mut d = vec![0.0; r * c];
                for i in 0..c {
                    for j in 0..r {
                        d[j * c + i] = g.data[i * r + j];
                    }
                }
                self.acc(a, &d);
            }
            Op::AddRowBroadcast(m, v) => {
                self.acc(m, &g.data);
                let c = self.shape(v)[0];
                let mut dv = vec![0.0; c];
                for row in g.data.chunks(c) {
                    axpy(&mut dv, 1.0, row);
                }
                self.acc(v, &dv);
            }
            Op::Reshape(a) => self.acc(a, &g.data),
        }
    }

    fn conv_vjp(&mut self, x: VarId, w: VarId, b: VarId, dilation: usize, anti: bool, g: &[f64]) {
        let (ci, t_len) = (self.shape(x)[0], self.shape(x)[1]);
        let (co, width) = (self.shape(w)[0], self.shape(w)[2]);
        let xv = self.nodes[x.0].value.data.clone();
        let wv = self.nodes[w.0].value.data.clone();
        let mut dx = vec![0.0; ci * t_len];
        let mut dw = vec![0.0; co * ci * width];
        let mut db = vec![0.0; co];
        for o in 0..co {
            let grow = &g[o * t_len..(o + 1) * t_len];
            db[o] += grow.iter().sum::<f64>();
            for k in 0..width {
                let off = k * dilation;
                if off >= t_len {
                    continue;
                }
                for c in 0..ci {
                    let widx = (o * ci + c) * width + k;
                    let wk = wv[widx];
                    let xrow = &xv[c * t_len..(c + 1) * t_len];
                    let dxrow = &mut dx[c * t_len..(c + 1) * t_len];
                    if anti {
                        // out[t] += wk * x[t+off]  =>  dx[t+off] += wk*g[t]
                        axpy(&mut dxrow[off..], wk, &grow[..t_len - off]);
                        dw[widx] += dot(&grow[..t_len - off], &xrow[off..]);
                    } else {
                        axpy(&mut dxrow[..t_len - off], wk, &grow[off..]);
                        dw[widx] += dot(&grow[off..], &xrow[..t_len - off]);
                    }
                }
            }
        }
        self.acc(x, &dx);
        self.acc(w, &dw);
        self.acc(b, &db);
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn softmax_inplace(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

fn layer_norm_inplace(row: &mut [f64], eps: f64) {
    let n = row.len() as f64;
    let mu = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    let s = (var + eps).sqrt();
    for v in row.iter_mut() {
        *v = (*v - mu) / s;
    }
}

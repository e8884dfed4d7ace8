use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::kernels::{matmul, matmul_nt, matmul_tn};
use super::{Float, Tensor, TensorError, LAYER_NORM_EPS};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    Transpose(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    Slice { input: Var, start: usize },
    Gather { input: Var, index: Arc<Vec<usize>> },
    Gelu(Var),
    Silu(Var),
    Softmax(Var),
    LayerNorm { input: Var, inv_std: Vec<T> },
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of primitive operations. Every operation computes its
/// value eagerly and stores what its backward pass needs.
///
/// A tape has a single owner; independent tapes may be used from different
/// threads at the same time.
#[derive(Debug)]
pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
    checked: bool,
    macs: u64,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_COEF: f64 = 0.044_715;

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            checked: false,
            macs: 0,
        }
    }

    /// Tape that rejects any operation producing NaN or infinity.
    pub fn checked() -> Self {
        Self {
            checked: true,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-accumulates performed by `matmul` and `attention` so far.
    pub fn mac_count(&self) -> u64 {
        self.macs
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        assert_eq!(v.tape, self.id, "variable belongs to another tape");
        &self.nodes[v.idx].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.idx].requires_grad
    }

    fn push(
        &mut self,
        name: &'static str,
        value: Tensor<T>,
        op: Op<T>,
        requires_grad: bool,
    ) -> Result<Var, TensorError> {
        if self.checked && !value.all_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        })
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize), TensorError> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            ref s => Err(TensorError::InvalidArgument {
                op,
                msg: format!("expected a 2-D tensor, got shape {s:?}"),
            }),
        }
    }

    /// `a[m,k] · b[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let data = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        self.macs += (m * k * n) as u64;
        let rg = self.rg(a) || self.rg(b);
        self.push("matmul", Tensor::new(vec![m, n], data)?, Op::MatMul(a, b), rg)
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(name, a, b));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(name, value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn row_broadcast(
        &mut self,
        name: &'static str,
        x: Var,
        row: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var, TensorError> {
        let n = self.value(x).last_dim();
        if self.shape(row) != [n] {
            return Err(self.mismatch(name, x, row));
        }
        let (vx, vr) = (self.value(x), self.value(row));
        let r = vr.data();
        let data = vx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &a)| f(a, r[i % n]))
            .collect();
        let value = Tensor::new(vx.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(row);
        self.push(name, value, op, rg)
    }

    /// `x[.., n] + row[n]` broadcast over leading dimensions.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, TensorError> {
        self.row_broadcast("add_row", x, row, |a, b| a + b, Op::AddRow(x, row))
    }

    /// `x[.., n] * row[n]` broadcast over leading dimensions.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var, TensorError> {
        self.row_broadcast("mul_row", x, row, |a, b| a * b, Op::MulRow(x, row))
    }

    fn map(
        &mut self,
        name: &'static str,
        x: Var,
        f: impl Fn(T) -> T,
        op: Op<T>,
    ) -> Result<Var, TensorError> {
        let vx = self.value(x);
        let data = vx.data().iter().map(|&a| f(a)).collect();
        let value = Tensor::new(vx.shape().to_vec(), data)?;
        let rg = self.rg(x);
        self.push(name, value, op, rg)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var, TensorError> {
        self.map("scale", x, |a| a * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var, TensorError> {
        self.map("add_scalar", x, |a| a + c, Op::AddScalar(x))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var, TensorError> {
        let (s, c) = (T::of(SQRT_2_OVER_PI), T::of(GELU_COEF));
        let half = T::of(0.5);
        self.map(
            "gelu",
            x,
            |a| half * a * (T::one() + (s * (a + c * a * a * a)).tanh()),
            Op::Gelu(x),
        )
    }

    pub fn silu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.map("silu", x, |a| a / (T::one() + (-a).exp()), Op::Silu(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push("sum", Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x);
        let s: T = v.data().iter().copied().sum();
        let n = T::of(v.numel() as f64);
        let rg = self.rg(x);
        self.push("mean", Tensor::scalar(s / n), Op::Mean(x), rg)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let (m, n) = self.dims2("transpose", x)?;
        let d = self.value(x).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        let rg = self.rg(x);
        self.push("transpose", Tensor::new(vec![n, m], out)?, Op::Transpose(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let v = self.value(x);
        if shape.iter().product::<usize>() != v.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: v.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let value = Tensor::new(shape.to_vec(), v.data().to_vec())?;
        let rg = self.rg(x);
        self.push("reshape", value, Op::Reshape(x), rg)
    }

    /// Concatenate along the last dimension. All leading dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::InvalidArgument {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(self.mismatch("concat", first, p));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push("concat", Tensor::new(shape, out)?, Op::Concat(parts.to_vec()), rg)
    }

    /// Columns `start..end` of the last dimension.
    pub fn slice(&mut self, x: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let v = self.value(x);
        let n = v.last_dim();
        if start >= end || end > n {
            return Err(TensorError::InvalidArgument {
                op: "slice",
                msg: format!("range {start}..{end} outside last dimension {n}"),
            });
        }
        let w = end - start;
        let rows = v.rows();
        let mut out = Vec::with_capacity(rows * w);
        for r in 0..rows {
            out.extend_from_slice(&v.data()[r * n + start..r * n + end]);
        }
        let mut shape = v.shape().to_vec();
        *shape.last_mut().unwrap() = w;
        let rg = self.rg(x);
        self.push("slice", Tensor::new(shape, out)?, Op::Slice { input: x, start }, rg)
    }

    /// `out[i] = x.flat[index[i]]`, reshaped to `shape`. Covers permutations,
    /// crops and patch/unpatch reorderings.
    pub fn gather(
        &mut self,
        x: Var,
        index: Arc<Vec<usize>>,
        shape: &[usize],
    ) -> Result<Var, TensorError> {
        let v = self.value(x);
        if shape.iter().product::<usize>() != index.len() {
            return Err(TensorError::InvalidArgument {
                op: "gather",
                msg: format!("shape {shape:?} does not hold {} indices", index.len()),
            });
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= v.numel()) {
            return Err(TensorError::InvalidArgument {
                op: "gather",
                msg: format!("index {bad} out of bounds for {} elements", v.numel()),
            });
        }
        let out = index.iter().map(|&i| v.data()[i]).collect();
        let rg = self.rg(x);
        self.push(
            "gather",
            Tensor::new(shape.to_vec(), out)?,
            Op::Gather { input: x, index },
            rg,
        )
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x);
        let n = v.last_dim();
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        let value = Tensor::new(v.shape().to_vec(), out)?;
        let rg = self.rg(x);
        self.push("softmax", value, Op::Softmax(x), rg)
    }

    /// Layer normalization over the last dimension without affine terms.
    pub fn layer_norm(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x);
        let n = v.last_dim();
        let nf = T::of(n as f64);
        let eps = T::of(LAYER_NORM_EPS);
        let mut out = Vec::with_capacity(v.numel());
        let mut inv_std = Vec::with_capacity(v.rows());
        for row in v.data().chunks(n) {
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / nf;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            out.extend(row.iter().map(|&a| (a - mean) * is));
        }
        let value = Tensor::new(v.shape().to_vec(), out)?;
        let rg = self.rg(x);
        self.push("layer_norm", value, Op::LayerNorm { input: x, inv_std }, rg)
    }

    /// Multi-head scaled dot-product attention. `q` is `[Tq, d]`, `k` and `v`
    /// are `[Tk, d]`; head `h` uses feature columns `h*d/heads..(h+1)*d/heads`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var, TensorError> {
        let (tq, d) = self.dims2("attention", q)?;
        let (tk, dk) = self.dims2("attention", k)?;
        if dk != d {
            return Err(self.mismatch("attention", q, k));
        }
        if self.shape(v) != [tk, d] {
            return Err(self.mismatch("attention", k, v));
        }
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::InvalidArgument {
                op: "attention",
                msg: format!("width {d} not divisible into {heads} heads"),
            });
        }
        let dh = d / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![T::zero(); heads * tq * tk];
        let mut out = vec![T::zero(); tq * d];
        for h in 0..heads {
            let off = h * dh;
            let p = &mut probs[h * tq * tk..(h + 1) * tq * tk];
            for i in 0..tq {
                let qi = &qd[i * d + off..i * d + off + dh];
                let prow = &mut p[i * tk..(i + 1) * tk];
                for (j, pj) in prow.iter_mut().enumerate() {
                    let kj = &kd[j * d + off..j * d + off + dh];
                    let mut s = T::zero();
                    for (&a, &b) in qi.iter().zip(kj) {
                        s += a * b;
                    }
                    *pj = s * scale;
                }
                softmax_in_place(prow);
                let orow = &mut out[i * d + off..i * d + off + dh];
                for (j, &pj) in prow.iter().enumerate() {
                    let vj = &vd[j * d + off..j * d + off + dh];
                    for (o, &b) in orow.iter_mut().zip(vj) {
                        *o += pj * b;
                    }
                }
            }
        }
        self.macs += (2 * tq * tk * d) as u64;
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        self.push(
            "attention",
            Tensor::new(vec![tq, d], out)?,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            rg,
        )
    }

    /// Gradients of the scalar `loss` with respect to each of `leaves`.
    /// Leaves that do not influence the loss (or are constants) get zeros.
    pub fn grad(&self, loss: Var, leaves: &[Var]) -> Result<Vec<Tensor<T>>, TensorError> {
        if loss.tape != self.id || loss.idx >= self.nodes.len() {
            return Err(TensorError::LeafNotOnTape);
        }
        for l in leaves {
            if l.tape != self.id || l.idx >= self.nodes.len() {
                return Err(TensorError::LeafNotOnTape);
            }
            if !matches!(self.nodes[l.idx].op, Op::Leaf) {
                return Err(TensorError::LeafNotOnTape);
            }
        }
        let loss_value = &self.nodes[loss.idx].value;
        if loss_value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss_value.shape().to_vec()));
        }

        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.idx).map(|_| None).collect();
        grads[loss.idx] = Some(vec![T::one()]);
        for idx in (0..=loss.idx).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(node, &g, &mut grads);
        }

        Ok(leaves
            .iter()
            .map(|l| {
                let shape = self.nodes[l.idx].value.shape().to_vec();
                match grads.get(l.idx).and_then(|g| g.clone()) {
                    Some(data) if self.nodes[l.idx].requires_grad => {
                        Tensor::new(shape, data).expect("gradient shape")
                    }
                    _ => Tensor::zeros(&shape),
                }
            })
            .collect())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, contrib: Vec<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.idx] {
            Some(acc) => acc.iter_mut().zip(contrib).for_each(|(a, c)| *a += c),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn accumulate_with(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.rg(v) {
            return;
        }
        let n = self.nodes[v.idx].value.numel();
        let slot = grads[v.idx].get_or_insert_with(|| vec![T::zero(); n]);
        f(slot);
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                if self.rg(*a) {
                    self.accumulate(grads, *a, matmul_nt(g, vb.data(), m, n, k));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, matmul_tn(va.data(), g, m, k, n));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|&x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, g.iter().zip(vb).map(|(&x, &y)| x * y).collect());
                self.accumulate(grads, *b, g.iter().zip(va).map(|(&x, &y)| x * y).collect());
            }
            Op::AddRow(x, row) => {
                let n = out.last_dim();
                self.accumulate(grads, *x, g.to_vec());
                self.accumulate_with(grads, *row, |acc| {
                    for (i, &gi) in g.iter().enumerate() {
                        acc[i % n] += gi;
                    }
                });
            }
            Op::MulRow(x, row) => {
                let n = out.last_dim();
                let (vx, vr) = (self.value(*x).data(), self.value(*row).data());
                self.accumulate(
                    grads,
                    *x,
                    g.iter().enumerate().map(|(i, &gi)| gi * vr[i % n]).collect(),
                );
                self.accumulate_with(grads, *row, |acc| {
                    for (i, &gi) in g.iter().enumerate() {
                        acc[i % n] += gi * vx[i];
                    }
                });
            }
            Op::Scale(x, c) => {
                self.accumulate(grads, *x, g.iter().map(|&a| a * *c).collect());
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                self.accumulate(grads, *x, g.to_vec());
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, vec![g[0] / T::of(n as f64); n]);
            }
            Op::Transpose(x) => {
                let (m, n) = (out.shape()[1], out.shape()[0]);
                let mut dx = vec![T::zero(); m * n];
                for i in 0..m {
                    for j in 0..n {
                        dx[i * n + j] = g[j * m + i];
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Concat(parts) => {
                let total = out.last_dim();
                let rows = out.rows();
                let mut col = 0;
                for &p in parts {
                    let w = self.value(p).last_dim();
                    let start = col;
                    self.accumulate_with(grads, p, |acc| {
                        for r in 0..rows {
                            let src = &g[r * total + start..r * total + start + w];
                            for (a, &s) in acc[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *a += s;
                            }
                        }
                    });
                    col += w;
                }
            }
            Op::Slice { input, start } => {
                let n = self.value(*input).last_dim();
                let w = out.last_dim();
                let rows = out.rows();
                self.accumulate_with(grads, *input, |acc| {
                    for r in 0..rows {
                        let dst = &mut acc[r * n + start..r * n + start + w];
                        for (a, &s) in dst.iter_mut().zip(&g[r * w..(r + 1) * w]) {
                            *a += s;
                        }
                    }
                });
            }
            Op::Gather { input, index } => {
                self.accumulate_with(grads, *input, |acc| {
                    for (&i, &gi) in index.iter().zip(g) {
                        acc[i] += gi;
                    }
                });
            }
            Op::Gelu(x) => {
                let (s, c) = (T::of(SQRT_2_OVER_PI), T::of(GELU_COEF));
                let half = T::of(0.5);
                let three = T::of(3.0);
                let dx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&a, &gi)| {
                        let th = (s * (a + c * a * a * a)).tanh();
                        let du = s * (T::one() + three * c * a * a);
                        gi * (half * (T::one() + th) + half * a * (T::one() - th * th) * du)
                    })
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Silu(x) => {
                let dx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&a, &gi)| {
                        let sig = T::one() / (T::one() + (-a).exp());
                        gi * sig * (T::one() + a * (T::one() - sig))
                    })
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Softmax(x) => {
                let n = out.last_dim();
                let mut dx = Vec::with_capacity(out.numel());
                for (y, gr) in out.data().chunks(n).zip(g.chunks(n)) {
                    let dot: T = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    dx.extend(y.iter().zip(gr).map(|(&a, &b)| a * (b - dot)));
                }
                self.accumulate(grads, *x, dx);
            }
            Op::LayerNorm { input, inv_std } => {
                let n = out.last_dim();
                let nf = T::of(n as f64);
                let mut dx = Vec::with_capacity(out.numel());
                for ((y, gr), &is) in out.data().chunks(n).zip(g.chunks(n)).zip(inv_std) {
                    let mg = gr.iter().copied().sum::<T>() / nf;
                    let mgy = y.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>() / nf;
                    dx.extend(y.iter().zip(gr).map(|(&a, &b)| is * (b - mg - a * mgy)));
                }
                self.accumulate(grads, *input, dx);
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => self.attention_backward(*q, *k, *v, *heads, probs, g, grads),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: &[T],
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let d = self.value(q).shape()[1];
        let tq = self.value(q).shape()[0];
        let tk = self.value(k).shape()[0];
        let dh = d / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let mut dq = vec![T::zero(); tq * d];
        let mut dk = vec![T::zero(); tk * d];
        let mut dv = vec![T::zero(); tk * d];
        let mut ds = vec![T::zero(); tk];
        for h in 0..heads {
            let off = h * dh;
            let p = &probs[h * tq * tk..(h + 1) * tq * tk];
            for i in 0..tq {
                let prow = &p[i * tk..(i + 1) * tk];
                let gi = &g[i * d + off..i * d + off + dh];
                // dP_ij = dO_i · V_j ; dV_j += P_ij dO_i
                let mut dot = T::zero();
                for j in 0..tk {
                    let vj = &vd[j * d + off..j * d + off + dh];
                    let mut dp = T::zero();
                    for (&a, &b) in gi.iter().zip(vj) {
                        dp += a * b;
                    }
                    ds[j] = dp;
                    dot += dp * prow[j];
                    let pij = prow[j];
                    for (acc, &a) in dv[j * d + off..j * d + off + dh].iter_mut().zip(gi) {
                        *acc += pij * a;
                    }
                }
                // dS = P ⊙ (dP − rowsum(dP ⊙ P)), scaled by 1/sqrt(dh)
                for j in 0..tk {
                    let s = prow[j] * (ds[j] - dot) * scale;
                    if s == T::zero() {
                        continue;
                    }
                    let kj = &kd[j * d + off..j * d + off + dh];
                    for (acc, &b) in dq[i * d + off..i * d + off + dh].iter_mut().zip(kj) {
                        *acc += s * b;
                    }
                    let qi = &qd[i * d + off..i * d + off + dh];
                    for (acc, &a) in dk[j * d + off..j * d + off + dh].iter_mut().zip(qi) {
                        *acc += s * a;
                    }
                }
            }
        }
        self.accumulate(grads, q, dq);
        self.accumulate(grads, k, dk);
        self.accumulate(grads, v, dv);
    }
}

fn softmax_in_place<T: Float>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let mut total = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_uniform_logits() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[5], &[0.3; 5]));
        let y = tape.softmax(x).unwrap();
        assert!(tape.value(y).data().iter().all(|&p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn layer_norm_of_constant_is_zero() {
        let mut tape = Tape::<f32>::checked();
        let x = tape.constant(Tensor::new(vec![2, 4], vec![7.0; 8]).unwrap());
        let y = tape.layer_norm(x).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_token_attention_returns_value() {
        let mut tape = Tape::<f64>::new();
        let q = tape.constant(t(&[1, 4], &[0.1, -2.0, 3.0, 0.5]));
        let k = tape.constant(t(&[1, 4], &[1.0, 1.0, -1.0, 2.0]));
        let v = tape.constant(t(&[1, 4], &[9.0, -8.0, 7.5, 0.25]));
        let o = tape.attention(q, k, v, 2).unwrap();
        assert_eq!(tape.value(o).data(), &[9.0, -8.0, 7.5, 0.25]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[2, 3], &[1.0, -2.0, 3.0, 0.0, 5.0, 6.0]));
        let s = tape.sum(x).unwrap();
        let g = tape.grad(s, &[x]).unwrap();
        assert!(g[0].data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn half_square_gradient_is_identity() {
        let data = [0.5, -1.5, 2.0, 3.25];
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[4], &data));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let loss = tape.scale(s, 0.5).unwrap();
        let g = tape.grad(loss, &[x]).unwrap();
        assert_eq!(g[0].data(), &data);
    }

    #[test]
    fn grad_rejects_foreign_and_non_leaf_vars() {
        let mut a = Tape::<f64>::new();
        let mut b = Tape::<f64>::new();
        let x = a.param(t(&[2], &[1.0, 2.0]));
        let y = b.param(t(&[2], &[1.0, 2.0]));
        let s = a.sum(x).unwrap();
        assert_eq!(a.grad(s, &[y]), Err(TensorError::LeafNotOnTape));
        assert_eq!(a.grad(s, &[s]), Err(TensorError::LeafNotOnTape));
        assert_eq!(a.grad(x, &[x]), Err(TensorError::NonScalarLoss(vec![2])));
    }

    #[test]
    fn constants_receive_zero_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        let c = tape.constant(t(&[2], &[3.0, 4.0]));
        let p = tape.mul(x, c).unwrap();
        let s = tape.sum(p).unwrap();
        let g = tape.grad(s, &[x, c]).unwrap();
        assert_eq!(g[0].data(), &[3.0, 4.0]);
        assert_eq!(g[1].data(), &[0.0, 0.0]);
    }

    #[test]
    fn shape_errors() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(tape.matmul(a, b), Err(TensorError::ShapeMismatch { .. })));
        let r = tape.constant(Tensor::zeros(&[2]));
        assert!(tape.add_row(a, r).is_err());
        assert!(tape.slice(a, 2, 4).is_err());
        assert!(tape.reshape(a, &[5]).is_err());
        assert!(tape.attention(a, b, b, 2).is_err());
    }

    #[test]
    fn checked_mode_reports_non_finite() {
        let mut tape = Tape::<f64>::checked();
        let x = tape.constant(t(&[2], &[1e308, 1e308]));
        assert_eq!(
            tape.scale(x, 10.0),
            Err(TensorError::NonFinite { op: "scale" })
        );
        let mut loose = Tape::<f64>::new();
        let y = loose.constant(t(&[2], &[1e308, 1e308]));
        assert!(loose.scale(y, 10.0).is_ok());
    }

    #[test]
    fn mac_counter_tracks_matmul_and_attention() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[3, 4]));
        let b = tape.constant(Tensor::zeros(&[4, 5]));
        tape.matmul(a, b).unwrap();
        assert_eq!(tape.mac_count(), 60);
        let q = tape.constant(Tensor::zeros(&[6, 4]));
        tape.attention(q, q, q, 2).unwrap();
        assert_eq!(tape.mac_count(), 60 + 2 * 6 * 6 * 4);
    }
}

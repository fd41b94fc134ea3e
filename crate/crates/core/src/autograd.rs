//! Reverse-mode automatic differentiation over row-major 2-D tensors.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value
//! and the indices of its inputs. [`Graph::backward`] walks the tape in
//! reverse and fills each node's gradient slot. Parameters live in a
//! [`ParamStore`] and enter a graph through [`Graph::param`]; their
//! gradients are collected with [`Graph::param_grads`].
//!
//! Everything is `f64` so central finite differences can validate every op.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("{} values for a {rows}x{cols} tensor", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn scalar(v: f64) -> Self {
        Self { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Self { rows: r, cols: c, data: rows.concat() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn add_assign(&mut self, o: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += b;
        }
    }
}

// --- dense kernels -------------------------------------------------------

/// `out += a · b` with `a: m×k`, `b: k×n`.
fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a · bᵀ` with `a: m×k`, `b: n×k`.
fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                s += x * y;
            }
            out[i * n + j] += s;
        }
    }
}

/// `out += aᵀ · b` with `a: k×m`, `b: k×n`.
fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], k: usize, m: usize, n: usize) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// --- parameters ----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named parameter tensors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Zero-initialized gradient accumulator with matching shapes.
    pub fn zeros_like(&self) -> Grads {
        Grads { tensors: self.tensors.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect() }
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    tensors: Vec<Tensor>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Tensor) {
        self.tensors[id.0].add_assign(g);
    }

    pub fn add(&mut self, other: &Grads) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            for v in &mut t.data {
                *v *= s;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.tensors.iter().enumerate().map(|(i, t)| (ParamId(i), t))
    }
}

// --- tape ----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    Gather(Var, Vec<usize>),
    Bilinear { fmap: Var, pts: Var, height: usize, width: usize },
    SumAll(Var),
    L1(Var, Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Index value meaning "zero" in [`Graph::gather`] (padding).
pub const GATHER_ZERO: usize = usize::MAX;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = match op {
            Op::Leaf => false,
            Op::Param(_) => true,
            _ => inputs.iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node { value, grad: None, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Gradient slot of a node after [`Graph::backward`] (None if unreached).
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Constant input (no gradient).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, &[])
    }

    /// Leaf that records a gradient, for inputs we differentiate against.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t, grad: None, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id), &[])
    }

    fn check(&self, cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
        if cond {
            Ok(())
        } else {
            Err(Error::Shape(msg()))
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        self.check(k == k2, || format!("matmul {m}x{k} by {k2}x{n}"))?;
        let mut out = vec![0.0; m * n];
        gemm_nn(&self.value(a).data, &self.value(b).data, &mut out, m, k, n);
        Ok(self.push(Tensor { rows: m, cols: n, data: out }, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        self.check(k == k2, || format!("matmul_nt {m}x{k} by ({n}x{k2})^T"))?;
        let mut out = vec![0.0; m * n];
        gemm_nt(&self.value(a).data, &self.value(b).data, &mut out, m, k, n);
        Ok(self.push(Tensor { rows: m, cols: n, data: out }, Op::MatMulNT(a, b), &[a, b]))
    }

    fn zip_with(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        self.check(sa == sb, || format!("{name} {sa:?} vs {sb:?}"))?;
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(x, y)| f(*x, *y)).collect();
        Ok(Tensor { rows: sa.0, cols: sa.1, data })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    /// Add a `1×n` row to every row of an `m×n` tensor.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        let (r, n2) = self.shape(row);
        self.check(r == 1 && n == n2, || format!("add_row {m}x{n} + {r}x{n2}"))?;
        let rv = &self.value(row).data;
        let mut data = self.value(a).data.clone();
        for chunk in data.chunks_mut(n) {
            for (x, y) in chunk.iter_mut().zip(rv) {
                *x += y;
            }
        }
        Ok(self.push(Tensor { rows: m, cols: n, data }, Op::AddRow(a, row), &[a, row]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut t = self.value(a).clone();
        t.data.iter_mut().for_each(|v| *v *= s);
        self.push(t, Op::Scale(a, s), &[a])
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let mut t = self.value(a).clone();
        t.data.iter_mut().for_each(|v| *v = f(*v));
        self.push(t, op, &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, Op::Gelu(a), gelu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut t = self.value(a).clone();
        let n = t.cols;
        for row in t.data.chunks_mut(n) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        self.push(t, Op::SoftmaxRows(a), &[a])
    }

    /// Per-row layer normalization with affine `gamma`, `beta` (`1×n`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let (m, n) = self.shape(x);
        self.check(self.shape(gamma) == (1, n) && self.shape(beta) == (1, n), || {
            format!("layer_norm over {n} columns with gamma {:?}", self.shape(gamma))
        })?;
        let xv = &self.value(x).data;
        let g = &self.value(gamma).data;
        let b = &self.value(beta).data;
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &xv[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + EPS).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                let h = (row[c] - mean) * is;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        Ok(self.push(
            Tensor { rows: m, cols: n, data: out },
            Op::LayerNorm { x, gamma, beta, xhat, inv_std },
            &[x, gamma, beta],
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.shape(a);
        self.check(start + len <= n, || format!("slice_cols {start}+{len} of {n}"))?;
        let src = &self.value(a).data;
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        Ok(self.push(Tensor { rows: m, cols: len, data }, Op::SliceCols(a, start), &[a]))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.shape(a);
        self.check(start + len <= m, || format!("slice_rows {start}+{len} of {m}"))?;
        let data = self.value(a).data[start * n..(start + len) * n].to_vec();
        Ok(self.push(Tensor { rows: len, cols: n, data }, Op::SliceRows(a, start), &[a]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.shape(parts[0]).0;
        self.check(parts.iter().all(|p| self.shape(*p).0 == m), || "concat_cols row mismatch".into())?;
        let n: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        Ok(self.push(Tensor { rows: m, cols: n, data }, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.shape(parts[0]).1;
        self.check(parts.iter().all(|p| self.shape(*p).1 == n), || "concat_rows column mismatch".into())?;
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(&self.value(*p).data);
        }
        let m = data.len() / n.max(1);
        Ok(self.push(Tensor { rows: m, cols: n, data }, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let (m, n) = self.shape(a);
        self.check(m * n == rows * cols, || format!("reshape {m}x{n} to {rows}x{cols}"))?;
        let data = self.value(a).data.clone();
        Ok(self.push(Tensor { rows, cols, data }, Op::Reshape(a), &[a]))
    }

    /// `out.flat[i] = a.flat[index[i]]`, or 0 where `index[i] == GATHER_ZERO`.
    pub fn gather(&mut self, a: Var, index: Vec<usize>, rows: usize, cols: usize) -> Result<Var> {
        self.check(index.len() == rows * cols, || "gather index length".into())?;
        let src = &self.value(a).data;
        let n = src.len();
        self.check(index.iter().all(|&i| i == GATHER_ZERO || i < n), || "gather index out of range".into())?;
        let data = index.iter().map(|&i| if i == GATHER_ZERO { 0.0 } else { src[i] }).collect();
        Ok(self.push(Tensor { rows, cols, data }, Op::Gather(a, index), &[a]))
    }

    /// Bilinear interpolation of a `height·width × d` feature grid (row-major
    /// cells) at `P×2` continuous grid coordinates `(x, y)`, `x` along columns.
    /// Coordinates are clamped to `[0, width−1] × [0, height−1]`.
    pub fn bilinear(&mut self, fmap: Var, pts: Var, height: usize, width: usize) -> Result<Var> {
        let (cells, d) = self.shape(fmap);
        let (p, two) = self.shape(pts);
        self.check(cells == height * width && two == 2, || {
            format!("bilinear over {cells} cells ({height}x{width}) at {p}x{two} points")
        })?;
        let f = &self.value(fmap).data;
        let pv = &self.value(pts).data;
        let mut out = vec![0.0; p * d];
        for i in 0..p {
            let c = BilinearCell::locate(pv[2 * i], pv[2 * i + 1], height, width);
            let o = &mut out[i * d..(i + 1) * d];
            for (w, cell) in c.weights().into_iter().zip(c.cells(width)) {
                if w != 0.0 {
                    for (ov, fv) in o.iter_mut().zip(&f[cell * d..(cell + 1) * d]) {
                        *ov += w * fv;
                    }
                }
            }
        }
        Ok(self.push(
            Tensor { rows: p, cols: d, data: out },
            Op::Bilinear { fmap, pts, height, width },
            &[fmap, pts],
        ))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a), &[a])
    }

    /// `Σ |a − b|` over all entries.
    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        self.check(sa == sb, || format!("l1 {sa:?} vs {sb:?}"))?;
        let s = self.value(a).data.iter().zip(&self.value(b).data).map(|(x, y)| (x - y).abs()).sum();
        Ok(self.push(Tensor::scalar(s), Op::L1(a, b), &[a, b]))
    }

    /// Mean softmax cross-entropy of `B×K` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, k) = self.shape(logits);
        self.check(labels.len() == b && labels.iter().all(|&l| l < k), || "cross_entropy labels".into())?;
        let lv = &self.value(logits).data;
        let mut probs = vec![0.0; b * k];
        let mut loss = 0.0;
        for r in 0..b {
            let row = &lv[r * k..(r + 1) * k];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            for c in 0..k {
                probs[r * k + c] = (row[c] - lse).exp();
            }
            loss += lse - row[labels[r]];
        }
        loss /= b as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, labels: labels.to_vec(), probs },
            &[logits],
        ))
    }

    fn acc(grads: &mut [Option<Tensor>], v: Var, shape: (usize, usize), f: impl FnOnce(&mut [f64])) {
        let g = grads[v.0].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1));
        f(&mut g.data);
    }

    /// Back-propagate from a scalar output (seed gradient 1).
    pub fn backward(&mut self, out: Var) -> Result<()> {
        self.check(self.shape(out) == (1, 1), || "backward needs a scalar output".into())?;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Tensor::scalar(1.0));
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let gd = &g.data;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = self.shape(*b).1;
                if self.needs(*a) {
                    let bv = &self.value(*b).data;
                    Self::acc(grads, *a, (m, k), |ga| gemm_nt(gd, bv, ga, m, n, k));
                }
                if self.needs(*b) {
                    let av = &self.value(*a).data;
                    Self::acc(grads, *b, (k, n), |gb| gemm_tn(av, gd, gb, m, k, n));
                }
            }
            Op::MatMulNT(a, b) => {
                let (m, k) = self.shape(*a);
                let n = self.shape(*b).0;
                if self.needs(*a) {
                    let bv = &self.value(*b).data;
                    Self::acc(grads, *a, (m, k), |ga| gemm_nn(gd, bv, ga, m, n, k));
                }
                if self.needs(*b) {
                    let av = &self.value(*a).data;
                    Self::acc(grads, *b, (n, k), |gb| gemm_tn(gd, av, gb, m, n, k));
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        Self::acc(grads, v, g.shape(), |x| x.iter_mut().zip(gd).for_each(|(x, y)| *x += y));
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    Self::acc(grads, *a, g.shape(), |x| x.iter_mut().zip(gd).for_each(|(x, y)| *x += y));
                }
                if self.needs(*b) {
                    Self::acc(grads, *b, g.shape(), |x| x.iter_mut().zip(gd).for_each(|(x, y)| *x -= y));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.value(*a).data, &self.value(*b).data);
                if self.needs(*a) {
                    Self::acc(grads, *a, g.shape(), |x| {
                        for ((x, gv), bv) in x.iter_mut().zip(gd).zip(bv) {
                            *x += gv * bv;
                        }
                    });
                }
                if self.needs(*b) {
                    Self::acc(grads, *b, g.shape(), |x| {
                        for ((x, gv), av) in x.iter_mut().zip(gd).zip(av) {
                            *x += gv * av;
                        }
                    });
                }
            }
            Op::AddRow(a, row) => {
                if self.needs(*a) {
                    Self::acc(grads, *a, g.shape(), |x| x.iter_mut().zip(gd).for_each(|(x, y)| *x += y));
                }
                if self.needs(*row) {
                    let n = g.cols;
                    Self::acc(grads, *row, (1, n), |x| {
                        for chunk in gd.chunks(n) {
                            x.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                        }
                    });
                }
            }
            Op::Scale(a, s) => {
                Self::acc(grads, *a, g.shape(), |x| x.iter_mut().zip(gd).for_each(|(x, y)| *x += s * y));
            }
            Op::Gelu(a) => {
                let av = &self.value(*a).data;
                Self::acc(grads, *a, g.shape(), |x| {
                    for ((x, gv), v) in x.iter_mut().zip(gd).zip(av) {
                        *x += gv * gelu_grad(*v);
                    }
                });
            }
            Op::Sigmoid(a) => {
                let yv = &node.value.data;
                Self::acc(grads, *a, g.shape(), |x| {
                    for ((x, gv), y) in x.iter_mut().zip(gd).zip(yv) {
                        *x += gv * y * (1.0 - y);
                    }
                });
            }
            Op::Tanh(a) => {
                let yv = &node.value.data;
                Self::acc(grads, *a, g.shape(), |x| {
                    for ((x, gv), y) in x.iter_mut().zip(gd).zip(yv) {
                        *x += gv * (1.0 - y * y);
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let yv = &node.value.data;
                let n = g.cols;
                Self::acc(grads, *a, g.shape(), |x| {
                    for ((xr, gr), yr) in x.chunks_mut(n).zip(gd.chunks(n)).zip(yv.chunks(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((xv, gv), yv) in xr.iter_mut().zip(gr).zip(yr) {
                            *xv += yv * (gv - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let (m, n) = g.shape();
                let gam = &self.value(*gamma).data;
                if self.needs(*gamma) {
                    Self::acc(grads, *gamma, (1, n), |gg| {
                        for r in 0..m {
                            for c in 0..n {
                                gg[c] += gd[r * n + c] * xhat[r * n + c];
                            }
                        }
                    });
                }
                if self.needs(*beta) {
                    Self::acc(grads, *beta, (1, n), |gb| {
                        for r in 0..m {
                            for c in 0..n {
                                gb[c] += gd[r * n + c];
                            }
                        }
                    });
                }
                if self.needs(*x) {
                    Self::acc(grads, *x, (m, n), |gx| {
                        let nf = n as f64;
                        for r in 0..m {
                            let mut s1 = 0.0;
                            let mut s2 = 0.0;
                            for c in 0..n {
                                let dxh = gd[r * n + c] * gam[c];
                                s1 += dxh;
                                s2 += dxh * xhat[r * n + c];
                            }
                            for c in 0..n {
                                let dxh = gd[r * n + c] * gam[c];
                                gx[r * n + c] +=
                                    inv_std[r] * (dxh - s1 / nf - xhat[r * n + c] * s2 / nf);
                            }
                        }
                    });
                }
            }
            Op::SliceCols(a, start) => {
                let (m, n) = self.shape(*a);
                let len = g.cols;
                Self::acc(grads, *a, (m, n), |x| {
                    for r in 0..m {
                        for c in 0..len {
                            x[r * n + start + c] += gd[r * len + c];
                        }
                    }
                });
            }
            Op::SliceRows(a, start) => {
                let shape = self.shape(*a);
                let n = shape.1;
                Self::acc(grads, *a, shape, |x| {
                    x[start * n..start * n + gd.len()].iter_mut().zip(gd).for_each(|(x, y)| *x += y);
                });
            }
            Op::ConcatCols(parts) => {
                let m = g.rows;
                let total = g.cols;
                let mut off = 0;
                for p in parts {
                    let n = self.shape(*p).1;
                    if self.needs(*p) {
                        Self::acc(grads, *p, (m, n), |x| {
                            for r in 0..m {
                                for c in 0..n {
                                    x[r * n + c] += gd[r * total + off + c];
                                }
                            }
                        });
                    }
                    off += n;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let shape = self.shape(*p);
                    let len = shape.0 * shape.1;
                    if self.needs(*p) {
                        Self::acc(grads, *p, shape, |x| {
                            x.iter_mut().zip(&gd[off..off + len]).for_each(|(x, y)| *x += y);
                        });
                    }
                    off += len;
                }
            }
            Op::Reshape(a) => {
                Self::acc(grads, *a, self.shape(*a), |x| x.iter_mut().zip(gd).for_each(|(x, y)| *x += y));
            }
            Op::Gather(a, index) => {
                Self::acc(grads, *a, self.shape(*a), |x| {
                    for (&idx, gv) in index.iter().zip(gd) {
                        if idx != GATHER_ZERO {
                            x[idx] += gv;
                        }
                    }
                });
            }
            Op::Bilinear { fmap, pts, height, width } => {
                let (p, d) = g.shape();
                let pv = &self.value(*pts).data;
                if self.needs(*fmap) {
                    Self::acc(grads, *fmap, self.shape(*fmap), |gf| {
                        for i in 0..p {
                            let c = BilinearCell::locate(pv[2 * i], pv[2 * i + 1], *height, *width);
                            let go = &gd[i * d..(i + 1) * d];
                            for (w, cell) in c.weights().into_iter().zip(c.cells(*width)) {
                                if w != 0.0 {
                                    for (x, gv) in gf[cell * d..(cell + 1) * d].iter_mut().zip(go) {
                                        *x += w * gv;
                                    }
                                }
                            }
                        }
                    });
                }
                if self.needs(*pts) {
                    let f = &self.value(*fmap).data;
                    Self::acc(grads, *pts, (p, 2), |gp| {
                        for i in 0..p {
                            let c = BilinearCell::locate(pv[2 * i], pv[2 * i + 1], *height, *width);
                            let go = &gd[i * d..(i + 1) * d];
                            let [c11, c21, c12, c22] = c.cells(*width);
                            let row = |cell: usize| -> f64 {
                                f[cell * d..(cell + 1) * d].iter().zip(go).map(|(a, b)| a * b).sum()
                            };
                            let (f11, f21, f12, f22) = (row(c11), row(c21), row(c12), row(c22));
                            let (fx, fy) = (c.fx, c.fy);
                            if !c.clamped_x {
                                gp[2 * i] += (1.0 - fy) * (f21 - f11) + fy * (f22 - f12);
                            }
                            if !c.clamped_y {
                                gp[2 * i + 1] += (1.0 - fx) * (f12 - f11) + fx * (f22 - f21);
                            }
                        }
                    });
                }
            }
            Op::SumAll(a) => {
                let s = gd[0];
                Self::acc(grads, *a, self.shape(*a), |x| x.iter_mut().for_each(|x| *x += s));
            }
            Op::L1(a, b) => {
                let s = gd[0];
                let (av, bv) = (&self.value(*a).data, &self.value(*b).data);
                let shape = self.shape(*a);
                let sign = |x: f64, y: f64| {
                    if x > y {
                        1.0
                    } else if x < y {
                        -1.0
                    } else {
                        0.0
                    }
                };
                if self.needs(*a) {
                    Self::acc(grads, *a, shape, |ga| {
                        for ((g, x), y) in ga.iter_mut().zip(av).zip(bv) {
                            *g += s * sign(*x, *y);
                        }
                    });
                }
                if self.needs(*b) {
                    Self::acc(grads, *b, shape, |gb| {
                        for ((g, x), y) in gb.iter_mut().zip(av).zip(bv) {
                            *g -= s * sign(*x, *y);
                        }
                    });
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let (b, k) = self.shape(*logits);
                let s = gd[0] / b as f64;
                Self::acc(grads, *logits, (b, k), |x| {
                    for r in 0..b {
                        for c in 0..k {
                            let y = if labels[r] == c { 1.0 } else { 0.0 };
                            x[r * k + c] += s * (probs[r * k + c] - y);
                        }
                    }
                });
            }
        }
    }

    /// Gradients of every parameter node, summed per parameter id.
    pub fn param_grads(&self, into: &mut Grads) {
        for node in &self.nodes {
            if let (Op::Param(id), Some(g)) = (&node.op, &node.grad) {
                into.accumulate(*id, g);
            }
        }
    }
}

/// The four neighbors and fractional offsets of a bilinear lookup.
///
/// With `(x1, y1)` the lower grid node and `x2 = x1 + 1`, `y2 = y1 + 1`:
/// `f = (x2−x)(y2−y) f11 + (x−x1)(y2−y) f21 + (x2−x)(y−y1) f12 + (x−x1)(y−y1) f22`.
#[derive(Debug, Clone, Copy)]
struct BilinearCell {
    x1: usize,
    y1: usize,
    x2: usize,
    y2: usize,
    fx: f64,
    fy: f64,
    clamped_x: bool,
    clamped_y: bool,
}

impl BilinearCell {
    fn locate(x: f64, y: f64, height: usize, width: usize) -> Self {
        let (x1, x2, fx, clamped_x) = Self::axis(x, width);
        let (y1, y2, fy, clamped_y) = Self::axis(y, height);
        Self { x1, y1, x2, y2, fx, fy, clamped_x, clamped_y }
    }

    fn axis(v: f64, len: usize) -> (usize, usize, f64, bool) {
        let hi = (len - 1) as f64;
        let clamped = !(v > 0.0 && v < hi) && !(len == 1);
        let v = v.clamp(0.0, hi);
        let lo = (v.floor() as usize).min(len.saturating_sub(2));
        let up = (lo + 1).min(len - 1);
        (lo, up, v - lo as f64, clamped || len == 1)
    }

    /// Weights for `[Q11, Q21, Q12, Q22]`.
    fn weights(&self) -> [f64; 4] {
        let (fx, fy) = (self.fx, self.fy);
        [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy]
    }

    fn cells(&self, width: usize) -> [usize; 4] {
        [
            self.y1 * width + self.x1,
            self.y1 * width + self.x2,
            self.y2 * width + self.x1,
            self.y2 * width + self.x2,
        ]
    }
}

pub mod gradcheck {
    //! Central finite-difference gradient checks.
    use super::*;

    /// Relative error with a small absolute floor so tiny gradients compare
    /// by absolute difference. Differences below the round-off of a central
    /// difference at `h = 1e-5` (about 1e-9 here) count as exact.
    pub fn rel_err(a: f64, b: f64) -> f64 {
        let diff = (a - b).abs();
        if diff < 1e-9 {
            return 0.0;
        }
        diff / a.abs().max(b.abs()).max(1e-6)
    }

    /// Compare analytic gradients of `loss(store)` against central
    /// differences at `probes` entries chosen round-robin over parameters.
    /// Returns the worst relative error.
    pub fn check_params(
        store: &mut ParamStore,
        probes: usize,
        loss: impl Fn(&ParamStore, &mut Graph) -> Var,
    ) -> f64 {
        let mut g = Graph::new();
        let out = loss(store, &mut g);
        g.backward(out).unwrap();
        let mut grads = store.zeros_like();
        g.param_grads(&mut grads);
        let ids: Vec<ParamId> = store.ids().collect();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for p in 0..probes {
            let id = ids[p % ids.len()];
            let n = store.get(id).data.len();
            let j = (p / ids.len() * 7919 + p * 31) % n;
            let orig = store.get(id).data[j];
            store.get_mut(id).data[j] = orig + h;
            let mut gp = Graph::new();
            let o = loss(store, &mut gp);
            let lp = gp.value(o).item();
            store.get_mut(id).data[j] = orig - h;
            let mut gm = Graph::new();
            let o = loss(store, &mut gm);
            let lm = gm.value(o).item();
            store.get_mut(id).data[j] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = grads.get(id).data[j];
            let e = rel_err(analytic, numeric);
            assert!(e.is_finite());
            worst = worst.max(e);
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::gradcheck::*;
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rand_tensor(rng: &mut impl Rng, r: usize, c: usize) -> Tensor {
        Tensor::new(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn matmul_values() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let b = g.constant(Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap());
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[19.0, 22.0, 43.0, 50.0]);
        let d = g.matmul_nt(a, b).unwrap();
        assert_eq!(g.value(d).data(), &[17.0, 23.0, 39.0, 53.0]);
        let bad = g.constant(Tensor::zeros(3, 1));
        assert!(matches!(g.matmul(a, bad), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_rows_are_stochastic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new();
        let a = g.constant(rand_tensor(&mut rng, 5, 7));
        let s = g.softmax_rows(a);
        for r in 0..5 {
            let sum: f64 = g.value(s).row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_uniform_is_ln2() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::zeros(4, 2));
        let l = g.cross_entropy(z, &[0, 1, 1, 0]).unwrap();
        assert!((g.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn l1_sum_convention_and_subgradient() {
        let mut g = Graph::new();
        let p = g.constant(Tensor::from_rows(&[vec![0.5, 0.5], vec![0.2, 0.3]]).unwrap());
        let q = g.variable(Tensor::from_rows(&[vec![0.6, 0.3], vec![0.2, 0.3]]).unwrap());
        let l = g.l1(q, p).unwrap();
        assert!((g.value(l).item() - 0.3).abs() < 1e-12);
        g.backward(l).unwrap();
        assert_eq!(g.grad(q).unwrap().data(), &[1.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn elementwise_ops_pass_gradcheck() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let a = store.add("a", rand_tensor(&mut rng, 3, 4));
        let b = store.add("b", rand_tensor(&mut rng, 4, 5));
        let row = store.add("row", rand_tensor(&mut rng, 1, 5));
        let gam = store.add("gamma", rand_tensor(&mut rng, 1, 5));
        let bet = store.add("beta", rand_tensor(&mut rng, 1, 5));
        let target = rand_tensor(&mut rng, 3, 5);
        let worst = check_params(&mut store, 60, |s, g| {
            let (a, b, row, gam, bet) = (g.param(s, a), g.param(s, b), g.param(s, row), g.param(s, gam), g.param(s, bet));
            let x = g.matmul(a, b).unwrap();
            let x = g.add_row(x, row).unwrap();
            let x = g.layer_norm(x, gam, bet).unwrap();
            let y = g.gelu(x);
            let z = g.tanh(y);
            let w = g.sigmoid(x);
            let m = g.mul(z, w).unwrap();
            let sm = g.softmax_rows(m);
            let bt = g.matmul_nt(sm, x).unwrap();
            let bt = g.scale(bt, 0.7);
            let sl = g.slice_cols(bt, 1, 2).unwrap();
            let sr = g.slice_rows(x, 0, 2).unwrap();
            let cc = g.concat_cols(&[sl, sl]).unwrap();
            let cr = g.concat_rows(&[cc, cc]).unwrap();
            let rs = g.reshape(cr, 4, 6).unwrap();
            let t = g.constant(target.clone());
            let l1 = g.l1(m, t).unwrap();
            let s1 = g.sum_all(rs);
            let s2 = g.sum_all(sr);
            let q = g.sub(s1, s2).unwrap();
            let tot = g.add(l1, q).unwrap();
            let ce_in = g.slice_cols(x, 0, 3).unwrap();
            let ce = g.cross_entropy(ce_in, &[0, 2, 1]).unwrap();
            g.add(tot, ce).unwrap()
        });
        assert!(worst < 1e-4, "worst rel err {worst}");
    }

    #[test]
    fn gather_and_bilinear_pass_gradcheck() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let f = store.add("fmap", rand_tensor(&mut rng, 4 * 5, 3));
        let pts = store.add(
            "pts",
            Tensor::new(3, 2, vec![0.3, 0.7, 2.6, 1.2, 3.4, 2.9]).unwrap(),
        );
        let worst = check_params(&mut store, 60, |s, g| {
            let fm = g.param(s, f);
            let p = g.param(s, pts);
            let b = g.bilinear(fm, p, 4, 5).unwrap();
            let idx = vec![0, 4, GATHER_ZERO, 7, 8, 1];
            let gt = g.gather(b, idx, 2, 3).unwrap();
            let sq = g.mul(gt, gt).unwrap();
            let s1 = g.sum_all(sq);
            let c = g.tanh(b);
            let s2 = g.sum_all(c);
            g.add(s1, s2).unwrap()
        });
        assert!(worst < 1e-4, "worst rel err {worst}");
    }

    #[test]
    fn bilinear_reproduces_bilinear_field() {
        let (h, w) = (6, 9);
        let field = |x: f64, y: f64| 0.3 * x - 1.7 * y + 0.25 * x * y + 2.0;
        let mut data = Vec::new();
        for r in 0..h {
            for c in 0..w {
                data.push(field(c as f64, r as f64));
            }
        }
        let mut g = Graph::new();
        let fm = g.constant(Tensor::new(h * w, 1, data).unwrap());
        let pts = vec![0.0, 0.0, 8.0, 5.0, 3.25, 2.75, 7.999, 0.001, 4.0, 3.0];
        let p = g.constant(Tensor::new(5, 2, pts.clone()).unwrap());
        let out = g.bilinear(fm, p, h, w).unwrap();
        for i in 0..5 {
            let e = field(pts[2 * i], pts[2 * i + 1]);
            assert!((g.value(out).get(i, 0) - e).abs() < 1e-12);
        }
    }

    #[test]
    fn param_grads_accumulate_over_reuse() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::filled(1, 2, 3.0));
        let mut g = Graph::new();
        let x = g.param(&store, a);
        let y = g.param(&store, a);
        let s = g.add(x, y).unwrap();
        let out = g.sum_all(s);
        g.backward(out).unwrap();
        let mut grads = store.zeros_like();
        g.param_grads(&mut grads);
        assert_eq!(grads.get(a).data(), &[2.0, 2.0]);
    }
}

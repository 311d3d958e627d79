//! Reverse-mode differentiation over a flat, append-only op record.
//!
//! Every op appends one node holding its forward value. `backward` walks the
//! nodes once in reverse creation order, which is a valid reverse
//! topological order because inputs always precede outputs.

use super::array::{matmul_acc, matmul_at_acc, matmul_bt_acc};
use super::{Array, NumericsError, ParamId, ParamStore};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

const LN_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Affine(usize, f64),
    Gelu(usize),
    Sigmoid(usize),
    Softplus(usize),
    Ln(usize),
    Abs(usize),
    Square(usize),
    Softmax(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    GatherRows(usize, Vec<usize>),
    SliceCols {
        x: usize,
        start: usize,
    },
    Transpose(usize),
    Reshape(usize),
    MaxRows(usize, Vec<usize>),
    Sum(usize),
    Mean(usize),
    MulConst(usize, Vec<f64>),
    CumsumRows(usize),
    Attention {
        q: usize,
        k: usize,
        v: usize,
        heads: usize,
        probs: Vec<f64>,
        drop: Option<Vec<f64>>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Linear { .. } => "linear",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Affine(..) => "affine",
            Op::Gelu(_) => "gelu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softplus(_) => "softplus",
            Op::Ln(_) => "ln",
            Op::Abs(_) => "abs",
            Op::Square(_) => "square",
            Op::Softmax(_) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::ConcatRows(_) => "concat_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::GatherRows(..) => "gather_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::MaxRows(..) => "max_rows",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::MulConst(..) => "mul_const",
            Op::CumsumRows(_) => "cumsum_rows",
            Op::Attention { .. } => "attention",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
    needs_grad: bool,
}

/// Op record for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_nodes: Vec<Option<usize>>,
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    param_nodes: Vec<Option<usize>>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros when `var` was not reached.
    pub fn wrt(&self, var: Var) -> Array {
        let shape = &self.shapes[var.0];
        match &self.grads[var.0] {
            Some(g) => Array::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Array::zeros(shape),
        }
    }

    /// Gradients for every parameter of `store`, in store order. Parameters
    /// never pulled onto the tape, or not reached from the loss, get zeros.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Array> {
        store
            .ids()
            .map(|id| match self.param_nodes.get(id.0).copied().flatten() {
                Some(node) => self.wrt(Var(node)),
                None => Array::zeros(store.get(id).shape()),
            })
            .collect()
    }
}

fn gelu(x: f64) -> (f64, f64) {
    // tanh approximation
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dinner = C * (1.0 + 3.0 * 0.044715 * x * x);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
    (y, dy)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

fn shape_err(msg: String) -> NumericsError {
    NumericsError::Shape(msg)
}

fn dims2(a: &Array) -> Result<(usize, usize), NumericsError> {
    match a.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(shape_err(format!("expected a 2-D array, got {s:?}"))),
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

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Array, op: Op, needs_grad: bool) -> Result<Var, NumericsError> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite(op.name()));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn ng(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    /// Differentiable input that is not a stored parameter.
    pub fn leaf(&mut self, value: Array) -> Result<Var, NumericsError> {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Array) -> Result<Var, NumericsError> {
        self.push(value, Op::Leaf, false)
    }

    /// Pull a parameter onto the tape. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if self.param_nodes.len() <= id.0 {
            self.param_nodes.resize(id.0 + 1, None);
        }
        if let Some(node) = self.param_nodes[id.0] {
            return Var(node);
        }
        let value = store.get(id).clone();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        let node = self.nodes.len() - 1;
        self.param_nodes[id.0] = Some(node);
        Var(node)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (n, k) = dims2(self.value(a))?;
        let (k2, m) = dims2(self.value(b))?;
        if k != k2 {
            return Err(shape_err(format!("matmul [{n},{k}] x [{k2},{m}]")));
        }
        let mut out = vec![0.0; n * m];
        matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, n, k, m);
        let ng = self.ng(&[a.0, b.0]);
        self.push(Array::new(vec![n, m], out)?, Op::MatMul(a.0, b.0), ng)
    }

    /// `x[n,i] · w[i,o] + b[o]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NumericsError> {
        let (n, i) = dims2(self.value(x))?;
        let (i2, o) = dims2(self.value(w))?;
        if i != i2 {
            return Err(shape_err(format!("linear input [{n},{i}] vs weight [{i2},{o}]")));
        }
        let mut out = vec![0.0; n * o];
        if let Some(b) = b {
            let bias = self.value(b).data();
            if bias.len() != o {
                return Err(shape_err(format!("bias of {} for {o} outputs", bias.len())));
            }
            for row in out.chunks_mut(o) {
                row.copy_from_slice(bias);
            }
        }
        matmul_acc(self.value(x).data(), self.value(w).data(), &mut out, n, i, o);
        let mut ids = vec![x.0, w.0];
        ids.extend(b.map(|b| b.0));
        let ng = self.ng(&ids);
        self.push(
            Array::new(vec![n, o], out)?,
            Op::Linear {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
            },
            ng,
        )
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NumericsError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(format!(
                "{}: {:?} vs {:?}",
                op.name(),
                va.shape(),
                vb.shape()
            )));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Array::new(va.shape().to_vec(), data)?;
        let ng = self.ng(&[a.0, b.0]);
        self.push(value, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, |x, y| x / y, Op::Div(a.0, b.0))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var, NumericsError> {
        let value = self.value(a).map(f);
        let ng = self.ng(&[a.0]);
        self.push(value, op, ng)
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var, NumericsError> {
        self.unary(a, |x| scale * x + shift, Op::Affine(a.0, scale))
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Result<Var, NumericsError> {
        self.affine(a, scale, 0.0)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary(a, |x| gelu(x).0, Op::Gelu(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary(a, sigmoid, Op::Sigmoid(a.0))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary(a, softplus, Op::Softplus(a.0))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary(a, f64::ln, Op::Ln(a.0))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary(a, f64::abs, Op::Abs(a.0))
    }

    pub fn square(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary(a, |x| x * x, Op::Square(a.0))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var, NumericsError> {
        let va = self.value(a);
        let cols = va.cols();
        let mut data = va.data().to_vec();
        if cols > 0 {
            for row in data.chunks_mut(cols) {
                softmax_in_place(row);
            }
        }
        let value = Array::new(va.shape().to_vec(), data)?;
        let ng = self.ng(&[a.0]);
        self.push(value, Op::Softmax(a.0), ng)
    }

    /// Layer normalization over the last axis with per-feature gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, NumericsError> {
        let vx = self.value(x);
        let d = vx.cols();
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(shape_err(format!("layer_norm over {d} features")));
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = vx.rows();
        let mut xhat = vec![0.0; vx.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; vx.len()];
        for r in 0..rows {
            let row = vx.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        let value = Array::new(vx.shape().to_vec(), out)?;
        let ng = self.ng(&[x.0, gain.0, bias.0]);
        self.push(
            value,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// Stack 2-D arrays with equal column counts along axis 0.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat of nothing".into()))?;
        let cols = dims2(self.value(*first))?.1;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let (r, c) = dims2(self.value(*p))?;
            if c != cols {
                return Err(shape_err(format!("concat_rows: {c} vs {cols} columns")));
            }
            rows += r;
            data.extend_from_slice(self.value(*p).data());
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let ng = self.ng(&ids);
        self.push(Array::new(vec![rows, cols], data)?, Op::ConcatRows(ids), ng)
    }

    /// Join 2-D arrays with equal row counts along axis 1.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat of nothing".into()))?;
        let rows = dims2(self.value(*first))?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = dims2(self.value(*p))?;
            if r != rows {
                return Err(shape_err(format!("concat_cols: {r} vs {rows} rows")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(*p).data()[r * w..(r + 1) * w]);
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let ng = self.ng(&ids);
        self.push(Array::new(vec![rows, total], data)?, Op::ConcatCols(ids), ng)
    }

    /// Select (and possibly reorder or repeat) rows of a 2-D array.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var, NumericsError> {
        let (r, c) = dims2(self.value(a))?;
        if let Some(&bad) = index.iter().find(|&&i| i >= r) {
            return Err(shape_err(format!("gather row {bad} of {r}")));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let ng = self.ng(&[a.0]);
        self.push(
            Array::new(vec![index.len(), c], data)?,
            Op::GatherRows(a.0, index.to_vec()),
            ng,
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var, NumericsError> {
        let (r, c) = dims2(self.value(a))?;
        if start + width > c {
            return Err(shape_err(format!("slice {start}..{} of {c} columns", start + width)));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(r * width);
        for row in 0..r {
            data.extend_from_slice(&src[row * c + start..row * c + start + width]);
        }
        let ng = self.ng(&[a.0]);
        self.push(
            Array::new(vec![r, width], data)?,
            Op::SliceCols { x: a.0, start },
            ng,
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        let (r, c) = dims2(self.value(a))?;
        let src = self.value(a).data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let ng = self.ng(&[a.0]);
        self.push(Array::new(vec![c, r], data)?, Op::Transpose(a.0), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let value = self.value(a).clone().reshape(shape)?;
        let ng = self.ng(&[a.0]);
        self.push(value, Op::Reshape(a.0), ng)
    }

    /// Column-wise maximum of a 2-D array, shape `[1, cols]`.
    pub fn max_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        let (r, c) = dims2(self.value(a))?;
        if r == 0 {
            return Err(shape_err("max over zero rows".into()));
        }
        let src = self.value(a).data();
        let mut best = src[..c].to_vec();
        let mut arg = vec![0usize; c];
        for i in 1..r {
            for j in 0..c {
                if src[i * c + j] > best[j] {
                    best[j] = src[i * c + j];
                    arg[j] = i;
                }
            }
        }
        let ng = self.ng(&[a.0]);
        self.push(Array::new(vec![1, c], best)?, Op::MaxRows(a.0, arg), ng)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumericsError> {
        let s = self.value(a).sum();
        let ng = self.ng(&[a.0]);
        self.push(Array::scalar(s), Op::Sum(a.0), ng)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NumericsError> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(shape_err("mean of empty array".into()));
        }
        let s = self.value(a).sum() / n as f64;
        let ng = self.ng(&[a.0]);
        self.push(Array::scalar(s), Op::Mean(a.0), ng)
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, a: Var, c: &Array) -> Result<Var, NumericsError> {
        let va = self.value(a);
        if va.shape() != c.shape() {
            return Err(shape_err(format!(
                "mul_const: {:?} vs {:?}",
                va.shape(),
                c.shape()
            )));
        }
        let data = va.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
        let value = Array::new(va.shape().to_vec(), data)?;
        let ng = self.ng(&[a.0]);
        self.push(value, Op::MulConst(a.0, c.data().to_vec()), ng)
    }

    /// Running sum down the rows of a 2-D array.
    pub fn cumsum_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        let (r, c) = dims2(self.value(a))?;
        let mut data = self.value(a).data().to_vec();
        for i in 1..r {
            for j in 0..c {
                data[i * c + j] += data[(i - 1) * c + j];
            }
        }
        let ng = self.ng(&[a.0]);
        self.push(Array::new(vec![r, c], data)?, Op::CumsumRows(a.0), ng)
    }

    /// Scaled dot-product attention with `heads` heads over already projected
    /// `q [nq,d]`, `k [nk,d]`, `v [nk,d]`.
    ///
    /// `mask[i*nk + j] == false` hides key `j` from query `i`; every query
    /// must keep at least one key. `drop` holds per-weight multipliers
    /// (`heads * nq * nk`) applied to the attention weights.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        mask: Option<&[bool]>,
        drop: Option<Vec<f64>>,
    ) -> Result<Var, NumericsError> {
        let (nq, d) = dims2(self.value(q))?;
        let (nk, dk) = dims2(self.value(k))?;
        let (nv, dv) = dims2(self.value(v))?;
        if dk != d || dv != d || nv != nk {
            return Err(shape_err(format!(
                "attention q [{nq},{d}] k [{nk},{dk}] v [{nv},{dv}]"
            )));
        }
        if nk == 0 {
            return Err(NumericsError::EmptyKeys);
        }
        if heads == 0 || d % heads != 0 {
            return Err(shape_err(format!("{d} features over {heads} heads")));
        }
        if let Some(m) = mask {
            if m.len() != nq * nk {
                return Err(shape_err("attention mask size".into()));
            }
            if (0..nq).any(|i| !m[i * nk..(i + 1) * nk].iter().any(|&b| b)) {
                return Err(NumericsError::EmptyKeys);
            }
        }
        if let Some(dr) = &drop {
            if dr.len() != heads * nq * nk {
                return Err(shape_err("attention dropout size".into()));
            }
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; heads * nq * nk];
        let mut out = vec![0.0; nq * d];
        let mut row = vec![0.0; nk];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..nq {
                let qi = &qd[i * d + off..i * d + off + dh];
                for (j, r) in row.iter_mut().enumerate() {
                    let kj = &kd[j * d + off..j * d + off + dh];
                    *r = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                masked_softmax(&mut row, mask.map(|m| &m[i * nk..(i + 1) * nk]));
                let base = (h * nq + i) * nk;
                probs[base..base + nk].copy_from_slice(&row);
                let oi = &mut out[i * d + off..i * d + off + dh];
                for j in 0..nk {
                    let mut p = row[j];
                    if let Some(dr) = &drop {
                        p *= dr[base + j];
                    }
                    if p == 0.0 {
                        continue;
                    }
                    let vj = &vd[j * d + off..j * d + off + dh];
                    for (o, &x) in oi.iter_mut().zip(vj) {
                        *o += p * x;
                    }
                }
            }
        }
        let ng = self.ng(&[q.0, k.0, v.0]);
        self.push(
            Array::new(vec![nq, d], out)?,
            Op::Attention {
                q: q.0,
                k: k.0,
                v: v.0,
                heads,
                probs,
                drop,
            },
            ng,
        )
    }

    /// Attention weights saved by an [`Tape::attention`] node, laid out as
    /// `[heads, nq, nk]`.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        if self.value(loss).len() != 1 {
            return Err(NumericsError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) || !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop(idx, &g, &mut grads);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            param_nodes: self.param_nodes.clone(),
        })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], i: usize) -> Option<&'g mut [f64]> {
        if !self.nodes[i].needs_grad {
            return None;
        }
        let len = self.nodes[i].value.len();
        Some(grads[i].get_or_insert_with(|| vec![0.0; len]).as_mut_slice())
    }

    fn backprop(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let val = |i: usize| self.nodes[i].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = (self.nodes[*a].value.rows(), self.nodes[*a].value.cols());
                let m = self.nodes[*b].value.cols();
                if let Some(ga) = self.acc(grads, *a) {
                    matmul_bt_acc(g, val(*b), ga, n, m, k);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    matmul_at_acc(val(*a), g, gb, n, k, m);
                }
            }
            Op::Linear { x, w, b } => {
                let (n, i) = (self.nodes[*x].value.rows(), self.nodes[*x].value.cols());
                let o = self.nodes[*w].value.cols();
                if let Some(gx) = self.acc(grads, *x) {
                    matmul_bt_acc(g, val(*w), gx, n, o, i);
                }
                if let Some(gw) = self.acc(grads, *w) {
                    matmul_at_acc(val(*x), g, gw, n, i, o);
                }
                if let Some(b) = b {
                    if let Some(gb) = self.acc(grads, *b) {
                        for row in g.chunks(o) {
                            for (acc, v) in gb.iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for t in [*a, *b] {
                    if let Some(gt) = self.acc(grads, t) {
                        add_into(gt, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for (acc, v) in gb.iter_mut().zip(g) {
                        *acc -= v;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).to_vec(), val(*b).to_vec());
                if let Some(ga) = self.acc(grads, *a) {
                    for ((acc, gv), y) in ga.iter_mut().zip(g).zip(&vb) {
                        *acc += gv * y;
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for ((acc, gv), x) in gb.iter_mut().zip(g).zip(&va) {
                        *acc += gv * x;
                    }
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a).to_vec(), val(*b).to_vec());
                if let Some(ga) = self.acc(grads, *a) {
                    for ((acc, gv), y) in ga.iter_mut().zip(g).zip(&vb) {
                        *acc += gv / y;
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for (((acc, gv), x), y) in gb.iter_mut().zip(g).zip(&va).zip(&vb) {
                        *acc -= gv * x / (y * y);
                    }
                }
            }
            Op::Affine(a, s) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for (acc, gv) in ga.iter_mut().zip(g) {
                        *acc += gv * s;
                    }
                }
            }
            Op::Gelu(a) => self.unary_back(idx, *a, g, grads, |x, _| gelu(x).1),
            Op::Sigmoid(a) => self.unary_back(idx, *a, g, grads, |_, y| y * (1.0 - y)),
            Op::Softplus(a) => self.unary_back(idx, *a, g, grads, |x, _| sigmoid(x)),
            Op::Ln(a) => self.unary_back(idx, *a, g, grads, |x, _| 1.0 / x),
            Op::Abs(a) => self.unary_back(idx, *a, g, grads, |x, _| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }),
            Op::Square(a) => self.unary_back(idx, *a, g, grads, |x, _| 2.0 * x),
            Op::Softmax(a) => {
                let y = node.value.data();
                let c = node.value.cols();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((grow, yrow), arow) in g.chunks(c).zip(y.chunks(c)).zip(ga.chunks_mut(c)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((acc, gv), yv) in arow.iter_mut().zip(grow).zip(yrow) {
                            *acc += yv * (gv - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = node.value.cols();
                let gv = val(*gain).to_vec();
                if let Some(gg) = self.acc(grads, *gain) {
                    for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for ((acc, a), b) in gg.iter_mut().zip(grow).zip(hrow) {
                            *acc += a * b;
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *bias) {
                    for grow in g.chunks(d) {
                        add_into(gb, grow);
                    }
                }
                if let Some(gx) = self.acc(grads, *x) {
                    let mut dh = vec![0.0; d];
                    for (r, (grow, hrow)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        for c in 0..d {
                            dh[c] = grow[c] * gv[c];
                        }
                        let mean_dh = dh.iter().sum::<f64>() / d as f64;
                        let mean_dh_h =
                            dh.iter().zip(hrow).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        let out = &mut gx[r * d..(r + 1) * d];
                        for c in 0..d {
                            out[c] += inv_std[r] * (dh[c] - mean_dh - hrow[c] * mean_dh_h);
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.nodes[p].value.len();
                    if let Some(gp) = self.acc(grads, p) {
                        add_into(gp, &g[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut col = 0;
                for &p in parts {
                    let w = self.nodes[p].value.cols();
                    if let Some(gp) = self.acc(grads, p) {
                        for r in 0..rows {
                            add_into(
                                &mut gp[r * w..(r + 1) * w],
                                &g[r * total + col..r * total + col + w],
                            );
                        }
                    }
                    col += w;
                }
            }
            Op::GatherRows(a, index) => {
                let c = node.value.cols();
                if let Some(ga) = self.acc(grads, *a) {
                    for (r, &i) in index.iter().enumerate() {
                        add_into(&mut ga[i * c..(i + 1) * c], &g[r * c..(r + 1) * c]);
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let w = node.value.cols();
                let c = self.nodes[*x].value.cols();
                if let Some(gx) = self.acc(grads, *x) {
                    for (r, grow) in g.chunks(w).enumerate() {
                        add_into(&mut gx[r * c + start..r * c + start + w], grow);
                    }
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (self.nodes[*a].value.rows(), self.nodes[*a].value.cols());
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, g);
                }
            }
            Op::MaxRows(a, arg) => {
                let c = node.value.cols();
                if let Some(ga) = self.acc(grads, *a) {
                    for (j, &i) in arg.iter().enumerate() {
                        ga[i * c + j] += g[j];
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for acc in ga.iter_mut() {
                        *acc += g[0];
                    }
                }
            }
            Op::Mean(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    let s = g[0] / ga.len() as f64;
                    for acc in ga.iter_mut() {
                        *acc += s;
                    }
                }
            }
            Op::MulConst(a, c) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for ((acc, gv), cv) in ga.iter_mut().zip(g).zip(c) {
                        *acc += gv * cv;
                    }
                }
            }
            Op::CumsumRows(a) => {
                let (r, c) = (node.value.rows(), node.value.cols());
                if let Some(ga) = self.acc(grads, *a) {
                    let mut running = vec![0.0; c];
                    for i in (0..r).rev() {
                        for j in 0..c {
                            running[j] += g[i * c + j];
                            ga[i * c + j] += running[j];
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
                drop,
            } => self.attention_back(g, grads, (*q, *k, *v), *heads, probs, drop.as_deref()),
        }
    }

    fn unary_back(
        &self,
        out: usize,
        a: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        deriv: impl Fn(f64, f64) -> f64,
    ) {
        let x = self.nodes[a].value.data();
        let y = self.nodes[out].value.data();
        if let Some(ga) = self.acc(grads, a) {
            for i in 0..ga.len() {
                ga[i] += g[i] * deriv(x[i], y[i]);
            }
        }
    }

    fn attention_back(
        &self,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        (q, k, v): (usize, usize, usize),
        heads: usize,
        probs: &[f64],
        drop: Option<&[f64]>,
    ) {
        let (nq, d) = (self.nodes[q].value.rows(), self.nodes[q].value.cols());
        let nk = self.nodes[k].value.rows();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let qd = self.nodes[q].value.data();
        let kd = self.nodes[k].value.data();
        let vd = self.nodes[v].value.data();
        let mut gq = vec![0.0; nq * d];
        let mut gk = vec![0.0; nk * d];
        let mut gv = vec![0.0; nk * d];
        let mut dp = vec![0.0; nk];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..nq {
                let base = (h * nq + i) * nk;
                let p = &probs[base..base + nk];
                let gi = &g[i * d + off..i * d + off + dh];
                for j in 0..nk {
                    let f = drop.map_or(1.0, |dr| dr[base + j]);
                    let pj = p[j] * f;
                    let vj = &vd[j * d + off..j * d + off + dh];
                    if pj != 0.0 {
                        for (acc, gx) in gv[j * d + off..j * d + off + dh].iter_mut().zip(gi) {
                            *acc += pj * gx;
                        }
                    }
                    dp[j] = gi.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>() * f;
                }
                let dot: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                for j in 0..nk {
                    let ds = p[j] * (dp[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for c in 0..dh {
                        gq[i * d + off + c] += ds * kd[j * d + off + c];
                        gk[j * d + off + c] += ds * qd[i * d + off + c];
                    }
                }
            }
        }
        for (t, src) in [(q, gq), (k, gk), (v, gv)] {
            if let Some(acc) = self.acc(grads, t) {
                add_into(acc, &src);
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    masked_softmax(row, None);
}

fn masked_softmax(row: &mut [f64], mask: Option<&[bool]>) {
    let allowed = |j: usize| mask.is_none_or(|m| m[j]);
    let max = row
        .iter()
        .enumerate()
        .filter(|(j, _)| allowed(*j))
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (j, v) in row.iter_mut().enumerate() {
        if allowed(j) {
            *v = (*v - max).exp();
            total += *v;
        } else {
            *v = 0.0;
        }
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

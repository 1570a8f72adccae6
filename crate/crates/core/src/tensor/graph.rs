//! Tape-based reverse-mode autodiff.
//!
//! A [`Graph`] records every operation in execution order, so the node list is
//! already a topological order and `backward` walks it in reverse. Nodes hold
//! their forward values; parameters enter the graph once through
//! [`Graph::param`] and their gradients are flushed back into the owning
//! [`ParamStore`] with [`Graph::accumulate_param_grads`].
//!
//! Row-wise operations (softmax, layer norm, ...) treat the last dimension as
//! the feature axis and everything before it as rows.

use std::collections::HashMap;

use super::kernels::{dot, matmul_acc, matmul_nt_acc, matmul_tn_acc, softmax_row};
use super::loss::{ctc_loss, label_smoothed_nll_value};
use super::{ParamId, ParamStore, RngStream, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(usize, usize),
    MatMulNT(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    MulConst(usize, Vec<f64>),
    Gelu(usize),
    Silu(usize),
    Sigmoid(usize),
    Glu(usize),
    Softmax(usize),
    LogSoftmax(usize),
    LayerNorm { x: usize, gain: usize, bias: usize, xhat: Vec<f64>, rstd: Vec<f64> },
    Embedding { weight: usize, ids: Vec<usize> },
    Conv1d(Box<ConvOp>),
    SliceCols { x: usize, start: usize },
    ConcatCols(Vec<usize>),
    SliceRows { x: usize, start: usize },
    ConcatRows(Vec<usize>),
    Transpose(usize),
    Reshape(usize),
    GatherRows { x: usize, idx: Vec<usize> },
    ReplaceRows { x: usize, fill: usize, rows: Vec<bool> },
    L2NormRows { x: usize, norms: Vec<f64> },
    RowSum(usize),
    Sum(usize),
    Mean(usize),
    Attention(Box<AttnOp>),
    /// Scalar loss whose local gradient w.r.t. `input` was computed in the forward pass.
    FusedLoss { input: usize, local_grad: Vec<f64> },
}

#[derive(Debug)]
struct ConvOp {
    x: usize,
    w: usize,
    b: Option<usize>,
    stride: usize,
    pad: usize,
    groups: usize,
    t_in: usize,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    t_out: usize,
}

#[derive(Debug)]
struct AttnOp {
    q: usize,
    k: usize,
    v: usize,
    heads: usize,
    tq: usize,
    tk: usize,
    d: usize,
    scale: f64,
    probs: Vec<f64>,
}

pub struct Graph {
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<f64>>,
    grads: Vec<Option<Vec<f64>>>,
    ops: Vec<Op>,
    needs: Vec<bool>,
    param_vars: HashMap<ParamId, Var>,
    grad_enabled: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    let c = *shape.last().unwrap_or(&1);
    let n: usize = shape.iter().product();
    if c == 0 {
        (0, 0)
    } else {
        (n / c, c)
    }
}

fn gbuf(grads: &mut [Option<Vec<f64>>], j: usize, n: usize) -> &mut Vec<f64> {
    grads[j].get_or_insert_with(|| vec![0.0; n])
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            shapes: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            ops: Vec::new(),
            needs: Vec::new(),
            param_vars: HashMap::new(),
            grad_enabled: true,
        }
    }

    /// A graph that never records gradients (inference).
    pub fn no_grad() -> Self {
        let mut g = Self::new();
        g.grad_enabled = false;
        g
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, needs: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.shapes.push(shape);
        self.values.push(data);
        self.grads.push(None);
        self.ops.push(op);
        self.needs.push(needs && self.grad_enabled);
        Var(self.ops.len() - 1)
    }

    fn any_needs(&self, inputs: &[usize]) -> bool {
        inputs.iter().any(|&i| self.needs[i])
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.shapes[v.0]
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.values[v.0]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.values[v.0][0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shapes[v.0].clone(), self.values[v.0].clone()).expect("node shape")
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        match self.shapes[v.0][..] {
            [r, c] => Ok((r, c)),
            ref s => Err(Error::Shape(format!("expected 2-D node, got {s:?}"))),
        }
    }

    // ---- leaves -------------------------------------------------------------

    /// Inserts a tensor; gradients are tracked iff `t.requires_grad()`.
    pub fn input(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!("constant {:?} with {} values", shape, data.len())));
        }
        Ok(self.push(shape, data, Op::Leaf, false))
    }

    /// The graph node for a stored parameter (one node per parameter per graph).
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let t = store.tensor(id);
        let v = self.push(t.shape().to_vec(), t.data().to_vec(), Op::Param, t.requires_grad());
        self.param_vars.insert(id, v);
        v
    }

    /// Adds gradients of every parameter node into `store`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) -> Result<()> {
        let mut pairs: Vec<_> = self.param_vars.iter().collect();
        pairs.sort_by_key(|(id, _)| **id);
        for (&id, &v) in pairs {
            if let Some(g) = &self.grads[v.0] {
                store.tensor_mut(id).accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    // ---- linear algebra -----------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a)?;
        let (k2, n) = self.dims2(b)?;
        if k != k2 {
            return Err(Error::Shape(format!("matmul [{m},{k}] x [{k2},{n}]")));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(&self.values[a.0], &self.values[b.0], &mut out, m, k, n);
        let needs = self.any_needs(&[a.0, b.0]);
        Ok(self.push(vec![m, n], out, Op::MatMul(a.0, b.0), needs))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a)?;
        let (n, k2) = self.dims2(b)?;
        if k != k2 {
            return Err(Error::Shape(format!("matmul_nt [{m},{k}] x [{n},{k2}]ᵀ")));
        }
        let mut out = vec![0.0; m * n];
        matmul_nt_acc(&self.values[a.0], &self.values[b.0], &mut out, m, k, n);
        let needs = self.any_needs(&[a.0, b.0]);
        Ok(self.push(vec![m, n], out, Op::MatMulNT(a.0, b.0), needs))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2(a)?;
        let x = &self.values[a.0];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        let needs = self.needs[a.0];
        Ok(self.push(vec![c, r], out, Op::Transpose(a.0), needs))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.values[a.0].len() {
            return Err(Error::Shape(format!("reshape {:?} -> {:?}", self.shapes[a.0], shape)));
        }
        let data = self.values[a.0].clone();
        let needs = self.needs[a.0];
        Ok(self.push(shape, data, Op::Reshape(a.0), needs))
    }

    // ---- elementwise --------------------------------------------------------

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shapes[a.0] != self.shapes[b.0] {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shapes[a.0], self.shapes[b.0]
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.values[a.0].iter().zip(&self.values[b.0]).map(|(x, y)| x + y).collect();
        let needs = self.any_needs(&[a.0, b.0]);
        Ok(self.push(self.shapes[a.0].clone(), out, Op::Add(a.0, b.0), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.values[a.0].iter().zip(&self.values[b.0]).map(|(x, y)| x * y).collect();
        let needs = self.any_needs(&[a.0, b.0]);
        Ok(self.push(self.shapes[a.0].clone(), out, Op::Mul(a.0, b.0), needs))
    }

    /// Adds a bias vector to every row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = rows_cols(&self.shapes[a.0]);
        if self.values[bias.0].len() != c {
            return Err(Error::Shape(format!(
                "add_row: bias {:?} for rows of width {c}",
                self.shapes[bias.0]
            )));
        }
        let x = &self.values[a.0];
        let b = &self.values[bias.0];
        let mut out = x.clone();
        for i in 0..r {
            out[i * c..(i + 1) * c].iter_mut().zip(b).for_each(|(o, v)| *o += v);
        }
        let needs = self.any_needs(&[a.0, bias.0]);
        Ok(self.push(self.shapes[a.0].clone(), out, Op::AddRow(a.0, bias.0), needs))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.values[a.0].iter().map(|x| x * s).collect();
        let needs = self.needs[a.0];
        self.push(self.shapes[a.0].clone(), out, Op::Scale(a.0, s), needs)
    }

    /// Adds a constant (non-differentiable) tensor of the same shape.
    pub fn add_const(&mut self, a: Var, c: &[f64]) -> Result<Var> {
        if c.len() != self.values[a.0].len() {
            return Err(Error::Shape("add_const length".into()));
        }
        let out = self.values[a.0].iter().zip(c).map(|(x, y)| x + y).collect();
        let needs = self.needs[a.0];
        Ok(self.push(self.shapes[a.0].clone(), out, Op::AddConst(a.0), needs))
    }

    /// Multiplies by a constant (non-differentiable) tensor of the same shape.
    pub fn mul_const(&mut self, a: Var, c: Vec<f64>) -> Result<Var> {
        if c.len() != self.values[a.0].len() {
            return Err(Error::Shape("mul_const length".into()));
        }
        let out = self.values[a.0].iter().zip(&c).map(|(x, y)| x * y).collect();
        let needs = self.needs[a.0];
        Ok(self.push(self.shapes[a.0].clone(), out, Op::MulConst(a.0, c), needs))
    }

    /// Inverted dropout; identity when `p == 0` or `rng` is `None` (eval mode).
    pub fn dropout(&mut self, a: Var, p: f64, rng: Option<&mut RngStream>) -> Result<Var> {
        let rng = match rng {
            Some(r) if p > 0.0 => r,
            _ => return Ok(a),
        };
        if p >= 1.0 {
            let n = self.values[a.0].len();
            return self.mul_const(a, vec![0.0; n]);
        }
        let keep = 1.0 / (1.0 - p);
        let mask = (0..self.values[a.0].len())
            .map(|_| if rng.bernoulli(p) { 0.0 } else { keep })
            .collect();
        self.mul_const(a, mask)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.values[a.0].iter().map(|&x| f(x)).collect();
        let needs = self.needs[a.0];
        self.push(self.shapes[a.0].clone(), out, op, needs)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, |x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()), Op::Gelu(a.0))
    }

    /// Swish / SiLU: `x · σ(x)`.
    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * sigmoid(x), Op::Silu(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a.0))
    }

    /// Gated linear unit over the last dimension: `x[:, :h] · σ(x[:, h:])`.
    pub fn glu(&mut self, a: Var) -> Result<Var> {
        let (r, c) = rows_cols(&self.shapes[a.0]);
        if c % 2 != 0 {
            return Err(Error::Shape(format!("glu needs an even last dim, got {c}")));
        }
        let h = c / 2;
        let x = &self.values[a.0];
        let mut out = vec![0.0; r * h];
        for i in 0..r {
            for j in 0..h {
                out[i * h + j] = x[i * c + j] * sigmoid(x[i * c + h + j]);
            }
        }
        let mut shape = self.shapes[a.0].clone();
        *shape.last_mut().unwrap() = h;
        let needs = self.needs[a.0];
        Ok(self.push(shape, out, Op::Glu(a.0), needs))
    }

    // ---- row-wise -----------------------------------------------------------

    pub fn softmax(&mut self, a: Var) -> Var {
        let (r, c) = rows_cols(&self.shapes[a.0]);
        let x = &self.values[a.0];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            softmax_row(&x[i * c..(i + 1) * c], &mut out[i * c..(i + 1) * c]);
        }
        let needs = self.needs[a.0];
        self.push(self.shapes[a.0].clone(), out, Op::Softmax(a.0), needs)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let (r, c) = rows_cols(&self.shapes[a.0]);
        let x = &self.values[a.0];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let lse = super::kernels::log_sum_exp(row);
            out[i * c..(i + 1) * c].iter_mut().zip(row).for_each(|(o, v)| *o = v - lse);
        }
        let needs = self.needs[a.0];
        self.push(self.shapes[a.0].clone(), out, Op::LogSoftmax(a.0), needs)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (r, c) = rows_cols(&self.shapes[x.0]);
        if self.values[gain.0].len() != c || self.values[bias.0].len() != c {
            return Err(Error::Shape(format!("layer_norm affine size for width {c}")));
        }
        let xv = &self.values[x.0];
        let g = &self.values[gain.0];
        let b = &self.values[bias.0];
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let needs = self.any_needs(&[x.0, gain.0, bias.0]);
        Ok(self.push(
            self.shapes[x.0].clone(),
            out,
            Op::LayerNorm { x: x.0, gain: gain.0, bias: bias.0, xhat, rstd },
            needs,
        ))
    }

    /// Rows scaled to unit L2 norm (norm floored at 1e-8).
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let (r, c) = rows_cols(&self.shapes[a.0]);
        let x = &self.values[a.0];
        let mut out = vec![0.0; r * c];
        let mut norms = vec![0.0; r];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let n = dot(row, row).sqrt().max(1e-8);
            norms[i] = n;
            out[i * c..(i + 1) * c].iter_mut().zip(row).for_each(|(o, v)| *o = v / n);
        }
        let needs = self.needs[a.0];
        self.push(self.shapes[a.0].clone(), out, Op::L2NormRows { x: a.0, norms }, needs)
    }

    /// Sum over the last dimension.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let (r, c) = rows_cols(&self.shapes[a.0]);
        let x = &self.values[a.0];
        let out = (0..r).map(|i| x[i * c..(i + 1) * c].iter().sum()).collect();
        let mut shape = self.shapes[a.0].clone();
        shape.pop();
        let needs = self.needs[a.0];
        self.push(shape, out, Op::RowSum(a.0), needs)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.values[a.0].iter().sum();
        let needs = self.needs[a.0];
        self.push(vec![], vec![s], Op::Sum(a.0), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.values[a.0].len().max(1) as f64;
        let s = self.values[a.0].iter().sum::<f64>() / n;
        let needs = self.needs[a.0];
        self.push(vec![], vec![s], Op::Mean(a.0), needs)
    }

    // ---- indexing -----------------------------------------------------------

    pub fn embedding(&mut self, weight: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims2(weight)?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Shape(format!("embedding id {bad} out of range {v}")));
        }
        let w = &self.values[weight.0];
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&w[i * d..(i + 1) * d]);
        }
        let needs = self.needs[weight.0];
        Ok(self.push(vec![ids.len(), d], out, Op::Embedding { weight: weight.0, ids: ids.to_vec() }, needs))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2(a)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::Shape(format!("gather row {bad} of {r}")));
        }
        let x = &self.values[a.0];
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&x[i * c..(i + 1) * c]);
        }
        let needs = self.needs[a.0];
        Ok(self.push(vec![idx.len(), c], out, Op::GatherRows { x: a.0, idx: idx.to_vec() }, needs))
    }

    /// Rows flagged in `rows` are replaced by the vector `fill`.
    pub fn replace_rows(&mut self, a: Var, fill: Var, rows: &[bool]) -> Result<Var> {
        let (r, c) = self.dims2(a)?;
        if rows.len() != r || self.values[fill.0].len() != c {
            return Err(Error::Shape("replace_rows sizes".into()));
        }
        let mut out = self.values[a.0].clone();
        let f = &self.values[fill.0];
        for (i, &m) in rows.iter().enumerate() {
            if m {
                out[i * c..(i + 1) * c].copy_from_slice(f);
            }
        }
        let needs = self.any_needs(&[a.0, fill.0]);
        Ok(self.push(vec![r, c], out, Op::ReplaceRows { x: a.0, fill: fill.0, rows: rows.to_vec() }, needs))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2(a)?;
        if start + len > c {
            return Err(Error::Shape(format!("slice_cols {start}+{len} of {c}")));
        }
        let x = &self.values[a.0];
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&x[i * c + start..i * c + start + len]);
        }
        let needs = self.needs[a.0];
        Ok(self.push(vec![r, len], out, Op::SliceCols { x: a.0, start }, needs))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2(a)?;
        if start + len > r {
            return Err(Error::Shape(format!("slice_rows {start}+{len} of {r}")));
        }
        let out = self.values[a.0][start * c..(start + len) * c].to_vec();
        let needs = self.needs[a.0];
        Ok(self.push(vec![len, c], out, Op::SliceRows { x: a.0, start }, needs))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.dims2(parts[0])?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.dims2(p)?;
            if pr != r {
                return Err(Error::Shape("concat_cols row mismatch".into()));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; r * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let x = &self.values[p.0];
            for i in 0..r {
                out[i * total + off..i * total + off + w].copy_from_slice(&x[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let needs = self.any_needs(&idx);
        Ok(self.push(vec![r, total], out, Op::ConcatCols(idx), needs))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = self.dims2(parts[0])?.1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (pr, pc) = self.dims2(p)?;
            if pc != c {
                return Err(Error::Shape("concat_rows width mismatch".into()));
            }
            rows += pr;
            out.extend_from_slice(&self.values[p.0]);
        }
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let needs = self.any_needs(&idx);
        Ok(self.push(vec![rows, c], out, Op::ConcatRows(idx), needs))
    }

    // ---- convolution & attention --------------------------------------------

    /// 1-D convolution over time. `x`: [T, C_in], `w`: [C_out, C_in/groups, K],
    /// `b`: [C_out]. Output: [floor((T + 2·pad − K)/stride) + 1, C_out].
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Var> {
        let (t_in, c_in) = self.dims2(x)?;
        let (c_out, cin_g, kernel) = match self.shapes[w.0][..] {
            [a, b, c] => (a, b, c),
            ref s => return Err(Error::Shape(format!("conv weight must be 3-D, got {s:?}"))),
        };
        if groups == 0 || c_in % groups != 0 || c_out % groups != 0 || cin_g != c_in / groups {
            return Err(Error::Shape(format!(
                "conv1d channels: in {c_in}, out {c_out}, weight in/group {cin_g}, groups {groups}"
            )));
        }
        if let Some(b) = b {
            if self.values[b.0].len() != c_out {
                return Err(Error::Shape("conv1d bias size".into()));
            }
        }
        if stride == 0 || t_in + 2 * pad < kernel {
            return Err(Error::Shape(format!(
                "conv1d input length {t_in} (pad {pad}) shorter than kernel {kernel}"
            )));
        }
        let t_out = (t_in + 2 * pad - kernel) / stride + 1;
        let xv = &self.values[x.0];
        let wv = &self.values[w.0];
        let cout_g = c_out / groups;
        let mut out = vec![0.0; t_out * c_out];
        for t in 0..t_out {
            for co in 0..c_out {
                let g = co / cout_g;
                let mut s = b.map_or(0.0, |b| self.values[b.0][co]);
                for k in 0..kernel {
                    let src = (t * stride + k) as isize - pad as isize;
                    if src < 0 || src as usize >= t_in {
                        continue;
                    }
                    let xrow = &xv[src as usize * c_in + g * cin_g..src as usize * c_in + (g + 1) * cin_g];
                    let wbase = co * cin_g * kernel;
                    for (cl, &xval) in xrow.iter().enumerate() {
                        s += wv[wbase + cl * kernel + k] * xval;
                    }
                }
                out[t * c_out + co] = s;
            }
        }
        let mut inputs = vec![x.0, w.0];
        if let Some(b) = b {
            inputs.push(b.0);
        }
        let needs = self.any_needs(&inputs);
        let op = ConvOp {
            x: x.0,
            w: w.0,
            b: b.map(|v| v.0),
            stride,
            pad,
            groups,
            t_in,
            c_in,
            c_out,
            kernel,
            t_out,
        };
        Ok(self.push(vec![t_out, c_out], out, Op::Conv1d(Box::new(op)), needs))
    }

    /// Multi-head scaled dot-product attention on projected inputs.
    /// `q`: [Tq, d], `k`, `v`: [Tk, d]. With `causal`, query `i` sees keys `≤ i`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Result<Var> {
        let (tq, d) = self.dims2(q)?;
        let (tk, dk) = self.dims2(k)?;
        let (tv, dv) = self.dims2(v)?;
        if dk != d || dv != d || tv != tk || heads == 0 || d % heads != 0 {
            return Err(Error::Shape(format!(
                "attention q [{tq},{d}] k [{tk},{dk}] v [{tv},{dv}] heads {heads}"
            )));
        }
        if causal && tq != tk {
            return Err(Error::Shape("causal attention needs equal lengths".into()));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let qv = &self.values[q.0];
        let kv = &self.values[k.0];
        let vv = &self.values[v.0];
        let mut probs = vec![0.0; heads * tq * tk];
        let mut out = vec![0.0; tq * d];
        let mut scores = vec![0.0; tk];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..tq {
                let qi = &qv[i * d + off..i * d + off + dh];
                let lim = if causal { i + 1 } else { tk };
                for j in 0..lim {
                    scores[j] = scale * dot(qi, &kv[j * d + off..j * d + off + dh]);
                }
                let p = &mut probs[(h * tq + i) * tk..(h * tq + i + 1) * tk];
                softmax_row(&scores[..lim], &mut p[..lim]);
                let orow = &mut out[i * d + off..i * d + off + dh];
                for j in 0..lim {
                    let pj = p[j];
                    let vj = &vv[j * d + off..j * d + off + dh];
                    orow.iter_mut().zip(vj).for_each(|(o, x)| *o += pj * x);
                }
            }
        }
        let needs = self.any_needs(&[q.0, k.0, v.0]);
        let op = AttnOp { q: q.0, k: k.0, v: v.0, heads, tq, tk, d, scale, probs };
        Ok(self.push(vec![tq, d], out, Op::Attention(Box::new(op)), needs))
    }

    // ---- losses -------------------------------------------------------------

    /// Label-smoothed negative log-likelihood.
    ///
    /// `logits` is [.., V]; `targets` has one id per row. Rows whose target
    /// equals `pad_id` are ignored. The summed loss is divided by
    /// `normalizer`, or by the number of non-pad rows when `None`.
    pub fn label_smoothed_nll(
        &mut self,
        logits: Var,
        targets: &[usize],
        smoothing: f64,
        pad_id: usize,
        normalizer: Option<f64>,
    ) -> Result<Var> {
        let (r, v) = rows_cols(&self.shapes[logits.0]);
        let shape = self.shapes[logits.0].clone();
        let (loss, grad) = label_smoothed_nll_value(
            &self.values[logits.0],
            &shape,
            r,
            v,
            targets,
            smoothing,
            pad_id,
            normalizer,
        )?;
        let needs = self.needs[logits.0];
        Ok(self.push(vec![], vec![loss], Op::FusedLoss { input: logits.0, local_grad: grad }, needs))
    }

    /// CTC negative log-likelihood of `target` under per-frame log-probabilities
    /// `log_probs` [T, V]. Returns the loss node and whether any alignment exists;
    /// infeasible instances evaluate to `+inf` with zero gradient.
    pub fn ctc_loss(&mut self, log_probs: Var, target: &[usize], blank: usize) -> Result<(Var, bool)> {
        let lp = self.to_tensor(log_probs);
        let res = ctc_loss(&lp, target, blank)?;
        let needs = self.needs[log_probs.0];
        let v = self.push(
            vec![],
            vec![res.loss],
            Op::FusedLoss { input: log_probs.0, local_grad: res.grad },
            needs,
        );
        Ok((v, res.feasible))
    }

    // ---- backward -----------------------------------------------------------

    /// Backpropagates from a scalar node, accumulating (+=) into node gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.values[loss.0].len() != 1 {
            return Err(Error::Contract(format!(
                "backward from non-scalar node of shape {:?}",
                self.shapes[loss.0]
            )));
        }
        // Intermediate gradients restart from zero; leaves and parameters accumulate.
        for (g, op) in self.grads.iter_mut().zip(&self.ops) {
            if !matches!(op, Op::Leaf | Op::Param) {
                *g = None;
            }
        }
        gbuf(&mut self.grads, loss.0, 1)[0] += 1.0;
        for i in (0..=loss.0).rev() {
            if !self.needs[i] {
                continue;
            }
            let g = match self.grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) {
        let values = &self.values;
        let shapes = &self.shapes;
        let needs = &self.needs;
        let grads = &mut self.grads;
        let len = |j: usize| values[j].len();
        match &self.ops[i] {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = (shapes[*a][0], shapes[*a][1]);
                let n = shapes[*b][1];
                if needs[*a] {
                    let ga = gbuf(grads, *a, m * k);
                    matmul_nt_acc(g, &values[*b], ga, m, n, k);
                }
                if needs[*b] {
                    let gb = gbuf(grads, *b, k * n);
                    matmul_tn_acc(&values[*a], g, gb, m, k, n);
                }
            }
            Op::MatMulNT(a, b) => {
                let (m, k) = (shapes[*a][0], shapes[*a][1]);
                let n = shapes[*b][0];
                if needs[*a] {
                    let ga = gbuf(grads, *a, m * k);
                    matmul_acc(g, &values[*b], ga, m, n, k);
                }
                if needs[*b] {
                    let gb = gbuf(grads, *b, n * k);
                    matmul_tn_acc(g, &values[*a], gb, m, n, k);
                }
            }
            Op::Add(a, b) => {
                for &j in [a, b] {
                    if needs[j] {
                        gbuf(grads, j, g.len()).iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::AddRow(a, b) => {
                let c = values[*b].len();
                if needs[*a] {
                    gbuf(grads, *a, g.len()).iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if needs[*b] {
                    let gb = gbuf(grads, *b, c);
                    for row in g.chunks(c) {
                        gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Mul(a, b) => {
                if needs[*a] {
                    let gb = &values[*b];
                    gbuf(grads, *a, g.len())
                        .iter_mut()
                        .zip(g.iter().zip(gb))
                        .for_each(|(x, (gg, bv))| *x += gg * bv);
                }
                if needs[*b] {
                    let ga = &values[*a];
                    gbuf(grads, *b, g.len())
                        .iter_mut()
                        .zip(g.iter().zip(ga))
                        .for_each(|(x, (gg, av))| *x += gg * av);
                }
            }
            Op::Scale(a, s) => {
                gbuf(grads, *a, g.len()).iter_mut().zip(g).for_each(|(x, y)| *x += s * y);
            }
            Op::AddConst(a) | Op::Reshape(a) => {
                gbuf(grads, *a, g.len()).iter_mut().zip(g).for_each(|(x, y)| *x += y);
            }
            Op::MulConst(a, c) => {
                gbuf(grads, *a, g.len())
                    .iter_mut()
                    .zip(g.iter().zip(c))
                    .for_each(|(x, (gg, cv))| *x += gg * cv);
            }
            Op::Gelu(a) => {
                let xs = &values[*a];
                gbuf(grads, *a, g.len()).iter_mut().zip(g.iter().zip(xs)).for_each(|(d, (gg, &x))| {
                    let u = GELU_C * (x + GELU_A * x * x * x);
                    let th = u.tanh();
                    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                    *d += gg * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du);
                });
            }
            Op::Silu(a) => {
                let xs = &values[*a];
                gbuf(grads, *a, g.len()).iter_mut().zip(g.iter().zip(xs)).for_each(|(d, (gg, &x))| {
                    let s = sigmoid(x);
                    *d += gg * (s + x * s * (1.0 - s));
                });
            }
            Op::Sigmoid(a) => {
                let ys = &values[i];
                gbuf(grads, *a, g.len())
                    .iter_mut()
                    .zip(g.iter().zip(ys))
                    .for_each(|(d, (gg, &y))| *d += gg * y * (1.0 - y));
            }
            Op::Glu(a) => {
                let (r, c) = rows_cols(&shapes[*a]);
                let h = c / 2;
                let xs = &values[*a];
                let ga = gbuf(grads, *a, r * c);
                for row in 0..r {
                    for j in 0..h {
                        let x1 = xs[row * c + j];
                        let s = sigmoid(xs[row * c + h + j]);
                        let gg = g[row * h + j];
                        ga[row * c + j] += gg * s;
                        ga[row * c + h + j] += gg * x1 * s * (1.0 - s);
                    }
                }
            }
            Op::Softmax(a) => {
                let (r, c) = rows_cols(&shapes[*a]);
                let ys = &values[i];
                let ga = gbuf(grads, *a, r * c);
                for row in 0..r {
                    let y = &ys[row * c..(row + 1) * c];
                    let gy = &g[row * c..(row + 1) * c];
                    let s = dot(y, gy);
                    for j in 0..c {
                        ga[row * c + j] += y[j] * (gy[j] - s);
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let (r, c) = rows_cols(&shapes[*a]);
                let ys = &values[i];
                let ga = gbuf(grads, *a, r * c);
                for row in 0..r {
                    let gy = &g[row * c..(row + 1) * c];
                    let s: f64 = gy.iter().sum();
                    for j in 0..c {
                        ga[row * c + j] += gy[j] - ys[row * c + j].exp() * s;
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let (r, c) = rows_cols(&shapes[*x]);
                let gv = &values[*gain];
                if needs[*gain] {
                    let gg = gbuf(grads, *gain, c);
                    for row in 0..r {
                        for j in 0..c {
                            gg[j] += g[row * c + j] * xhat[row * c + j];
                        }
                    }
                }
                if needs[*bias] {
                    let gb = gbuf(grads, *bias, c);
                    for row in g.chunks(c) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                }
                if needs[*x] {
                    let gx = gbuf(grads, *x, r * c);
                    let mut dxhat = vec![0.0; c];
                    for row in 0..r {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..c {
                            let d = g[row * c + j] * gv[j];
                            dxhat[j] = d;
                            s1 += d;
                            s2 += d * xhat[row * c + j];
                        }
                        let k = rstd[row] / c as f64;
                        for j in 0..c {
                            gx[row * c + j] +=
                                k * (c as f64 * dxhat[j] - s1 - xhat[row * c + j] * s2);
                        }
                    }
                }
            }
            Op::Embedding { weight, ids } => {
                let d = shapes[*weight][1];
                let gw = gbuf(grads, *weight, len(*weight));
                for (r, &id) in ids.iter().enumerate() {
                    gw[id * d..(id + 1) * d]
                        .iter_mut()
                        .zip(&g[r * d..(r + 1) * d])
                        .for_each(|(a, b)| *a += b);
                }
            }
            Op::GatherRows { x, idx } => {
                let c = shapes[*x][1];
                let gx = gbuf(grads, *x, len(*x));
                for (r, &src) in idx.iter().enumerate() {
                    gx[src * c..(src + 1) * c]
                        .iter_mut()
                        .zip(&g[r * c..(r + 1) * c])
                        .for_each(|(a, b)| *a += b);
                }
            }
            Op::ReplaceRows { x, fill, rows } => {
                let c = shapes[*x][1];
                if needs[*x] {
                    let gx = gbuf(grads, *x, len(*x));
                    for (r, &m) in rows.iter().enumerate() {
                        if !m {
                            gx[r * c..(r + 1) * c]
                                .iter_mut()
                                .zip(&g[r * c..(r + 1) * c])
                                .for_each(|(a, b)| *a += b);
                        }
                    }
                }
                if needs[*fill] {
                    let gf = gbuf(grads, *fill, c);
                    for (r, &m) in rows.iter().enumerate() {
                        if m {
                            gf.iter_mut().zip(&g[r * c..(r + 1) * c]).for_each(|(a, b)| *a += b);
                        }
                    }
                }
            }
            Op::L2NormRows { x, norms } => {
                let (r, c) = rows_cols(&shapes[*x]);
                let ys = &values[i];
                let gx = gbuf(grads, *x, r * c);
                for row in 0..r {
                    let y = &ys[row * c..(row + 1) * c];
                    let gy = &g[row * c..(row + 1) * c];
                    let n = norms[row];
                    let yd = if n > 1e-8 { dot(y, gy) } else { 0.0 };
                    for j in 0..c {
                        gx[row * c + j] += (gy[j] - y[j] * yd) / n;
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let (r, c) = (shapes[*x][0], shapes[*x][1]);
                let w = shapes[i][1];
                let gx = gbuf(grads, *x, r * c);
                for row in 0..r {
                    gx[row * c + start..row * c + start + w]
                        .iter_mut()
                        .zip(&g[row * w..(row + 1) * w])
                        .for_each(|(a, b)| *a += b);
                }
            }
            Op::SliceRows { x, start } => {
                let c = shapes[*x][1];
                let gx = gbuf(grads, *x, len(*x));
                gx[start * c..start * c + g.len()].iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            Op::ConcatCols(parts) => {
                let r = shapes[i][0];
                let total = shapes[i][1];
                let mut off = 0;
                for &p in parts {
                    let w = shapes[p][1];
                    if needs[p] {
                        let gp = gbuf(grads, p, r * w);
                        for row in 0..r {
                            gp[row * w..(row + 1) * w]
                                .iter_mut()
                                .zip(&g[row * total + off..row * total + off + w])
                                .for_each(|(a, b)| *a += b);
                        }
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = values[p].len();
                    if needs[p] {
                        gbuf(grads, p, n).iter_mut().zip(&g[off..off + n]).for_each(|(a, b)| *a += b);
                    }
                    off += n;
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (shapes[*a][0], shapes[*a][1]);
                let ga = gbuf(grads, *a, r * c);
                for row in 0..r {
                    for j in 0..c {
                        ga[row * c + j] += g[j * r + row];
                    }
                }
            }
            Op::RowSum(a) => {
                let (r, c) = rows_cols(&shapes[*a]);
                let ga = gbuf(grads, *a, r * c);
                for row in 0..r {
                    ga[row * c..(row + 1) * c].iter_mut().for_each(|x| *x += g[row]);
                }
            }
            Op::Sum(a) => {
                gbuf(grads, *a, len(*a)).iter_mut().for_each(|x| *x += g[0]);
            }
            Op::Mean(a) => {
                let n = len(*a).max(1) as f64;
                gbuf(grads, *a, len(*a)).iter_mut().for_each(|x| *x += g[0] / n);
            }
            Op::FusedLoss { input, local_grad } => {
                let s = g[0];
                gbuf(grads, *input, local_grad.len())
                    .iter_mut()
                    .zip(local_grad)
                    .for_each(|(a, b)| *a += s * b);
            }
            Op::Conv1d(op) => backprop_conv(op, g, values, needs, grads),
            Op::Attention(op) => backprop_attention(op, g, values, needs, grads),
        }
    }
}

fn backprop_conv(
    op: &ConvOp,
    g: &[f64],
    values: &[Vec<f64>],
    needs: &[bool],
    grads: &mut [Option<Vec<f64>>],
) {
    let cin_g = op.c_in / op.groups;
    let cout_g = op.c_out / op.groups;
    if let Some(b) = op.b {
        if needs[b] {
            let gb = gbuf(grads, b, op.c_out);
            for row in g.chunks(op.c_out) {
                gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
            }
        }
    }
    let xv = &values[op.x];
    let wv = &values[op.w];
    let in_range = |t: usize, k: usize| {
        let src = (t * op.stride + k) as isize - op.pad as isize;
        (src >= 0 && (src as usize) < op.t_in).then_some(src as usize)
    };
    if needs[op.w] {
        let gw = gbuf(grads, op.w, op.c_out * cin_g * op.kernel);
        for t in 0..op.t_out {
            for co in 0..op.c_out {
                let gg = g[t * op.c_out + co];
                if gg == 0.0 {
                    continue;
                }
                let grp = co / cout_g;
                for k in 0..op.kernel {
                    if let Some(src) = in_range(t, k) {
                        let base = src * op.c_in + grp * cin_g;
                        for cl in 0..cin_g {
                            gw[co * cin_g * op.kernel + cl * op.kernel + k] += gg * xv[base + cl];
                        }
                    }
                }
            }
        }
    }
    if needs[op.x] {
        let gx = gbuf(grads, op.x, op.t_in * op.c_in);
        for t in 0..op.t_out {
            for co in 0..op.c_out {
                let gg = g[t * op.c_out + co];
                if gg == 0.0 {
                    continue;
                }
                let grp = co / cout_g;
                for k in 0..op.kernel {
                    if let Some(src) = in_range(t, k) {
                        let base = src * op.c_in + grp * cin_g;
                        for cl in 0..cin_g {
                            gx[base + cl] += gg * wv[co * cin_g * op.kernel + cl * op.kernel + k];
                        }
                    }
                }
            }
        }
    }
}

fn backprop_attention(
    op: &AttnOp,
    g: &[f64],
    values: &[Vec<f64>],
    needs: &[bool],
    grads: &mut [Option<Vec<f64>>],
) {
    let (tq, tk, d, heads) = (op.tq, op.tk, op.d, op.heads);
    let dh = d / heads;
    let qv = &values[op.q];
    let kv = &values[op.k];
    let vv = &values[op.v];
    let mut dq = vec![0.0; tq * d];
    let mut dk = vec![0.0; tk * d];
    let mut dv = vec![0.0; tk * d];
    let mut dp = vec![0.0; tk];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..tq {
            let p = &op.probs[(h * tq + i) * tk..(h * tq + i + 1) * tk];
            let go = &g[i * d + off..i * d + off + dh];
            let mut s = 0.0;
            for j in 0..tk {
                if p[j] == 0.0 {
                    dp[j] = 0.0;
                    continue;
                }
                dp[j] = dot(go, &vv[j * d + off..j * d + off + dh]);
                s += p[j] * dp[j];
                dv[j * d + off..j * d + off + dh]
                    .iter_mut()
                    .zip(go)
                    .for_each(|(a, b)| *a += p[j] * b);
            }
            for j in 0..tk {
                if p[j] == 0.0 {
                    continue;
                }
                let ds = p[j] * (dp[j] - s) * op.scale;
                for c in 0..dh {
                    dq[i * d + off + c] += ds * kv[j * d + off + c];
                    dk[j * d + off + c] += ds * qv[i * d + off + c];
                }
            }
        }
    }
    for (idx, buf) in [(op.q, dq), (op.k, dk), (op.v, dv)] {
        if needs[idx] {
            gbuf(grads, idx, buf.len()).iter_mut().zip(&buf).for_each(|(a, b)| *a += b);
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap().with_requires_grad(true)
    }

    #[test]
    fn backward_accumulates_across_calls() {
        let mut g = Graph::new();
        let x = g.input(&t(&[2], &[1.0, 2.0]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[4.0, 8.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.input(&t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn softmax_rows_normalized() {
        let mut g = Graph::no_grad();
        let x = g.constant(vec![2, 3], vec![1.0, 2.0, 3.0, -50.0, 0.0, 50.0]).unwrap();
        let y = g.softmax(x);
        for row in g.value(y).chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_standardizes() {
        let mut g = Graph::no_grad();
        let x = g.constant(vec![2, 4], vec![1.0, 2.0, 3.0, 10.0, -4.0, 0.5, 0.25, 8.0]).unwrap();
        let gain = g.constant(vec![4], vec![1.0; 4]).unwrap();
        let bias = g.constant(vec![4], vec![0.0; 4]).unwrap();
        let y = g.layer_norm(x, gain, bias, 0.0).unwrap();
        for row in g.value(y).chunks(4) {
            let m = row.iter().sum::<f64>() / 4.0;
            let v = row.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-10);
            assert!((v - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn causal_attention_ignores_future() {
        let mut g = Graph::no_grad();
        let q = g.constant(vec![3, 2], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let k1 = g.constant(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let k2 = g.constant(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, -9.0, 7.0]).unwrap();
        let a = g.attention(q, k1, k1, 1, true).unwrap();
        let b = g.attention(q, k2, k2, 1, true).unwrap();
        assert_eq!(&g.value(a)[..4], &g.value(b)[..4]);
        assert_ne!(&g.value(a)[4..], &g.value(b)[4..]);
    }

    #[test]
    fn conv_output_length() {
        let mut g = Graph::no_grad();
        let x = g.constant(vec![10, 2], vec![1.0; 20]).unwrap();
        let w = g.constant(vec![3, 2, 3], vec![0.5; 18]).unwrap();
        let y = g.conv1d(x, w, None, 2, 0, 1).unwrap();
        assert_eq!(g.shape(y), &[4, 3]);
        assert!((g.value(y)[0] - 3.0).abs() < 1e-12);
        let short = g.constant(vec![2, 2], vec![1.0; 4]).unwrap();
        assert!(g.conv1d(short, w, None, 2, 0, 1).is_err());
    }
}

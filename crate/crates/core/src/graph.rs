//! Reverse-mode automatic differentiation on a dynamically recorded tape.
//!
//! A [`Graph`] owns an append-only arena of nodes: each builder method
//! evaluates its result eagerly, records the operation, and returns a
//! [`Var`] handle. [`Graph::backward`] walks the tape once in reverse and
//! accumulates gradients for every node that (transitively) feeds from a
//! trainable leaf. Parents always precede children in the arena, so the
//! reverse walk is a valid topological order by construction.
//!
//! Every forward operation checks its output for NaN/∞ and fails with
//! [`CoreError::NonFinite`] instead of propagating poison; `backward`
//! applies the same check to the accumulated gradients.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use core::sync::atomic::{AtomicU64, Ordering};

use crate::error::{CoreError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Epsilon inside the layer-norm variance square root.
pub const LAYER_NORM_EPS: f64 = 1e-6;

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node of one specific [`Graph`]. Using it with any other
/// graph is an error, not undefined behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    graph: u64,
    node: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddScalar(usize),
    MulScalar(usize, f64),
    Matmul(usize, usize),
    MatmulNT(usize, usize),
    AddRow { x: usize, row: usize },
    Softmax { x: usize, axis: usize },
    Sigmoid(usize),
    Tanh(usize),
    Gelu(usize),
    Softplus(usize),
    PowScalar { x: usize, p: f64 },
    LayerNorm { x: usize },
    MeanAxis { x: usize, axis: usize },
    SumAll(usize),
    Concat { xs: Vec<usize>, axis: usize },
    Reshape { x: usize },
    Gather { x: usize, idx: Vec<usize> },
    BilinearUp2x { x: usize },
    AvgPool { x: usize, f: usize },
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::AddScalar(..) => "add_scalar",
        Op::MulScalar(..) => "mul_scalar",
        Op::Matmul(..) => "matmul",
        Op::MatmulNT(..) => "matmul_nt",
        Op::AddRow { .. } => "add_row",
        Op::Softmax { .. } => "softmax",
        Op::Sigmoid(..) => "sigmoid",
        Op::Tanh(..) => "tanh",
        Op::Gelu(..) => "gelu",
        Op::Softplus(..) => "softplus",
        Op::PowScalar { .. } => "pow_scalar",
        Op::LayerNorm { .. } => "layer_norm",
        Op::MeanAxis { .. } => "mean_axis",
        Op::SumAll(..) => "sum_all",
        Op::Concat { .. } => "concat",
        Op::Reshape { .. } => "reshape",
        Op::Gather { .. } => "gather",
        Op::BilinearUp2x { .. } => "bilinear_up2x",
        Op::AvgPool { .. } => "avg_pool",
    }
}

/// Four (source flat index, weight) taps of one output pixel of the
/// 2x bilinear upsampling (half-pixel centers, edges clamped).
fn up2x_taps(h: usize, w: usize, oi: usize, oj: usize) -> [(usize, f64); 4] {
    let tap = |o: usize, n: usize| -> (usize, usize, f64) {
        let s = (o as f64 + 0.5) * 0.5 - 0.5;
        let f = libm::floor(s);
        let t = s - f; // weight of the upper neighbor
        let lo = if f < 0.0 { 0 } else { f as usize };
        let hi = if f + 1.0 > (n - 1) as f64 { n - 1 } else { (f + 1.0) as usize };
        (lo.min(n - 1), hi, t)
    };
    let (y0, y1, ty) = tap(oi, h);
    let (x0, x1, tx) = tap(oj, w);
    [
        (y0 * w + x0, (1.0 - ty) * (1.0 - tx)),
        (y0 * w + x1, (1.0 - ty) * tx),
        (y1 * w + x0, ty * (1.0 - tx)),
        (y1 * w + x1, ty * tx),
    ]
}

/// Tape of eagerly evaluated operations; see the module docs.
#[derive(Debug)]
pub struct Graph {
    id: u64,
    ops: Vec<Op>,
    values: Vec<Tensor>,
    needs: Vec<bool>,
    grads: Vec<Option<Tensor>>,
    /// (parameter index, leaf node) for every trainable parameter leaf.
    param_nodes: Vec<(usize, usize)>,
    /// parameter index -> existing leaf, so each parameter appears once.
    param_cache: alloc::collections::BTreeMap<usize, Var>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Graph {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            ops: Vec::new(),
            values: Vec::new(),
            needs: Vec::new(),
            grads: Vec::new(),
            param_nodes: Vec::new(),
            param_cache: alloc::collections::BTreeMap::new(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.ops.len()
    }

    fn check(&self, v: Var, op: &'static str) -> Result<usize> {
        if v.graph != self.id {
            return Err(CoreError::GraphMismatch { op });
        }
        Ok(v.node)
    }

    fn push(&mut self, op: Op, value: Tensor, needs: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(CoreError::NonFinite { op: op_name(&op) });
        }
        self.ops.push(op);
        self.values.push(value);
        self.needs.push(needs);
        self.grads.push(None);
        Ok(Var { graph: self.id, node: self.ops.len() - 1 })
    }

    /// Constant leaf; gradients never flow into it.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(Op::Leaf, value, false)
    }

    /// Leaf that participates in differentiation (used by gradient
    /// checking and tests; model parameters go through [`Graph::param`]).
    pub fn leaf_grad(&mut self, value: Tensor) -> Result<Var> {
        self.push(Op::Leaf, value, true)
    }

    /// Leaf for a named parameter. The leaf is created on first use and
    /// cached, so a parameter referenced twice contributes one node and
    /// one (accumulated) gradient. Frozen parameters produce constant
    /// leaves.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.param_cache.get(&id.index()) {
            return Ok(v);
        }
        let trainable = store.is_trainable(id);
        let v = self.push(Op::Leaf, store.value(id).clone(), trainable)?;
        if trainable {
            self.param_nodes.push((id.index(), v.node));
        }
        self.param_cache.insert(id.index(), v);
        Ok(v)
    }

    /// Value of a node. Panics if the handle belongs to another graph
    /// (builders return errors; reads treat misuse as a bug).
    pub fn val(&self, v: Var) -> &Tensor {
        assert_eq!(v.graph, self.id, "Var used with a different graph");
        &self.values[v.node]
    }

    /// Gradient accumulated by the last `backward` call, if any.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        assert_eq!(v.graph, self.id, "Var used with a different graph");
        self.grads[v.node].as_ref()
    }

    /// Moves out `(parameter index, gradient)` pairs of all trainable
    /// parameter leaves that received a gradient.
    pub fn take_param_grads(&mut self) -> Vec<(usize, Tensor)> {
        let mut out = Vec::new();
        for &(pidx, node) in &self.param_nodes {
            if let Some(g) = self.grads[node].take() {
                out.push((pidx, g));
            }
        }
        out
    }

    fn needs_of(&self, nodes: &[usize]) -> bool {
        nodes.iter().any(|&n| self.needs[n])
    }

    fn binary_same_shape(&mut self, a: Var, b: Var, op: &'static str) -> Result<(usize, usize)> {
        let an = self.check(a, op)?;
        let bn = self.check(b, op)?;
        if self.values[an].shape() != self.values[bn].shape() {
            return Err(CoreError::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", self.values[an].shape(), self.values[bn].shape()),
            });
        }
        Ok((an, bn))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (an, bn) = self.binary_same_shape(a, b, "add")?;
        let mut v = self.values[an].clone();
        v.add_scaled(&self.values[bn], 1.0)?;
        let needs = self.needs_of(&[an, bn]);
        self.push(Op::Add(an, bn), v, needs)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (an, bn) = self.binary_same_shape(a, b, "sub")?;
        let mut v = self.values[an].clone();
        v.add_scaled(&self.values[bn], -1.0)?;
        let needs = self.needs_of(&[an, bn]);
        self.push(Op::Sub(an, bn), v, needs)
    }

    /// Elementwise (Hadamard) product; shapes must match exactly.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (an, bn) = self.binary_same_shape(a, b, "mul")?;
        let data = self.values[an]
            .data()
            .iter()
            .zip(self.values[bn].data())
            .map(|(x, y)| x * y)
            .collect();
        let v = Tensor::new(self.values[an].shape(), data)?;
        let needs = self.needs_of(&[an, bn]);
        self.push(Op::Mul(an, bn), v, needs)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let an = self.check(a, "add_scalar")?;
        let data = self.values[an].data().iter().map(|x| x + s).collect();
        let v = Tensor::new(self.values[an].shape(), data)?;
        let needs = self.needs[an];
        self.push(Op::AddScalar(an), v, needs)
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let an = self.check(a, "mul_scalar")?;
        let data = self.values[an].data().iter().map(|x| x * s).collect();
        let v = Tensor::new(self.values[an].shape(), data)?;
        let needs = self.needs[an];
        self.push(Op::MulScalar(an, s), v, needs)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let an = self.check(a, "matmul")?;
        let bn = self.check(b, "matmul")?;
        let v = self.values[an].matmul(&self.values[bn])?;
        let needs = self.needs_of(&[an, bn]);
        self.push(Op::Matmul(an, bn), v, needs)
    }

    /// `a · bᵀ` — the attention-score shape without materialized transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let an = self.check(a, "matmul_nt")?;
        let bn = self.check(b, "matmul_nt")?;
        let v = self.values[an].matmul_nt(&self.values[bn])?;
        let needs = self.needs_of(&[an, bn]);
        self.push(Op::MatmulNT(an, bn), v, needs)
    }

    /// Broadcasts a length-`n` row (shape `[n]` or `[1, n]`) over every
    /// row of `[m, n]`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let xn = self.check(x, "add_row")?;
        let rn = self.check(row, "add_row")?;
        let xv = &self.values[xn];
        let rv = &self.values[rn];
        if xv.rank() != 2 || rv.len() != xv.cols() {
            return Err(CoreError::ShapeMismatch {
                op: "add_row",
                detail: format!("{:?} vs {:?}", xv.shape(), rv.shape()),
            });
        }
        let (m, n) = (xv.rows(), xv.cols());
        let mut data = xv.data().to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += rv.data()[j];
            }
        }
        let v = Tensor::new(&[m, n], data)?;
        let needs = self.needs_of(&[xn, rn]);
        self.push(Op::AddRow { x: xn, row: rn }, v, needs)
    }

    /// Softmax over lanes of `axis` (rank-2 input, axis 0 or 1),
    /// computed with per-lane max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xn = self.check(x, "softmax")?;
        let xv = &self.values[xn];
        if xv.rank() != 2 || axis > 1 {
            return Err(CoreError::InvalidArgument {
                op: "softmax",
                detail: format!("rank-2 input with axis 0 or 1 required, got {:?} axis {axis}", xv.shape()),
            });
        }
        let (m, n) = (xv.rows(), xv.cols());
        let mut out = vec![0.0; m * n];
        let (lanes, lane_len, stride, base) = if axis == 1 { (m, n, 1, n) } else { (n, m, n, 1) };
        for lane in 0..lanes {
            let start = lane * base;
            let mut mx = f64::NEG_INFINITY;
            for k in 0..lane_len {
                mx = mx.max(xv.data()[start + k * stride]);
            }
            let mut z = 0.0;
            for k in 0..lane_len {
                let e = libm::exp(xv.data()[start + k * stride] - mx);
                out[start + k * stride] = e;
                z += e;
            }
            for k in 0..lane_len {
                out[start + k * stride] /= z;
            }
        }
        let v = Tensor::new(&[m, n], out)?;
        let needs = self.needs[xn];
        self.push(Op::Softmax { x: xn, axis }, v, needs)
    }

    fn unary<F: Fn(f64) -> f64>(&mut self, x: Var, f: F, op: Op, name: &'static str) -> Result<Var> {
        let xn = self.check(x, name)?;
        let data = self.values[xn].data().iter().map(|&v| f(v)).collect();
        let v = Tensor::new(self.values[xn].shape(), data)?;
        let needs = self.needs[xn];
        self.push(op, v, needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let xn = self.check(x, "sigmoid")?;
        self.unary(x, sigmoid, Op::Sigmoid(xn), "sigmoid")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let xn = self.check(x, "tanh")?;
        self.unary(x, libm::tanh, Op::Tanh(xn), "tanh")
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let xn = self.check(x, "gelu")?;
        self.unary(x, gelu, Op::Gelu(xn), "gelu")
    }

    /// Numerically stable `ln(1 + eˣ)`.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        let xn = self.check(x, "softplus")?;
        self.unary(x, softplus, Op::Softplus(xn), "softplus")
    }

    /// Elementwise `x^p`. For non-integer `p` the base must be
    /// non-negative (a NaN result fails the finiteness check).
    pub fn pow_scalar(&mut self, x: Var, p: f64) -> Result<Var> {
        let xn = self.check(x, "pow_scalar")?;
        self.unary(x, |v| libm::pow(v, p), Op::PowScalar { x: xn, p }, "pow_scalar")
    }

    /// Layer normalization over the last axis, no affine part,
    /// epsilon [`LAYER_NORM_EPS`].
    pub fn layer_norm(&mut self, x: Var) -> Result<Var> {
        let xn = self.check(x, "layer_norm")?;
        let xv = &self.values[xn];
        if xv.rank() < 1 {
            return Err(CoreError::InvalidArgument { op: "layer_norm", detail: format!("{:?}", xv.shape()) });
        }
        let lane = *xv.shape().last().unwrap();
        let lanes = xv.len() / lane;
        let mut out = vec![0.0; xv.len()];
        for l in 0..lanes {
            let s = &xv.data()[l * lane..(l + 1) * lane];
            let mean = s.iter().sum::<f64>() / lane as f64;
            let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / lane as f64;
            let inv = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
            for k in 0..lane {
                out[l * lane + k] = (s[k] - mean) * inv;
            }
        }
        let v = Tensor::new(xv.shape(), out)?;
        let needs = self.needs[xn];
        self.push(Op::LayerNorm { x: xn }, v, needs)
    }

    /// Mean over one axis of a rank-2 tensor; the reduced axis is kept
    /// with extent 1.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xn = self.check(x, "mean_axis")?;
        let xv = &self.values[xn];
        if xv.rank() != 2 || axis > 1 {
            return Err(CoreError::InvalidArgument {
                op: "mean_axis",
                detail: format!("rank-2 input with axis 0 or 1 required, got {:?} axis {axis}", xv.shape()),
            });
        }
        let (m, n) = (xv.rows(), xv.cols());
        let v = if axis == 0 {
            let mut out = vec![0.0; n];
            for i in 0..m {
                for j in 0..n {
                    out[j] += xv.data()[i * n + j];
                }
            }
            for o in out.iter_mut() {
                *o /= m as f64;
            }
            Tensor::new(&[1, n], out)?
        } else {
            let mut out = vec![0.0; m];
            for i in 0..m {
                out[i] = xv.data()[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64;
            }
            Tensor::new(&[m, 1], out)?
        };
        let needs = self.needs[xn];
        self.push(Op::MeanAxis { x: xn, axis }, v, needs)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let xn = self.check(x, "sum_all")?;
        let v = Tensor::scalar(self.values[xn].data().iter().sum());
        let needs = self.needs[xn];
        self.push(Op::SumAll(xn), v, needs)
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.val(x).len();
        let s = self.sum_all(x)?;
        self.mul_scalar(s, 1.0 / n as f64)
    }

    /// Concatenation of rank-2 tensors along axis 0 or 1.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(CoreError::InvalidArgument { op: "concat", detail: "no inputs".into() });
        }
        let mut nodes = Vec::with_capacity(xs.len());
        for &x in xs {
            nodes.push(self.check(x, "concat")?);
        }
        let first = &self.values[nodes[0]];
        if first.rank() != 2 || axis > 1 {
            return Err(CoreError::InvalidArgument {
                op: "concat",
                detail: format!("rank-2 inputs with axis 0 or 1 required, got {:?} axis {axis}", first.shape()),
            });
        }
        let keep = 1 - axis;
        let keep_dim = first.shape()[keep];
        let mut cat_dim = 0;
        for &n in &nodes {
            let s = self.values[n].shape();
            if s.len() != 2 || s[keep] != keep_dim {
                return Err(CoreError::ShapeMismatch {
                    op: "concat",
                    detail: format!("{:?} vs {:?} on axis {axis}", first.shape(), s),
                });
            }
            cat_dim += s[axis];
        }
        let (m, n) = if axis == 0 { (cat_dim, keep_dim) } else { (keep_dim, cat_dim) };
        let mut out = vec![0.0; m * n];
        if axis == 0 {
            let mut row = 0;
            for &nd in &nodes {
                let v = &self.values[nd];
                out[row * n..row * n + v.len()].copy_from_slice(v.data());
                row += v.rows();
            }
        } else {
            let mut col = 0;
            for &nd in &nodes {
                let v = &self.values[nd];
                let vc = v.cols();
                for i in 0..m {
                    out[i * n + col..i * n + col + vc].copy_from_slice(&v.data()[i * vc..(i + 1) * vc]);
                }
                col += vc;
            }
        }
        let v = Tensor::new(&[m, n], out)?;
        let needs = self.needs_of(&nodes);
        self.push(Op::Concat { xs: nodes, axis }, v, needs)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xn = self.check(x, "reshape")?;
        let v = self.values[xn].reshaped(shape)?;
        let needs = self.needs[xn];
        self.push(Op::Reshape { x: xn }, v, needs)
    }

    /// `out.flat[i] = x.flat[idx[i]]`; drives all data-movement patterns
    /// (row selection, permutations, block extraction). Indices may
    /// repeat; gradients scatter-add back.
    pub fn gather(&mut self, x: Var, idx: Vec<usize>, out_shape: &[usize]) -> Result<Var> {
        let xn = self.check(x, "gather")?;
        let xv = &self.values[xn];
        let n: usize = out_shape.iter().product();
        if n != idx.len() {
            return Err(CoreError::ShapeMismatch {
                op: "gather",
                detail: format!("{} indices vs output shape {:?}", idx.len(), out_shape),
            });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= xv.len()) {
            return Err(CoreError::InvalidArgument {
                op: "gather",
                detail: format!("index {bad} out of range for {} elements", xv.len()),
            });
        }
        let data = idx.iter().map(|&i| xv.data()[i]).collect();
        let v = Tensor::new(out_shape, data)?;
        let needs = self.needs[xn];
        self.push(Op::Gather { x: xn, idx }, v, needs)
    }

    /// Contiguous row slice `[start, start+len)` of a rank-2 tensor.
    pub fn rows_range(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xn = self.check(x, "rows_range")?;
        let xv = &self.values[xn];
        if xv.rank() != 2 || start + len > xv.rows() || len == 0 {
            return Err(CoreError::InvalidArgument {
                op: "rows_range",
                detail: format!("rows {start}..{} of {:?}", start + len, xv.shape()),
            });
        }
        let cols = xv.cols();
        let idx = (start * cols..(start + len) * cols).collect();
        self.gather(x, idx, &[len, cols])
    }

    /// Single row `i` as `[1, n]`.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        self.rows_range(x, i, 1)
    }

    /// 2x bilinear upsampling of a rank-2 map (half-pixel centers,
    /// edge clamp): `[h, w] -> [2h, 2w]`.
    pub fn bilinear_up2x(&mut self, x: Var) -> Result<Var> {
        let xn = self.check(x, "bilinear_up2x")?;
        let xv = &self.values[xn];
        if xv.rank() != 2 {
            return Err(CoreError::InvalidArgument { op: "bilinear_up2x", detail: format!("{:?}", xv.shape()) });
        }
        let (h, w) = (xv.rows(), xv.cols());
        let mut out = vec![0.0; 4 * h * w];
        for oi in 0..2 * h {
            for oj in 0..2 * w {
                let mut acc = 0.0;
                for (src, wt) in up2x_taps(h, w, oi, oj) {
                    acc += wt * xv.data()[src];
                }
                out[oi * 2 * w + oj] = acc;
            }
        }
        let v = Tensor::new(&[2 * h, 2 * w], out)?;
        let needs = self.needs[xn];
        self.push(Op::BilinearUp2x { x: xn }, v, needs)
    }

    /// Average pooling with an `f`-by-`f` window and stride `f`;
    /// `f` must divide both dimensions.
    pub fn avg_pool(&mut self, x: Var, f: usize) -> Result<Var> {
        let xn = self.check(x, "avg_pool")?;
        let xv = &self.values[xn];
        if xv.rank() != 2 || f == 0 || xv.rows() % f != 0 || xv.cols() % f != 0 {
            return Err(CoreError::InvalidArgument {
                op: "avg_pool",
                detail: format!("window {f} on {:?}", xv.shape()),
            });
        }
        let (h, w) = (xv.rows() / f, xv.cols() / f);
        let mut out = vec![0.0; h * w];
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for di in 0..f {
                    for dj in 0..f {
                        acc += xv.data()[(i * f + di) * xv.cols() + j * f + dj];
                    }
                }
                out[i * w + j] = acc / (f * f) as f64;
            }
        }
        let v = Tensor::new(&[h, w], out)?;
        let needs = self.needs[xn];
        self.push(Op::AvgPool { x: xn, f }, v, needs)
    }

    /// `x · W (+ b)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(bias) => self.add_row(y, bias),
            None => Ok(y),
        }
    }

    /// Scaled dot-product attention: `softmax(Q·Kᵀ/√d)·V`.
    /// `Q: [m, d]`, `K: [n, d]`, `V: [n, dv]` -> `[m, dv]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let d = self.val(q).cols();
        if self.val(k).cols() != d {
            return Err(CoreError::ShapeMismatch {
                op: "attention",
                detail: format!("query width {d} vs key width {}", self.val(k).cols()),
            });
        }
        if self.val(k).rows() != self.val(v).rows() {
            return Err(CoreError::ShapeMismatch {
                op: "attention",
                detail: format!("{} keys vs {} values", self.val(k).rows(), self.val(v).rows()),
            });
        }
        let scores = self.matmul_nt(q, k)?;
        let scaled = self.mul_scalar(scores, 1.0 / libm::sqrt(d as f64))?;
        let attn = self.softmax(scaled, 1)?;
        self.matmul(attn, v)
    }

    /// Reverse pass from a scalar loss. Accumulates gradients for every
    /// node on a trainable path; call [`Graph::grad`] or
    /// [`Graph::take_param_grads`] afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let ln = self.check(loss, "backward")?;
        if self.values[ln].len() != 1 {
            return Err(CoreError::InvalidArgument {
                op: "backward",
                detail: format!("loss must be scalar, got {:?}", self.values[ln].shape()),
            });
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        if !self.needs[ln] {
            return Ok(()); // loss does not depend on anything trainable
        }
        self.grads[ln] = Some(Tensor::scalar(1.0));

        for i in (0..=ln).rev() {
            if !self.needs[i] || self.grads[i].is_none() {
                continue;
            }
            let g = self.grads[i].clone().unwrap();
            self.backprop_node(i, &g)?;
        }
        for g in self.grads.iter().flatten() {
            if !g.all_finite() {
                return Err(CoreError::NonFinite { op: "backward" });
            }
        }
        Ok(())
    }

    fn acc(&mut self, node: usize, delta: Tensor) -> Result<()> {
        if !self.needs[node] {
            return Ok(());
        }
        match &mut self.grads[node] {
            Some(t) => t.add_scaled(&delta, 1.0),
            slot @ None => {
                *slot = Some(delta);
                Ok(())
            }
        }
    }

    fn backprop_node(&mut self, i: usize, g: &Tensor) -> Result<()> {
        match self.ops[i].clone() {
            Op::Leaf => Ok(()),
            Op::Add(a, b) => {
                self.acc(a, g.clone())?;
                self.acc(b, g.clone())
            }
            Op::Sub(a, b) => {
                self.acc(a, g.clone())?;
                let mut neg = Tensor::zeros(g.shape());
                neg.add_scaled(g, -1.0)?;
                self.acc(b, neg)
            }
            Op::Mul(a, b) => {
                let da = hadamard(g, &self.values[b]);
                let db = hadamard(g, &self.values[a]);
                self.acc(a, da)?;
                self.acc(b, db)
            }
            Op::AddScalar(a) => self.acc(a, g.clone()),
            Op::MulScalar(a, s) => {
                let mut d = Tensor::zeros(g.shape());
                d.add_scaled(g, s)?;
                self.acc(a, d)
            }
            Op::Matmul(a, b) => {
                let da = g.matmul_nt(&self.values[b])?;
                let db = self.values[a].matmul_tn(g)?;
                self.acc(a, da)?;
                self.acc(b, db)
            }
            Op::MatmulNT(a, b) => {
                let da = g.matmul(&self.values[b])?;
                let db = g.matmul_tn(&self.values[a])?;
                self.acc(a, da)?;
                self.acc(b, db)
            }
            Op::AddRow { x, row } => {
                self.acc(x, g.clone())?;
                let n = g.cols();
                let mut rsum = vec![0.0; n];
                for i in 0..g.rows() {
                    for j in 0..n {
                        rsum[j] += g.at2(i, j);
                    }
                }
                let shape = self.values[row].shape().to_vec();
                self.acc(row, Tensor::new(&shape, rsum)?)
            }
            Op::Softmax { x, axis } => {
                let y = &self.values[i];
                let (m, n) = (y.rows(), y.cols());
                let mut dx = vec![0.0; m * n];
                let (lanes, lane_len, stride, base) = if axis == 1 { (m, n, 1, n) } else { (n, m, n, 1) };
                for lane in 0..lanes {
                    let start = lane * base;
                    let mut dot = 0.0;
                    for k in 0..lane_len {
                        let o = start + k * stride;
                        dot += g.data()[o] * y.data()[o];
                    }
                    for k in 0..lane_len {
                        let o = start + k * stride;
                        dx[o] = y.data()[o] * (g.data()[o] - dot);
                    }
                }
                self.acc(x, Tensor::new(y.shape(), dx)?)
            }
            Op::Sigmoid(x) => {
                let y = &self.values[i];
                let d = y.data().iter().zip(g.data()).map(|(y, g)| g * y * (1.0 - y)).collect();
                self.acc(x, Tensor::new(y.shape(), d)?)
            }
            Op::Tanh(x) => {
                let y = &self.values[i];
                let d = y.data().iter().zip(g.data()).map(|(y, g)| g * (1.0 - y * y)).collect();
                self.acc(x, Tensor::new(y.shape(), d)?)
            }
            Op::Gelu(x) => {
                let xv = &self.values[x];
                let d = xv.data().iter().zip(g.data()).map(|(&x, g)| g * gelu_grad(x)).collect();
                self.acc(x, Tensor::new(xv.shape(), d)?)
            }
            Op::Softplus(x) => {
                let xv = &self.values[x];
                let d = xv.data().iter().zip(g.data()).map(|(&x, g)| g * sigmoid(x)).collect();
                self.acc(x, Tensor::new(xv.shape(), d)?)
            }
            Op::PowScalar { x, p } => {
                let xv = &self.values[x];
                let d = if p == 0.0 {
                    vec![0.0; xv.len()]
                } else {
                    xv.data()
                        .iter()
                        .zip(g.data())
                        .map(|(&x, g)| g * p * libm::pow(x, p - 1.0))
                        .collect()
                };
                self.acc(x, Tensor::new(xv.shape(), d)?)
            }
            Op::LayerNorm { x } => {
                let xv = &self.values[x];
                let y = &self.values[i];
                let lane = *xv.shape().last().unwrap();
                let lanes = xv.len() / lane;
                let mut dx = vec![0.0; xv.len()];
                for l in 0..lanes {
                    let xs = &xv.data()[l * lane..(l + 1) * lane];
                    let ys = &y.data()[l * lane..(l + 1) * lane];
                    let gs = &g.data()[l * lane..(l + 1) * lane];
                    let mean = xs.iter().sum::<f64>() / lane as f64;
                    let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / lane as f64;
                    let inv = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
                    let g_mean = gs.iter().sum::<f64>() / lane as f64;
                    let gy_mean = gs.iter().zip(ys).map(|(g, y)| g * y).sum::<f64>() / lane as f64;
                    for k in 0..lane {
                        dx[l * lane + k] = inv * (gs[k] - g_mean - ys[k] * gy_mean);
                    }
                }
                self.acc(x, Tensor::new(xv.shape(), dx)?)
            }
            Op::MeanAxis { x, axis } => {
                let xv = &self.values[x];
                let (m, n) = (xv.rows(), xv.cols());
                let mut dx = vec![0.0; m * n];
                if axis == 0 {
                    for i2 in 0..m {
                        for j in 0..n {
                            dx[i2 * n + j] = g.data()[j] / m as f64;
                        }
                    }
                } else {
                    for i2 in 0..m {
                        for j in 0..n {
                            dx[i2 * n + j] = g.data()[i2] / n as f64;
                        }
                    }
                }
                self.acc(x, Tensor::new(&[m, n], dx)?)
            }
            Op::SumAll(x) => {
                let xv = &self.values[x];
                self.acc(x, Tensor::full(xv.shape(), g.data()[0]))
            }
            Op::Concat { xs, axis } => {
                let (m, n) = (self.values[i].rows(), self.values[i].cols());
                if axis == 0 {
                    let mut row = 0;
                    for nd in xs {
                        let r = self.values[nd].rows();
                        let part = g.data()[row * n..(row + r) * n].to_vec();
                        let shape = self.values[nd].shape().to_vec();
                        self.acc(nd, Tensor::new(&shape, part)?)?;
                        row += r;
                    }
                } else {
                    let mut col = 0;
                    for nd in xs {
                        let c = self.values[nd].cols();
                        let mut part = vec![0.0; m * c];
                        for i2 in 0..m {
                            part[i2 * c..(i2 + 1) * c].copy_from_slice(&g.data()[i2 * n + col..i2 * n + col + c]);
                        }
                        let shape = self.values[nd].shape().to_vec();
                        self.acc(nd, Tensor::new(&shape, part)?)?;
                        col += c;
                    }
                }
                Ok(())
            }
            Op::Reshape { x } => {
                let shape = self.values[x].shape().to_vec();
                self.acc(x, g.reshaped(&shape)?)
            }
            Op::Gather { x, idx } => {
                let mut dx = Tensor::zeros(self.values[x].shape());
                for (o, &src) in idx.iter().enumerate() {
                    dx.data_mut()[src] += g.data()[o];
                }
                self.acc(x, dx)
            }
            Op::BilinearUp2x { x } => {
                let xv = &self.values[x];
                let (h, w) = (xv.rows(), xv.cols());
                let mut dx = Tensor::zeros(&[h, w]);
                for oi in 0..2 * h {
                    for oj in 0..2 * w {
                        let go = g.data()[oi * 2 * w + oj];
                        for (src, wt) in up2x_taps(h, w, oi, oj) {
                            dx.data_mut()[src] += wt * go;
                        }
                    }
                }
                self.acc(x, dx)
            }
            Op::AvgPool { x, f } => {
                let xv = &self.values[x];
                let (hw, ww) = (xv.rows(), xv.cols());
                let mut dx = Tensor::zeros(&[hw, ww]);
                let inv = 1.0 / (f * f) as f64;
                for i2 in 0..hw {
                    for j in 0..ww {
                        dx.data_mut()[i2 * ww + j] = g.data()[(i2 / f) * (ww / f) + j / f] * inv;
                    }
                }
                self.acc(x, dx)
            }
        }
    }
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape(), data).expect("shapes checked")
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / core::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let phi_big = 0.5 * (1.0 + libm::erf(x / core::f64::consts::SQRT_2));
    let phi_small = libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * core::f64::consts::PI);
    phi_big + x * phi_small
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-libm::fabs(x)))
}

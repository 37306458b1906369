//! Tape-based reverse-mode differentiation over dense `f64` tensors.
//!
//! Every forward op appends a node holding its value and the inputs needed by
//! its backward rule. Nodes are stored in creation order, so the node list is
//! already a topological order and [`Tape::backward`] is a single reverse
//! sweep. Parameters enter the tape through [`Tape::param`]; their gradients are
//! collected into a [`ParamGrads`] keyed by [`ParamId`].
//!
//! Matrices are rank-2 `[rows, cols]`; rank-1 tensors are treated as one row.
//! The only broadcast is adding a bias row to every row of a matrix.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{ParamGrads, ParamId, ParamStore};
use super::Tensor;
use crate::error::{shape_err, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Sum(Var),
    Mean(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LogSoftmax(Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        width: usize,
    },
    MaxOverTime {
        x: Var,
        argmax: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    Pick {
        x: Var,
        idx: Vec<usize>,
    },
    RepeatRows {
        x: Var,
        times: usize,
    },
    SegmentMean {
        x: Var,
        seg: usize,
    },
    SegmentWeightedSum {
        w: Var,
        x: Var,
    },
    Reshape(Var),
    DotConst {
        x: Var,
        weights: Vec<f64>,
    },
    Bce {
        p: Var,
        labels: Vec<f64>,
        eps: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation for one worker. Not shared across threads.
pub struct Tape<'p> {
    nodes: Vec<Node>,
    params: Option<&'p ParamStore>,
    param_vars: Vec<Option<Var>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.dims2() {
        Some(d) => Ok(d),
        None => shape_err(op, format!("expected a matrix, got {:?}", t.shape())),
    }
}

/// `out = beta * out + op(a) @ op(b)` for row-major slices.
#[allow(clippy::too_many_arguments)]
fn gemm(
    a: &[f64],
    a_dims: (usize, usize),
    ta: bool,
    b: &[f64],
    b_dims: (usize, usize),
    tb: bool,
    out: &mut [f64],
    beta: f64,
) {
    let av = ArrayView2::from_shape(a_dims, a).expect("gemm lhs");
    let bv = ArrayView2::from_shape(b_dims, b).expect("gemm rhs");
    let av = if ta { av.reversed_axes() } else { av };
    let bv = if tb { bv.reversed_axes() } else { bv };
    let mut cv = ArrayViewMut2::from_shape((av.nrows(), bv.ncols()), out).expect("gemm out");
    general_mat_mul(1.0, &av, &bv, beta, &mut cv);
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn unfold(x: &[f64], len: usize, emb: usize, width: usize) -> Vec<f64> {
    let out_len = len + 1 - width;
    let mut u = Vec::with_capacity(out_len * width * emb);
    for t in 0..out_len {
        u.extend_from_slice(&x[t * emb..(t + width) * emb]);
    }
    u
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: None,
            param_vars: Vec::new(),
        }
    }

    /// A tape that can pull parameters from `store`.
    pub fn with_params(store: &'p ParamStore) -> Self {
        Self {
            nodes: Vec::new(),
            params: Some(store),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Input that does not receive gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Input that receives gradients (read them with [`Gradients::wrt`]).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Loads a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(id.0).copied().flatten() {
            return v;
        }
        let store = self.params.expect("tape created without a parameter store");
        let v = self.push(store.get(id).clone(), Op::Param, true);
        if self.param_vars.len() <= id.0 {
            self.param_vars.resize(id.0 + 1, None);
        }
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims("matmul", self.value(a))?;
        let (k2, n) = dims("matmul", self.value(b))?;
        if k != k2 {
            return shape_err(
                "matmul",
                format!("{:?} x {:?}", self.shape(a), self.shape(b)),
            );
        }
        let mut out = vec![0.0; m * n];
        gemm(
            self.value(a).data(),
            (m, k),
            false,
            self.value(b).data(),
            (k, n),
            false,
            &mut out,
            0.0,
        );
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), ng))
    }

    /// Elementwise sum of equal shapes, or a `[n]`/`[1, n]` bias added to every
    /// row of an `[m, n]` matrix.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ng = self.ng(a) || self.ng(b);
        if sa == sb {
            let data = self
                .value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(x, y)| x + y)
                .collect();
            return Ok(self.push(Tensor::new(sa, data)?, Op::Add(a, b), ng));
        }
        let (m, n) = dims("add", self.value(a))?;
        let bias_ok = matches!(sb.as_slice(), [c] if *c == n) || sb == [1, n];
        if sa.len() != 2 || !bias_ok {
            return shape_err("add", format!("{sa:?} + {sb:?}"));
        }
        let bias = self.value(b).data();
        let mut data = self.value(a).data().to_vec();
        for r in 0..m {
            for (x, bb) in data[r * n..(r + 1) * n].iter_mut().zip(bias) {
                *x += bb;
            }
        }
        Ok(self.push(Tensor::new(sa, data)?, Op::AddRow(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err("mul", format!("{:?} * {:?}", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let ng = self.ng(a) || self.ng(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|a| a * s).collect();
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(x);
        self.push(t, Op::Scale(x, s), ng)
    }

    /// Concatenates matrices along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() {
            return shape_err("concat", "no inputs");
        }
        let shapes: Vec<(usize, usize)> = inputs
            .iter()
            .map(|&v| dims("concat", self.value(v)))
            .collect::<Result<_>>()?;
        let out = match axis {
            0 => {
                let cols = shapes[0].1;
                if shapes.iter().any(|s| s.1 != cols) {
                    return shape_err("concat", format!("axis 0 over {shapes:?}"));
                }
                let rows = shapes.iter().map(|s| s.0).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for &v in inputs {
                    data.extend_from_slice(self.value(v).data());
                }
                Tensor::matrix(rows, cols, data)?
            }
            1 => {
                let rows = shapes[0].0;
                if shapes.iter().any(|s| s.0 != rows) {
                    return shape_err("concat", format!("axis 1 over {shapes:?}"));
                }
                let cols: usize = shapes.iter().map(|s| s.1).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for &v in inputs {
                        data.extend_from_slice(self.value(v).row(r));
                    }
                }
                Tensor::matrix(rows, cols, data)?
            }
            _ => return shape_err("concat", format!("axis {axis} on matrices")),
        };
        let ng = inputs.iter().any(|&v| self.ng(v));
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            ng,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.is_empty() {
            return shape_err("mean", "empty tensor");
        }
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let ng = self.ng(x);
        Ok(self.push(Tensor::scalar(s), Op::Mean(x), ng))
    }

    /// Rows of `table` selected by `ids`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (k, e) = dims("embedding", self.value(table))?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= k) {
            return Err(Error::TokenId { id: bad, size: k });
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * e);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let ng = self.ng(table);
        Ok(self.push(
            Tensor::matrix(ids.len(), e, data)?,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| f(a)).collect();
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(x);
        self.push(t, op, ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |a| a.max(0.0), Op::Relu(x))
    }

    /// Softmax along `axis` of a matrix (1 = within each row).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (m, n) = dims("softmax", self.value(x))?;
        if axis > 1 {
            return shape_err("softmax", format!("axis {axis} on a matrix"));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; m * n];
        let (outer, inner, stride_o, stride_i) = if axis == 1 {
            (m, n, n, 1)
        } else {
            (n, m, 1, n)
        };
        for o in 0..outer {
            let at = |i: usize| o * stride_o + i * stride_i;
            let mx = (0..inner)
                .map(|i| src[at(i)])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for i in 0..inner {
                let e = (src[at(i)] - mx).exp();
                out[at(i)] = e;
                z += e;
            }
            for i in 0..inner {
                out[at(i)] /= z;
            }
        }
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x, axis }, ng))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let (m, n) = dims("log_softmax", self.value(x))?;
        let src = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &src[r * n..(r + 1) * n];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|a| (a - mx).exp()).sum::<f64>().ln();
            for (o, a) in out[r * n..(r + 1) * n].iter_mut().zip(row) {
                *o = a - lse;
            }
        }
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::LogSoftmax(x), ng))
    }

    /// Valid-padding 1-D convolution over time.
    ///
    /// `x` is `[len, emb]`, `w` is `[width * emb, filters]` (window-major),
    /// `b` is `[filters]`; output is `[len - width + 1, filters]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, width: usize) -> Result<Var> {
        let (len, emb) = dims("conv1d", self.value(x))?;
        let (wr, filters) = dims("conv1d", self.value(w))?;
        if width == 0 || wr != width * emb || self.value(b).len() != filters {
            return shape_err(
                "conv1d",
                format!(
                    "x {:?}, w {:?}, b {:?}, width {width}",
                    self.shape(x),
                    self.shape(w),
                    self.shape(b)
                ),
            );
        }
        if len < width {
            return shape_err("conv1d", format!("sequence length {len} < window {width}"));
        }
        let out_len = len + 1 - width;
        let u = unfold(self.value(x).data(), len, emb, width);
        let mut out = vec![0.0; out_len * filters];
        gemm(
            &u,
            (out_len, wr),
            false,
            self.value(w).data(),
            (wr, filters),
            false,
            &mut out,
            0.0,
        );
        let bias = self.value(b).data();
        for r in 0..out_len {
            for (o, bb) in out[r * filters..(r + 1) * filters].iter_mut().zip(bias) {
                *o += bb;
            }
        }
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        Ok(self.push(
            Tensor::matrix(out_len, filters, out)?,
            Op::Conv1d { x, w, b, width },
            ng,
        ))
    }

    /// Column-wise maximum over rows: `[len, f] -> [1, f]`.
    pub fn max_over_time(&mut self, x: Var) -> Result<Var> {
        let (len, f) = dims("max_over_time", self.value(x))?;
        if len == 0 {
            return shape_err("max_over_time", "zero-length sequence");
        }
        let src = self.value(x).data();
        let mut argmax = vec![0usize; f];
        let mut out = src[..f].to_vec();
        for t in 1..len {
            for c in 0..f {
                let v = src[t * f + c];
                if v > out[c] {
                    out[c] = v;
                    argmax[c] = t;
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::matrix(1, f, out)?,
            Op::MaxOverTime { x, argmax },
            ng,
        ))
    }

    /// Inverted dropout with drop probability `p`; identity when `train` is false.
    pub fn dropout(&mut self, x: Var, p: f64, train: bool, seed: u64) -> Var {
        if !train || p <= 0.0 {
            return x;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 - p;
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let v = self.value(x);
        let data = v.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(x);
        self.push(t, Op::Dropout { x, mask }, ng)
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = dims("slice_cols", self.value(x))?;
        if start + len > n {
            return shape_err(
                "slice_cols",
                format!("{start}..{} of {n} columns", start + len),
            );
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::matrix(m, len, data)?,
            Op::SliceCols { x, start },
            ng,
        ))
    }

    /// `out[i] = x[i, idx[i]]`, shape `[m, 1]`.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = dims("pick", self.value(x))?;
        if idx.len() != m || idx.iter().any(|&i| i >= n) {
            return shape_err(
                "pick",
                format!("{} indices into {:?}", idx.len(), self.shape(x)),
            );
        }
        let src = self.value(x).data();
        let data = idx
            .iter()
            .enumerate()
            .map(|(r, &c)| src[r * n + c])
            .collect();
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::matrix(m, 1, data)?,
            Op::Pick {
                x,
                idx: idx.to_vec(),
            },
            ng,
        ))
    }

    /// Repeats each row `times` times consecutively: `[m, n] -> [m * times, n]`.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        let (m, n) = dims("repeat_rows", self.value(x))?;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * times * n);
        for r in 0..m {
            for _ in 0..times {
                data.extend_from_slice(&src[r * n..(r + 1) * n]);
            }
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::matrix(m * times, n, data)?,
            Op::RepeatRows { x, times },
            ng,
        ))
    }

    /// Mean over consecutive blocks of `seg` rows: `[m * seg, n] -> [m, n]`.
    pub fn segment_mean(&mut self, x: Var, seg: usize) -> Result<Var> {
        let (rows, n) = dims("segment_mean", self.value(x))?;
        if seg == 0 || rows % seg != 0 {
            return shape_err("segment_mean", format!("{rows} rows in blocks of {seg}"));
        }
        let m = rows / seg;
        let src = self.value(x).data();
        let mut data = vec![0.0; m * n];
        for r in 0..rows {
            let o = (r / seg) * n;
            for c in 0..n {
                data[o + c] += src[r * n + c];
            }
        }
        for v in &mut data {
            *v /= seg as f64;
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::SegmentMean { x, seg }, ng))
    }

    /// Per-block weighted sum: `w` is `[m, k]`, `x` is `[m * k, n]`,
    /// `out[i] = sum_j w[i, j] * x[i * k + j]`.
    pub fn segment_weighted_sum(&mut self, w: Var, x: Var) -> Result<Var> {
        let (m, k) = dims("segment_weighted_sum", self.value(w))?;
        let (rows, n) = dims("segment_weighted_sum", self.value(x))?;
        if rows != m * k {
            return shape_err(
                "segment_weighted_sum",
                format!("weights {:?}, values {:?}", self.shape(w), self.shape(x)),
            );
        }
        let (wv, xv) = (self.value(w).data(), self.value(x).data());
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..k {
                let wij = wv[i * k + j];
                let row = &xv[(i * k + j) * n..(i * k + j + 1) * n];
                for (o, a) in data[i * n..(i + 1) * n].iter_mut().zip(row) {
                    *o += wij * a;
                }
            }
        }
        let ng = self.ng(w) || self.ng(x);
        Ok(self.push(
            Tensor::matrix(m, n, data)?,
            Op::SegmentWeightedSum { w, x },
            ng,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return shape_err("reshape", format!("{:?} -> {:?}", self.shape(x), shape));
        }
        let t = Tensor::new(shape.to_vec(), self.value(x).data().to_vec())?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Reshape(x), ng))
    }

    /// `sum_i weights[i] * x[i]` with constant weights.
    pub fn dot_const(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        if weights.len() != self.value(x).len() {
            return shape_err(
                "dot_const",
                format!("{} weights for {:?}", weights.len(), self.shape(x)),
            );
        }
        let s = self
            .value(x)
            .data()
            .iter()
            .zip(weights)
            .map(|(a, w)| a * w)
            .sum();
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::scalar(s),
            Op::DotConst {
                x,
                weights: weights.to_vec(),
            },
            ng,
        ))
    }

    /// Mean binary cross-entropy of probabilities against `{0, 1}` labels, with
    /// probabilities clipped to `[eps, 1 - eps]`.
    pub fn binary_cross_entropy(&mut self, p: Var, labels: &[f64], eps: f64) -> Result<Var> {
        let pv = self.value(p).data();
        if labels.len() != pv.len() || pv.is_empty() {
            return shape_err(
                "binary_cross_entropy",
                format!("{} labels for {:?}", labels.len(), self.shape(p)),
            );
        }
        let n = pv.len() as f64;
        let loss = pv
            .iter()
            .zip(labels)
            .map(|(&q, &y)| {
                let q = q.clamp(eps, 1.0 - eps);
                -(y * q.ln() + (1.0 - y) * (1.0 - q).ln())
            })
            .sum::<f64>()
            / n;
        let ng = self.ng(p);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                p,
                labels: labels.to_vec(),
                eps,
            },
            ng,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut params = ParamGrads::new(self.param_vars.len());
        for (pid, v) in self.param_vars.iter().enumerate() {
            if let Some(v) = v {
                if let Some(g) = &grads[v.0] {
                    params.accumulate(ParamId(pid), g);
                }
            }
        }
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        let mut acc = |v: Var, contrib: &dyn Fn(&mut [f64])| {
            if !self.ng(v) {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.value(v).len()]);
            contrib(slot);
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = self.value(*b).dims2().unwrap().1;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &|s| gemm(g, (m, n), false, bv, (k, n), true, s, 1.0));
                acc(*b, &|s| gemm(av, (m, k), true, g, (m, n), false, s, 1.0));
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    acc(*v, &|s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                }
            }
            Op::AddRow(a, b) => {
                acc(*a, &|s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                let n = self.value(*b).len();
                acc(*b, &|s| {
                    for (i, y) in g.iter().enumerate() {
                        s[i % n] += y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * bv[i];
                    }
                });
                acc(*b, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * av[i];
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &|s| s.iter_mut().zip(g).for_each(|(a, y)| *a += c * y)),
            Op::Concat { inputs, axis } => {
                let (rows, cols) = out.dims2().unwrap();
                if *axis == 0 {
                    let mut off = 0;
                    for v in inputs {
                        let n = self.value(*v).len();
                        let part = &g[off..off + n];
                        acc(*v, &|s| s.iter_mut().zip(part).for_each(|(a, y)| *a += y));
                        off += n;
                    }
                } else {
                    let mut col = 0;
                    for v in inputs {
                        let w = self.value(*v).dims2().unwrap().1;
                        acc(*v, &|s| {
                            for r in 0..rows {
                                for c in 0..w {
                                    s[r * w + c] += g[r * cols + col + c];
                                }
                            }
                        });
                        col += w;
                    }
                }
            }
            Op::Sum(x) => acc(*x, &|s| s.iter_mut().for_each(|a| *a += g[0])),
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                acc(*x, &|s| s.iter_mut().for_each(|a| *a += g[0] / n));
            }
            Op::Gather { table, ids } => {
                let e = self.value(*table).dims2().unwrap().1;
                acc(*table, &|s| {
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..e {
                            s[id * e + c] += g[r * e + c];
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = out.data();
                acc(*x, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::Tanh(x) => {
                let y = out.data();
                acc(*x, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                acc(*x, &|s| {
                    for i in 0..s.len() {
                        if xv[i] > 0.0 {
                            s[i] += g[i];
                        }
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let (m, n) = out.dims2().unwrap();
                let y = out.data();
                let (outer, inner, so, si) = if *axis == 1 {
                    (m, n, n, 1)
                } else {
                    (n, m, 1, n)
                };
                acc(*x, &|s| {
                    for o in 0..outer {
                        let at = |i: usize| o * so + i * si;
                        let dot: f64 = (0..inner).map(|i| g[at(i)] * y[at(i)]).sum();
                        for i in 0..inner {
                            s[at(i)] += y[at(i)] * (g[at(i)] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(x) => {
                let (m, n) = out.dims2().unwrap();
                let y = out.data();
                acc(*x, &|s| {
                    for r in 0..m {
                        let gs: f64 = g[r * n..(r + 1) * n].iter().sum();
                        for c in 0..n {
                            let i = r * n + c;
                            s[i] += g[i] - y[i].exp() * gs;
                        }
                    }
                });
            }
            Op::Conv1d { x, w, b, width } => {
                let (len, emb) = self.value(*x).dims2().unwrap();
                let (wr, filters) = self.value(*w).dims2().unwrap();
                let out_len = len + 1 - width;
                let u = unfold(self.value(*x).data(), len, emb, *width);
                acc(*w, &|s| {
                    gemm(
                        &u,
                        (out_len, wr),
                        true,
                        g,
                        (out_len, filters),
                        false,
                        s,
                        1.0,
                    )
                });
                acc(*b, &|s| {
                    for (i, y) in g.iter().enumerate() {
                        s[i % filters] += y;
                    }
                });
                let wv = self.value(*w).data();
                acc(*x, &|s| {
                    let mut du = vec![0.0; out_len * wr];
                    gemm(
                        g,
                        (out_len, filters),
                        false,
                        wv,
                        (wr, filters),
                        true,
                        &mut du,
                        0.0,
                    );
                    for t in 0..out_len {
                        for (j, d) in du[t * wr..(t + 1) * wr].iter().enumerate() {
                            s[t * emb + j] += d;
                        }
                    }
                });
            }
            Op::MaxOverTime { x, argmax } => {
                let f = argmax.len();
                acc(*x, &|s| {
                    for (c, &t) in argmax.iter().enumerate() {
                        s[t * f + c] += g[c];
                    }
                });
            }
            Op::Dropout { x, mask } => acc(*x, &|s| {
                for i in 0..s.len() {
                    s[i] += g[i] * mask[i];
                }
            }),
            Op::SliceCols { x, start } => {
                let (m, w) = out.dims2().unwrap();
                let n = self.value(*x).dims2().unwrap().1;
                acc(*x, &|s| {
                    for r in 0..m {
                        for c in 0..w {
                            s[r * n + start + c] += g[r * w + c];
                        }
                    }
                });
            }
            Op::Pick { x, idx } => {
                let n = self.value(*x).dims2().unwrap().1;
                acc(*x, &|s| {
                    for (r, &c) in idx.iter().enumerate() {
                        s[r * n + c] += g[r];
                    }
                });
            }
            Op::RepeatRows { x, times } => {
                let n = out.dims2().unwrap().1;
                acc(*x, &|s| {
                    for (r, row) in g.chunks(n).enumerate() {
                        let o = (r / times) * n;
                        for c in 0..n {
                            s[o + c] += row[c];
                        }
                    }
                });
            }
            Op::SegmentMean { x, seg } => {
                let n = out.dims2().unwrap().1;
                let k = *seg as f64;
                acc(*x, &|s| {
                    for (r, row) in s.chunks_mut(n).enumerate() {
                        let o = (r / seg) * n;
                        for c in 0..n {
                            row[c] += g[o + c] / k;
                        }
                    }
                });
            }
            Op::SegmentWeightedSum { w, x } => {
                let (m, k) = self.value(*w).dims2().unwrap();
                let n = out.dims2().unwrap().1;
                let (wv, xv) = (self.value(*w).data(), self.value(*x).data());
                acc(*w, &|s| {
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for j in 0..k {
                            let row = &xv[(i * k + j) * n..(i * k + j + 1) * n];
                            s[i * k + j] += gi.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                });
                acc(*x, &|s| {
                    for i in 0..m {
                        for j in 0..k {
                            let wij = wv[i * k + j];
                            let r = i * k + j;
                            for c in 0..n {
                                s[r * n + c] += wij * g[i * n + c];
                            }
                        }
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &|s| s.iter_mut().zip(g).for_each(|(a, y)| *a += y)),
            Op::DotConst { x, weights } => acc(*x, &|s| {
                for (a, w) in s.iter_mut().zip(weights) {
                    *a += g[0] * w;
                }
            }),
            Op::Bce { p, labels, eps } => {
                let pv = self.value(*p).data();
                let n = pv.len() as f64;
                acc(*p, &|s| {
                    for i in 0..s.len() {
                        let q = pv[i];
                        if q <= *eps || q >= 1.0 - eps {
                            continue;
                        }
                        let y = labels[i];
                        s[i] += g[0] * (-y / q + (1.0 - y) / (1.0 - q)) / n;
                    }
                });
            }
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: ParamGrads,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` influenced it.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn params(&self) -> &ParamGrads {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads {
        self.params
    }
}

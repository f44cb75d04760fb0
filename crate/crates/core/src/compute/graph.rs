//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node to the tape, so node indices are already a
//! topological order and `backward` is a single reverse sweep. Parameter
//! leaves borrow their values from the [`ParamStore`] instead of copying them.

use std::borrow::Cow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::numel;
use super::{ComputeError, Gradients, ParamId, ParamStore, Tensor};

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Training mode enables dropout; inference mode makes it the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64 },
    Inference,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddChannelBias(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Ln(Var),
    Softmax { input: Var, axis: usize },
    Sum(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Reshape(Var),
    SliceCols { input: Var, start: usize },
    Row { input: Var, index: usize },
    Conv1d { input: Var, kernel: Var, stride: usize, padding: usize },
    MaxPool1d { input: Var, argmax: Vec<usize> },
    Dropout { input: Var, mask: Vec<f64> },
}

#[derive(Debug)]
struct Node<'p> {
    shape: Vec<usize>,
    value: Cow<'p, [f64]>,
    op: Op,
    requires_grad: bool,
}

/// A differentiation tape. Confined to one thread; independent graphs may be
/// built concurrently against the same parameter store.
#[derive(Debug)]
pub struct Graph<'p> {
    params: Option<&'p ParamStore>,
    nodes: Vec<Node<'p>>,
    param_vars: Vec<Option<Var>>,
    leaf_grads: Vec<Option<Vec<f64>>>,
    mode: Mode,
    dropout_calls: u64,
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> ComputeError {
    ComputeError::ShapeMismatch { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}

fn invalid(op: &'static str, reason: impl Into<String>) -> ComputeError {
    ComputeError::InvalidArgument { op, reason: reason.into() }
}

impl<'p> Graph<'p> {
    /// A graph whose `param` leaves read from `params`.
    pub fn new(params: &'p ParamStore, mode: Mode) -> Self {
        Self {
            params: Some(params),
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            leaf_grads: Vec::new(),
            mode,
            dropout_calls: 0,
        }
    }

    /// A graph with no parameter store; only `constant`/`variable` leaves.
    pub fn detached(mode: Mode) -> Self {
        Self {
            params: None,
            nodes: Vec::new(),
            param_vars: Vec::new(),
            leaf_grads: Vec::new(),
            mode,
            dropout_calls: 0,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'p, [f64]>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node { shape, value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_owned(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(shape, Cow::Owned(value), op, requires_grad)
    }

    /// Untracked input: no gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, Cow::Owned(t.into_data()), Op::Leaf, false)
    }

    /// Tracked input whose gradient can be read back with [`Graph::grad`].
    pub fn variable(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, Cow::Owned(t.into_data()), Op::Leaf, true)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(id.0).copied().flatten() {
            return v;
        }
        let store = self.params.expect("Graph::param on a detached graph");
        let p = store.get(id);
        let var = self.push(
            p.value.shape().to_vec(),
            Cow::Borrowed(p.value.data()),
            Op::Leaf,
            true,
        );
        self.param_vars[id.0] = Some(var);
        var
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape is consistent")
    }

    /// Accumulated gradient of a tracked leaf, if `backward` reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.clear();
    }

    // ---- elementwise -------------------------------------------------

    fn binary_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>, ComputeError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        Ok(self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, ComputeError> {
        let v = self.binary_same("add", a, b, |x, y| x + y)?;
        Ok(self.push_owned(self.shape(a).to_vec(), v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, ComputeError> {
        let v = self.binary_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push_owned(self.shape(a).to_vec(), v, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, ComputeError> {
        let v = self.binary_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push_owned(self.shape(a).to_vec(), v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a).iter().map(|x| x * factor).collect();
        self.push_owned(self.shape(a).to_vec(), v, Op::Scale(a, factor), &[a])
    }

    /// `[r, c] + [1, c]` (or `[c]`), broadcasting the row over all rows.
    pub fn add_row(&mut self, matrix: Var, row: Var) -> Result<Var, ComputeError> {
        let ms = self.shape(matrix);
        let cols = match ms {
            [_, c] => *c,
            _ => return Err(mismatch("add_row", ms, self.shape(row))),
        };
        if numel(self.shape(row)) != cols {
            return Err(mismatch("add_row", self.shape(matrix), self.shape(row)));
        }
        let r = self.value(row);
        let v = self
            .value(matrix)
            .chunks(cols)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(x, b)| x + b))
            .collect();
        Ok(self.push_owned(self.shape(matrix).to_vec(), v, Op::AddRow(matrix, row), &[matrix, row]))
    }

    /// `[b, c, l] + [c]`: one bias per channel.
    pub fn add_channel_bias(&mut self, input: Var, bias: Var) -> Result<Var, ComputeError> {
        let s = self.shape(input).to_vec();
        if s.len() != 3 || numel(self.shape(bias)) != s[1] {
            return Err(mismatch("add_channel_bias", &s, self.shape(bias)));
        }
        let (channels, len) = (s[1], s[2]);
        let b = self.value(bias);
        let v = self
            .value(input)
            .iter()
            .enumerate()
            .map(|(i, x)| x + b[(i / len) % channels])
            .collect();
        Ok(self.push_owned(s, v, Op::AddChannelBias(input, bias), &[input, bias]))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(a).iter().map(|&x| f(x)).collect();
        self.push_owned(self.shape(a).to_vec(), v, op, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    /// Natural logarithm.
    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a).expect("same shape")
    }

    // ---- reductions ----------------------------------------------------

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push_owned(Vec::new(), vec![s], Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Softmax along `axis`, stabilized by subtracting the per-slice maximum.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, ComputeError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(invalid("softmax", format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, len, inner) = axis_extents(&shape, axis);
        let x = self.value(a);
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| x[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..len {
                    let e = (x[idx(k)] - max).exp();
                    out[idx(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    out[idx(k)] /= total;
                }
            }
        }
        Ok(self.push_owned(shape, out, Op::Softmax { input: a, axis }, &[a]))
    }

    // ---- linear algebra --------------------------------------------------

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, ComputeError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, n) = match (sa, sb) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => return Err(mismatch("matmul", sa, sb)),
        };
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push_owned(vec![m, n], out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, ComputeError> {
        let (r, c) = match self.shape(a) {
            [r, c] => (*r, *c),
            s => return Err(invalid("transpose", format!("expected a matrix, got {s:?}"))),
        };
        let x = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        Ok(self.push_owned(vec![c, r], out, Op::Transpose(a), &[a]))
    }

    // ---- structural ------------------------------------------------------

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, ComputeError> {
        let first = parts.first().ok_or_else(|| invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(invalid("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(mismatch("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_extents(&shape, axis);
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for p in parts {
                let len = self.shape(*p)[axis];
                let block = len * inner;
                out.extend_from_slice(&self.value(*p)[o * block..(o + 1) * block]);
            }
        }
        Ok(self.push_owned(shape, out, Op::Concat { parts: parts.to_vec(), axis }, parts))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, ComputeError> {
        if numel(&shape) != numel(self.shape(a)) {
            return Err(mismatch("reshape", self.shape(a), &shape));
        }
        let v = self.value(a).to_vec();
        Ok(self.push_owned(shape, v, Op::Reshape(a), &[a]))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, ComputeError> {
        let (r, c) = match self.shape(a) {
            [r, c] if start + len <= *c => (*r, *c),
            s => return Err(invalid("slice_cols", format!("columns {start}..{} of {s:?}", start + len))),
        };
        let x = self.value(a);
        let out = (0..r).flat_map(|i| x[i * c + start..i * c + start + len].iter().copied()).collect();
        Ok(self.push_owned(vec![r, len], out, Op::SliceCols { input: a, start }, &[a]))
    }

    /// Row `index` of a matrix as a `[1, c]` matrix. Also serves as the
    /// embedding lookup.
    pub fn row(&mut self, a: Var, index: usize) -> Result<Var, ComputeError> {
        let (r, c) = match self.shape(a) {
            [r, c] => (*r, *c),
            s => return Err(invalid("row", format!("expected a matrix, got {s:?}"))),
        };
        if index >= r {
            return Err(invalid("row", format!("row {index} of {r}")));
        }
        let out = self.value(a)[index * c..(index + 1) * c].to_vec();
        Ok(self.push_owned(vec![1, c], out, Op::Row { input: a, index }, &[a]))
    }

    // ---- convolutional -----------------------------------------------------

    /// Cross-correlation of `[batch, in_ch, length]` with `[out_ch, in_ch, width]`.
    pub fn conv1d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var, ComputeError> {
        let (si, sk) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        let (&[batch, in_ch, len], &[out_ch, k_in, width]) = (si.as_slice(), sk.as_slice()) else {
            return Err(mismatch("conv1d", &si, &sk));
        };
        if in_ch != k_in {
            return Err(mismatch("conv1d", &si, &sk));
        }
        if stride == 0 {
            return Err(invalid("conv1d", "stride must be at least 1"));
        }
        if width == 0 || width > len + 2 * padding {
            return Err(invalid("conv1d", format!("kernel width {width} exceeds padded length {}", len + 2 * padding)));
        }
        let out_len = (len + 2 * padding - width) / stride + 1;
        let x = self.value(input);
        let k = self.value(kernel);
        let mut out = vec![0.0; batch * out_ch * out_len];
        for b in 0..batch {
            for o in 0..out_ch {
                let dst = &mut out[(b * out_ch + o) * out_len..(b * out_ch + o + 1) * out_len];
                for c in 0..in_ch {
                    let src = &x[(b * in_ch + c) * len..(b * in_ch + c + 1) * len];
                    let ker = &k[(o * in_ch + c) * width..(o * in_ch + c + 1) * width];
                    for (t, acc) in dst.iter_mut().enumerate() {
                        let origin = (t * stride) as isize - padding as isize;
                        let (lo, hi) = valid_taps(origin, width, len);
                        let mut s = 0.0;
                        for w in lo..hi {
                            s += src[(origin + w as isize) as usize] * ker[w];
                        }
                        *acc += s;
                    }
                }
            }
        }
        Ok(self.push_owned(
            vec![batch, out_ch, out_len],
            out,
            Op::Conv1d { input, kernel, stride, padding },
            &[input, kernel],
        ))
    }

    /// Max pooling over the last axis of `[batch, channels, length]`.
    pub fn maxpool1d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var, ComputeError> {
        let s = self.shape(input).to_vec();
        let [batch, ch, len] = s[..] else {
            return Err(invalid("maxpool1d", format!("expected [batch, channels, length], got {s:?}")));
        };
        if window == 0 || stride == 0 || window > len {
            return Err(invalid("maxpool1d", format!("window {window} / stride {stride} on length {len}")));
        }
        let out_len = (len - window) / stride + 1;
        let x = self.value(input);
        let mut out = Vec::with_capacity(batch * ch * out_len);
        let mut argmax = Vec::with_capacity(batch * ch * out_len);
        for row in 0..batch * ch {
            let base = row * len;
            for t in 0..out_len {
                let start = base + t * stride;
                let mut best = start;
                for i in start + 1..start + window {
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
        Ok(self.push_owned(vec![batch, ch, out_len], out, Op::MaxPool1d { input, argmax }, &[input]))
    }

    // ---- dropout -------------------------------------------------------------

    /// Inverted dropout governed by the graph's mode. Each call draws a fresh
    /// mask from a stream derived from the graph seed and the call index.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var, ComputeError> {
        match self.mode {
            Mode::Inference => self.dropout_with(x, rate, false, 0),
            Mode::Train { seed } => {
                let call = self.dropout_calls;
                self.dropout_calls += 1;
                self.dropout_with(x, rate, true, seed ^ call.wrapping_mul(0x9E37_79B9_7F4A_7C15))
            }
        }
    }

    /// Dropout with an explicit training flag and seed.
    pub fn dropout_with(&mut self, x: Var, rate: f64, training: bool, seed: u64) -> Result<Var, ComputeError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(invalid("dropout", format!("rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let v = self.value(x).iter().zip(&mask).map(|(a, m)| a * m).collect();
        Ok(self.push_owned(self.shape(x).to_vec(), v, Op::Dropout { input: x, mask }, &[x]))
    }

    // ---- backward ------------------------------------------------------------

    /// Backpropagates from a scalar `loss`. Gradients of tracked leaves are
    /// added to any previously accumulated values.
    pub fn backward(&mut self, loss: Var) -> Result<(), ComputeError> {
        if self.value(loss).len() != 1 {
            return Err(ComputeError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.backward_with(loss, &[1.0])
    }

    /// Backpropagates an upstream gradient `seed` (same shape as `output`).
    pub fn backward_with(&mut self, output: Var, seed: &[f64]) -> Result<(), ComputeError> {
        if seed.len() != self.value(output).len() {
            return Err(mismatch("backward_with", self.shape(output), &[seed.len()]));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed.to_vec());
        if self.leaf_grads.len() < self.nodes.len() {
            self.leaf_grads.resize(self.nodes.len(), None);
        }
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let y = &node.value;
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
                if self.nodes[v.0].requires_grad {
                    let n = self.nodes[v.0].value.len();
                    f(grads[v.0].get_or_insert_with(|| vec![0.0; n]));
                }
            };
            match &node.op {
                Op::Leaf => {
                    let slot = self.leaf_grads[i].get_or_insert_with(|| vec![0.0; g.len()]);
                    slot.iter_mut().zip(&g).for_each(|(s, d)| *s += d);
                }
                Op::Add(a, b) => {
                    acc(*a, &mut |ga| add_into(ga, &g));
                    acc(*b, &mut |gb| add_into(gb, &g));
                }
                Op::Sub(a, b) => {
                    acc(*a, &mut |ga| add_into(ga, &g));
                    acc(*b, &mut |gb| gb.iter_mut().zip(&g).for_each(|(x, d)| *x -= d));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    acc(*a, &mut |ga| {
                        for ((x, d), w) in ga.iter_mut().zip(&g).zip(vb.iter()) {
                            *x += d * w;
                        }
                    });
                    acc(*b, &mut |gb| {
                        for ((x, d), w) in gb.iter_mut().zip(&g).zip(va.iter()) {
                            *x += d * w;
                        }
                    });
                }
                Op::AddRow(m, r) => {
                    acc(*m, &mut |gm| add_into(gm, &g));
                    let cols = self.nodes[r.0].value.len();
                    acc(*r, &mut |gr| {
                        for chunk in g.chunks(cols) {
                            add_into(gr, chunk);
                        }
                    });
                }
                Op::AddChannelBias(x, b) => {
                    acc(*x, &mut |gx| add_into(gx, &g));
                    let (channels, len) = (node.shape[1], node.shape[2]);
                    acc(*b, &mut |gb| {
                        for (i, d) in g.iter().enumerate() {
                            gb[(i / len) % channels] += d;
                        }
                    });
                }
                Op::Scale(a, f) => acc(*a, &mut |ga| ga.iter_mut().zip(&g).for_each(|(x, d)| *x += d * f)),
                Op::MatMul(a, b) => {
                    let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                    let n = self.nodes[b.0].shape[1];
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    // dA = dC B^T
                    acc(*a, &mut |ga| {
                        for i in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += g[i * n + j] * vb[p * n + j];
                                }
                                ga[i * k + p] += s;
                            }
                        }
                    });
                    // dB = A^T dC
                    acc(*b, &mut |gb| {
                        for i in 0..m {
                            for p in 0..k {
                                let av = va[i * k + p];
                                if av == 0.0 {
                                    continue;
                                }
                                let row = &mut gb[p * n..(p + 1) * n];
                                for (x, d) in row.iter_mut().zip(&g[i * n..(i + 1) * n]) {
                                    *x += av * d;
                                }
                            }
                        }
                    });
                }
                Op::Transpose(a) => {
                    let (r, c) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                    acc(*a, &mut |ga| {
                        for i in 0..r {
                            for j in 0..c {
                                ga[i * c + j] += g[j * r + i];
                            }
                        }
                    });
                }
                Op::Relu(a) => {
                    let x = &self.nodes[a.0].value;
                    acc(*a, &mut |ga| {
                        for ((s, d), v) in ga.iter_mut().zip(&g).zip(x.iter()) {
                            if *v > 0.0 {
                                *s += d;
                            }
                        }
                    });
                }
                Op::Tanh(a) => acc(*a, &mut |ga| {
                    for ((s, d), t) in ga.iter_mut().zip(&g).zip(y.iter()) {
                        *s += d * (1.0 - t * t);
                    }
                }),
                Op::Sigmoid(a) => acc(*a, &mut |ga| {
                    for ((s, d), t) in ga.iter_mut().zip(&g).zip(y.iter()) {
                        *s += d * t * (1.0 - t);
                    }
                }),
                Op::Ln(a) => {
                    let x = &self.nodes[a.0].value;
                    acc(*a, &mut |ga| {
                        for ((s, d), v) in ga.iter_mut().zip(&g).zip(x.iter()) {
                            *s += d / v;
                        }
                    });
                }
                Op::Softmax { input, axis } => {
                    let (outer, len, inner) = axis_extents(&node.shape, *axis);
                    acc(*input, &mut |ga| {
                        for o in 0..outer {
                            for i in 0..inner {
                                let idx = |k: usize| (o * len + k) * inner + i;
                                let dot: f64 = (0..len).map(|k| g[idx(k)] * y[idx(k)]).sum();
                                for k in 0..len {
                                    ga[idx(k)] += y[idx(k)] * (g[idx(k)] - dot);
                                }
                            }
                        }
                    });
                }
                Op::Sum(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0])),
                Op::Concat { parts, axis } => {
                    let (outer, total, inner) = axis_extents(&node.shape, *axis);
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p.0].shape[*axis];
                        let block = len * inner;
                        acc(*p, &mut |gp| {
                            for o in 0..outer {
                                let src = &g[o * total * inner + offset * inner..][..block];
                                add_into(&mut gp[o * block..(o + 1) * block], src);
                            }
                        });
                        offset += len;
                    }
                }
                Op::Reshape(a) => acc(*a, &mut |ga| add_into(ga, &g)),
                Op::SliceCols { input, start } => {
                    let c = self.nodes[input.0].shape[1];
                    let (r, len) = (node.shape[0], node.shape[1]);
                    acc(*input, &mut |ga| {
                        for i in 0..r {
                            add_into(&mut ga[i * c + start..i * c + start + len], &g[i * len..(i + 1) * len]);
                        }
                    });
                }
                Op::Row { input, index } => {
                    let c = node.shape[1];
                    acc(*input, &mut |ga| add_into(&mut ga[index * c..(index + 1) * c], &g));
                }
                Op::Conv1d { input, kernel, stride, padding } => {
                    let [batch, in_ch, len] = self.nodes[input.0].shape[..] else { unreachable!() };
                    let [out_ch, _, width] = self.nodes[kernel.0].shape[..] else { unreachable!() };
                    let out_len = node.shape[2];
                    let (x, k) = (&self.nodes[input.0].value, &self.nodes[kernel.0].value);
                    let (stride, padding) = (*stride, *padding);
                    acc(*kernel, &mut |gk| {
                        for b in 0..batch {
                            for o in 0..out_ch {
                                let go = &g[(b * out_ch + o) * out_len..][..out_len];
                                for c in 0..in_ch {
                                    let src = &x[(b * in_ch + c) * len..][..len];
                                    let dk = &mut gk[(o * in_ch + c) * width..][..width];
                                    for (t, d) in go.iter().enumerate() {
                                        if *d == 0.0 {
                                            continue;
                                        }
                                        let origin = (t * stride) as isize - padding as isize;
                                        let (lo, hi) = valid_taps(origin, width, len);
                                        for w in lo..hi {
                                            dk[w] += d * src[(origin + w as isize) as usize];
                                        }
                                    }
                                }
                            }
                        }
                    });
                    acc(*input, &mut |gx| {
                        for b in 0..batch {
                            for o in 0..out_ch {
                                let go = &g[(b * out_ch + o) * out_len..][..out_len];
                                for c in 0..in_ch {
                                    let ker = &k[(o * in_ch + c) * width..][..width];
                                    let dx = &mut gx[(b * in_ch + c) * len..][..len];
                                    for (t, d) in go.iter().enumerate() {
                                        if *d == 0.0 {
                                            continue;
                                        }
                                        let origin = (t * stride) as isize - padding as isize;
                                        let (lo, hi) = valid_taps(origin, width, len);
                                        for w in lo..hi {
                                            dx[(origin + w as isize) as usize] += d * ker[w];
                                        }
                                    }
                                }
                            }
                        }
                    });
                }
                Op::MaxPool1d { input, argmax } => acc(*input, &mut |ga| {
                    for (d, &src) in g.iter().zip(argmax) {
                        ga[src] += d;
                    }
                }),
                Op::Dropout { input, mask } => acc(*input, &mut |ga| {
                    for ((s, d), m) in ga.iter_mut().zip(&g).zip(mask) {
                        *s += d * m;
                    }
                }),
            }
        }
        Ok(())
    }

    /// Adds the accumulated gradients of every parameter leaf into `out`.
    pub fn param_grads_into(&self, out: &mut Gradients) {
        for (pid, var) in self.param_vars.iter().enumerate() {
            let Some(var) = var else { continue };
            if let Some(g) = self.grad(*var) {
                add_into(out.get_mut(ParamId(pid)), g);
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Kernel taps `lo..hi` that land inside `[0, len)` for a window starting at `origin`.
fn valid_taps(origin: isize, width: usize, len: usize) -> (usize, usize) {
    let lo = (-origin).max(0) as usize;
    let hi = ((len as isize - origin).max(0) as usize).min(width);
    (lo.min(hi), hi)
}

pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records each op as it is evaluated. Trainable tensors live in
//! a [`ParamSet`] that the graph borrows, so recording a forward pass never
//! copies parameters. [`Graph::backward`] walks the tape in reverse and
//! returns a [`Gradients`] table holding one gradient per recorded value.
//!
//! Ops accept rank-1 tensors (one row) or rank-2 tensors (a batch of rows)
//! and act row-wise along the trailing axis.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{ensure_finite, Real, Tensor};

/// Handle to a trainable tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named registry of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    sites: u64,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            values: Vec::new(),
            sites: 0,
        }
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Fresh identifier for a stochastic op site (dropout), stable across
    /// rebuilds of the same architecture.
    pub fn next_site(&mut self) -> u64 {
        self.sites += 1;
        self.sites
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    /// Total number of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Forward-pass mode: dropout is active only when `training` is set, and
/// its masks are drawn from a stream keyed by `(seed, site, step)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mode {
    pub training: bool,
    pub seed: u64,
    pub step: u64,
}

impl Mode {
    pub fn eval() -> Self {
        Mode {
            training: false,
            seed: 0,
            step: 0,
        }
    }

    pub fn train(seed: u64, step: u64) -> Self {
        Mode {
            training: true,
            seed,
            step,
        }
    }
}

/// Default cap on the signed square root derivative near zero.
pub const SIGNED_SQRT_GRAD_CAP: f64 = 1e6;

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Affine { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Hadamard(Var, Var),
    ChunkSumPool { x: Var, k: usize },
    StridedSum { x: Var, groups: usize },
    SignedSqrt { x: Var, cap: f64 },
    L2Normalize { x: Var, eps: f64 },
    Relu(Var),
    Tanh(Var),
    Mask { x: Var, mask: Vec<T> },
    Scale { x: Var, factor: f64 },
    Concat(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SegmentMean { x: Var, offsets: Vec<usize> },
    Bilinear { x1: Var, x2: Var, core: Var },
    SumAll(Var),
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize> },
}

struct Node<T> {
    op: Op<T>,
    // `None` for parameter nodes; their value lives in the borrowed set.
    value: Option<Tensor<T>>,
    needs_grad: bool,
}

/// Distance of a recording from the non-differentiable points of its ops.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KinkDistance {
    pub relu: f64,
    pub signed_sqrt: f64,
}

/// Recording of one forward pass.
pub struct Graph<'p, T> {
    params: Option<&'p ParamSet<T>>,
    nodes: Vec<Node<T>>,
}

impl<'p, T: Real> Default for Graph<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Real> Graph<'p, T> {
    /// Graph without a parameter set; only leaves can carry gradients.
    pub fn new() -> Self {
        Graph {
            params: None,
            nodes: Vec::new(),
        }
    }

    pub fn with_params(params: &'p ParamSet<T>) -> Self {
        Graph {
            params: Some(params),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.expect("param graph").get(*id),
            _ => unreachable!("node without value"),
        }
    }

    /// How close the recording sits to the non-differentiable points of its
    /// ops: the smallest nonzero `|x|` fed to a ReLU, and the smallest
    /// nonzero `|x| / rms(x)` fed to a signed square root (`INFINITY` when
    /// there is none). Exact zeros are skipped: they come from masked or
    /// structurally absent entries that no perturbation moves.
    pub fn kink_distance(&self) -> KinkDistance {
        let mut d = KinkDistance {
            relu: f64::INFINITY,
            signed_sqrt: f64::INFINITY,
        };
        let min_abs = |t: &Tensor<T>| {
            t.data()
                .iter()
                .map(|v| v.to_f64().abs())
                .filter(|&v| v > 0.0)
                .fold(f64::INFINITY, f64::min)
        };
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => d.relu = d.relu.min(min_abs(self.value(*x))),
                Op::SignedSqrt { x, .. } => {
                    let t = self.value(*x);
                    let rms = (t.data().iter().map(|v| v.to_f64().powi(2)).sum::<f64>() / t.len() as f64).sqrt();
                    if rms > 0.0 {
                        d.signed_sqrt = d.signed_sqrt.min(min_abs(t) / rms);
                    }
                }
                _ => {}
            }
        }
        d
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn record(&mut self, name: &'static str, op: Op<T>, value: Tensor<T>, inputs: &[Var]) -> Result<Var> {
        ensure_finite(name, &value)?;
        let needs = inputs.iter().any(|&v| self.needs(v));
        Ok(self.push(op, value, needs))
    }

    /// Constant input; no gradient is accumulated for it.
    pub fn input(&mut self, value: Tensor<T>) -> Result<Var> {
        ensure_finite("input", &value)?;
        Ok(self.push(Op::Leaf, value, false))
    }

    /// Leaf that receives a gradient in [`Graph::backward`].
    pub fn variable(&mut self, value: Tensor<T>) -> Result<Var> {
        ensure_finite("variable", &value)?;
        Ok(self.push(Op::Leaf, value, true))
    }

    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        let params = self
            .params
            .ok_or_else(|| Error::InvalidArgument("graph has no parameter set".into()))?;
        if id.0 >= params.len() {
            return Err(Error::InvalidArgument(format!("unknown parameter {}", id.0)));
        }
        ensure_finite("param", params.get(id))?;
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            needs_grad: true,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// `x · wᵀ + b`, with `w` of shape `[out, in]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.shape().len() != 2 || xv.cols() != wv.cols() {
            return Err(Error::shape("affine", xv.shape(), wv.shape()));
        }
        let (rows, n_out) = (xv.rows(), wv.rows());
        let mut out = vec![T::ZERO; rows * n_out];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != n_out {
                return Err(Error::shape("affine", wv.shape(), bv.shape()));
            }
            for r in 0..rows {
                out[r * n_out..(r + 1) * n_out].copy_from_slice(bv.data());
            }
        }
        xv.matmul_nt_into(wv, &mut out);
        let shape = if xv.shape().len() == 1 {
            vec![n_out]
        } else {
            vec![rows, n_out]
        };
        let value = Tensor::new(shape, out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.record("affine", Op::Affine { x, w, b }, value, &inputs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape("add", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.record("add", Op::Add(a, b), value, &[a, b])
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape("hadamard", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.record("hadamard", Op::Hadamard(a, b), value, &[a, b])
    }

    /// Sums each run of `k` consecutive entries: `out[j] = Σ_{i<k} x[j·k + i]`.
    pub fn chunk_sum_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        let xv = self.value(x);
        let cols = xv.cols();
        if k == 0 || cols % k != 0 {
            return Err(Error::InvalidArgument(format!(
                "chunk_sum_pool: length {cols} not divisible by {k}"
            )));
        }
        let out_cols = cols / k;
        let data = xv.data().chunks(k).map(|c| c.iter().copied().sum()).collect();
        let value = Tensor::new(with_cols(xv.shape(), out_cols), data)?;
        self.record("chunk_sum_pool", Op::ChunkSumPool { x, k }, value, &[x])
    }

    /// Splits each row into `groups` equal contiguous blocks and sums them:
    /// `out[j] = Σ_{r<groups} x[r·size + j]`.
    pub fn strided_sum(&mut self, x: Var, groups: usize) -> Result<Var> {
        let xv = self.value(x);
        let cols = xv.cols();
        if groups == 0 || cols % groups != 0 {
            return Err(Error::InvalidArgument(format!(
                "strided_sum: length {cols} not divisible by {groups}"
            )));
        }
        let size = cols / groups;
        let mut data = vec![T::ZERO; xv.rows() * size];
        for (row, out) in xv.data().chunks(cols).zip(data.chunks_mut(size)) {
            for block in row.chunks(size) {
                for (o, &v) in out.iter_mut().zip(block) {
                    *o += v;
                }
            }
        }
        let value = Tensor::new(with_cols(xv.shape(), size), data)?;
        self.record("strided_sum", Op::StridedSum { x, groups }, value, &[x])
    }

    /// `sign(x)·√|x|`. The backward pass caps `1/(2√|x|)` at `cap` and uses
    /// 0 at exactly zero.
    pub fn signed_sqrt(&mut self, x: Var, cap: f64) -> Result<Var> {
        let value = self.value(x).map(signed_sqrt);
        self.record("signed_sqrt", Op::SignedSqrt { x, cap }, value, &[x])
    }

    /// Row-wise `x / max(‖x‖₂, eps)`.
    pub fn l2_normalize(&mut self, x: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let cols = xv.cols();
        let mut data = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(cols) {
            let denom = row_norm(row).max(eps);
            data.extend(row.iter().map(|&v| T::from_f64(v.to_f64() / denom)));
        }
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.record("l2_normalize", Op::L2Normalize { x, eps }, value, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| if v > T::ZERO { v } else { T::ZERO });
        self.record("relu", Op::Relu(x), value, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(Real::tanh);
        self.record("tanh", Op::Tanh(x), value, &[x])
    }

    /// Inverted dropout. In training mode each entry is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`; otherwise `x`
    /// passes through untouched. `site` keys the random stream.
    pub fn dropout(&mut self, x: Var, p: f64, mode: Mode, site: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !mode.training || p == 0.0 {
            return Ok(x);
        }
        let xv = self.value(x);
        let keep = T::from_f64(1.0 / (1.0 - p));
        let mut stream = rng::stream(mode.seed, site, mode.step);
        let mask: Vec<T> = (0..xv.len())
            .map(|_| if stream.gen::<f64>() < p { T::ZERO } else { keep })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.record("dropout", Op::Mask { x, mask }, value, &[x])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let f = T::from_f64(factor);
        let value = self.value(x).map(|v| v * f);
        self.record("scale", Op::Scale { x, factor }, value, &[x])
    }

    /// Row-wise concatenation along the trailing axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let rows = self.value(first).rows();
        let rank = self.value(first).shape().len();
        let mut total = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != rows || pv.shape().len() != rank {
                return Err(Error::shape("concat", self.value(first).shape(), pv.shape()));
            }
            total += pv.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let shape = with_cols(self.value(first).shape(), total);
        let value = Tensor::new(shape, data)?;
        self.record("concat", Op::Concat(parts.to_vec()), value, parts)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if len == 0 || start + len > xv.cols() {
            return Err(Error::InvalidArgument(format!(
                "slice {start}..{} out of bounds for width {}",
                start + len,
                xv.cols()
            )));
        }
        let mut data = Vec::with_capacity(xv.rows() * len);
        for r in 0..xv.rows() {
            data.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let value = Tensor::new(with_cols(xv.shape(), len), data)?;
        self.record("slice_cols", Op::SliceCols { x, start }, value, &[x])
    }

    /// Averages consecutive row groups. Group `g` spans rows
    /// `offsets[g]..offsets[g+1]`; the result has one row per group.
    pub fn segment_mean(&mut self, x: Var, offsets: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let cols = xv.cols();
        let valid = offsets.len() >= 2
            && offsets[0] == 0
            && *offsets.last().unwrap() == xv.rows()
            && offsets.windows(2).all(|w| w[0] < w[1]);
        if !valid {
            return Err(Error::InvalidArgument(
                "segment_mean: segments must be non-empty and cover every row".into(),
            ));
        }
        let groups = offsets.len() - 1;
        let mut data = Vec::with_capacity(groups * cols);
        let mut acc = vec![0.0f64; cols];
        for w in offsets.windows(2) {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for r in w[0]..w[1] {
                for (a, v) in acc.iter_mut().zip(xv.row(r)) {
                    *a += v.to_f64();
                }
            }
            let n = (w[1] - w[0]) as f64;
            data.extend(acc.iter().map(|a| T::from_f64(a / n)));
        }
        let value = Tensor::matrix(groups, cols, data)?;
        self.record(
            "segment_mean",
            Op::SegmentMean {
                x,
                offsets: offsets.to_vec(),
            },
            value,
            &[x],
        )
    }

    /// Full three-way contraction `out[k] = Σ_{i,j} x1[i]·x2[j]·core[i,j,k]`.
    pub fn bilinear(&mut self, x1: Var, x2: Var, core: Var) -> Result<Var> {
        let (av, bv, cv) = (self.value(x1), self.value(x2), self.value(core));
        let cs = cv.shape();
        if cs.len() != 3 || cs[0] != av.cols() || cs[1] != bv.cols() || av.rows() != bv.rows() {
            return Err(Error::shape("bilinear", av.shape(), cs));
        }
        let (rows, s1, s2, s3) = (av.rows(), cs[0], cs[1], cs[2]);
        let outer = outer_rows(av, bv);
        let mut out = vec![T::ZERO; rows * s3];
        T::gemm(
            rows,
            s1 * s2,
            s3,
            T::ONE,
            &outer,
            (s1 * s2) as isize,
            1,
            cv.data(),
            s3 as isize,
            1,
            T::ZERO,
            &mut out,
            s3 as isize,
            1,
        );
        let shape = with_cols(av.shape(), s3);
        let value = Tensor::new(shape, out)?;
        self.record("bilinear", Op::Bilinear { x1, x2, core }, value, &[x1, x2, core])
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let total: f64 = self.value(x).data().iter().map(|v| v.to_f64()).sum();
        self.record("sum", Op::SumAll(x), Tensor::scalar(T::from_f64(total)), &[x])
    }

    /// Mean over rows of `-log softmax(logits)[label]`, stabilised by
    /// subtracting the row maximum.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        ensure_finite("softmax_cross_entropy", lv)?;
        let classes = lv.cols();
        if lv.rows() != labels.len() || labels.iter().any(|&l| l >= classes) {
            return Err(Error::InvalidArgument(format!(
                "softmax_cross_entropy: {} rows of {classes} logits vs labels {labels:?}",
                lv.rows()
            )));
        }
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            total += row_nll(lv.row(r), label);
        }
        let loss = total / labels.len() as f64;
        self.record(
            "softmax_cross_entropy",
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            Tensor::scalar(T::from_f64(loss)),
            &[logits],
        )
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::ONE));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        let mut params = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                params.push((id, i));
            }
        }
        Ok(Gradients { by_node: grads, params })
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let out = self.nodes[i].value.as_ref();
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::Affine { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (rows, n_in, n_out) = (xv.rows(), xv.cols(), wv.rows());
                if self.needs(*x) {
                    let dx = slot(grads, *x, xv.shape());
                    T::gemm(
                        rows, n_out, n_in, T::ONE, g.data(), n_out as isize, 1, wv.data(),
                        n_in as isize, 1, T::ONE, dx, n_in as isize, 1,
                    );
                }
                if self.needs(*w) {
                    let dw = slot(grads, *w, wv.shape());
                    T::gemm(
                        n_out, rows, n_in, T::ONE, g.data(), 1, n_out as isize, xv.data(),
                        n_in as isize, 1, T::ONE, dw, n_in as isize, 1,
                    );
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        let shape = self.value(*b).shape().to_vec();
                        let db = slot(grads, *b, &shape);
                        for row in g.data().chunks(n_out) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        axpy(slot(grads, v, g.shape()), g.data());
                    }
                }
            }
            Op::Hadamard(a, b) => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if self.needs(v) {
                        let ov = self.value(other);
                        let d = slot(grads, v, g.shape());
                        for ((d, &gv), &o) in d.iter_mut().zip(g.data()).zip(ov.data()) {
                            *d += gv * o;
                        }
                    }
                }
            }
            Op::ChunkSumPool { x, k } => {
                if self.needs(*x) {
                    let shape = self.value(*x).shape().to_vec();
                    let d = slot(grads, *x, &shape);
                    for (chunk, &gv) in d.chunks_mut(*k).zip(g.data()) {
                        chunk.iter_mut().for_each(|c| *c += gv);
                    }
                }
            }
            Op::StridedSum { x, groups } => {
                if self.needs(*x) {
                    let shape = self.value(*x).shape().to_vec();
                    let size = g.cols();
                    let d = slot(grads, *x, &shape);
                    for (drow, grow) in d.chunks_mut(size * groups).zip(g.data().chunks(size)) {
                        for block in drow.chunks_mut(size) {
                            axpy(block, grow);
                        }
                    }
                }
            }
            Op::SignedSqrt { x, cap } => {
                if self.needs(*x) {
                    let xv = self.value(*x);
                    let d = slot(grads, *x, xv.shape());
                    for ((d, &gv), &v) in d.iter_mut().zip(g.data()).zip(xv.data()) {
                        let a = v.to_f64().abs();
                        let slope = if a == 0.0 { 0.0 } else { (0.5 / a.sqrt()).min(*cap) };
                        *d += gv * T::from_f64(slope);
                    }
                }
            }
            Op::L2Normalize { x, eps } => {
                if self.needs(*x) {
                    let xv = self.value(*x);
                    let y = out.expect("value");
                    let cols = xv.cols();
                    let d = slot(grads, *x, xv.shape());
                    for (((drow, xrow), yrow), grow) in d
                        .chunks_mut(cols)
                        .zip(xv.data().chunks(cols))
                        .zip(y.data().chunks(cols))
                        .zip(g.data().chunks(cols))
                    {
                        let n = row_norm(xrow);
                        if n > *eps {
                            let dot: f64 = yrow
                                .iter()
                                .zip(grow)
                                .map(|(a, b)| a.to_f64() * b.to_f64())
                                .sum();
                            for ((dv, yv), gv) in drow.iter_mut().zip(yrow).zip(grow) {
                                *dv += T::from_f64((gv.to_f64() - yv.to_f64() * dot) / n);
                            }
                        } else {
                            for (dv, gv) in drow.iter_mut().zip(grow) {
                                *dv += T::from_f64(gv.to_f64() / eps);
                            }
                        }
                    }
                }
            }
            Op::Relu(x) => {
                if self.needs(*x) {
                    let xv = self.value(*x);
                    let d = slot(grads, *x, xv.shape());
                    for ((d, &gv), &v) in d.iter_mut().zip(g.data()).zip(xv.data()) {
                        if v > T::ZERO {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Tanh(x) => {
                if self.needs(*x) {
                    let y = out.expect("value");
                    let d = slot(grads, *x, y.shape());
                    for ((d, &gv), &yv) in d.iter_mut().zip(g.data()).zip(y.data()) {
                        *d += gv * (T::ONE - yv * yv);
                    }
                }
            }
            Op::Mask { x, mask } => {
                if self.needs(*x) {
                    let d = slot(grads, *x, g.shape());
                    for ((d, &gv), &m) in d.iter_mut().zip(g.data()).zip(mask) {
                        *d += gv * m;
                    }
                }
            }
            Op::Scale { x, factor } => {
                if self.needs(*x) {
                    let f = T::from_f64(*factor);
                    let d = slot(grads, *x, g.shape());
                    for (d, &gv) in d.iter_mut().zip(g.data()) {
                        *d += gv * f;
                    }
                }
            }
            Op::Concat(parts) => {
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let w = pv.cols();
                    if self.needs(p) {
                        let shape = pv.shape().to_vec();
                        let d = slot(grads, p, &shape);
                        for (drow, grow) in d.chunks_mut(w).zip(g.data().chunks(total)) {
                            axpy(drow, &grow[offset..offset + w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                if self.needs(*x) {
                    let shape = self.value(*x).shape().to_vec();
                    let cols = *shape.last().unwrap();
                    let w = g.cols();
                    let d = slot(grads, *x, &shape);
                    for (drow, grow) in d.chunks_mut(cols).zip(g.data().chunks(w)) {
                        axpy(&mut drow[*start..*start + w], grow);
                    }
                }
            }
            Op::SegmentMean { x, offsets } => {
                if self.needs(*x) {
                    let shape = self.value(*x).shape().to_vec();
                    let cols = g.cols();
                    let d = slot(grads, *x, &shape);
                    for (w, grow) in offsets.windows(2).zip(g.data().chunks(cols)) {
                        let inv = 1.0 / (w[1] - w[0]) as f64;
                        for r in w[0]..w[1] {
                            for (dv, gv) in d[r * cols..(r + 1) * cols].iter_mut().zip(grow) {
                                *dv += T::from_f64(gv.to_f64() * inv);
                            }
                        }
                    }
                }
            }
            Op::Bilinear { x1, x2, core } => {
                let (av, bv, cv) = (self.value(*x1), self.value(*x2), self.value(*core));
                let (rows, s1, s2, s3) = (av.rows(), av.cols(), bv.cols(), cv.shape()[2]);
                let outer = outer_rows(av, bv);
                if self.needs(*core) {
                    let dc = slot(grads, *core, cv.shape());
                    T::gemm(
                        s1 * s2, rows, s3, T::ONE, &outer, 1, (s1 * s2) as isize, g.data(),
                        s3 as isize, 1, T::ONE, dc, s3 as isize, 1,
                    );
                }
                if self.needs(*x1) || self.needs(*x2) {
                    let mut douter = vec![T::ZERO; rows * s1 * s2];
                    T::gemm(
                        rows, s3, s1 * s2, T::ONE, g.data(), s3 as isize, 1, cv.data(), 1,
                        s3 as isize, T::ZERO, &mut douter, (s1 * s2) as isize, 1,
                    );
                    if self.needs(*x1) {
                        let d = slot(grads, *x1, av.shape());
                        for r in 0..rows {
                            let brow = bv.row(r);
                            for i in 0..s1 {
                                let base = (r * s1 + i) * s2;
                                let s: T = douter[base..base + s2]
                                    .iter()
                                    .zip(brow)
                                    .map(|(&a, &b)| a * b)
                                    .sum();
                                d[r * s1 + i] += s;
                            }
                        }
                    }
                    if self.needs(*x2) {
                        let d = slot(grads, *x2, bv.shape());
                        for r in 0..rows {
                            let arow = av.row(r);
                            for (i, &a) in arow.iter().enumerate() {
                                let base = (r * s1 + i) * s2;
                                for j in 0..s2 {
                                    d[r * s2 + j] += douter[base + j] * a;
                                }
                            }
                        }
                    }
                }
            }
            Op::SumAll(x) => {
                if self.needs(*x) {
                    let shape = self.value(*x).shape().to_vec();
                    let gv = g.data()[0];
                    slot(grads, *x, &shape).iter_mut().for_each(|d| *d += gv);
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                if self.needs(*logits) {
                    let lv = self.value(*logits);
                    let classes = lv.cols();
                    let scale = g.data()[0].to_f64() / labels.len() as f64;
                    let d = slot(grads, *logits, lv.shape());
                    for (r, &label) in labels.iter().enumerate() {
                        let probs = softmax(lv.row(r));
                        for (c, p) in probs.iter().enumerate() {
                            let target = if c == label { 1.0 } else { 0.0 };
                            d[r * classes + c] += T::from_f64((p - target) * scale);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Gradient table produced by [`Graph::backward`].
pub struct Gradients<T> {
    by_node: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to a recorded value, if any flowed.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.by_node.get(v.0).and_then(Option::as_ref)
    }

    /// One gradient per registered parameter, in registry order. Parameters
    /// the loss does not reach get zeros of their own shape.
    pub fn param_grads(&self, params: &ParamSet<T>) -> Vec<Tensor<T>> {
        let mut out: Vec<Tensor<T>> = params.values.iter().map(|p| Tensor::zeros(p.shape())).collect();
        for &(id, node) in &self.params {
            if let Some(g) = &self.by_node[node] {
                axpy(out[id.0].data_mut(), g.data());
            }
        }
        out
    }
}

fn slot<'a, T: Real>(grads: &'a mut [Option<Tensor<T>>], v: Var, shape: &[usize]) -> &'a mut [T] {
    grads[v.0]
        .get_or_insert_with(|| Tensor::zeros(shape))
        .data_mut()
}

fn axpy<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn with_cols(shape: &[usize], cols: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    *s.last_mut().unwrap() = cols;
    s
}

fn row_norm<T: Real>(row: &[T]) -> f64 {
    row.iter()
        .map(|v| {
            let x = v.to_f64();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

fn outer_rows<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Vec<T> {
    let (s1, s2) = (a.cols(), b.cols());
    let mut outer = Vec::with_capacity(a.rows() * s1 * s2);
    for r in 0..a.rows() {
        let brow = b.row(r);
        for &x in a.row(r) {
            outer.extend(brow.iter().map(|&y| x * y));
        }
    }
    outer
}

pub(crate) fn signed_sqrt<T: Real>(v: T) -> T {
    let a = v.abs().sqrt();
    if v < T::ZERO {
        -a
    } else {
        a
    }
}

/// Numerically stable softmax of one row, in 64-bit.
pub fn softmax<T: Real>(row: &[T]) -> Vec<f64> {
    let max = row.iter().map(|v| v.to_f64()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v.to_f64() - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn row_nll<T: Real>(row: &[T], label: usize) -> f64 {
    let max = row.iter().map(|v| v.to_f64()).fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v.to_f64() - max).exp()).sum::<f64>().ln();
    lse - row[label].to_f64()
}

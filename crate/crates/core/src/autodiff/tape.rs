use std::sync::Arc;

use ndarray::ArrayView2;
use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tensor::{owned_vec, Tensor, TensorError};
use crate::scalar::Scalar;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    /// `x · wᵀ`
    Linear {
        x: Var,
        w: Var,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    AddBias {
        x: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: T,
    },
    Relu {
        x: Var,
    },
    SoftmaxRows {
        x: Var,
    },
    LayerNormRows {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    GatherRows {
        x: Var,
        idx: Arc<[usize]>,
    },
    ScatterAddRows {
        x: Var,
        idx: Arc<[usize]>,
    },
    HeadDot {
        a: Var,
        b: Var,
        heads: usize,
        scale: T,
    },
    SegmentSoftmax {
        x: Var,
        offsets: Arc<[usize]>,
    },
    HeadScale {
        x: Var,
        w: Var,
        heads: usize,
    },
    CrossEntropyRows {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    L1Loss {
        a: Var,
        b: Var,
    },
    MseLoss {
        a: Var,
        b: Var,
    },
    WeightedSum {
        terms: Vec<(Var, T)>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records primitive operations for one forward pass.
///
/// Nodes are appended in execution order, so the reverse of insertion order
/// is a valid topological order for [`Tape::backward`].
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn view(&self, v: Var) -> ArrayView2<'_, T> {
        self.nodes[v.0].value.view()
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(
        &mut self,
        op_name: &'static str,
        value: Tensor<T>,
        op: Op<T>,
        parents: &[Var],
    ) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let requires_grad = parents.iter().any(|&p| self.needs(p));
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: "constant" });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reads a parameter into the tape; its gradient lands in the store.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Dense layer product `x · wᵀ` with `w` stored as `out × in`.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var, TensorError> {
        let ((n, din), (dout, win)) = (self.dims(x), self.dims(w));
        if din != win {
            return Err(mismatch("linear", self.shape(x), self.shape(w)));
        }
        let y = self.view(x).dot(&self.view(w).t());
        let value = Tensor::matrix(n, dout, owned_vec(y))?;
        self.push("linear", value, Op::Linear { x, w }, &[x, w])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let ((n, k), (k2, m)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let y = self.view(a).dot(&self.view(b));
        let value = Tensor::matrix(n, m, owned_vec(y))?;
        self.push("matmul", value, Op::MatMul { a, b }, &[a, b])
    }

    /// Adds a `1 × m` bias row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, TensorError> {
        let ((n, m), blen) = (self.dims(x), self.value(b).len());
        if blen != m {
            return Err(mismatch("add_bias", self.shape(x), self.shape(b)));
        }
        let bias = self.data(b);
        let mut out = self.data(x).to_vec();
        for row in out.chunks_exact_mut(m) {
            add_into(row, bias);
        }
        let value = Tensor::matrix(n, m, out)?;
        self.push("add_bias", value, Op::AddBias { x, b }, &[x, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.dims(a) != self.dims(b) {
            return Err(mismatch("add", self.shape(a), self.shape(b)));
        }
        let mut out = self.data(a).to_vec();
        add_into(&mut out, self.data(b));
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        self.push("add", value, Op::Add { a, b }, &[a, b])
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var, TensorError> {
        let out = self.data(x).iter().map(|&v| v * c).collect();
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        self.push("scale", value, Op::Scale { x, c }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = self.data(x).iter().map(|&v| v.max(T::zero())).collect();
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        self.push("relu", value, Op::Relu { x }, &[x])
    }

    /// Row-wise softmax with the row maximum subtracted first.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let (n, m) = self.dims(x);
        let mut out = self.data(x).to_vec();
        for row in out.chunks_exact_mut(m) {
            softmax_in_place(row);
        }
        let value = Tensor::matrix(n, m, out)?;
        self.push("softmax_rows", value, Op::SoftmaxRows { x }, &[x])
    }

    /// Per-row standardization followed by the affine map `γ·x̂ + β`.
    pub fn layer_norm_rows(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, TensorError> {
        let (n, m) = self.dims(x);
        if self.value(gamma).len() != m || self.value(beta).len() != m {
            return Err(mismatch("layer_norm_rows", self.shape(x), self.shape(gamma)));
        }
        let eps = T::lit(1e-5);
        let mm = T::from_usize(m).unwrap();
        let (g, b) = (self.data(gamma), self.data(beta));
        let mut xhat = Vec::with_capacity(n * m);
        let mut inv_std = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n * m);
        for row in self.data(x).chunks_exact(m) {
            let mean = row.iter().copied().sum::<T>() / mm;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / mm;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let value = Tensor::matrix(n, m, out)?;
        self.push(
            "layer_norm_rows",
            value,
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    /// Inverted dropout: kept entries are scaled by `1 / (1 − rate)`.
    /// `rate == 0` records an identity.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var, TensorError> {
        let len = self.value(x).len();
        let mask: Vec<T> = if rate <= 0.0 {
            vec![T::one(); len]
        } else {
            let keep = T::lit(1.0 / (1.0 - rate));
            (0..len)
                .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
                .collect()
        };
        let out = self.data(x).iter().zip(&mask).map(|(&v, &k)| v * k).collect();
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        self.push("dropout", value, Op::Dropout { x, mask }, &[x])
    }

    /// `y[j] = x[idx[j]]`.
    pub fn gather_rows(&mut self, x: Var, idx: Arc<[usize]>) -> Result<Var, TensorError> {
        let (n, m) = self.dims(x);
        let src = self.data(x);
        let mut out = Vec::with_capacity(idx.len() * m);
        for &i in idx.iter() {
            if i >= n {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    len: n,
                });
            }
            out.extend_from_slice(&src[i * m..(i + 1) * m]);
        }
        let value = Tensor::matrix(idx.len(), m, out)?;
        self.push("gather_rows", value, Op::GatherRows { x, idx }, &[x])
    }

    /// `y[idx[j]] += x[j]` into `rows` output rows.
    pub fn scatter_add_rows(&mut self, x: Var, idx: Arc<[usize]>, rows: usize) -> Result<Var, TensorError> {
        let (n, m) = self.dims(x);
        if idx.len() != n {
            return Err(mismatch("scatter_add_rows", self.shape(x), &[idx.len()]));
        }
        let src = self.data(x);
        let mut out = vec![T::zero(); rows * m];
        for (j, &i) in idx.iter().enumerate() {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "scatter_add_rows",
                    index: i,
                    len: rows,
                });
            }
            add_into(&mut out[i * m..(i + 1) * m], &src[j * m..(j + 1) * m]);
        }
        let value = Tensor::matrix(rows, m, out)?;
        self.push("scatter_add_rows", value, Op::ScatterAddRows { x, idx }, &[x])
    }

    /// Per-row, per-head scaled dot products: `y[e, h] = scale · ⟨a[e, h·], b[e, h·]⟩`.
    pub fn head_dot(&mut self, a: Var, b: Var, heads: usize, scale: T) -> Result<Var, TensorError> {
        let (n, m) = self.dims(a);
        if self.dims(b) != (n, m) || heads == 0 || m % heads != 0 {
            return Err(mismatch("head_dot", self.shape(a), self.shape(b)));
        }
        let hd = m / heads;
        let (da, db) = (self.data(a), self.data(b));
        let mut out = Vec::with_capacity(n * heads);
        for (ra, rb) in da.chunks_exact(m).zip(db.chunks_exact(m)) {
            for h in 0..heads {
                let s = ra[h * hd..(h + 1) * hd]
                    .iter()
                    .zip(&rb[h * hd..(h + 1) * hd])
                    .fold(T::zero(), |acc, (&x, &y)| acc + x * y);
                out.push(s * scale);
            }
        }
        let value = Tensor::matrix(n, heads, out)?;
        self.push("head_dot", value, Op::HeadDot { a, b, heads, scale }, &[a, b])
    }

    /// Softmax over contiguous row segments, independently per column.
    /// Segment `s` spans rows `offsets[s]..offsets[s + 1]`.
    pub fn segment_softmax(&mut self, x: Var, offsets: Arc<[usize]>) -> Result<Var, TensorError> {
        let (n, m) = self.dims(x);
        if offsets.last().copied() != Some(n) {
            return Err(mismatch(
                "segment_softmax",
                self.shape(x),
                &[offsets.last().copied().unwrap_or(0)],
            ));
        }
        let mut out = self.data(x).to_vec();
        let mut scratch = Vec::new();
        for w in offsets.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            for c in 0..m {
                scratch.clear();
                scratch.extend((lo..hi).map(|r| out[r * m + c]));
                softmax_in_place(&mut scratch);
                for (k, r) in (lo..hi).enumerate() {
                    out[r * m + c] = scratch[k];
                }
            }
        }
        let value = Tensor::matrix(n, m, out)?;
        self.push("segment_softmax", value, Op::SegmentSoftmax { x, offsets }, &[x])
    }

    /// `y[e, c] = x[e, c] · w[e, head(c)]` with `w` holding one weight per head.
    pub fn head_scale(&mut self, x: Var, w: Var, heads: usize) -> Result<Var, TensorError> {
        let (n, m) = self.dims(x);
        if self.dims(w) != (n, heads) || heads == 0 || m % heads != 0 {
            return Err(mismatch("head_scale", self.shape(x), self.shape(w)));
        }
        let hd = m / heads;
        let (dx, dw) = (self.data(x), self.data(w));
        let mut out = Vec::with_capacity(n * m);
        for (rx, rw) in dx.chunks_exact(m).zip(dw.chunks_exact(heads)) {
            for (seg, &w) in rx.chunks_exact(hd).zip(rw) {
                out.extend(seg.iter().map(|&v| v * w));
            }
        }
        let value = Tensor::matrix(n, m, out)?;
        self.push("head_scale", value, Op::HeadScale { x, w, heads }, &[x, w])
    }

    /// Mean over rows of `−log softmax(logits)[target]`, computed through
    /// log-sum-exp.
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: &[usize]) -> Result<Var, TensorError> {
        let (n, m) = self.dims(logits);
        if targets.len() != n {
            return Err(mismatch("cross_entropy_rows", self.shape(logits), &[targets.len()]));
        }
        let mut probs = self.data(logits).to_vec();
        let mut total = T::zero();
        for (row, &t) in probs.chunks_exact_mut(m).zip(targets) {
            if t >= m {
                return Err(TensorError::IndexOutOfRange {
                    op: "cross_entropy_rows",
                    index: t,
                    len: m,
                });
            }
            let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            total += lse - row[t];
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        let loss = total / T::from_usize(n).unwrap();
        let targets = targets.to_vec();
        self.push(
            "cross_entropy_rows",
            Tensor::scalar(loss),
            Op::CrossEntropyRows { logits, targets, probs },
            &[logits],
        )
    }

    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.value(a).len() != self.value(b).len() {
            return Err(mismatch("l1_loss", self.shape(a), self.shape(b)));
        }
        let n = T::from_usize(self.value(a).len()).unwrap();
        let s = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| (x - y).abs())
            .sum::<T>();
        self.push("l1_loss", Tensor::scalar(s / n), Op::L1Loss { a, b }, &[a, b])
    }

    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.value(a).len() != self.value(b).len() {
            return Err(mismatch("mse_loss", self.shape(a), self.shape(b)));
        }
        let n = T::from_usize(self.value(a).len()).unwrap();
        let s = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<T>();
        self.push("mse_loss", Tensor::scalar(s / n), Op::MseLoss { a, b }, &[a, b])
    }

    /// `Σ wᵢ·xᵢ` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var, TensorError> {
        let mut total = T::zero();
        for &(v, w) in terms {
            if self.value(v).len() != 1 {
                return Err(TensorError::NotScalarLoss(self.shape(v).to_vec()));
            }
            total += w * self.value(v).item();
        }
        let parents: Vec<Var> = terms.iter().map(|t| t.0).collect();
        self.push(
            "weighted_sum",
            Tensor::scalar(total),
            Op::WeightedSum { terms: terms.to_vec() },
            &parents,
        )
    }

    /// Back-propagates from a scalar `loss`, accumulating parameter
    /// gradients into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<(), TensorError> {
        self.backward_with_seed(loss, T::one(), store)
    }

    /// As [`Tape::backward`] with `d loss = seed`, e.g. `1 / batch_size`.
    pub fn backward_with_seed(&self, loss: Var, seed: T, store: &mut ParamStore<T>) -> Result<(), TensorError> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::NotScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![seed]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads, store);
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => add_into(existing, &g),
            slot => *slot = Some(g),
        }
    }

    fn accumulate_with(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.needs(v) {
            return;
        }
        let len = self.value(v).len();
        let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
        f(slot);
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>], store: &mut ParamStore<T>) {
        let node = &self.nodes[i];
        let (n, m) = (node.value.rows(), node.value.cols());
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => store.accumulate_grad(*id, g),
            Op::Linear { x, w } => {
                let gy = ArrayView2::from_shape((n, m), g).unwrap();
                if self.needs(*x) {
                    self.accumulate(grads, *x, owned_vec(gy.dot(&self.view(*w))));
                }
                if self.needs(*w) {
                    self.accumulate(grads, *w, owned_vec(gy.t().dot(&self.view(*x))));
                }
            }
            Op::MatMul { a, b } => {
                let gy = ArrayView2::from_shape((n, m), g).unwrap();
                if self.needs(*a) {
                    self.accumulate(grads, *a, owned_vec(gy.dot(&self.view(*b).t())));
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, owned_vec(self.view(*a).t().dot(&gy)));
                }
            }
            Op::AddBias { x, b } => {
                self.accumulate(grads, *x, g.to_vec());
                self.accumulate_with(grads, *b, |db| {
                    for row in g.chunks_exact(m) {
                        add_into(db, row);
                    }
                });
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Scale { x, c } => {
                self.accumulate(grads, *x, g.iter().map(|&v| v * *c).collect());
            }
            Op::Relu { x } => {
                let xs = self.data(*x);
                let gx = g
                    .iter()
                    .zip(xs)
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, gx);
            }
            Op::SoftmaxRows { x } => {
                let y = node.value.data();
                let mut gx = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks_exact(m).zip(y.chunks_exact(m)) {
                    let dot = gr.iter().zip(yr).fold(T::zero(), |a, (&gv, &yv)| a + gv * yv);
                    gx.extend(gr.iter().zip(yr).map(|(&gv, &yv)| yv * (gv - dot)));
                }
                self.accumulate(grads, *x, gx);
            }
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gam = self.data(*gamma);
                self.accumulate_with(grads, *gamma, |dg| {
                    for (gr, hr) in g.chunks_exact(m).zip(xhat.chunks_exact(m)) {
                        for j in 0..m {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                });
                self.accumulate_with(grads, *beta, |db| {
                    for gr in g.chunks_exact(m) {
                        add_into(db, gr);
                    }
                });
                if self.needs(*x) {
                    let mm = T::from_usize(m).unwrap();
                    let mut gx = Vec::with_capacity(g.len());
                    for ((gr, hr), &is) in g.chunks_exact(m).zip(xhat.chunks_exact(m)).zip(inv_std) {
                        let mut sum_d = T::zero();
                        let mut sum_dh = T::zero();
                        for j in 0..m {
                            let d = gr[j] * gam[j];
                            sum_d += d;
                            sum_dh += d * hr[j];
                        }
                        for j in 0..m {
                            let d = gr[j] * gam[j];
                            gx.push(is / mm * (mm * d - sum_d - hr[j] * sum_dh));
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::Dropout { x, mask } => {
                self.accumulate(grads, *x, g.iter().zip(mask).map(|(&a, &b)| a * b).collect());
            }
            Op::GatherRows { x, idx } => {
                let cols = m;
                self.accumulate_with(grads, *x, |dx| {
                    for (j, &r) in idx.iter().enumerate() {
                        add_into(&mut dx[r * cols..(r + 1) * cols], &g[j * cols..(j + 1) * cols]);
                    }
                });
            }
            Op::ScatterAddRows { x, idx } => {
                let cols = m;
                let mut gx = Vec::with_capacity(idx.len() * cols);
                for &r in idx.iter() {
                    gx.extend_from_slice(&g[r * cols..(r + 1) * cols]);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::HeadDot { a, b, heads, scale } => {
                let width = self.dims(*a).1;
                let hd = width / heads;
                let (va, vb) = (self.data(*a), self.data(*b));
                let spread = |other: &[T]| -> Vec<T> {
                    let mut out = Vec::with_capacity(other.len());
                    for (row, gr) in other.chunks_exact(width).zip(g.chunks_exact(*heads)) {
                        for (seg, &gh) in row.chunks_exact(hd).zip(gr) {
                            let f = gh * *scale;
                            out.extend(seg.iter().map(|&v| f * v));
                        }
                    }
                    out
                };
                if self.needs(*a) {
                    self.accumulate(grads, *a, spread(vb));
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, spread(va));
                }
            }
            Op::SegmentSoftmax { x, offsets } => {
                let y = node.value.data();
                let mut gx = vec![T::zero(); g.len()];
                for w in offsets.windows(2) {
                    for c in 0..m {
                        let dot = (w[0]..w[1]).fold(T::zero(), |acc, r| acc + g[r * m + c] * y[r * m + c]);
                        for r in w[0]..w[1] {
                            gx[r * m + c] = y[r * m + c] * (g[r * m + c] - dot);
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::HeadScale { x, w, heads } => {
                let hd = m / heads;
                let (vx, vw) = (self.data(*x), self.data(*w));
                if self.needs(*x) {
                    let mut gx = Vec::with_capacity(g.len());
                    for (gr, wr) in g.chunks_exact(m).zip(vw.chunks_exact(*heads)) {
                        for (seg, &wh) in gr.chunks_exact(hd).zip(wr) {
                            gx.extend(seg.iter().map(|&gv| gv * wh));
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                if self.needs(*w) {
                    let mut gw = Vec::with_capacity(n * heads);
                    for (gr, xr) in g.chunks_exact(m).zip(vx.chunks_exact(m)) {
                        for (gs, xs) in gr.chunks_exact(hd).zip(xr.chunks_exact(hd)) {
                            gw.push(gs.iter().zip(xs).fold(T::zero(), |acc, (&a, &b)| acc + a * b));
                        }
                    }
                    self.accumulate(grads, *w, gw);
                }
            }
            Op::CrossEntropyRows { logits, targets, probs } => {
                let k = self.dims(*logits).1;
                let scale = g[0] / T::from_usize(targets.len()).unwrap();
                let mut gx = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    gx[r * k + t] -= T::one();
                }
                gx.iter_mut().for_each(|v| *v *= scale);
                self.accumulate(grads, *logits, gx);
            }
            Op::L1Loss { a, b } => {
                let scale = g[0] / T::from_usize(self.value(*a).len()).unwrap();
                let ga: Vec<T> = self
                    .data(*a)
                    .iter()
                    .zip(self.data(*b))
                    .map(|(&x, &y)| {
                        let d = x - y;
                        if d > T::zero() {
                            scale
                        } else if d < T::zero() {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                if self.needs(*b) {
                    self.accumulate(grads, *b, ga.iter().map(|&v| -v).collect());
                }
                self.accumulate(grads, *a, ga);
            }
            Op::MseLoss { a, b } => {
                let scale = T::lit(2.0) * g[0] / T::from_usize(self.value(*a).len()).unwrap();
                let ga: Vec<T> = self
                    .data(*a)
                    .iter()
                    .zip(self.data(*b))
                    .map(|(&x, &y)| (x - y) * scale)
                    .collect();
                if self.needs(*b) {
                    self.accumulate(grads, *b, ga.iter().map(|&v| -v).collect());
                }
                self.accumulate(grads, *a, ga);
            }
            Op::WeightedSum { terms } => {
                for &(v, w) in terms {
                    self.accumulate(grads, v, vec![w * g[0]]);
                }
            }
        }
    }
}

/// Numerically stable in-place softmax.
pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor<f64> {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(t(1, 3, &[0.0, 0.0, 0.0])).unwrap();
        let y = tape.softmax_rows(x).unwrap();
        for &v in tape.value(y).data() {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_handles_large_logits() {
        let mut tape = Tape::new();
        let x = tape.constant(t(1, 3, &[1000.0, 1000.0, -1000.0])).unwrap();
        let y = tape.softmax_rows(x).unwrap();
        assert_abs_diff_eq!(tape.value(y).data()[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::new();
        let i = tape.constant(t(2, 2, &[1.0, 0.0, 0.0, 1.0])).unwrap();
        let m = tape.constant(t(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0])).unwrap();
        let y = tape.matmul(i, m).unwrap();
        assert_eq!(tape.value(y), tape.value(m));
        assert!(matches!(tape.matmul(m, m), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn uniform_cross_entropy_is_ln3() {
        let mut tape = Tape::new();
        let x = tape.constant(t(2, 3, &[0.0; 6])).unwrap();
        let l = tape.cross_entropy_rows(x, &[0, 2]).unwrap();
        assert_abs_diff_eq!(tape.value(l).item(), 3f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn mse_gradient_is_2x_over_n() {
        let mut store = ParamStore::new();
        let id = store.insert("x", t(1, 4, &[1.0, -2.0, 0.5, 3.0])).unwrap();
        let mut tape = Tape::new();
        let x = tape.param(&store, id);
        let zero = tape.constant(Tensor::zeros(&[1, 4])).unwrap();
        let l = tape.mse_loss(x, zero).unwrap();
        tape.backward(l, &mut store).unwrap();
        for (g, v) in store.grad(id).data().iter().zip([1.0, -2.0, 0.5, 3.0]) {
            assert_abs_diff_eq!(*g, 2.0 * v / 4.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn relu_blocks_negative_gradient() {
        let mut store = ParamStore::new();
        let id = store.insert("x", t(1, 2, &[-1.0, 2.0])).unwrap();
        let mut tape = Tape::new();
        let x = tape.param(&store, id);
        let y = tape.relu(x).unwrap();
        let zero = tape.constant(Tensor::zeros(&[1, 2])).unwrap();
        let l = tape.l1_loss(y, zero).unwrap();
        tape.backward(l, &mut store).unwrap();
        assert_eq!(store.grad(id).data(), &[0.0, 0.5]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut store = ParamStore::<f64>::new();
        let mut tape = Tape::new();
        let x = tape.constant(t(1, 2, &[1.0, 2.0])).unwrap();
        assert!(matches!(
            tape.backward(x, &mut store),
            Err(TensorError::NotScalarLoss(_))
        ));
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.constant(t(1, 1, &[f64::MAX])).unwrap();
        assert!(matches!(
            tape.scale(x, 10.0),
            Err(TensorError::NonFinite { op: "scale" })
        ));
        assert!(tape.constant(t(1, 1, &[f64::NAN])).is_err());
    }

    #[test]
    fn dropout_scaling_and_identity() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(50, 20, |_, _| 1.0f64)).unwrap();
        let y = tape.dropout(x, 0.25, &mut rng).unwrap();
        let vals = tape.value(y).data();
        assert!(vals.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-15));
        let kept = vals.iter().filter(|&&v| v > 0.0).count() as f64 / vals.len() as f64;
        assert!((kept - 0.75).abs() < 0.05);
        let z = tape.dropout(x, 0.0, &mut rng).unwrap();
        assert_eq!(tape.value(z), tape.value(x));
    }

    #[test]
    fn layer_norm_rows_standardize() {
        let mut tape = Tape::new();
        let x = tape
            .constant(t(2, 4, &[1.0, 2.0, 3.0, 4.0, -5.0, 0.0, 5.0, 10.0]))
            .unwrap();
        let g = tape.constant(t(1, 4, &[1.0; 4])).unwrap();
        let b = tape.constant(Tensor::zeros(&[1, 4])).unwrap();
        let y = tape.layer_norm_rows(x, g, b).unwrap();
        for row in tape.value(y).data().chunks(4) {
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(var, 1.0, epsilon = 1e-4);
        }
    }

    #[test]
    fn gather_scatter_are_adjoint() {
        let idx: Arc<[usize]> = vec![2, 0, 2, 1].into();
        let mut tape = Tape::new();
        let x = tape.constant(t(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0])).unwrap();
        let g = tape.gather_rows(x, idx.clone()).unwrap();
        assert_eq!(tape.value(g).data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0, 3.0, 4.0]);
        let s = tape.scatter_add_rows(g, idx, 3).unwrap();
        assert_eq!(tape.value(s).data(), &[1.0, 2.0, 3.0, 4.0, 10.0, 12.0]);
    }

    #[test]
    fn segment_softmax_sums_to_one_per_segment() {
        let offsets: Arc<[usize]> = vec![0, 1, 4].into();
        let mut tape = Tape::new();
        let x = tape
            .constant(t(4, 2, &[3.0, -1.0, 0.1, 0.2, 0.3, 0.4, -2.0, 5.0]))
            .unwrap();
        let y = tape.segment_softmax(x, offsets).unwrap();
        let v = tape.value(y).data();
        assert_eq!((v[0], v[1]), (1.0, 1.0));
        for c in 0..2 {
            let s: f64 = (1..4).map(|r| v[r * 2 + c]).sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        }
    }
}

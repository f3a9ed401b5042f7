//! Operation recording and reverse-mode differentiation.
//!
//! Every forward op appends a node holding its value; `backward` walks the
//! nodes in reverse and pushes adjoints to parents. Nodes created from a
//! [`ParamStore`] remember the parameter name so gradients land in the store.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use super::store::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Row-to-target assignment for [`Tape::pool_mean`].
#[derive(Debug, Clone)]
pub struct PoolSource {
    pub rows: Var,
    pub targets: Vec<usize>,
}

#[derive(Debug, Clone)]
struct Interp {
    lo: usize,
    hi: usize,
    w_lo: f64,
    w_hi: f64,
}

/// Separable bilinear interpolation weights (half-pixel centers, edge clamped).
fn interp_table(src: usize, factor: usize) -> Vec<Interp> {
    let dst = src * factor;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            let frac = pos - lo as f64;
            Interp { lo, hi, w_lo: 1.0 - frac, w_hi: frac }
        })
        .collect()
}

#[derive(Debug, Clone)]
struct Upsample {
    h: usize,
    w: usize,
    c: usize,
    factor: usize,
    rows: Vec<Interp>,
    cols: Vec<Interp>,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(String),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    RmsNorm(Var, T),
    Gather(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    PoolMean { sources: Vec<PoolSource>, base: Var, counts: Vec<usize> },
    Upsample(Var, Box<Upsample>),
    Reshape(Var),
    SoftmaxCrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
    BceWithLogits { logits: Var, targets: Vec<T> },
    MeanSquaredError(Var, Var),
    Sum(Var),
    WeightedSum(Vec<(Var, T)>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Records a forward computation for one backward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch(format!("{what}: {a:?} vs {b:?}"))
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn rms<T: Scalar>(row: &[T], eps: T) -> T {
    let n = T::cast_from(row.len().max(1) as f64);
    (row.iter().fold(T::zero(), |s, &v| s + v * v) / n + eps).sqrt()
}

/// `σ'(x)` from the pre-activation, so it stays nonzero where `σ(x)` rounds to 1.
fn sigmoid_grad<T: Scalar>(x: T) -> T {
    let e = (-x.abs()).exp();
    let d = T::one() + e;
    e / (d * d)
}

#[allow(clippy::too_many_arguments)]
fn matmul_into<T: Scalar>(
    a: &[T],
    a_dims: (usize, usize),
    a_t: bool,
    b: &[T],
    b_dims: (usize, usize),
    b_t: bool,
    out: &mut [T],
    out_dims: (usize, usize),
    beta: T,
) {
    let av = ArrayView2::from_shape(a_dims, a).expect("lhs shape");
    let bv = ArrayView2::from_shape(b_dims, b).expect("rhs shape");
    let mut ov = ArrayViewMut2::from_shape(out_dims, out).expect("out shape");
    match (a_t, b_t) {
        (false, false) => general_mat_mul(T::one(), &av, &bv, beta, &mut ov),
        (true, false) => general_mat_mul(T::one(), &av.t(), &bv, beta, &mut ov),
        (false, true) => general_mat_mul(T::one(), &av, &bv.t(), beta, &mut ov),
        (true, true) => general_mat_mul(T::one(), &av.t(), &bv.t(), beta, &mut ov),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Sign of every input to a piecewise-linear activation, in tape order.
    /// Two forward passes with equal patterns lie on the same linear piece.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for n in &self.nodes {
            if let Op::LeakyRelu(a, _) = n.op {
                out.extend(self.nodes[a.0].value.data().iter().map(|v| *v >= T::zero()));
            }
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf, "constant")
    }

    /// Records the current value of a stored parameter.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        let value = store.get(name)?.clone();
        self.push(value, Op::Param(name.to_string()), "param")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(self.value(a).data(), (m, k), false, self.value(b).data(), (k, n), false, &mut out, (m, n), T::zero());
        self.push(Tensor::from_vec([m, n], out)?, Op::MatMul(a, b), "matmul")
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.value(x).dims2()?;
        if self.value(bias).len() != n {
            return Err(mismatch("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n) {
            row.iter_mut().zip(&b).for_each(|(v, &bb)| *v = *v + bb);
        }
        self.push(out, Op::AddBias(x, bias), "add_bias")
    }

    fn zip_same(&mut self, a: Var, b: Var, what: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(what, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "add", |x, y| x + y)?;
        self.push(t, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "sub", |x, y| x - y)?;
        self.push(t, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "mul", |x, y| x * y)?;
        self.push(t, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let t = self.value(a).map(|v| v * c);
        self.push(t, Op::Scale(a, c), "scale")
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        let t = self.value(a).map(|v| v + c);
        self.push(t, Op::AddScalar(a), "add_scalar")
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Result<Var> {
        let t = self.value(a).map(|v| if v > T::zero() { v } else { v * slope });
        self.push(t, Op::LeakyRelu(a, slope), "leaky_relu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(sigmoid);
        self.push(t, Op::Sigmoid(a), "sigmoid")
    }

    /// Divides each row by its root mean square, `sqrt(mean(x²) + eps)`.
    pub fn rms_norm_rows(&mut self, a: Var, eps: T) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(m * n);
        for row in x.chunks(n.max(1)) {
            let r = rms(row, eps);
            out.extend(row.iter().map(|&v| v / r));
        }
        self.push(Tensor::from_vec([m, n], out)?, Op::RmsNorm(a, eps), "rms_norm_rows")
    }

    /// Selects rows of a `v×d` table.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (v, d) = self.value(table).dims2()?;
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= v {
                return Err(Error::IndexOutOfRange { index: i, size: v });
            }
            out.extend_from_slice(self.value(table).row(i));
        }
        self.push(Tensor::from_vec([indices.len(), d], out)?, Op::Gather(table, indices.to_vec()), "gather_rows")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::ShapeMismatch("concat of nothing".into()))?;
        let (m, _) = self.value(first).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != m {
                return Err(mismatch("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        self.push(Tensor::from_vec([m, n], out)?, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if start >= end || end > n {
            return Err(Error::ShapeMismatch(format!("slice {start}..{end} of {n} columns")));
        }
        let src = self.value(a);
        let mut out = Vec::with_capacity(m * (end - start));
        for r in 0..m {
            out.extend_from_slice(&src.row(r)[start..end]);
        }
        self.push(Tensor::from_vec([m, end - start], out)?, Op::SliceCols(a, start), "slice_cols")
    }

    /// Averages source rows into target rows; targets that receive nothing copy `base`.
    pub fn pool_mean(&mut self, sources: Vec<PoolSource>, base: Var) -> Result<Var> {
        let (n, d) = self.value(base).dims2()?;
        let mut counts = vec![0usize; n];
        let mut sum = vec![T::zero(); n * d];
        for s in &sources {
            let (m, sd) = self.value(s.rows).dims2()?;
            if sd != d || m != s.targets.len() {
                return Err(mismatch("pool_mean", self.shape(s.rows), self.shape(base)));
            }
            for (r, &t) in s.targets.iter().enumerate() {
                if t >= n {
                    return Err(Error::IndexOutOfRange { index: t, size: n });
                }
                counts[t] += 1;
                let row = self.value(s.rows).row(r);
                sum[t * d..(t + 1) * d].iter_mut().zip(row).for_each(|(a, &b)| *a = *a + b);
            }
        }
        let base_t = self.value(base);
        for (t, &c) in counts.iter().enumerate() {
            let dst = &mut sum[t * d..(t + 1) * d];
            if c == 0 {
                dst.copy_from_slice(base_t.row(t));
            } else {
                let inv = T::one() / lit::<T>(c as f64);
                dst.iter_mut().for_each(|v| *v = *v * inv);
            }
        }
        self.push(Tensor::from_vec([n, d], sum)?, Op::PoolMean { sources, base, counts }, "pool_mean")
    }

    /// Bilinear upsampling of `m` flattened `h×w×c` grids by an integer factor.
    pub fn upsample_bilinear(&mut self, x: Var, h: usize, w: usize, c: usize, factor: usize) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if n != h * w * c || factor == 0 {
            return Err(Error::ShapeMismatch(format!("upsample of {n} columns as {h}x{w}x{c}")));
        }
        let spec = Upsample { h, w, c, factor, rows: interp_table(h, factor), cols: interp_table(w, factor) };
        let (hh, ww) = (h * factor, w * factor);
        let mut out = vec![T::zero(); m * hh * ww * c];
        let mut tmp = vec![T::zero(); hh * w * c];
        let src = self.value(x).data();
        for b in 0..m {
            let inp = &src[b * n..(b + 1) * n];
            upsample_rows(inp, &mut tmp, &spec);
            upsample_cols(&tmp, &mut out[b * hh * ww * c..(b + 1) * hh * ww * c], &spec);
        }
        self.push(Tensor::from_vec([m, hh * ww * c], out)?, Op::Upsample(x, Box::new(spec)), "upsample_bilinear")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        self.push(t, Op::Reshape(a), "reshape")
    }

    /// Mean over rows of `-log softmax(logits)[target]`, with row-max stabilization.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, c) = self.value(logits).dims2()?;
        if targets.len() != n {
            return Err(Error::ShapeMismatch(format!("{} targets for {n} rows", targets.len())));
        }
        if n == 0 {
            return Err(Error::ShapeMismatch("cross-entropy over zero rows".into()));
        }
        let x = self.value(logits).data();
        let mut probs = vec![T::zero(); n * c];
        let mut total = T::zero();
        for r in 0..n {
            let t = targets[r];
            if t >= c {
                return Err(Error::IndexOutOfRange { index: t, size: c });
            }
            let row = &x[r * c..(r + 1) * c];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (p, &v) in probs[r * c..(r + 1) * c].iter_mut().zip(row) {
                *p = (v - max).exp();
                z = z + *p;
            }
            probs[r * c..(r + 1) * c].iter_mut().for_each(|p| *p = *p / z);
            total = total + (z.ln() + max - row[t]);
        }
        let loss = total / lit::<T>(n as f64);
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy { logits, targets: targets.to_vec(), probs },
            "softmax_cross_entropy",
        )
    }

    /// Mean binary cross-entropy between `sigmoid(logits)` and targets in [0, 1].
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor<T>) -> Result<Var> {
        let x = self.value(logits);
        if x.shape() != targets.shape() {
            return Err(mismatch("bce_with_logits", x.shape(), targets.shape()));
        }
        if x.is_empty() {
            return Err(Error::ShapeMismatch("bce over zero elements".into()));
        }
        let total = x.data().iter().zip(targets.data()).fold(T::zero(), |acc, (&v, &t)| {
            acc + v.max(T::zero()) - v * t + (T::one() + (-v.abs()).exp()).ln()
        });
        let loss = total / lit::<T>(x.len() as f64);
        self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits { logits, targets: targets.data().to_vec() },
            "bce_with_logits",
        )
    }

    /// Mean of squared elementwise differences.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = self.zip_same(pred, target, "mse", |x, y| x - y)?;
        if d.is_empty() {
            return Err(Error::ShapeMismatch("mse over zero elements".into()));
        }
        let loss = d.data().iter().fold(T::zero(), |a, &v| a + v * v) / lit::<T>(d.len() as f64);
        self.push(Tensor::scalar(loss), Op::MeanSquaredError(pred, target), "mse")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().fold(T::zero(), |acc, &v| acc + v);
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    /// `Σ wᵢ·xᵢ` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let mut s = T::zero();
        for &(v, w) in terms {
            s = s + w * self.value(v).item()?;
        }
        self.push(Tensor::scalar(s), Op::WeightedSum(terms.to_vec()), "weighted_sum")
    }

    /// Propagates d(loss)/d(node) to every recorded node and adds parameter
    /// gradients into `store`. A tape supports a single backward pass.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        self.value(loss).item()?;
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(name) => {
                    let t = Tensor::from_vec(node.value.shape(), g)?;
                    store.accumulate_grad(name, &t)?;
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.value(*a).dims2()?;
                    let (_, n) = self.value(*b).dims2()?;
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    let ga = acc(&mut grads, *a, m * k);
                    matmul_into(&g, (m, n), false, bv, (k, n), true, ga, (m, k), T::one());
                    let gb = acc(&mut grads, *b, k * n);
                    matmul_into(av, (m, k), true, &g, (m, n), false, gb, (k, n), T::one());
                }
                Op::AddBias(x, bias) => {
                    let n = self.value(*bias).len();
                    add_into(acc(&mut grads, *x, g.len()), &g);
                    let gb = acc(&mut grads, *bias, n);
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut grads, *a, g.len()), &g);
                    add_into(acc(&mut grads, *b, g.len()), &g);
                }
                Op::Sub(a, b) => {
                    add_into(acc(&mut grads, *a, g.len()), &g);
                    acc(&mut grads, *b, g.len()).iter_mut().zip(&g).for_each(|(d, &v)| *d = *d - v);
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    let ga = acc(&mut grads, *a, g.len());
                    ga.iter_mut().zip(&g).zip(bv).for_each(|((d, &v), &y)| *d = *d + v * y);
                    let gb = acc(&mut grads, *b, g.len());
                    gb.iter_mut().zip(&g).zip(av).for_each(|((d, &v), &x)| *d = *d + v * x);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    acc(&mut grads, *a, g.len()).iter_mut().zip(&g).for_each(|(d, &v)| *d = *d + v * c);
                }
                Op::AddScalar(a) | Op::Reshape(a) => add_into(acc(&mut grads, *a, g.len()), &g),
                Op::LeakyRelu(a, slope) => {
                    let x = self.value(*a).data();
                    let ga = acc(&mut grads, *a, g.len());
                    for ((d, &v), &xi) in ga.iter_mut().zip(&g).zip(x) {
                        *d = *d + if xi > T::zero() { v } else { v * *slope };
                    }
                }
                Op::Sigmoid(a) => {
                    let x = self.value(*a).data();
                    let ga = acc(&mut grads, *a, g.len());
                    for ((d, &v), &x) in ga.iter_mut().zip(&g).zip(x) {
                        *d = *d + v * sigmoid_grad(x);
                    }
                }
                Op::RmsNorm(a, eps) => {
                    let (_, n) = self.value(*a).dims2()?;
                    let x = self.value(*a).data();
                    let y = node.value.data();
                    let ga = acc(&mut grads, *a, g.len());
                    let inv_n = T::one() / T::cast_from(n as f64);
                    for (((gx, gy), xr), yr) in ga.chunks_mut(n).zip(g.chunks(n)).zip(x.chunks(n)).zip(y.chunks(n)) {
                        let r = rms(xr, *eps);
                        let dot = gy.iter().zip(yr).fold(T::zero(), |s, (&u, &v)| s + u * v) * inv_n;
                        for ((d, &u), &v) in gx.iter_mut().zip(gy).zip(yr) {
                            *d = *d + (u - v * dot) / r;
                        }
                    }
                }
                Op::Gather(table, idx) => {
                    let (v, dcols) = self.value(*table).dims2()?;
                    let gt = acc(&mut grads, *table, v * dcols);
                    for (r, &i) in idx.iter().enumerate() {
                        add_into(&mut gt[i * dcols..(i + 1) * dcols], &g[r * dcols..(r + 1) * dcols]);
                    }
                }
                Op::ConcatCols(parts) => {
                    let (m, n) = node.value.dims2()?;
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).dims2()?.1;
                        let gp = acc(&mut grads, p, m * w);
                        for r in 0..m {
                            add_into(&mut gp[r * w..(r + 1) * w], &g[r * n + offset..r * n + offset + w]);
                        }
                        offset += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let (m, n) = self.value(*a).dims2()?;
                    let w = node.value.dims2()?.1;
                    let ga = acc(&mut grads, *a, m * n);
                    for r in 0..m {
                        add_into(&mut ga[r * n + start..r * n + start + w], &g[r * w..(r + 1) * w]);
                    }
                }
                Op::PoolMean { sources, base, counts } => {
                    let (n, d) = node.value.dims2()?;
                    for s in sources {
                        let gs = acc(&mut grads, s.rows, s.targets.len() * d);
                        for (r, &t) in s.targets.iter().enumerate() {
                            let inv = T::one() / lit::<T>(counts[t] as f64);
                            for (dst, &v) in gs[r * d..(r + 1) * d].iter_mut().zip(&g[t * d..(t + 1) * d]) {
                                *dst = *dst + v * inv;
                            }
                        }
                    }
                    let gbase = acc(&mut grads, *base, n * d);
                    for (t, _) in counts.iter().enumerate().filter(|(_, &c)| c == 0) {
                        add_into(&mut gbase[t * d..(t + 1) * d], &g[t * d..(t + 1) * d]);
                    }
                }
                Op::Upsample(x, spec) => {
                    let (m, n) = self.value(*x).dims2()?;
                    let big = n * spec.factor * spec.factor;
                    let mut tmp = vec![T::zero(); spec.h * spec.factor * spec.w * spec.c];
                    let gx = acc(&mut grads, *x, m * n);
                    for b in 0..m {
                        tmp.iter_mut().for_each(|v| *v = T::zero());
                        upsample_cols_transpose(&g[b * big..(b + 1) * big], &mut tmp, spec);
                        upsample_rows_transpose(&tmp, &mut gx[b * n..(b + 1) * n], spec);
                    }
                }
                Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                    let (n, c) = self.value(*logits).dims2()?;
                    let scale = g[0] / lit::<T>(n as f64);
                    let gl = acc(&mut grads, *logits, n * c);
                    for r in 0..n {
                        for j in 0..c {
                            let onehot = if targets[r] == j { T::one() } else { T::zero() };
                            gl[r * c + j] = gl[r * c + j] + scale * (probs[r * c + j] - onehot);
                        }
                    }
                }
                Op::BceWithLogits { logits, targets } => {
                    let x = self.value(*logits).data();
                    let scale = g[0] / lit::<T>(x.len() as f64);
                    let gl = acc(&mut grads, *logits, x.len());
                    for ((d, &v), &t) in gl.iter_mut().zip(x).zip(targets) {
                        *d = *d + scale * (sigmoid(v) - t);
                    }
                }
                Op::MeanSquaredError(p, t) => {
                    let pv = self.value(*p).data();
                    let tv = self.value(*t).data();
                    let scale = g[0] * lit::<T>(2.0) / lit::<T>(pv.len() as f64);
                    let diff: Vec<T> = pv.iter().zip(tv).map(|(&a, &b)| scale * (a - b)).collect();
                    add_into(acc(&mut grads, *p, diff.len()), &diff);
                    acc(&mut grads, *t, diff.len()).iter_mut().zip(&diff).for_each(|(d, &v)| *d = *d - v);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    acc(&mut grads, *a, n).iter_mut().for_each(|d| *d = *d + g[0]);
                }
                Op::WeightedSum(terms) => {
                    for &(v, w) in terms {
                        let gv = acc(&mut grads, v, 1);
                        gv[0] = gv[0] + g[0] * w;
                    }
                }
            }
        }
        Ok(())
    }
}

fn acc<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s);
}

// Layout of one grid: index (row * w + col) * c + channel.

fn upsample_rows<T: Scalar>(inp: &[T], tmp: &mut [T], s: &Upsample) {
    let stride = s.w * s.c;
    for (i, ip) in s.rows.iter().enumerate() {
        let (wl, wh) = (lit::<T>(ip.w_lo), lit::<T>(ip.w_hi));
        let lo = &inp[ip.lo * stride..(ip.lo + 1) * stride];
        let hi = &inp[ip.hi * stride..(ip.hi + 1) * stride];
        for ((d, &a), &b) in tmp[i * stride..(i + 1) * stride].iter_mut().zip(lo).zip(hi) {
            *d = wl * a + wh * b;
        }
    }
}

fn upsample_cols<T: Scalar>(tmp: &[T], out: &mut [T], s: &Upsample) {
    let (c, w, ww) = (s.c, s.w, s.w * s.factor);
    for i in 0..s.h * s.factor {
        let src = &tmp[i * w * c..(i + 1) * w * c];
        let dst = &mut out[i * ww * c..(i + 1) * ww * c];
        for (j, ip) in s.cols.iter().enumerate() {
            let (wl, wh) = (lit::<T>(ip.w_lo), lit::<T>(ip.w_hi));
            for ch in 0..c {
                dst[j * c + ch] = wl * src[ip.lo * c + ch] + wh * src[ip.hi * c + ch];
            }
        }
    }
}

fn upsample_cols_transpose<T: Scalar>(gout: &[T], gtmp: &mut [T], s: &Upsample) {
    let (c, w, ww) = (s.c, s.w, s.w * s.factor);
    for i in 0..s.h * s.factor {
        let src = &gout[i * ww * c..(i + 1) * ww * c];
        let dst = &mut gtmp[i * w * c..(i + 1) * w * c];
        for (j, ip) in s.cols.iter().enumerate() {
            let (wl, wh) = (lit::<T>(ip.w_lo), lit::<T>(ip.w_hi));
            for ch in 0..c {
                let v = src[j * c + ch];
                dst[ip.lo * c + ch] = dst[ip.lo * c + ch] + wl * v;
                dst[ip.hi * c + ch] = dst[ip.hi * c + ch] + wh * v;
            }
        }
    }
}

fn upsample_rows_transpose<T: Scalar>(gtmp: &[T], gin: &mut [T], s: &Upsample) {
    let stride = s.w * s.c;
    for (i, ip) in s.rows.iter().enumerate() {
        let (wl, wh) = (lit::<T>(ip.w_lo), lit::<T>(ip.w_hi));
        for k in 0..stride {
            let v = gtmp[i * stride + k];
            gin[ip.lo * stride + k] = gin[ip.lo * stride + k] + wl * v;
            gin[ip.hi * stride + k] = gin[ip.hi * stride + k] + wh * v;
        }
    }
}

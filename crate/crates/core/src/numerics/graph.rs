use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, mm_nn, mm_nt, mm_tn};
use super::{NumericsError, Tensor};
use crate::Scalar;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MatMul { a: Var, b: Var, shared_b: bool },
    Permute { x: Var, axes: Vec<usize> },
    Reshape(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, eps: T },
    Gelu(Var),
    Softmax(Var),
    Dropout { x: Var, mask: Vec<T> },
    GatherRows { x: Var, idx: Vec<usize> },
    ConcatRows(Vec<Var>),
    SegmentMean { x: Var, segments: Vec<(usize, usize)> },
    Sum(Var),
    Mean(Var),
    CrossEntropy { logits: Var, targets: Vec<usize> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of recorded operations. Node creation order is a topological order,
/// so the backward pass walks the node list in reverse.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    recording: bool,
    dropout_rng: Option<ChaCha8Rng>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    /// Recording graph in evaluation mode (dropout is the identity).
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
            dropout_rng: None,
        }
    }

    /// Graph that evaluates forward values only; `backward` fails with
    /// [`NumericsError::NoTape`].
    pub fn no_grad() -> Self {
        Self {
            nodes: Vec::new(),
            recording: false,
            dropout_rng: None,
        }
    }

    /// Recording graph in training mode: dropout masks are drawn from a
    /// generator seeded with `seed`.
    pub fn training(seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
            dropout_rng: Some(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    pub fn is_recording(&self) -> bool {
        self.recording
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push_leaf(t, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push_leaf(t, false)
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: requires_grad && self.recording,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var, NumericsError> {
        if !value.is_finite() {
            return Err(NumericsError::Overflow { op: name });
        }
        let requires_grad = self.recording && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, name: &str, a: Var, b: Var) -> Result<(), NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(NumericsError::Shape(format!(
                "{name}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |x, y| x + y);
        self.push("add", v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |x, y| x - y);
        self.push("sub", v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |x, y| x * y);
        self.push("mul", v, Op::Mul(a, b), &[a, b])
    }

    /// `a + b` where `b`'s shape equals the trailing axes of `a` and is
    /// repeated over the leading axes.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(NumericsError::Shape(format!("add_bias: {sa:?} vs {sb:?}")));
        }
        let tb = self.value(b).data().to_vec();
        let ta = self.value(a);
        let n = tb.len().max(1);
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + tb[i % n])
            .collect();
        let v = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("add_bias", v, Op::AddBias(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var, NumericsError> {
        let v = self.value(a).map(|x| x * s);
        self.push("scale", v, Op::Scale(a, s), &[a])
    }

    /// Batched matrix product. `a: [..., m, k]`, `b: [..., k, n]` with equal
    /// leading axes, or `b: [k, n]` shared across all of `a`'s leading axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(NumericsError::Shape(format!("matmul needs rank >= 2: {sa:?}, {sb:?}")));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let shared_b = sb.len() == 2 && sa.len() > 2;
        let lead_ok = shared_b || sa[..sa.len() - 2] == sb[..sb.len() - 2];
        if k != k2 || !lead_ok {
            return Err(NumericsError::Shape(format!("matmul: {sa:?} x {sb:?}")));
        }
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let mut out = vec![T::zero(); batch * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for bi in 0..batch {
            let boff = if shared_b { 0 } else { bi * k * n };
            mm_nn(
                &da[bi * m * k..(bi + 1) * m * k],
                &db[boff..boff + k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let mut shape = sa[..sa.len() - 2].to_vec();
        shape.extend([m, n]);
        let v = Tensor::new(shape, out)?;
        self.push("matmul", v, Op::MatMul { a, b, shared_b }, &[a, b])
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var, NumericsError> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(NumericsError::Shape(format!("permute {axes:?} on {shape:?}")));
        }
        let (data, out_shape) = kernels::permute(self.value(x).data(), &shape, axes);
        let v = Tensor::new(out_shape, data)?;
        self.push("permute", v, Op::Permute { x, axes: axes.to_vec() }, &[x])
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var, NumericsError> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(NumericsError::Shape("transpose needs rank >= 2".into()));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(x, &axes)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let v = self.value(x).reshape(shape.to_vec())?;
        self.push("reshape", v, Op::Reshape(x), &[x])
    }

    /// Normalizes over the last axis, then applies `gain` and `bias`
    /// (both shaped like the last axis).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var, NumericsError> {
        let d = self.value(x).last_dim();
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(NumericsError::Shape(format!(
                "layer_norm: last axis {d}, gain {:?}, bias {:?}",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let tx = self.value(x);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut out = vec![T::zero(); tx.numel()];
        for (row, orow) in tx.data().chunks(d).zip(out.chunks_mut(d)) {
            let (mean, rstd) = row_stats(row, eps);
            for j in 0..d {
                orow[j] = (row[j] - mean) * rstd * g[j] + b[j];
            }
        }
        let v = Tensor::new(tx.shape().to_vec(), out)?;
        self.push("layer_norm", v, Op::LayerNorm { x, gain, bias, eps }, &[x, gain, bias])
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var, NumericsError> {
        let v = self.value(x).map(kernels::gelu);
        self.push("gelu", v, Op::Gelu(x), &[x])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var, NumericsError> {
        let tx = self.value(x);
        let data = kernels::softmax_rows(tx.data(), tx.last_dim());
        let v = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("softmax", v, Op::Softmax(x), &[x])
    }

    /// Inverted dropout. The identity for `p == 0` or outside training mode.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var, NumericsError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NumericsError::Shape(format!("dropout probability {p} outside [0, 1)")));
        }
        let Some(rng) = self.dropout_rng.as_mut() else {
            return Ok(x);
        };
        if p == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let n = self.nodes[x.0].value.numel();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let tx = self.value(x);
        let data = tx.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let v = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("dropout", v, Op::Dropout { x, mask }, &[x])
    }

    /// Selects rows (first axis) by index; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var, NumericsError> {
        let tx = self.value(x);
        let shape = tx.shape().to_vec();
        if shape.is_empty() {
            return Err(NumericsError::Shape("gather_rows on scalar".into()));
        }
        let rows = shape[0];
        let width = if rows == 0 { 0 } else { tx.numel() / rows };
        let mut data = Vec::with_capacity(idx.len() * width);
        for &i in idx {
            if i >= rows {
                return Err(NumericsError::Index { index: i, len: rows });
            }
            data.extend_from_slice(&tx.data()[i * width..(i + 1) * width]);
        }
        let mut out_shape = shape;
        out_shape[0] = idx.len();
        let v = Tensor::new(out_shape, data)?;
        self.push("gather_rows", v, Op::GatherRows { x, idx: idx.to_vec() }, &[x])
    }

    /// Concatenates along the first axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let Some(&first) = parts.first() else {
            return Err(NumericsError::Shape("concat_rows of nothing".into()));
        };
        let tail = self.shape(first)[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != *tail {
                return Err(NumericsError::Shape(format!("concat_rows: {s:?} vs [_, {tail:?}]")));
            }
            rows += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let v = Tensor::new(shape, data)?;
        self.push("concat_rows", v, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Row `i` of the output is the mean of input rows `segments[i].0..segments[i].1`.
    pub fn segment_mean(&mut self, x: Var, segments: &[(usize, usize)]) -> Result<Var, NumericsError> {
        let tx = self.value(x);
        if tx.rank() != 2 {
            return Err(NumericsError::Shape("segment_mean needs a matrix".into()));
        }
        let (rows, d) = (tx.shape()[0], tx.shape()[1]);
        let mut data = vec![T::zero(); segments.len() * d];
        for (s, &(lo, hi)) in segments.iter().enumerate() {
            if lo >= hi || hi > rows {
                return Err(NumericsError::Shape(format!("segment {lo}..{hi} invalid for {rows} rows")));
            }
            let inv = T::one() / T::lit((hi - lo) as f64);
            let out = &mut data[s * d..(s + 1) * d];
            for r in lo..hi {
                for (o, &v) in out.iter_mut().zip(tx.row(r)) {
                    *o += v;
                }
            }
            for o in out.iter_mut() {
                *o *= inv;
            }
        }
        let v = Tensor::new([segments.len(), d], data)?;
        self.push("segment_mean", v, Op::SegmentMean { x, segments: segments.to_vec() }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, NumericsError> {
        let v = Tensor::scalar(self.value(x).sum());
        self.push("sum", v, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, NumericsError> {
        let t = self.value(x);
        if t.numel() == 0 {
            return Err(NumericsError::Shape("mean of empty tensor".into()));
        }
        let v = Tensor::scalar(t.sum() / T::lit(t.numel() as f64));
        self.push("mean", v, Op::Mean(x), &[x])
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits: [n, c]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, NumericsError> {
        let t = self.value(logits);
        if t.rank() != 2 || t.shape()[0] != targets.len() || targets.is_empty() {
            return Err(NumericsError::Shape(format!(
                "cross_entropy: logits {:?} with {} targets",
                t.shape(),
                targets.len()
            )));
        }
        let c = t.shape()[1];
        let mut total = T::zero();
        for (i, &y) in targets.iter().enumerate() {
            if y >= c {
                return Err(NumericsError::Index { index: y, len: c });
            }
            let row = t.row(i);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            total += lse - row[y];
        }
        let v = Tensor::scalar(total / T::lit(targets.len() as f64));
        self.push(
            "cross_entropy",
            v,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            &[logits],
        )
    }

    /// Scaled dot-product attention `softmax(q kᵀ / √d) v` over the last two
    /// axes.
    pub fn attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var, NumericsError> {
        let d = self.value(q).last_dim();
        let kt = self.transpose(k)?;
        let scores = self.matmul(q, kt)?;
        let scores = self.scale(scores, T::one() / T::lit(d as f64).sqrt())?;
        let weights = self.softmax(scores)?;
        self.matmul(weights, v)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NumericsError> {
        if !self.recording {
            return Err(NumericsError::NoTape);
        }
        if self.value(loss).numel() != 1 {
            return Err(NumericsError::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn backward_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    let d = g.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *a, Tensor::new(g.shape().to_vec(), d).unwrap());
                }
                if self.nodes[b.0].requires_grad {
                    let d = g.data().iter().zip(ta.data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *b, Tensor::new(g.shape().to_vec(), d).unwrap());
                }
            }
            Op::AddBias(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.nodes[b.0].requires_grad {
                    let shape = self.shape(*b).to_vec();
                    let n = self.value(*b).numel().max(1);
                    let mut acc = vec![T::zero(); self.value(*b).numel()];
                    for (j, &x) in g.data().iter().enumerate() {
                        acc[j % n] += x;
                    }
                    self.accumulate(grads, *b, Tensor::new(shape, acc).unwrap());
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|x| x * *s)),
            Op::MatMul { a, b, shared_b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let sa = ta.shape();
                let sb = tb.shape();
                let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let n = sb[sb.len() - 1];
                let batch: usize = sa[..sa.len() - 2].iter().product();
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![T::zero(); ta.numel()];
                    for bi in 0..batch {
                        let boff = if *shared_b { 0 } else { bi * k * n };
                        mm_nt(
                            &g.data()[bi * m * n..(bi + 1) * m * n],
                            &tb.data()[boff..boff + k * n],
                            &mut da[bi * m * k..(bi + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    self.accumulate(grads, *a, Tensor::new(sa.to_vec(), da).unwrap());
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![T::zero(); tb.numel()];
                    for bi in 0..batch {
                        let boff = if *shared_b { 0 } else { bi * k * n };
                        mm_tn(
                            &ta.data()[bi * m * k..(bi + 1) * m * k],
                            &g.data()[bi * m * n..(bi + 1) * m * n],
                            &mut db[boff..boff + k * n],
                            k,
                            m,
                            n,
                        );
                    }
                    self.accumulate(grads, *b, Tensor::new(sb.to_vec(), db).unwrap());
                }
            }
            Op::Permute { x, axes } => {
                let inv = kernels::inverse_axes(axes);
                let (data, shape) = kernels::permute(g.data(), g.shape(), &inv);
                self.accumulate(grads, *x, Tensor::new(shape, data).unwrap());
            }
            Op::Reshape(x) => {
                let shape = self.shape(*x).to_vec();
                self.accumulate(grads, *x, g.reshape(shape).unwrap());
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let tx = self.value(*x);
                let gn = self.value(*gain).data();
                let d = tx.last_dim();
                let mut dx = vec![T::zero(); tx.numel()];
                let mut dgain = vec![T::zero(); d];
                let mut dbias = vec![T::zero(); d];
                let inv_d = T::one() / T::lit(d as f64);
                let mut xhat = vec![T::zero(); d];
                let mut dxhat = vec![T::zero(); d];
                for r in 0..tx.rows() {
                    let row = tx.row(r);
                    let grow = g.row(r);
                    let (mean, rstd) = row_stats(row, *eps);
                    let mut mean_dxhat = T::zero();
                    let mut mean_dxhat_xhat = T::zero();
                    for j in 0..d {
                        xhat[j] = (row[j] - mean) * rstd;
                        dxhat[j] = grow[j] * gn[j];
                        dgain[j] += grow[j] * xhat[j];
                        dbias[j] += grow[j];
                        mean_dxhat += dxhat[j];
                        mean_dxhat_xhat += dxhat[j] * xhat[j];
                    }
                    mean_dxhat *= inv_d;
                    mean_dxhat_xhat *= inv_d;
                    let out = &mut dx[r * d..(r + 1) * d];
                    for j in 0..d {
                        out[j] = rstd * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                    }
                }
                self.accumulate(grads, *x, Tensor::new(tx.shape().to_vec(), dx).unwrap());
                self.accumulate(grads, *gain, Tensor::new([d], dgain).unwrap());
                self.accumulate(grads, *bias, Tensor::new([d], dbias).unwrap());
            }
            Op::Gelu(x) => {
                let tx = self.value(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(tx.data())
                    .map(|(&gv, &xv)| gv * kernels::gelu_grad(xv))
                    .collect();
                self.accumulate(grads, *x, Tensor::new(tx.shape().to_vec(), d).unwrap());
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let d = y.last_dim();
                let mut dx = vec![T::zero(); y.numel()];
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..d {
                        dx[r * d + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), dx).unwrap());
            }
            Op::Dropout { x, mask } => {
                let d = g.data().iter().zip(mask).map(|(&a, &m)| a * m).collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), d).unwrap());
            }
            Op::GatherRows { x, idx } => {
                let tx = self.value(*x);
                let rows = tx.shape()[0];
                let width = if rows == 0 { 0 } else { tx.numel() / rows };
                let mut dx = vec![T::zero(); tx.numel()];
                for (o, &r) in idx.iter().enumerate() {
                    let src = &g.data()[o * width..(o + 1) * width];
                    for (d, &s) in dx[r * width..(r + 1) * width].iter_mut().zip(src) {
                        *d += s;
                    }
                }
                self.accumulate(grads, *x, Tensor::new(tx.shape().to_vec(), dx).unwrap());
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let tp = self.value(*p);
                    let n = tp.numel();
                    let piece = g.data()[off..off + n].to_vec();
                    off += n;
                    self.accumulate(grads, *p, Tensor::new(tp.shape().to_vec(), piece).unwrap());
                }
            }
            Op::SegmentMean { x, segments } => {
                let tx = self.value(*x);
                let d = tx.shape()[1];
                let mut dx = vec![T::zero(); tx.numel()];
                for (s, &(lo, hi)) in segments.iter().enumerate() {
                    let inv = T::one() / T::lit((hi - lo) as f64);
                    let src = g.row(s);
                    for r in lo..hi {
                        for (dv, &sv) in dx[r * d..(r + 1) * d].iter_mut().zip(src) {
                            *dv += sv * inv;
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(tx.shape().to_vec(), dx).unwrap());
            }
            Op::Sum(x) => {
                let gv = g.item();
                let shape = self.shape(*x).to_vec();
                self.accumulate(grads, *x, Tensor::full(shape, gv));
            }
            Op::Mean(x) => {
                let tx = self.value(*x);
                let gv = g.item() / T::lit(tx.numel() as f64);
                self.accumulate(grads, *x, Tensor::full(tx.shape().to_vec(), gv));
            }
            Op::CrossEntropy { logits, targets } => {
                let t = self.value(*logits);
                let c = t.shape()[1];
                let mut probs = kernels::softmax_rows(t.data(), c);
                let scale = g.item() / T::lit(targets.len() as f64);
                for (i, &y) in targets.iter().enumerate() {
                    probs[i * c + y] -= T::one();
                }
                for p in &mut probs {
                    *p *= scale;
                }
                self.accumulate(grads, *logits, Tensor::new(t.shape().to_vec(), probs).unwrap());
            }
        }
    }
}

fn row_stats<T: Scalar>(row: &[T], eps: T) -> (T, T) {
    let d = T::lit(row.len() as f64);
    let mean = row.iter().copied().sum::<T>() / d;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / d;
    (mean, T::one() / (var + eps).sqrt())
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`, zeros when `v` did not reach the loss.
    pub fn wrt(&self, graph: &Graph<T>, v: Var) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(graph.shape(v).to_vec()))
    }
}

use std::borrow::Cow;

use rand::Rng;

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::{check_shape, Element, Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T: Element> {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize, trans_b: bool },
    BatchMatMul { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize, trans_b: bool },
    Add { a: Var, b: Var },
    AddBroadcast { x: Var, c: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: T },
    AddMask { x: Var },
    Relu { x: Var },
    Dropout { x: Var, mask: Vec<T> },
    Softmax { x: Var, width: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<f64> },
    Embedding { table: Var, ids: Vec<usize>, dim: usize },
    SplitHeads { x: Var, batch: usize, seq: usize, heads: usize },
    MergeHeads { x: Var, batch: usize, seq: usize, heads: usize },
    CrossEntropy { logits: Var, targets: Vec<usize>, pad: usize, smoothing: f64, probs: Vec<T>, count: usize },
    Sum { x: Var },
    Reshape { x: Var },
}

struct Node<'a, T: Element> {
    value: Cow<'a, [T]>,
    shape: Vec<usize>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of executed primitive ops.
///
/// Nodes are appended in execution order, so the tape is topologically
/// sorted by construction. Leaves created with [`Graph::input`] borrow their
/// values from the caller's tensors. A graph is consumed by exactly one call
/// to [`Graph::backward`].
pub struct Graph<'a, T: Element = f32> {
    nodes: Vec<Node<'a, T>>,
    consumed: bool,
    track: bool,
}

impl<T: Element> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by a backward pass, indexed by leaf [`Var`].
pub struct Gradients<T: Element> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of the loss with respect to `v`, or `None` when `v` is not
    /// reachable from the loss (its gradient is zero).
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    /// Accumulates the gradient for `v` into `t.grad`.
    pub fn apply_to(&self, v: Var, t: &mut Tensor<T>) -> Result<(), TensorError> {
        match self.get(v) {
            Some(g) => t.accumulate_grad(g),
            None => Ok(()),
        }
    }
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::ShapeMismatch { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}

fn accumulate<T: Element>(slot: &mut Option<Vec<T>>, len: usize, f: impl FnOnce(&mut [T])) {
    let buf = slot.get_or_insert_with(|| vec![T::zero(); len]);
    f(buf);
}

impl<'a, T: Element> Graph<'a, T> {
    /// A graph that records gradients for inputs that require them.
    pub fn new() -> Self {
        Self { nodes: Vec::new(), consumed: false, track: true }
    }

    /// A graph that never records gradients, for decoding and evaluation.
    pub fn inference() -> Self {
        Self { nodes: Vec::new(), consumed: false, track: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Registers a borrowed tensor as a leaf.
    pub fn input(&mut self, t: &'a Tensor<T>) -> Var {
        let requires_grad = self.track && t.requires_grad();
        self.nodes.push(Node {
            value: Cow::Borrowed(t.values()),
            shape: t.shape().to_vec(),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers an owned tensor as a leaf; it requires gradients iff the
    /// tensor does.
    pub fn owned_input(&mut self, t: Tensor<T>) -> Var {
        let requires_grad = self.track && t.requires_grad();
        let shape = t.shape().to_vec();
        self.nodes.push(Node {
            value: Cow::Owned(t.into_values()),
            shape,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers a constant that never receives gradients.
    pub fn constant(&mut self, shape: impl Into<Vec<usize>>, values: Vec<T>) -> Result<Var, TensorError> {
        let shape = shape.into();
        check_shape(&shape, values.len())?;
        self.push("constant", values, shape, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("graph node holds a valid tensor")
    }

    fn push(
        &mut self,
        name: &'static str,
        values: Vec<T>,
        shape: Vec<usize>,
        op: Op<T>,
        requires_grad: bool,
    ) -> Result<Var, TensorError> {
        debug_assert_eq!(values.len(), shape.iter().product::<usize>());
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: name });
        }
        self.nodes.push(Node { value: Cow::Owned(values), shape, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// `a[..., k] · b[k, n] -> [..., n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_impl(a, b, false)
    }

    /// `a[..., k] · b[n, k]ᵀ -> [..., n]`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let k = *sa.last().unwrap();
        if sb.len() != 2 {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let (bk, n) = if trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if bk != k {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let m = self.value(a).len() / k;
        let mut out = vec![T::zero(); m * n];
        if trans_b {
            gemm_nt(self.value(a), self.value(b), &mut out, m, k, n);
        } else {
            gemm_nn(self.value(a), self.value(b), &mut out, m, k, n);
        }
        let mut shape = sa;
        *shape.last_mut().unwrap() = n;
        let rg = self.rg(&[a, b]);
        self.push("matmul", out, shape, Op::MatMul { a, b, m, k, n, trans_b }, rg)
    }

    /// `a[B, m, k] · b[B, k, n] -> [B, m, n]`
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.bmm_impl(a, b, false)
    }

    /// `a[B, m, k] · b[B, n, k]ᵀ -> [B, m, n]`
    pub fn bmm_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.bmm_impl(a, b, true)
    }

    fn bmm_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(mismatch("bmm", &sa, &sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (bk, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if bk != k {
            return Err(mismatch("bmm", &sa, &sb));
        }
        let mut out = vec![T::zero(); batch * m * n];
        {
            let (av, bv) = (self.value(a), self.value(b));
            for i in 0..batch {
                let ai = &av[i * m * k..(i + 1) * m * k];
                let bi = &bv[i * k * n..(i + 1) * k * n];
                let ci = &mut out[i * m * n..(i + 1) * m * n];
                if trans_b {
                    gemm_nt(ai, bi, ci, m, k, n);
                } else {
                    gemm_nn(ai, bi, ci, m, k, n);
                }
            }
        }
        let rg = self.rg(&[a, b]);
        self.push("bmm", out, vec![batch, m, n], Op::BatchMatMul { a, b, batch, m, k, n, trans_b }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("add", self.shape(a), self.shape(b)));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let rg = self.rg(&[a, b]);
        let shape = self.shape(a).to_vec();
        self.push("add", out, shape, Op::Add { a, b }, rg)
    }

    /// `x + c` where `c`'s shape equals the trailing dimensions of `x`.
    pub fn add_broadcast(&mut self, x: Var, c: Var) -> Result<Var, TensorError> {
        let (sx, sc) = (self.shape(x).to_vec(), self.shape(c).to_vec());
        if sc.len() > sx.len() || sx[sx.len() - sc.len()..] != sc[..] {
            return Err(mismatch("add_broadcast", &sx, &sc));
        }
        let cv = self.value(c);
        let w = cv.len();
        let out = self
            .value(x)
            .chunks_exact(w)
            .flat_map(|row| row.iter().zip(cv).map(|(&a, &b)| a + b))
            .collect();
        let rg = self.rg(&[x, c]);
        self.push("add_broadcast", out, sx, Op::AddBroadcast { x, c }, rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("mul", self.shape(a), self.shape(b)));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let rg = self.rg(&[a, b]);
        let shape = self.shape(a).to_vec();
        self.push("mul", out, shape, Op::Mul { a, b }, rg)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, TensorError> {
        let factor = T::from_f64(factor);
        let out = self.value(x).iter().map(|&v| v * factor).collect();
        let rg = self.rg(&[x]);
        let shape = self.shape(x).to_vec();
        self.push("scale", out, shape, Op::Scale { x, factor }, rg)
    }

    /// Adds a constant mask `[B, q, k]` to attention scores `[B*heads, q, k]`.
    pub fn add_mask(&mut self, x: Var, mask: &[T], heads: usize) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 || heads == 0 || !sx[0].is_multiple_of(heads) || mask.len() * heads != self.value(x).len() {
            return Err(mismatch("add_mask", &sx, &[mask.len(), heads]));
        }
        let plane = sx[1] * sx[2];
        let xv = self.value(x);
        let mut out = Vec::with_capacity(xv.len());
        for (bh, chunk) in xv.chunks_exact(plane).enumerate() {
            let b = bh / heads;
            let m = &mask[b * plane..(b + 1) * plane];
            out.extend(chunk.iter().zip(m).map(|(&a, &c)| a + c));
        }
        let rg = self.rg(&[x]);
        self.push("add_mask", out, sx, Op::AddMask { x }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = self.value(x).iter().map(|&v| v.max(T::zero())).collect();
        let rg = self.rg(&[x]);
        let shape = self.shape(x).to_vec();
        self.push("relu", out, shape, Op::Relu { x }, rg)
    }

    /// Inverted dropout with a mask drawn from `rng`. `p == 0` is the identity
    /// and draws nothing.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Argument { op: "dropout", reason: format!("rate {p} outside [0, 1)") });
        }
        if p == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let out = self.value(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let rg = self.rg(&[x]);
        let shape = self.shape(x).to_vec();
        self.push("dropout", out, shape, Op::Dropout { x, mask }, rg)
    }

    /// Softmax over the last axis with max subtraction and `f64` denominators.
    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let width = *shape.last().unwrap();
        let mut out = vec![T::zero(); self.value(x).len()];
        let mut buf = vec![0.0f64; width];
        for (row, dst) in self.value(x).chunks_exact(width).zip(out.chunks_exact_mut(width)) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
            let mut total = 0.0;
            for (b, v) in buf.iter_mut().zip(row) {
                *b = (v.as_f64() - max).exp();
                total += *b;
            }
            for (d, b) in dst.iter_mut().zip(&buf) {
                *d = T::from_f64(b / total);
            }
        }
        let rg = self.rg(&[x]);
        self.push("softmax", out, shape, Op::Softmax { x, width }, rg)
    }

    /// Layer normalization over the last axis followed by an affine map.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap();
        if d == 0 || self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(mismatch("layer_norm", &shape, self.shape(gain)));
        }
        if eps <= 0.0 {
            return Err(TensorError::Argument { op: "layer_norm", reason: format!("eps {eps} must be positive") });
        }
        let rows = self.value(x).len() / d;
        let mut xhat = vec![T::zero(); rows * d];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![T::zero(); rows * d];
        {
            let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
            for r in 0..rows {
                let row = &xv[r * d..(r + 1) * d];
                let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / d as f64;
                let rs = 1.0 / (var + eps).sqrt();
                rstd[r] = rs;
                for j in 0..d {
                    let h = (row[j].as_f64() - mean) * rs;
                    xhat[r * d + j] = T::from_f64(h);
                    out[r * d + j] = T::from_f64(h * gv[j].as_f64() + bv[j].as_f64());
                }
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        self.push("layer_norm", out, shape, Op::LayerNorm { x, gain, bias, xhat, rstd }, rg)
    }

    /// Gathers rows of `table[V, d]`; the output shape is `ids_shape ++ [d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], ids_shape: &[usize]) -> Result<Var, TensorError> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 {
            return Err(mismatch("embedding", &st, ids_shape));
        }
        check_shape(ids_shape, ids.len())?;
        let (vocab, dim) = (st[0], st[1]);
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(TensorError::Index { op: "embedding", index: id, size: vocab });
            }
            out.extend_from_slice(&tv[id * dim..(id + 1) * dim]);
        }
        let mut shape = ids_shape.to_vec();
        shape.push(dim);
        let rg = self.rg(&[table]);
        self.push("embedding", out, shape, Op::Embedding { table, ids: ids.to_vec(), dim }, rg)
    }

    /// `[b, s, h·dh] -> [b·h, s, dh]`
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 || heads == 0 || !sx[2].is_multiple_of(heads) {
            return Err(mismatch("split_heads", &sx, &[heads]));
        }
        let (batch, seq, d) = (sx[0], sx[1], sx[2]);
        let dh = d / heads;
        let xv = self.value(x);
        let mut out = vec![T::zero(); xv.len()];
        for b in 0..batch {
            for s in 0..seq {
                for h in 0..heads {
                    let src = &xv[(b * seq + s) * d + h * dh..][..dh];
                    out[((b * heads + h) * seq + s) * dh..][..dh].copy_from_slice(src);
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push("split_heads", out, vec![batch * heads, seq, dh], Op::SplitHeads { x, batch, seq, heads }, rg)
    }

    /// `[b·h, s, dh] -> [b, s, h·dh]`
    pub fn merge_heads(&mut self, x: Var, heads: usize) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 || heads == 0 || !sx[0].is_multiple_of(heads) {
            return Err(mismatch("merge_heads", &sx, &[heads]));
        }
        let (batch, seq, dh) = (sx[0] / heads, sx[1], sx[2]);
        let d = heads * dh;
        let xv = self.value(x);
        let mut out = vec![T::zero(); xv.len()];
        for b in 0..batch {
            for s in 0..seq {
                for h in 0..heads {
                    let src = &xv[((b * heads + h) * seq + s) * dh..][..dh];
                    out[(b * seq + s) * d + h * dh..][..dh].copy_from_slice(src);
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push("merge_heads", out, vec![batch, seq, d], Op::MergeHeads { x, batch, seq, heads }, rg)
    }

    /// Label-smoothed cross-entropy averaged over non-pad positions.
    ///
    /// The smoothed target puts `1 - smoothing` on the gold token and spreads
    /// `smoothing` uniformly over the vocabulary. A batch made entirely of
    /// padding yields a zero loss and a zero gradient.
    pub fn cross_entropy_ls(
        &mut self,
        logits: Var,
        targets: &[usize],
        smoothing: f64,
        pad: usize,
    ) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&smoothing) {
            return Err(TensorError::Argument {
                op: "cross_entropy_ls",
                reason: format!("smoothing {smoothing} outside [0, 1)"),
            });
        }
        let shape = self.shape(logits).to_vec();
        let vocab = *shape.last().unwrap();
        let rows = self.value(logits).len() / vocab;
        if targets.len() != rows {
            return Err(mismatch("cross_entropy_ls", &shape, &[targets.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= vocab) {
            return Err(TensorError::Index { op: "cross_entropy_ls", index: bad, size: vocab });
        }
        let mut probs = vec![T::zero(); rows * vocab];
        let mut total = 0.0f64;
        let mut count = 0usize;
        let lv = self.value(logits);
        for (r, &t) in targets.iter().enumerate() {
            if t == pad {
                continue;
            }
            count += 1;
            let row = &lv[r * vocab..(r + 1) * vocab];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
            let log_z = row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln() + max;
            let mut sum_logp = 0.0;
            for (j, v) in row.iter().enumerate() {
                let lp = v.as_f64() - log_z;
                sum_logp += lp;
                probs[r * vocab + j] = T::from_f64(lp.exp());
            }
            let gold = row[t].as_f64() - log_z;
            total -= (1.0 - smoothing) * gold + smoothing / vocab as f64 * sum_logp;
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let rg = self.rg(&[logits]);
        self.push(
            "cross_entropy_ls",
            vec![T::from_f64(loss)],
            vec![1],
            Op::CrossEntropy { logits, targets: targets.to_vec(), pad, smoothing, probs, count },
            rg,
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let total = self.value(x).iter().map(|v| v.as_f64()).sum::<f64>();
        let rg = self.rg(&[x]);
        self.push("sum", vec![T::from_f64(total)], vec![1], Op::Sum { x }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var, TensorError> {
        let shape = shape.into();
        check_shape(&shape, self.value(x).len())?;
        let out = self.value(x).to_vec();
        let rg = self.rg(&[x]);
        self.push("reshape", out, shape, Op::Reshape { x }, rg)
    }

    /// Reverse pass from a scalar `loss`. Consumes the graph.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>, TensorError> {
        if self.consumed {
            return Err(TensorError::GraphConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(TensorError::NotScalar(self.shape(loss).to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gout) = grads[idx].take() else { continue };
            self.propagate(node, &gout, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<'a, T>, gout: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| -> &[T] { &self.nodes[v.0].value };
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let len = |v: Var| self.nodes[v.0].value.len();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n, trans_b } => {
                if wants(a) {
                    // dA = dC · Bᵀ
                    accumulate(&mut grads[a.0], len(a), |ga| {
                        if trans_b {
                            gemm_nn(gout, val(b), ga, m, n, k);
                        } else {
                            gemm_nt(gout, val(b), ga, m, n, k);
                        }
                    });
                }
                if wants(b) {
                    // dB = Aᵀ · dC
                    accumulate(&mut grads[b.0], len(b), |gb| {
                        if trans_b {
                            gemm_tn(gout, val(a), gb, n, m, k);
                        } else {
                            gemm_tn(val(a), gout, gb, k, m, n);
                        }
                    });
                }
            }
            &Op::BatchMatMul { a, b, batch, m, k, n, trans_b } => {
                let (av, bv) = (val(a), val(b));
                if wants(a) {
                    accumulate(&mut grads[a.0], len(a), |ga| {
                        for i in 0..batch {
                            let go = &gout[i * m * n..(i + 1) * m * n];
                            let bi = &bv[i * k * n..(i + 1) * k * n];
                            let gai = &mut ga[i * m * k..(i + 1) * m * k];
                            if trans_b {
                                gemm_nn(go, bi, gai, m, n, k);
                            } else {
                                gemm_nt(go, bi, gai, m, n, k);
                            }
                        }
                    });
                }
                if wants(b) {
                    accumulate(&mut grads[b.0], len(b), |gb| {
                        for i in 0..batch {
                            let go = &gout[i * m * n..(i + 1) * m * n];
                            let ai = &av[i * m * k..(i + 1) * m * k];
                            let gbi = &mut gb[i * k * n..(i + 1) * k * n];
                            if trans_b {
                                gemm_tn(go, ai, gbi, n, m, k);
                            } else {
                                gemm_tn(ai, go, gbi, k, m, n);
                            }
                        }
                    });
                }
            }
            &Op::Add { a, b } => {
                for v in [a, b] {
                    if wants(v) {
                        accumulate(&mut grads[v.0], len(v), |g| add_into(g, gout));
                    }
                }
            }
            &Op::AddBroadcast { x, c } => {
                if wants(x) {
                    accumulate(&mut grads[x.0], len(x), |g| add_into(g, gout));
                }
                if wants(c) {
                    let w = len(c);
                    accumulate(&mut grads[c.0], w, |g| {
                        let mut acc = vec![0.0f64; w];
                        for row in gout.chunks_exact(w) {
                            for (a, v) in acc.iter_mut().zip(row) {
                                *a += v.as_f64();
                            }
                        }
                        for (gv, a) in g.iter_mut().zip(acc) {
                            *gv = *gv + T::from_f64(a);
                        }
                    });
                }
            }
            &Op::Mul { a, b } => {
                if wants(a) {
                    let bv = val(b);
                    accumulate(&mut grads[a.0], len(a), |g| {
                        for ((gv, &go), &y) in g.iter_mut().zip(gout).zip(bv) {
                            *gv = *gv + go * y;
                        }
                    });
                }
                if wants(b) {
                    let av = val(a);
                    accumulate(&mut grads[b.0], len(b), |g| {
                        for ((gv, &go), &x) in g.iter_mut().zip(gout).zip(av) {
                            *gv = *gv + go * x;
                        }
                    });
                }
            }
            &Op::Scale { x, factor } => {
                if wants(x) {
                    accumulate(&mut grads[x.0], len(x), |g| {
                        for (gv, &go) in g.iter_mut().zip(gout) {
                            *gv = *gv + go * factor;
                        }
                    });
                }
            }
            &Op::AddMask { x } | &Op::Reshape { x } => {
                if wants(x) {
                    accumulate(&mut grads[x.0], len(x), |g| add_into(g, gout));
                }
            }
            &Op::Relu { x } => {
                if wants(x) {
                    let xv = val(x);
                    accumulate(&mut grads[x.0], len(x), |g| {
                        for ((gv, &go), &v) in g.iter_mut().zip(gout).zip(xv) {
                            if v > T::zero() {
                                *gv = *gv + go;
                            }
                        }
                    });
                }
            }
            Op::Dropout { x, mask } => {
                if wants(*x) {
                    accumulate(&mut grads[x.0], len(*x), |g| {
                        for ((gv, &go), &m) in g.iter_mut().zip(gout).zip(mask) {
                            *gv = *gv + go * m;
                        }
                    });
                }
            }
            &Op::Softmax { x, width } => {
                if wants(x) {
                    let y = &node.value;
                    accumulate(&mut grads[x.0], len(x), |g| {
                        for ((gr, go), yr) in g.chunks_exact_mut(width).zip(gout.chunks_exact(width)).zip(y.chunks_exact(width)) {
                            let dot: f64 = go.iter().zip(yr).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
                            for ((gv, &d), &yv) in gr.iter_mut().zip(go).zip(yr) {
                                *gv = *gv + T::from_f64(yv.as_f64() * (d.as_f64() - dot));
                            }
                        }
                    });
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let d = len(*gain);
                let gv = val(*gain);
                if wants(*x) {
                    accumulate(&mut grads[x.0], len(*x), |g| {
                        let mut dxhat = vec![0.0f64; d];
                        for (r, rs) in rstd.iter().enumerate() {
                            let go = &gout[r * d..(r + 1) * d];
                            let xh = &xhat[r * d..(r + 1) * d];
                            let mut m1 = 0.0;
                            let mut m2 = 0.0;
                            for j in 0..d {
                                dxhat[j] = go[j].as_f64() * gv[j].as_f64();
                                m1 += dxhat[j];
                                m2 += dxhat[j] * xh[j].as_f64();
                            }
                            m1 /= d as f64;
                            m2 /= d as f64;
                            for j in 0..d {
                                let dx = rs * (dxhat[j] - m1 - xh[j].as_f64() * m2);
                                g[r * d + j] = g[r * d + j] + T::from_f64(dx);
                            }
                        }
                    });
                }
                let reduce = |weight_by_xhat: bool, g: &mut [T]| {
                    let mut acc = vec![0.0f64; d];
                    for (r, go) in gout.chunks_exact(d).enumerate() {
                        for j in 0..d {
                            let w = if weight_by_xhat { xhat[r * d + j].as_f64() } else { 1.0 };
                            acc[j] += go[j].as_f64() * w;
                        }
                    }
                    for (gv, a) in g.iter_mut().zip(acc) {
                        *gv = *gv + T::from_f64(a);
                    }
                };
                if wants(*gain) {
                    accumulate(&mut grads[gain.0], d, |g| reduce(true, g));
                }
                if wants(*bias) {
                    accumulate(&mut grads[bias.0], d, |g| reduce(false, g));
                }
            }
            Op::Embedding { table, ids, dim } => {
                if wants(*table) {
                    let dim = *dim;
                    accumulate(&mut grads[table.0], len(*table), |g| {
                        for (i, &id) in ids.iter().enumerate() {
                            add_into(&mut g[id * dim..(id + 1) * dim], &gout[i * dim..(i + 1) * dim]);
                        }
                    });
                }
            }
            &Op::SplitHeads { x, batch, seq, heads } => {
                if wants(x) {
                    let d = len(x) / (batch * seq);
                    let dh = d / heads;
                    accumulate(&mut grads[x.0], len(x), |g| {
                        for b in 0..batch {
                            for s in 0..seq {
                                for h in 0..heads {
                                    let src = &gout[((b * heads + h) * seq + s) * dh..][..dh];
                                    add_into(&mut g[(b * seq + s) * d + h * dh..][..dh], src);
                                }
                            }
                        }
                    });
                }
            }
            &Op::MergeHeads { x, batch, seq, heads } => {
                if wants(x) {
                    let dh = len(x) / (batch * heads * seq);
                    let d = dh * heads;
                    accumulate(&mut grads[x.0], len(x), |g| {
                        for b in 0..batch {
                            for s in 0..seq {
                                for h in 0..heads {
                                    let src = &gout[(b * seq + s) * d + h * dh..][..dh];
                                    add_into(&mut g[((b * heads + h) * seq + s) * dh..][..dh], src);
                                }
                            }
                        }
                    });
                }
            }
            Op::CrossEntropy { logits, targets, pad, smoothing, probs, count } => {
                if wants(*logits) && *count > 0 {
                    let vocab = len(*logits) / targets.len();
                    let scale = gout[0].as_f64() / *count as f64;
                    let uniform = smoothing / vocab as f64;
                    accumulate(&mut grads[logits.0], len(*logits), |g| {
                        for (r, &t) in targets.iter().enumerate() {
                            if t == *pad {
                                continue;
                            }
                            for j in 0..vocab {
                                let q = uniform + if j == t { 1.0 - smoothing } else { 0.0 };
                                let d = (probs[r * vocab + j].as_f64() - q) * scale;
                                g[r * vocab + j] = g[r * vocab + j] + T::from_f64(d);
                            }
                        }
                    });
                }
            }
            &Op::Sum { x } => {
                if wants(x) {
                    let go = gout[0];
                    accumulate(&mut grads[x.0], len(x), |g| g.iter_mut().for_each(|v| *v = *v + go));
                }
            }
        }
    }
}

fn add_into<T: Element>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

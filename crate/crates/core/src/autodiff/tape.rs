use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use super::trig::sin_cos_slice;
use super::{AutodiffError, CsrMatrix, Tensor};

/// Offset added under every `sqrt_eps`.
pub const SQRT_EPS: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul { a: Var, b: Var, transpose_b: bool },
    SparseMatMul { matrix: Arc<CsrMatrix>, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { a: Var, row: Var },
    Scale { a: Var, factor: f64 },
    Relu(Var),
    Exp(Var),
    Cos(Var),
    Sin(Var),
    SqrtEps(Var),
    Clamp { a: Var, lo: f64, hi: f64 },
    Sum(Var),
    Mean(Var),
    ColMean(Var),
    LogSoftmaxRows(Var),
    GatherRows { a: Var, index: Vec<usize> },
    ConcatRows(Vec<Var>),
    Pick { a: Var, index: Vec<usize> },
    Reshape(Var),
    CisColMean { a: Var, cos: Vec<f64>, sin: Vec<f64> },
    CharFn { z: Var, t: Var, cos: Vec<f64>, sin: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run record of tensor operations for reverse-mode
/// differentiation.
///
/// Nodes are appended in evaluation order, so inputs always precede the
/// nodes that consume them. [`Tape::backward`] sweeps the nodes once in
/// reverse and freezes the tape.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    frozen: bool,
}

/// Gradients of a scalar loss with respect to every differentiable leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(&var)
    }

    /// Gradient of a leaf that was registered with [`Tape::leaf`].
    ///
    /// Panics if `var` is not a differentiable leaf of the tape.
    pub fn wrt(&self, var: Var) -> &Tensor {
        self.grads.get(&var).expect("no gradient recorded for this variable")
    }

    pub fn remove(&mut self, var: Var) -> Option<Tensor> {
        self.grads.remove(&var)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::Shape { op, detail }
}

/// Row-major `C = op(A)·op(B)` via matrixmultiply, with strides expressing
/// any transposition.
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm_into(m, k, n, a, a_strides, b, b_strides, &mut c, 0.0);
    c
}

/// `C = op(A)·op(B) + beta·C` into a row-major `[m, n]` buffer.
#[allow(clippy::too_many_arguments)]
fn gemm_into(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: callers pass slices holding at least m·k and k·n elements laid
    // out with the given strides; `c` holds m·n elements in row-major order.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

thread_local! {
    /// Large sine/cosine buffers of dropped tapes, reused by later tapes.
    /// Freshly mapped memory costs a page fault per 4 KiB on first touch,
    /// which at training sizes rivals the arithmetic itself.
    static BUFFER_POOL: RefCell<Vec<Vec<f64>>> = const { RefCell::new(Vec::new()) };
}

const POOL_LIMIT: usize = 8;

/// A buffer of `len` elements, from the pool when possible. Reused buffers
/// keep stale contents; callers overwrite every element.
fn pooled_buffer(len: usize) -> Vec<f64> {
    let reused = BUFFER_POOL.with(|pool| {
        let mut pool = pool.borrow_mut();
        let pos = pool.iter().position(|b| b.capacity() >= len)?;
        Some(pool.swap_remove(pos))
    });
    match reused {
        Some(mut buf) => {
            buf.resize(len, 0.0);
            buf
        }
        None => vec![0.0; len],
    }
}

fn recycle(buf: Vec<f64>) {
    if buf.capacity() < 65_536 {
        return;
    }
    BUFFER_POOL.with(|pool| {
        let mut pool = pool.borrow_mut();
        if pool.len() < POOL_LIMIT {
            pool.push(buf);
            return;
        }
        // keep the largest buffers so a growing workload stops allocating
        if let Some(smallest) = (0..pool.len()).min_by_key(|&i| pool[i].capacity()) {
            if pool[smallest].capacity() < buf.capacity() {
                pool[smallest] = buf;
            }
        }
    });
}

impl Drop for Tape {
    fn drop(&mut self) {
        for node in self.nodes.drain(..) {
            if let Op::CharFn { cos, sin, .. } = node.op {
                recycle(cos);
                recycle(sin);
            }
        }
    }
}

/// Rows of `z` processed together by the fused characteristic-function op,
/// sized so one block of projections stays around 2 MiB.
fn cf_block_rows(frequencies: usize) -> usize {
    (262_144 / frequencies.max(1)).max(1)
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, delta: Tensor) {
    match &mut grads[var.0] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(delta),
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

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Registers a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, true)
    }

    /// Registers an input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Constant, false)
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        assert!(!self.frozen, "tape is frozen after backward");
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var, AutodiffError> {
        if self.frozen {
            return Err(AutodiffError::Frozen);
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Constant };
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn matrix_dims(&self, op: &'static str, var: Var) -> Result<(usize, usize), AutodiffError> {
        let t = self.value(var);
        if !t.is_matrix() {
            return Err(shape_err(op, format!("expected a matrix, got shape {:?}", t.shape())));
        }
        Ok((t.rows(), t.cols()))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var, AutodiffError> {
        let value = self.value(a).map(f);
        self.push(value, op, &[a])
    }

    /// `a · b` for `[m, k] × [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (kb, n) = self.matrix_dims("matmul", b)?;
        if k != kb {
            return Err(shape_err("matmul", format!("{m}x{k} times {kb}x{n}")));
        }
        let out = gemm(m, k, n, self.value(a).data(), (k, 1), self.value(b).data(), (n, 1));
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul { a, b, transpose_b: false }, &[a, b])
    }

    /// `a · bᵀ` for `[m, k] × [n, k]`.
    pub fn matmul_transposed(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (n, kb) = self.matrix_dims("matmul", b)?;
        if k != kb {
            return Err(shape_err("matmul", format!("{m}x{k} times ({n}x{kb})^T")));
        }
        let out = gemm(m, k, n, self.value(a).data(), (k, 1), self.value(b).data(), (1, k));
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul { a, b, transpose_b: true }, &[a, b])
    }

    /// `matrix · x` with a fixed sparse left operand.
    pub fn sparse_matmul(&mut self, matrix: &Arc<CsrMatrix>, x: Var) -> Result<Var, AutodiffError> {
        self.matrix_dims("sparse_dense_matmul", x)?;
        let value = matrix.matmul(self.value(x))?;
        self.push(value, Op::SparseMatMul { matrix: Arc::clone(matrix), x }, &[x])
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("shape checked by caller")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("add", a, b)?;
        let value = self.zip_with(a, b, |x, y| x + y);
        self.push(value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_with(a, b, |x, y| x - y);
        self.push(value, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("elementwise_mul", a, b)?;
        let value = self.zip_with(a, b, |x, y| x * y);
        self.push(value, Op::Mul(a, b), &[a, b])
    }

    /// Adds a `[1, k]` row (or length-`k` vector) to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let (_, k) = self.matrix_dims("add_row", a)?;
        let r = self.value(row);
        if r.len() != k || r.rows() != 1 {
            return Err(shape_err("add_row", format!("row {:?} for {k} columns", r.shape())));
        }
        let mut value = self.value(a).clone();
        let bias = self.value(row).data().to_vec();
        for chunk in value.data_mut().chunks_mut(k) {
            for (v, b) in chunk.iter_mut().zip(&bias) {
                *v += b;
            }
        }
        self.push(value, Op::AddRow { a, row }, &[a, row])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, AutodiffError> {
        self.unary(a, Op::Scale { a, factor }, |x| x * factor)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn cos(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(a, Op::Cos(a), f64::cos)
    }

    pub fn sin(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(a, Op::Sin(a), f64::sin)
    }

    /// `sqrt(x + 1e-12)`; negative inputs are a domain error.
    pub fn sqrt_eps(&mut self, a: Var) -> Result<Var, AutodiffError> {
        if let Some(&bad) = self.value(a).data().iter().find(|&&x| x < 0.0 || x.is_nan()) {
            return Err(AutodiffError::Domain { op: "sqrt_eps", detail: format!("input {bad}") });
        }
        self.unary(a, Op::SqrtEps(a), |x| (x + SQRT_EPS).sqrt())
    }

    /// Clamps into `[lo, hi]`; gradient passes only inside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var, AutodiffError> {
        if lo > hi {
            return Err(AutodiffError::Domain { op: "clamp", detail: format!("empty range [{lo}, {hi}]") });
        }
        self.unary(a, Op::Clamp { a, lo, hi }, |x| x.clamp(lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(shape_err("mean", "empty tensor".into()));
        }
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(value, Op::Mean(a), &[a])
    }

    /// Mean over rows: `[n, k] -> [1, k]`.
    pub fn col_mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let (n, k) = self.matrix_dims("col_mean", a)?;
        if n == 0 {
            return Err(shape_err("col_mean", "no rows".into()));
        }
        let mut out = vec![0.0; k];
        for row in self.value(a).data().chunks(k) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        self.push(Tensor::row(out), Op::ColMean(a), &[a])
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let (_, k) = self.matrix_dims("log_softmax_rows", a)?;
        if k == 0 {
            return Err(shape_err("log_softmax_rows", "no columns".into()));
        }
        let mut value = self.value(a).clone();
        for row in value.data_mut().chunks_mut(k) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        self.push(value, Op::LogSoftmaxRows(a), &[a])
    }

    /// Selects rows of `a` by index (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var, AutodiffError> {
        let (n, k) = self.matrix_dims("gather_rows", a)?;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(index.len() * k);
        for &i in index {
            if i >= n {
                return Err(shape_err("gather_rows", format!("row {i} of {n}")));
            }
            out.extend_from_slice(&src[i * k..(i + 1) * k]);
        }
        let value = Tensor::matrix(index.len(), k, out)?;
        self.push(value, Op::GatherRows { a, index: index.to_vec() }, &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = *parts.first().ok_or_else(|| shape_err("concat_rows", "no inputs".into()))?;
        let (_, k) = self.matrix_dims("concat_rows", first)?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.matrix_dims("concat_rows", p)?;
            if c != k {
                return Err(shape_err("concat_rows", format!("{c} columns, expected {k}")));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::matrix(rows, k, out)?;
        self.push(value, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Picks `a[i, index[i]]` from every row, giving a length-`n` vector.
    pub fn pick(&mut self, a: Var, index: &[usize]) -> Result<Var, AutodiffError> {
        let (n, k) = self.matrix_dims("pick", a)?;
        if index.len() != n {
            return Err(shape_err("pick", format!("{} indices for {n} rows", index.len())));
        }
        let t = self.value(a);
        let mut out = Vec::with_capacity(n);
        for (i, &j) in index.iter().enumerate() {
            if j >= k {
                return Err(shape_err("pick", format!("column {j} of {k}")));
            }
            out.push(t.get(i, j));
        }
        self.push(Tensor::vector(out), Op::Pick { a, index: index.to_vec() }, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let value = self.value(a).clone().reshape(shape.to_vec())?;
        self.push(value, Op::Reshape(a), &[a])
    }

    /// Column means of `cos(a)` and `sin(a)` stacked as a `[2, k]` matrix.
    ///
    /// For a projection matrix `a = Z·Tᵀ` this is the real and imaginary part
    /// of the empirical characteristic function at every frequency.
    pub fn cis_col_mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let (n, k) = self.matrix_dims("cis_col_mean", a)?;
        if n == 0 {
            return Err(shape_err("cis_col_mean", "no rows".into()));
        }
        let src = self.value(a).data();
        let mut sin = vec![0.0; src.len()];
        let mut cos = vec![0.0; src.len()];
        sin_cos_slice(src, &mut sin, &mut cos);
        let mut out = vec![0.0; 2 * k];
        let (re, im) = out.split_at_mut(k);
        for (crow, srow) in cos.chunks(k).zip(sin.chunks(k)) {
            for j in 0..k {
                re[j] += crow[j];
                im[j] += srow[j];
            }
        }
        out.iter_mut().for_each(|v| *v /= n as f64);
        let value = Tensor::matrix(2, k, out)?;
        self.push(value, Op::CisColMean { a, cos, sin }, &[a])
    }

    /// Empirical characteristic function of the rows of `z` (`[n, d]`) at
    /// the rows of `t` (`[k, d]`): real and imaginary parts as a `[2, k]`
    /// matrix.
    ///
    /// Equivalent to `cis_col_mean(matmul_transposed(z, t))`, but the
    /// projections are formed block by block and never stored.
    pub fn characteristic_function(&mut self, z: Var, t: Var) -> Result<Var, AutodiffError> {
        let (n, d) = self.matrix_dims("characteristic_function", z)?;
        let (k, dt) = self.matrix_dims("characteristic_function", t)?;
        if d != dt {
            return Err(shape_err("characteristic_function", format!("{n}x{d} samples, {k}x{dt} frequencies")));
        }
        if n == 0 {
            return Err(shape_err("characteristic_function", "no rows".into()));
        }
        let keep = self.requires_grad(z) || self.requires_grad(t);
        let (zd, td) = (self.value(z).data(), self.value(t).data());
        let block = cf_block_rows(k);
        let mut proj = vec![0.0; block.min(n) * k];
        let (mut sin, mut cos) = if keep { (pooled_buffer(n * k), pooled_buffer(n * k)) } else { (Vec::new(), Vec::new()) };
        let (mut sin_buf, mut cos_buf) = if keep { (Vec::new(), Vec::new()) } else { (proj.clone(), proj.clone()) };
        let mut out = vec![0.0; 2 * k];
        for start in (0..n).step_by(block) {
            let rows = block.min(n - start);
            let p = &mut proj[..rows * k];
            gemm_into(rows, d, k, &zd[start * d..], (d, 1), td, (1, d), p, 0.0);
            let (s, c) = if keep {
                (&mut sin[start * k..(start + rows) * k], &mut cos[start * k..(start + rows) * k])
            } else {
                (&mut sin_buf[..rows * k], &mut cos_buf[..rows * k])
            };
            sin_cos_slice(p, s, c);
            let (re, im) = out.split_at_mut(k);
            for (crow, srow) in c.chunks(k).zip(s.chunks(k)) {
                for j in 0..k {
                    re[j] += crow[j];
                    im[j] += srow[j];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= n as f64);
        let value = Tensor::matrix(2, k, out)?;
        self.push(value, Op::CharFn { z, t, cos, sin }, &[z, t])
    }

    /// Reverse sweep from a scalar `loss`. Freezes the tape.
    ///
    /// Every differentiable leaf receives a gradient of its own shape; leaves
    /// with no path to the loss get exact zeros.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, AutodiffError> {
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.frozen = true;

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        }
        let mut out = HashMap::new();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if let Op::Leaf = node.op {
                out.insert(Var(idx), g);
                continue;
            }
            self.propagate(idx, g, &mut grads)?;
        }

        for (idx, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) {
                out.entry(Var(idx)).or_insert_with(|| Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads: out })
    }

    fn wants(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn propagate(&self, idx: usize, g: Tensor, grads: &mut [Option<Tensor>]) -> Result<(), AutodiffError> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf | Op::Constant => {}
            &Op::MatMul { a, b, transpose_b } => {
                let (m, k) = (self.value(a).rows(), self.value(a).cols());
                let n = node.value.cols();
                let (ad, bd, gd) = (self.value(a).data(), self.value(b).data(), g.data());
                if self.wants(a) {
                    // dA = G · op(B)ᵀ
                    let bt = if transpose_b { (k, 1) } else { (1, n) };
                    let ga = gemm(m, n, k, gd, (n, 1), bd, bt);
                    accumulate(grads, a, Tensor::matrix(m, k, ga)?);
                }
                if self.wants(b) {
                    if transpose_b {
                        // dB = Gᵀ · A, shape [n, k]
                        let gb = gemm(n, m, k, gd, (1, n), ad, (k, 1));
                        accumulate(grads, b, Tensor::matrix(n, k, gb)?);
                    } else {
                        // dB = Aᵀ · G, shape [k, n]
                        let gb = gemm(k, m, n, ad, (1, k), gd, (n, 1));
                        accumulate(grads, b, Tensor::matrix(k, n, gb)?);
                    }
                }
            }
            Op::SparseMatMul { matrix, x } => {
                if self.wants(*x) {
                    accumulate(grads, *x, matrix.transpose_matmul(&g)?);
                }
            }
            &Op::Add(a, b) => {
                if self.wants(a) {
                    accumulate(grads, a, g.clone());
                }
                if self.wants(b) {
                    accumulate(grads, b, g);
                }
            }
            &Op::Sub(a, b) => {
                if self.wants(a) {
                    accumulate(grads, a, g.clone());
                }
                if self.wants(b) {
                    accumulate(grads, b, g.map(|v| -v));
                }
            }
            &Op::Mul(a, b) => {
                if self.wants(a) {
                    accumulate(grads, a, hadamard(&g, self.value(b)));
                }
                if self.wants(b) {
                    accumulate(grads, b, hadamard(&g, self.value(a)));
                }
            }
            &Op::AddRow { a, row } => {
                if self.wants(row) {
                    let r = self.value(row);
                    let k = r.len();
                    let mut sums = vec![0.0; k];
                    for chunk in g.data().chunks(k) {
                        for (s, v) in sums.iter_mut().zip(chunk) {
                            *s += v;
                        }
                    }
                    accumulate(grads, row, Tensor::new(r.shape().to_vec(), sums)?);
                }
                if self.wants(a) {
                    accumulate(grads, a, g);
                }
            }
            &Op::Scale { a, factor } => accumulate(grads, a, g.map(|v| v * factor)),
            &Op::Relu(a) => {
                let x = self.value(a);
                accumulate(grads, a, zip_map(&g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }));
            }
            &Op::Exp(a) => accumulate(grads, a, hadamard(&g, &node.value)),
            &Op::Cos(a) => accumulate(grads, a, zip_map(&g, self.value(a), |gv, xv| -gv * xv.sin())),
            &Op::Sin(a) => accumulate(grads, a, zip_map(&g, self.value(a), |gv, xv| gv * xv.cos())),
            &Op::SqrtEps(a) => accumulate(grads, a, zip_map(&g, &node.value, |gv, y| 0.5 * gv / y)),
            &Op::Clamp { a, lo, hi } => {
                let x = self.value(a);
                accumulate(grads, a, zip_map(&g, x, |gv, xv| if xv >= lo && xv <= hi { gv } else { 0.0 }));
            }
            &Op::Sum(a) => {
                let gv = g.item();
                accumulate(grads, a, Tensor::filled(self.value(a).shape(), gv));
            }
            &Op::Mean(a) => {
                let x = self.value(a);
                accumulate(grads, a, Tensor::filled(x.shape(), g.item() / x.len() as f64));
            }
            &Op::ColMean(a) => {
                let x = self.value(a);
                let n = x.rows() as f64;
                let row: Vec<f64> = g.data().iter().map(|v| v / n).collect();
                let data = row.iter().copied().cycle().take(x.len()).collect();
                accumulate(grads, a, Tensor::new(x.shape().to_vec(), data)?);
            }
            &Op::LogSoftmaxRows(a) => {
                let k = node.value.cols();
                let mut out = g.clone();
                for (orow, yrow) in out.data_mut().chunks_mut(k).zip(node.value.data().chunks(k)) {
                    let total: f64 = orow.iter().sum();
                    for (o, y) in orow.iter_mut().zip(yrow) {
                        *o -= y.exp() * total;
                    }
                }
                accumulate(grads, a, out);
            }
            Op::GatherRows { a, index } => {
                let x = self.value(*a);
                let k = x.cols();
                let mut out = Tensor::zeros(x.shape());
                for (r, &i) in index.iter().enumerate() {
                    let src = &g.data()[r * k..(r + 1) * k];
                    for (o, v) in out.data_mut()[i * k..(i + 1) * k].iter_mut().zip(src) {
                        *o += v;
                    }
                }
                accumulate(grads, *a, out);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.wants(p) {
                        let piece = g.data()[offset..offset + len].to_vec();
                        accumulate(grads, p, Tensor::new(self.value(p).shape().to_vec(), piece)?);
                    }
                    offset += len;
                }
            }
            Op::Pick { a, index } => {
                let x = self.value(*a);
                let mut out = Tensor::zeros(x.shape());
                for (i, (&j, &gv)) in index.iter().zip(g.data()).enumerate() {
                    out.set(i, j, gv);
                }
                accumulate(grads, *a, out);
            }
            &Op::Reshape(a) => accumulate(grads, a, g.reshape(self.value(a).shape().to_vec())?),
            Op::CisColMean { a, cos, sin } => {
                let x = self.value(*a);
                let (n, k) = (x.rows(), x.cols());
                let inv_n = 1.0 / n as f64;
                let (gre, gim) = g.data().split_at(k);
                let gre: Vec<f64> = gre.iter().map(|v| v * inv_n).collect();
                let gim: Vec<f64> = gim.iter().map(|v| v * inv_n).collect();
                let mut out = vec![0.0; n * k];
                for ((orow, crow), srow) in out.chunks_mut(k).zip(cos.chunks(k)).zip(sin.chunks(k)) {
                    for j in 0..k {
                        orow[j] = crow[j] * gim[j] - srow[j] * gre[j];
                    }
                }
                accumulate(grads, *a, Tensor::matrix(n, k, out)?);
            }
            Op::CharFn { z, t, cos, sin } => {
                let (z, t) = (*z, *t);
                let (zv, tv) = (self.value(z), self.value(t));
                let (n, d) = (zv.rows(), zv.cols());
                let k = tv.rows();
                let inv_n = 1.0 / n as f64;
                let (gre, gim) = g.data().split_at(k);
                let gre: Vec<f64> = gre.iter().map(|v| v * inv_n).collect();
                let gim: Vec<f64> = gim.iter().map(|v| v * inv_n).collect();
                let block = cf_block_rows(k);
                let mut gp = vec![0.0; block.min(n) * k];
                let mut dz = if self.wants(z) { vec![0.0; n * d] } else { Vec::new() };
                let mut dt = if self.wants(t) { vec![0.0; k * d] } else { Vec::new() };
                for start in (0..n).step_by(block) {
                    let rows = block.min(n - start);
                    let range = start * k..(start + rows) * k;
                    let buf = &mut gp[..rows * k];
                    for ((orow, crow), srow) in buf.chunks_mut(k).zip(cos[range.clone()].chunks(k)).zip(sin[range].chunks(k)) {
                        for j in 0..k {
                            orow[j] = crow[j] * gim[j] - srow[j] * gre[j];
                        }
                    }
                    if !dz.is_empty() {
                        // dZ_block = G_block · T
                        gemm_into(rows, k, d, buf, (k, 1), tv.data(), (d, 1), &mut dz[start * d..], 0.0);
                    }
                    if !dt.is_empty() {
                        // dT += G_blockᵀ · Z_block
                        gemm_into(k, rows, d, buf, (1, k), &zv.data()[start * d..], (d, 1), &mut dt, 1.0);
                    }
                }
                if !dz.is_empty() {
                    accumulate(grads, z, Tensor::matrix(n, d, dz)?);
                }
                if !dt.is_empty() {
                    accumulate(grads, t, Tensor::matrix(k, d, dt)?);
                }
            }
        }
        Ok(())
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(b.shape().to_vec(), data).expect("matching shapes")
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    zip_map(a, b, |x, y| x * y)
}

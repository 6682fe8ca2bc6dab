use super::kernels::gemm;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Exp(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SelectRow(Var, usize),
    Transpose(Var),
    SoftmaxRows(Var),
    LayerNormRows { input: Var, inv_std: Vec<f64> },
    Cosine { a: Var, b: Var, a_norm: Vec<f64>, b_norm: Vec<f64> },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    tracked: bool,
}

/// A single-use record of one forward computation.
///
/// Nodes are appended in evaluation order, so reverse index order is a valid
/// reverse topological order. A tape is dropped after its backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` into `tensor.grad`. Frozen tensors and
    /// variables the loss does not depend on are left untouched.
    pub fn accumulate_into(&self, v: Var, tensor: &mut Tensor) -> Result<()> {
        match self.get(v) {
            Some(g) => tensor.accumulate_grad(g),
            None => Ok(()),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, tracked: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Records `tensor` as a leaf. Its gradient is tracked iff the tensor
    /// requires grad; the tensor itself is never modified by the tape.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        self.push(
            tensor.rows(),
            tensor.cols(),
            tensor.data().to_vec(),
            Op::Leaf,
            tensor.requires_grad(),
        )
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Result<Var> {
        if rows * cols != value.len() || rows == 0 || cols == 0 {
            return Err(Error::Shape(format!(
                "constant {rows}x{cols} given {} values",
                value.len()
            )));
        }
        Ok(self.push(rows, cols, value, Op::Leaf, false))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::matrix(n.rows, n.cols, n.value.clone()).expect("node shapes are valid")
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape(format!(
                "{what}: {}x{} vs {}x{}",
                sa.0, sa.1, sb.0, sb.1
            )));
        }
        Ok(sa)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner dimensions disagree: {m}x{k} · {k2}x{n}"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, 0.0, &mut out);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(m, n, out, Op::MatMul(a, b), tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, "add")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(r, c, out, Op::Add(a, b), tracked))
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(row) != (1, c) {
            let (rr, rc) = self.shape(row);
            return Err(Error::Shape(format!(
                "row broadcast needs 1x{c}, got {rr}x{rc} against {r}x{c}"
            )));
        }
        let rv = self.value(row);
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, x)| x + rv[i % c])
            .collect();
        let tracked = self.tracked(a) || self.tracked(row);
        Ok(self.push(r, c, out, Op::AddRow(a, row), tracked))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, "sub")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(r, c, out, Op::Sub(a, b), tracked))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, "mul")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(r, c, out, Op::Mul(a, b), tracked))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| x * factor).collect();
        let tracked = self.tracked(a);
        self.push(r, c, out, Op::Scale(a, factor), tracked)
    }

    /// Elementwise `max(x, slope * x)` for `slope` in (0, 1).
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let (r, c) = self.shape(a);
        let out = self
            .value(a)
            .iter()
            .map(|&x| if x > 0.0 { x } else { slope * x })
            .collect();
        let tracked = self.tracked(a);
        self.push(r, c, out, Op::LeakyRelu(a, slope), tracked)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| x.exp()).collect();
        let tracked = self.tracked(a);
        self.push(r, c, out, Op::Exp(a), tracked)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero wherever the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| x.clamp(lo, hi)).collect();
        let tracked = self.tracked(a);
        self.push(r, c, out, Op::Clamp(a, lo, hi), tracked)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let tracked = self.tracked(a);
        self.push(1, 1, vec![s], Op::Sum(a), tracked)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let tracked = self.tracked(a);
        self.push(1, 1, vec![m], Op::Mean(a), tracked)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if len == 0 || start + len > c {
            return Err(Error::Shape(format!(
                "column slice {start}..{} out of range for {r}x{c}",
                start + len
            )));
        }
        let v = self.value(a);
        let out: Vec<f64> = (0..r)
            .flat_map(|i| v[i * c + start..i * c + start + len].iter().copied())
            .collect();
        let tracked = self.tracked(a);
        Ok(self.push(r, len, out, Op::SliceCols(a, start), tracked))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Shape("concat of zero parts".into()));
        };
        let c = self.shape(first).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, pc) = self.shape(p);
            if pc != c {
                return Err(Error::Shape(format!("row concat: {pc} columns vs {c}")));
            }
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(rows, c, out, Op::ConcatRows(parts.to_vec()), tracked))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Shape("concat of zero parts".into()));
        };
        let r = self.shape(first).0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.shape(p);
            if pr != r {
                return Err(Error::Shape(format!("column concat: {pr} rows vs {r}")));
            }
            widths.push(pc);
        }
        let c: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(r, c, out, Op::ConcatCols(parts.to_vec()), tracked))
    }

    pub fn select_row(&mut self, a: Var, i: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if i >= r {
            return Err(Error::Index(format!("row {i} of a {r}x{c} matrix")));
        }
        let out = self.value(a)[i * c..(i + 1) * c].to_vec();
        let tracked = self.tracked(a);
        Ok(self.push(1, c, out, Op::SelectRow(a, i), tracked))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let v = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        let tracked = self.tracked(a);
        self.push(c, r, out, Op::Transpose(a), tracked)
    }

    /// Numerically stabilized row-wise softmax. With `causal`, entry `(i, j)`
    /// for `j > i` is masked out (probability exactly zero).
    pub fn softmax_rows(&mut self, a: Var, causal: bool) -> Var {
        let (r, c) = self.shape(a);
        let v = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let width = if causal { (i + 1).min(c) } else { c };
            softmax_into(&v[i * c..i * c + width], &mut out[i * c..i * c + width]);
        }
        let tracked = self.tracked(a);
        self.push(r, c, out, Op::SoftmaxRows(a), tracked)
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)` without affine terms.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let (r, c) = self.shape(a);
        let v = self.value(a);
        let mut out = vec![0.0; r * c];
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = &v[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + eps).sqrt();
            for (o, x) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = (x - mean) * s;
            }
            inv_std.push(s);
        }
        let tracked = self.tracked(a);
        self.push(r, c, out, Op::LayerNormRows { input: a, inv_std }, tracked)
    }

    /// Pairwise cosine similarities: `out[i][j] = cos(a_i, b_j)`.
    pub fn cosine_matrix(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, d) = self.shape(a);
        let (n, d2) = self.shape(b);
        if d != d2 {
            return Err(Error::Shape(format!(
                "cosine similarity over {m}x{d} and {n}x{d2}"
            )));
        }
        let a_norm = row_norms(self.value(a), d);
        let b_norm = row_norms(self.value(b), d);
        if let Some(i) = a_norm.iter().position(|&x| x == 0.0) {
            return Err(Error::Domain(format!("row {i} of left operand has zero norm")));
        }
        if let Some(j) = b_norm.iter().position(|&x| x == 0.0) {
            return Err(Error::Domain(format!("row {j} of right operand has zero norm")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, d, n, self.value(a), false, self.value(b), true, 0.0, &mut out);
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = (out[i * n + j] / (a_norm[i] * b_norm[j])).clamp(-1.0, 1.0);
            }
        }
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(m, n, out, Op::Cosine { a, b, a_norm, b_norm }, tracked))
    }

    /// Cosine similarity between two single-row operands, as a `1 x 1` node.
    pub fn cosine_similarity(&mut self, u: Var, v: Var) -> Result<Var> {
        for (name, x) in [("u", u), ("v", v)] {
            if self.shape(x).0 != 1 {
                return Err(Error::Shape(format!("{name} must be a single row")));
            }
        }
        self.cosine_matrix(u, v)
    }

    /// Mean over rows of `-log softmax(logits_b)[label_b]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, c) = self.shape(logits);
        if labels.len() != b {
            return Err(Error::Shape(format!(
                "{} labels for {b} rows of logits",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Index(format!("label {bad} outside [0, {c})")));
        }
        let v = self.value(logits);
        let mut probs = vec![0.0; b * c];
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = &v[i * c..(i + 1) * c];
            let arg = argmax(row);
            let max = row[arg];
            // log-sum-exp as max + log1p(sum of the non-max terms): keeps
            // precision when the loss is tiny.
            let rest: f64 = row
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != arg)
                .map(|(_, x)| (x - max).exp())
                .sum();
            let lse = max + rest.ln_1p();
            loss += rest.ln_1p() + (max - row[label]);
            for (p, x) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
        }
        let tracked = self.tracked(logits);
        Ok(self.push(
            1,
            1,
            vec![loss / b as f64],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            tracked,
        ))
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Gradients accumulate additively over every path from the loss to a
    /// node. Only tracked nodes receive gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let (r, c) = self.shape(loss);
        if r * c != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {r}x{c}"
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if !self.tracked(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        if let Some(bad) = grads
            .iter()
            .position(|g| g.as_ref().is_some_and(|g| g.iter().any(|x| !x.is_finite())))
        {
            return Err(Error::Numeric(format!("non-finite gradient at node {bad}")));
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = cols;
                if self.tracked(*a) {
                    let buf = self.grad_buf(*a, grads);
                    gemm(m, n, k, g, false, self.value(*b), true, 1.0, buf);
                }
                if self.tracked(*b) {
                    let buf = self.grad_buf(*b, grads);
                    gemm(k, m, n, self.value(*a), true, g, false, 1.0, buf);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(*a, grads, |buf| add_into(buf, g));
                self.accumulate(*b, grads, |buf| add_into(buf, g));
            }
            Op::AddRow(a, row) => {
                self.accumulate(*a, grads, |buf| add_into(buf, g));
                self.accumulate(*row, grads, |buf| {
                    for (i, x) in g.iter().enumerate() {
                        buf[i % cols] += x;
                    }
                });
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, grads, |buf| add_into(buf, g));
                self.accumulate(*b, grads, |buf| {
                    for (o, x) in buf.iter_mut().zip(g) {
                        *o -= x;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.accumulate(*a, grads, |buf| {
                    for ((o, x), y) in buf.iter_mut().zip(g).zip(vb) {
                        *o += x * y;
                    }
                });
                self.accumulate(*b, grads, |buf| {
                    for ((o, x), y) in buf.iter_mut().zip(g).zip(va) {
                        *o += x * y;
                    }
                });
            }
            Op::Scale(a, f) => self.accumulate(*a, grads, |buf| {
                for (o, x) in buf.iter_mut().zip(g) {
                    *o += x * f;
                }
            }),
            Op::LeakyRelu(a, slope) => {
                let va = self.value(*a);
                self.accumulate(*a, grads, |buf| {
                    for ((o, x), v) in buf.iter_mut().zip(g).zip(va) {
                        *o += if *v > 0.0 { *x } else { x * slope };
                    }
                });
            }
            Op::Exp(a) => self.accumulate(*a, grads, |buf| {
                for ((o, x), y) in buf.iter_mut().zip(g).zip(&node.value) {
                    *o += x * y;
                }
            }),
            Op::Clamp(a, lo, hi) => {
                let va = self.value(*a);
                self.accumulate(*a, grads, |buf| {
                    for ((o, x), v) in buf.iter_mut().zip(g).zip(va) {
                        if v >= lo && v <= hi {
                            *o += x;
                        }
                    }
                });
            }
            Op::Sum(a) => self.accumulate(*a, grads, |buf| {
                for o in buf.iter_mut() {
                    *o += g[0];
                }
            }),
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                self.accumulate(*a, grads, |buf| {
                    for o in buf.iter_mut() {
                        *o += g[0] / n;
                    }
                });
            }
            Op::SliceCols(a, start) => {
                let src_cols = self.shape(*a).1;
                self.accumulate(*a, grads, |buf| {
                    for i in 0..rows {
                        for j in 0..cols {
                            buf[i * src_cols + start + j] += g[i * cols + j];
                        }
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    let part = &g[offset..offset + len];
                    self.accumulate(p, grads, |buf| add_into(buf, part));
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let mut col = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    self.accumulate(p, grads, |buf| {
                        for i in 0..rows {
                            for j in 0..w {
                                buf[i * w + j] += g[i * cols + col + j];
                            }
                        }
                    });
                    col += w;
                }
            }
            Op::SelectRow(a, i) => self.accumulate(*a, grads, |buf| {
                add_into(&mut buf[i * cols..(i + 1) * cols], g);
            }),
            Op::Transpose(a) => self.accumulate(*a, grads, |buf| {
                // node is rows x cols; source is cols x rows
                for i in 0..rows {
                    for j in 0..cols {
                        buf[j * rows + i] += g[i * cols + j];
                    }
                }
            }),
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                self.accumulate(*a, grads, |buf| {
                    for i in 0..rows {
                        let r = i * cols..(i + 1) * cols;
                        let dot: f64 = g[r.clone()].iter().zip(&y[r.clone()]).map(|(a, b)| a * b).sum();
                        for k in r {
                            buf[k] += y[k] * (g[k] - dot);
                        }
                    }
                });
            }
            Op::LayerNormRows { input, inv_std } => {
                let y = &node.value;
                self.accumulate(*input, grads, |buf| {
                    let n = cols as f64;
                    for i in 0..rows {
                        let r = i * cols..(i + 1) * cols;
                        let mean_g = g[r.clone()].iter().sum::<f64>() / n;
                        let mean_gy =
                            g[r.clone()].iter().zip(&y[r.clone()]).map(|(a, b)| a * b).sum::<f64>() / n;
                        for k in r {
                            buf[k] += inv_std[i] * (g[k] - mean_g - y[k] * mean_gy);
                        }
                    }
                });
            }
            Op::Cosine { a, b, a_norm, b_norm } => {
                let (m, n) = (rows, cols);
                let d = self.shape(*a).1;
                let (va, vb) = (self.value(*a), self.value(*b));
                let cos = &node.value;
                self.accumulate(*a, grads, |buf| {
                    for i in 0..m {
                        let ai = &va[i * d..(i + 1) * d];
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            let bj = &vb[j * d..(j + 1) * d];
                            let s = gij / (a_norm[i] * b_norm[j]);
                            let t = gij * cos[i * n + j] / (a_norm[i] * a_norm[i]);
                            for k in 0..d {
                                buf[i * d + k] += s * bj[k] - t * ai[k];
                            }
                        }
                    }
                });
                self.accumulate(*b, grads, |buf| {
                    for j in 0..n {
                        let bj = &vb[j * d..(j + 1) * d];
                        for i in 0..m {
                            let gij = g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            let ai = &va[i * d..(i + 1) * d];
                            let s = gij / (a_norm[i] * b_norm[j]);
                            let t = gij * cos[i * n + j] / (b_norm[j] * b_norm[j]);
                            for k in 0..d {
                                buf[j * d + k] += s * ai[k] - t * bj[k];
                            }
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let c = self.shape(*logits).1;
                let scale = g[0] / labels.len() as f64;
                self.accumulate(*logits, grads, |buf| {
                    for (i, &label) in labels.iter().enumerate() {
                        for k in 0..c {
                            buf[i * c + k] += scale * probs[i * c + k];
                        }
                        buf[i * c + label] -= scale;
                    }
                });
            }
        }
    }

    fn grad_buf<'g>(&self, v: Var, grads: &'g mut [Option<Vec<f64>>]) -> &'g mut [f64] {
        let len = self.nodes[v.0].value.len();
        grads[v.0].get_or_insert_with(|| vec![0.0; len])
    }

    fn accumulate(&self, v: Var, grads: &mut [Option<Vec<f64>>], f: impl FnOnce(&mut [f64])) {
        if self.tracked(v) {
            f(self.grad_buf(v, grads));
        }
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

fn add_into(buf: &mut [f64], g: &[f64]) {
    for (o, x) in buf.iter_mut().zip(g) {
        *o += x;
    }
}

fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

fn row_norms(v: &[f64], d: usize) -> Vec<f64> {
    v.chunks(d).map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt()).collect()
}

/// Max-subtracted softmax of `x` written into `out`.
pub(crate) fn softmax_into(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

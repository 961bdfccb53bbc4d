use std::ops::Range;
use std::sync::Arc;

use super::{kernels, AttentionMask, Tensor};
use crate::error::{Error, Result};

/// Lower clamp applied to probabilities inside [`Tape::bce`].
pub const BCE_CLAMP: f64 = 1e-7;
/// Variance epsilon of [`Tape::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-head attention probabilities of one [`Tape::attention`] call, laid
/// out along the non-zero pattern of its mask.
#[derive(Clone, Debug)]
pub struct AttentionWeights {
    mask: Arc<AttentionMask>,
    heads: usize,
    /// `heads × nnz`, row-major in mask order.
    probs: Vec<f64>,
    row_start: Vec<usize>,
}

impl AttentionWeights {
    pub fn mask(&self) -> &AttentionMask {
        &self.mask
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// Probabilities of `head` over the permitted keys of `row`, in key order.
    pub fn row(&self, head: usize, row: usize) -> &[f64] {
        let nnz = self.probs.len() / self.heads.max(1);
        let base = head * nnz;
        &self.probs[base + self.row_start[row]..base + self.row_start[row + 1]]
    }

    /// Dense `rows × cols` matrix of head-averaged attention.
    pub fn head_mean(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.mask.cols()]; self.mask.rows()];
        for (i, out_row) in out.iter_mut().enumerate() {
            for h in 0..self.heads {
                for (j, p) in self.mask.row_keys(i).zip(self.row(h, i)) {
                    out_row[j] += p / self.heads as f64;
                }
            }
        }
        out
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Sum(Var),
    Reshape(Var),
    Concat(Var, Var),
    MeanRows {
        x: Var,
        rows: Vec<usize>,
    },
    MaskedSoftmax {
        x: Var,
        mask: AttentionMask,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    /// Output entry `k` copies input entry `source[k]`; `usize::MAX` marks a constant zero.
    RowMax {
        x: Var,
        source: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        weights: AttentionWeights,
    },
    Bce {
        p: Var,
        targets: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Records primitive operations for reverse-mode differentiation.
///
/// Values live in an arena indexed by [`Var`]. Operations are appended in
/// forward order; [`Tape::backward`] walks them in exact reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops every recorded node while keeping the allocation.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape nodes are well-formed")
    }

    pub fn attention_weights(&self, v: Var) -> Option<&AttentionWeights> {
        match &self.nodes[v.0].op {
            Op::Attention { weights, .. } => Some(weights),
            _ => None,
        }
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.nodes[v.0].shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(op, s, &[0, 0])),
        }
    }

    /// Records `t`; gradients are tracked when `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    pub fn constant(&mut self, shape: Vec<usize>, value: Vec<f64>) -> Result<Var> {
        if shape.iter().product::<usize>() != value.len() {
            return Err(Error::shape("constant", &shape, &[value.len()]));
        }
        Ok(self.push(shape, value, Op::Leaf, false))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", &[m, k], &[k2, n]));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(
            &mut out,
            &self.nodes[a.0].value,
            m,
            k,
            &self.nodes[b.0].value,
            n,
        );
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(vec![m, n], out, Op::Matmul(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "transpose")?;
        let av = &self.nodes[a.0].value;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        let ng = self.ng(a);
        Ok(self.push(vec![n, m], out, Op::Transpose(a), ng))
    }

    fn zip_same(&mut self, a: Var, b: Var, op: &'static str, f: fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
        if na.shape != nb.shape {
            return Err(Error::shape(op, &na.shape, &nb.shape));
        }
        Ok(na.value.iter().zip(&nb.value).map(|(x, y)| f(*x, *y)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(self.nodes[a.0].shape.clone(), out, Op::Add(a, b), ng))
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(self.nodes[a.0].shape.clone(), out, Op::Mul(a, b), ng))
    }

    /// Adds a length-`n` bias to every row of an `m × n` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "add_row")?;
        let bn = self.nodes[bias.0].value.len();
        if bn != n {
            return Err(Error::shape("add_row", &[m, n], &self.nodes[bias.0].shape));
        }
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[bias.0].value);
        let mut out = av.clone();
        for row in out.chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(bv) {
                *o += b;
            }
        }
        let ng = self.ng(a) || self.ng(bias);
        Ok(self.push(vec![m, n], out, Op::AddRow(a, bias), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.nodes[a.0].value.iter().map(|x| x * c).collect();
        let ng = self.ng(a);
        self.push(self.nodes[a.0].shape.clone(), out, Op::Scale(a, c), ng)
    }

    fn map(&mut self, a: Var, f: fn(f64) -> f64, op: Op) -> Var {
        let out = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        let ng = self.ng(a);
        self.push(self.nodes[a.0].shape.clone(), out, op, ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().sum();
        let ng = self.ng(a);
        self.push(Vec::new(), vec![s], Op::Sum(a), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let n = &self.nodes[a.0];
        if shape.iter().product::<usize>() != n.value.len() {
            return Err(Error::shape("reshape", &n.shape, &shape));
        }
        let value = n.value.clone();
        let ng = self.ng(a);
        Ok(self.push(shape, value, Op::Reshape(a), ng))
    }

    /// Concatenates two vectors.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
        if na.shape.len() != 1 || nb.shape.len() != 1 {
            return Err(Error::shape("concat", &na.shape, &nb.shape));
        }
        let mut value = na.value.clone();
        value.extend_from_slice(&nb.value);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(vec![value.len()], value, Op::Concat(a, b), ng))
    }

    /// Mean of the selected rows of a matrix, as a vector.
    pub fn mean_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        let (m, d) = self.dims2(x, "mean_rows")?;
        if rows.is_empty() {
            return Err(Error::Span { start: 0, end: 0, len: m });
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(Error::Span { start: bad, end: bad + 1, len: m });
        }
        let xv = &self.nodes[x.0].value;
        let mut out = vec![0.0; d];
        for &r in &rows {
            for (o, v) in out.iter_mut().zip(&xv[r * d..(r + 1) * d]) {
                *o += v;
            }
        }
        let inv = 1.0 / rows.len() as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        let ng = self.ng(x);
        Ok(self.push(vec![d], out, Op::MeanRows { x, rows }, ng))
    }

    /// Row-wise softmax over the permitted entries of `mask`.
    ///
    /// Masked entries are exactly 0; a row with no permitted entry is all zero.
    pub fn masked_softmax(&mut self, x: Var, mask: &AttentionMask) -> Result<Var> {
        let (m, n) = self.dims2(x, "masked_softmax")?;
        if mask.rows() != m || mask.cols() != n {
            return Err(Error::shape("masked_softmax", &[m, n], &[mask.rows(), mask.cols()]));
        }
        let xv = &self.nodes[x.0].value;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let max = mask
                .row_keys(i)
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut z = 0.0;
            for j in mask.row_keys(i) {
                let e = (row[j] - max).exp();
                out[i * n + j] = e;
                z += e;
            }
            for j in mask.row_keys(i) {
                out[i * n + j] /= z;
            }
        }
        let ng = self.ng(x);
        Ok(self.push(
            vec![m, n],
            out,
            Op::MaskedSoftmax {
                x,
                mask: mask.clone(),
            },
            ng,
        ))
    }

    /// Normalizes each row over the last dimension, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let shape = self.nodes[x.0].shape.clone();
        let d = *shape.last().ok_or_else(|| Error::shape("layer_norm", &shape, &[1]))?;
        for p in [gain, bias] {
            if self.nodes[p.0].value.len() != d {
                return Err(Error::shape("layer_norm", &shape, &self.nodes[p.0].shape));
            }
        }
        let (xv, gv, bv) = (
            &self.nodes[x.0].value,
            &self.nodes[gain.0].value,
            &self.nodes[bias.0].value,
        );
        let rows = xv.len() / d.max(1);
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = s;
            for j in 0..d {
                let h = (row[j] - mean) * s;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv[j] + bv[j];
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        Ok(self.push(
            shape,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    /// Per-dimension maximum of the rows of `x` in `span`, as a vector.
    ///
    /// The gradient flows to the first arg-max row of each dimension.
    pub fn max_over_steps(&mut self, x: Var, span: Range<usize>) -> Result<Var> {
        let (l, d) = self.dims2(x, "max_over_steps")?;
        if span.start >= span.end || span.end > l {
            return Err(Error::Span {
                start: span.start,
                end: span.end,
                len: l,
            });
        }
        let mask = AttentionMask::from_row_ranges(1, l, |_| span.clone());
        let m = self.row_max(x, &mask)?;
        self.reshape(m, vec![d])
    }

    /// For each row of `mask`, the per-dimension maximum of the permitted
    /// rows of `x` (an `L × D` matrix). Empty mask rows yield zero rows.
    pub fn row_max(&mut self, x: Var, mask: &AttentionMask) -> Result<Var> {
        let (l, d) = self.dims2(x, "row_max")?;
        if mask.cols() != l {
            return Err(Error::shape("row_max", &[l, d], &[mask.rows(), mask.cols()]));
        }
        let xv = &self.nodes[x.0].value;
        let w = mask.rows();
        let mut out = vec![0.0; w * d];
        let mut source = vec![usize::MAX; w * d];
        for i in 0..w {
            for j in mask.row_keys(i) {
                for c in 0..d {
                    let k = i * d + c;
                    let v = xv[j * d + c];
                    if source[k] == usize::MAX || v > out[k] {
                        out[k] = v;
                        source[k] = j * d + c;
                    }
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(vec![w, d], out, Op::RowMax { x, source }, ng))
    }

    /// Multi-head scaled dot-product attention restricted to `mask`.
    ///
    /// `q` is `m × D`, `k` and `v` are `n × D`; head `h` uses columns
    /// `h·D/heads .. (h+1)·D/heads` and scores are scaled by `1/√(D/heads)`.
    /// Head outputs are written back into their column blocks, so the result
    /// is the concatenation of the heads. Rows without permitted keys are zero.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        mask: Arc<AttentionMask>,
    ) -> Result<Var> {
        let (m, dq) = self.dims2(q, "attention")?;
        let (n, dk) = self.dims2(k, "attention")?;
        let (n2, dv) = self.dims2(v, "attention")?;
        if dq != dk || dk != dv || n != n2 {
            return Err(Error::shape("attention", &[m, dq], &[n, dk, n2, dv]));
        }
        if mask.rows() != m || mask.cols() != n {
            return Err(Error::shape("attention mask", &[m, n], &[mask.rows(), mask.cols()]));
        }
        if heads == 0 || dq % heads != 0 {
            return Err(Error::Config(format!(
                "{heads} heads do not divide model width {dq}"
            )));
        }
        let d = dq;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut row_start = Vec::with_capacity(m + 1);
        row_start.push(0);
        for i in 0..m {
            row_start.push(row_start[i] + mask.row_count(i));
        }
        let nnz = row_start[m];
        let mut probs = vec![0.0; heads * nnz];
        let qh = split_heads(&self.nodes[q.0].value, m, heads);
        let kh = split_heads(&self.nodes[k.0].value, n, heads);
        let vh = split_heads(&self.nodes[v.0].value, n, heads);
        let mut oh = vec![0.0; m * d];
        for h in 0..heads {
            let (bq, bk) = (h * m * dh, h * n * dh);
            for i in 0..m {
                let p = &mut probs[h * nnz + row_start[i]..h * nnz + row_start[i + 1]];
                if p.is_empty() {
                    continue;
                }
                let qi = &qh[bq + i * dh..bq + (i + 1) * dh];
                let mut max = f64::NEG_INFINITY;
                let mut slots = p.iter_mut();
                for &(s, e) in mask.row_runs(i) {
                    for kj in kh[bk + s * dh..bk + e * dh].chunks_exact(dh) {
                        let sc = dot(qi, kj) * scale;
                        max = max.max(sc);
                        *slots.next().expect("row count matches runs") = sc;
                    }
                }
                let mut z = 0.0;
                for slot in p.iter_mut() {
                    *slot = (*slot - max).exp();
                    z += *slot;
                }
                let inv = 1.0 / z;
                let oi = &mut oh[bq + i * dh..bq + (i + 1) * dh];
                let mut slots = p.iter_mut();
                for &(s, e) in mask.row_runs(i) {
                    for vj in vh[bk + s * dh..bk + e * dh].chunks_exact(dh) {
                        let slot = slots.next().expect("row count matches runs");
                        *slot *= inv;
                        axpy(oi, *slot, vj);
                    }
                }
            }
        }
        let out = merge_heads(&oh, m, heads);
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        let weights = AttentionWeights {
            mask,
            heads,
            probs,
            row_start,
        };
        Ok(self.push(vec![m, d], out, Op::Attention { q, k, v, weights }, ng))
    }

    /// Mean binary cross-entropy of probabilities `p` against 0/1 `targets`.
    ///
    /// Probabilities are clamped to `[1e-7, 1 - 1e-7]`.
    pub fn bce(&mut self, p: Var, targets: &[f64]) -> Result<Var> {
        let pv = &self.nodes[p.0].value;
        if pv.len() != targets.len() || pv.is_empty() {
            return Err(Error::shape("bce", &self.nodes[p.0].shape, &[targets.len()]));
        }
        let mut loss = 0.0;
        for (&pi, &y) in pv.iter().zip(targets) {
            let c = pi.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            loss -= y * c.ln() + (1.0 - y) * (1.0 - c).ln();
        }
        loss /= targets.len() as f64;
        let ng = self.ng(p);
        Ok(self.push(
            Vec::new(),
            vec![loss],
            Op::Bce {
                p,
                targets: targets.to_vec(),
            },
            ng,
        ))
    }

    /// Back-propagates from the scalar `loss` through every recorded node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let n = &self.nodes[loss.0];
        if n.value.len() != 1 {
            return Err(Error::shape("backward", &n.shape, &[]));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                if let Some(ga) = self.slot(grads, *a) {
                    kernels::matmul_bt_acc(ga, g, m, n, bv, k);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    kernels::matmul_at_acc(gb, av, m, k, g, n);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (node.shape[0], node.shape[1]);
                if let Some(ga) = self.slot(grads, *a) {
                    for i in 0..m {
                        for j in 0..n {
                            ga[j * m + i] += g[i * n + j];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gv) = self.slot(grads, *v) {
                        gv.iter_mut().zip(g).for_each(|(o, x)| *o += x);
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(o, x)| *o += x);
                }
                let n = node.shape[1];
                if let Some(gb) = self.slot(grads, *bias) {
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(o, x)| *o += x);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                if let Some(ga) = self.slot(grads, *a) {
                    for ((o, x), y) in ga.iter_mut().zip(g).zip(bv) {
                        *o += x * y;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((o, x), y) in gb.iter_mut().zip(g).zip(av) {
                        *o += x * y;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(o, x)| *o += x * c);
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((o, x), y) in ga.iter_mut().zip(g).zip(&node.value) {
                        *o += x * y * (1.0 - y);
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((o, x), y) in ga.iter_mut().zip(g).zip(&node.value) {
                        *o += x * (1.0 - y * y);
                    }
                }
            }
            Op::Relu(a) => {
                let av = &self.nodes[a.0].value;
                if let Some(ga) = self.slot(grads, *a) {
                    for ((o, x), y) in ga.iter_mut().zip(g).zip(av) {
                        if *y > 0.0 {
                            *o += x;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(o, x)| *o += x);
                }
            }
            Op::Concat(a, b) => {
                let na = self.nodes[a.0].value.len();
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(&g[..na]).for_each(|(o, x)| *o += x);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gb.iter_mut().zip(&g[na..]).for_each(|(o, x)| *o += x);
                }
            }
            Op::MeanRows { x, rows } => {
                let d = node.shape[0];
                let inv = 1.0 / rows.len() as f64;
                if let Some(gx) = self.slot(grads, *x) {
                    for &r in rows {
                        for (o, v) in gx[r * d..(r + 1) * d].iter_mut().zip(g) {
                            *o += v * inv;
                        }
                    }
                }
            }
            Op::MaskedSoftmax { x, mask } => {
                let n = node.shape[1];
                let y = &node.value;
                if let Some(gx) = self.slot(grads, *x) {
                    for i in 0..node.shape[0] {
                        let dot: f64 = mask.row_keys(i).map(|j| y[i * n + j] * g[i * n + j]).sum();
                        for j in mask.row_keys(i) {
                            gx[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = *node.shape.last().unwrap_or(&1);
                let gv = &self.nodes[gain.0].value;
                if let Some(gg) = self.slot(grads, *gain) {
                    for (r, row) in g.chunks(d).enumerate() {
                        for j in 0..d {
                            gg[j] += row[j] * xhat[r * d + j];
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *bias) {
                    for row in g.chunks(d) {
                        gb.iter_mut().zip(row).for_each(|(o, x)| *o += x);
                    }
                }
                if let Some(gx) = self.slot(grads, *x) {
                    let mut gh = vec![0.0; d];
                    for (r, row) in g.chunks(d).enumerate() {
                        let h = &xhat[r * d..(r + 1) * d];
                        for j in 0..d {
                            gh[j] = row[j] * gv[j];
                        }
                        let m1 = gh.iter().sum::<f64>() / d as f64;
                        let m2 = gh.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            gx[r * d + j] += rstd[r] * (gh[j] - m1 - h[j] * m2);
                        }
                    }
                }
            }
            Op::RowMax { x, source } => {
                if let Some(gx) = self.slot(grads, *x) {
                    for (k, &s) in source.iter().enumerate() {
                        if s != usize::MAX {
                            gx[s] += g[k];
                        }
                    }
                }
            }
            Op::Attention { q, k, v, weights } => {
                self.attention_backward(node, g, grads, (*q, *k, *v), weights)
            }
            Op::Bce { p, targets } => {
                let pv = &self.nodes[p.0].value;
                let inv = 1.0 / targets.len() as f64;
                if let Some(gp) = self.slot(grads, *p) {
                    for ((o, &pi), &y) in gp.iter_mut().zip(pv).zip(targets) {
                        if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&pi) {
                            continue;
                        }
                        *o += g[0] * inv * (-y / pi + (1.0 - y) / (1.0 - pi));
                    }
                }
            }
        }
    }

    fn attention_backward(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        (q, k, v): (Var, Var, Var),
        w: &AttentionWeights,
    ) {
        let m = node.shape[0];
        let d = node.shape[1];
        let n = self.nodes[k.0].shape[0];
        let heads = w.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let qh = split_heads(&self.nodes[q.0].value, m, heads);
        let kh = split_heads(&self.nodes[k.0].value, n, heads);
        let vh = split_heads(&self.nodes[v.0].value, n, heads);
        let gh = split_heads(g, m, heads);
        let mut gq = vec![0.0; m * d];
        let mut gk = vec![0.0; n * d];
        let mut gv = vec![0.0; n * d];
        let mut ds = Vec::new();
        for h in 0..heads {
            let (bq, bk) = (h * m * dh, h * n * dh);
            for i in 0..m {
                let p = w.row(h, i);
                if p.is_empty() {
                    continue;
                }
                let gi = &gh[bq + i * dh..bq + (i + 1) * dh];
                ds.clear();
                let mut total = 0.0;
                let mut probs = p.iter();
                for &(s, e) in w.mask.row_runs(i) {
                    let keys = bk + s * dh..bk + e * dh;
                    for (vj, gvj) in vh[keys.clone()]
                        .chunks_exact(dh)
                        .zip(gv[keys].chunks_exact_mut(dh))
                    {
                        let pj = *probs.next().expect("row count matches runs");
                        let dp = dot(gi, vj);
                        ds.push(dp);
                        total += pj * dp;
                        axpy(gvj, pj, gi);
                    }
                }
                let qi = &qh[bq + i * dh..bq + (i + 1) * dh];
                let gqi = &mut gq[bq + i * dh..bq + (i + 1) * dh];
                let mut terms = p.iter().zip(&ds);
                for &(s, e) in w.mask.row_runs(i) {
                    let keys = bk + s * dh..bk + e * dh;
                    for (kj, gkj) in kh[keys.clone()]
                        .chunks_exact(dh)
                        .zip(gk[keys].chunks_exact_mut(dh))
                    {
                        let (&pj, &dp) = terms.next().expect("row count matches runs");
                        let sc = pj * (dp - total) * scale;
                        if sc == 0.0 {
                            continue;
                        }
                        axpy(gqi, sc, kj);
                        axpy(gkj, sc, qi);
                    }
                }
            }
        }
        for (var, delta, rows) in [(q, gq, m), (k, gk, n), (v, gv, n)] {
            if let Some(slot) = self.slot(grads, var) {
                let delta = merge_heads(&delta, rows, heads);
                slot.iter_mut().zip(&delta).for_each(|(o, x)| *o += x);
            }
        }
    }
}

/// Reorders a `rows × d` matrix into head-major blocks of `rows × d/heads`.
fn split_heads(x: &[f64], rows: usize, heads: usize) -> Vec<f64> {
    let dh = x.len() / rows.max(1) / heads;
    let mut out = Vec::with_capacity(x.len());
    for h in 0..heads {
        for row in x.chunks_exact(dh * heads) {
            out.extend_from_slice(&row[h * dh..(h + 1) * dh]);
        }
    }
    out
}

fn merge_heads(x: &[f64], rows: usize, heads: usize) -> Vec<f64> {
    let dh = x.len() / rows.max(1) / heads;
    let mut out = Vec::with_capacity(x.len());
    for i in 0..rows {
        for h in 0..heads {
            out.extend_from_slice(&x[(h * rows + i) * dh..(h * rows + i + 1) * dh]);
        }
    }
    out
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (o, v) in y.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

use super::{Node, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::Tensor;

/// Lower clamp inside `log(1 - p)` for the unlikelihood term.
pub(crate) const UNLIKELIHOOD_FLOOR: f64 = 1e-12;

fn matrix_dims(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        other => Err(Error::Shape {
            op,
            lhs: other.to_vec(),
            rhs: vec![],
        }),
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn check_targets(op: &'static str, rows: usize, vocab: usize, targets: &[usize]) -> Result<()> {
    if targets.len() != rows {
        return Err(Error::Length {
            op,
            expected: rows,
            actual: targets.len(),
        });
    }
    if let Some(&id) = targets.iter().find(|&&t| t >= vocab) {
        return Err(Error::Index { op, id, bound: vocab });
    }
    Ok(())
}

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("add", va, vb)?;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::from_parts(va.shape().to_vec(), data);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, Op::Add(a, b)))
    }

    /// Adds a length-`n` vector to every row of `x[.., n]`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vb.shape() != [vx.last_dim()] {
            return Err(Error::Shape {
                op: "add_row_bias",
                lhs: vx.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let mut data = vx.data().to_vec();
        kernels::add_bias(&mut data, vb.data());
        let value = Tensor::from_parts(vx.shape().to_vec(), data);
        let rg = self.any_grad(&[x, bias]);
        Ok(self.push(value, rg, Op::AddRowBias(x, bias)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("mul", va, vb)?;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::from_parts(va.shape().to_vec(), data);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let vx = self.value(x);
        let data = vx.data().iter().map(|v| v * c).collect();
        let value = Tensor::from_parts(vx.shape().to_vec(), data);
        let rg = self.any_grad(&[x]);
        self.push(value, rg, Op::Scale(x, c))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), rg, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let s = vx.data().iter().sum::<f64>() / vx.len() as f64;
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), rg, Op::Mean(x))
    }

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k) = matrix_dims(va, "matmul")?;
        let (k2, n) = matrix_dims(vb, "matmul")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul(va.data(), vb.data(), m, k, n, &mut out);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), rg, Op::MatMul(a, b)))
    }

    /// `a[m×k] · b[n×k]ᵀ` without materializing the transpose.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k) = matrix_dims(va, "matmul_t")?;
        let (n, k2) = matrix_dims(vb, "matmul_t")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul_t",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_transposed(va.data(), vb.data(), m, k, n, &mut out);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), rg, Op::MatMulT(a, b)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let (m, n) = matrix_dims(vx, "transpose")?;
        let src = vx.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::from_parts(vec![n, m], out), rg, Op::Transpose(x)))
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let vx = self.value(x);
        let shape = vx.shape().to_vec();
        if axis >= shape.len().max(1) {
            return Err(Error::config(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let mut out = vx.data().to_vec();
        let mut lane = vec![0.0; n];
        for o in 0..outer {
            for i in 0..inner {
                for (j, l) in lane.iter_mut().enumerate() {
                    *l = out[(o * n + j) * inner + i];
                }
                kernels::softmax_in_place(&mut lane);
                for (j, l) in lane.iter().enumerate() {
                    out[(o * n + j) * inner + i] = *l;
                }
            }
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), rg, Op::Softmax { x, axis }))
    }

    /// Layer normalization over the last axis with `eps = 1e-5`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (vx, vg, vb) = (self.value(x), self.value(gain), self.value(bias));
        let d = vx.last_dim();
        if vg.shape() != [d] || vb.shape() != [d] {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: vx.shape().to_vec(),
                rhs: vg.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; vx.len()];
        let mut stats = Vec::with_capacity(vx.rows());
        for (row, o) in vx.row_iter().zip(out.chunks_exact_mut(d)) {
            stats.push(kernels::layer_norm_row(row, vg.data(), vb.data(), o));
        }
        let value = Tensor::from_parts(vx.shape().to_vec(), out);
        let rg = self.any_grad(&[x, gain, bias]);
        Ok(self.push(value, rg, Op::LayerNorm { x, gain, bias, stats }))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let data = vx.data().iter().map(|&v| kernels::gelu(v)).collect();
        let value = Tensor::from_parts(vx.shape().to_vec(), data);
        let rg = self.any_grad(&[x]);
        self.push(value, rg, Op::Gelu(x))
    }

    /// Gathers rows of `table[V×d]`; the backward pass scatter-adds.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        let (vocab, d) = matrix_dims(vt, "embedding")?;
        if ids.is_empty() {
            return Err(Error::Length {
                op: "embedding",
                expected: 1,
                actual: 0,
            });
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(Error::Index {
                    op: "embedding",
                    id,
                    bound: vocab,
                });
            }
            out.extend_from_slice(vt.row(id));
        }
        let rg = self.any_grad(&[table]);
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), d], out),
            rg,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Causal multi-head self-attention over `q, k, v: [T×d]`, heads split
    /// along columns.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, n_heads: usize) -> Result<Var> {
        let (vq, vk, vv) = (self.value(q), self.value(k), self.value(v));
        same_shape("causal_attention", vq, vk)?;
        same_shape("causal_attention", vq, vv)?;
        let (t, d) = matrix_dims(vq, "causal_attention")?;
        if n_heads == 0 || d % n_heads != 0 {
            return Err(Error::config(format!("d_model {d} not divisible by {n_heads} heads")));
        }
        let mut out = vec![0.0; t * d];
        let mut probs = vec![0.0; n_heads * t * (t + 1) / 2];
        let mut offset = 0;
        for i in 0..t {
            let n = n_heads * (i + 1);
            kernels::attend_row(
                vq.row(i),
                &vk.data()[..i * d],
                vk.row(i),
                &vv.data()[..i * d],
                vv.row(i),
                n_heads,
                &mut probs[offset..offset + n],
                &mut out[i * d..(i + 1) * d],
            );
            offset += n;
        }
        let rg = self.any_grad(&[q, k, v]);
        Ok(self.push(
            Tensor::from_parts(vec![t, d], out),
            rg,
            Op::CausalAttention { q, k, v, n_heads, probs },
        ))
    }

    /// Mean over rows of `-log softmax(logits_t)[targets_t]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let vl = self.value(logits);
        let (t, vocab) = matrix_dims(vl, "cross_entropy")?;
        check_targets("cross_entropy", t, vocab, targets)?;
        let mut probs = Vec::with_capacity(t * vocab);
        let mut total = 0.0;
        for (row, &y) in vl.row_iter().zip(targets) {
            let lse = kernels::log_sum_exp(row);
            total += lse - row[y];
            probs.extend(row.iter().map(|v| (v - lse).exp()));
        }
        let value = Tensor::scalar(total / t as f64);
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            value,
            rg,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Margin hinge over all ordered pairs of distinct rows of `hidden[T×d]`:
    /// `mean_{i≠j} max(0, margin - 1 + cos(h_i, h_j))`, and 0 when `T < 2`.
    pub fn contrastive_hinge(&mut self, hidden: Var, margin: f64) -> Result<Var> {
        if !(-1.0..=1.0).contains(&margin) {
            return Err(Error::config(format!("margin {margin} outside [-1, 1]")));
        }
        let vh = self.value(hidden);
        let (t, _) = matrix_dims(vh, "contrastive_hinge")?;
        let value = if t < 2 {
            0.0
        } else {
            let sims = pairwise_cosines(vh);
            let mut total = 0.0;
            for i in 0..t {
                for j in 0..t {
                    if i != j {
                        total += (margin - 1.0 + sims[i * t + j]).max(0.0);
                    }
                }
            }
            total / (t * (t - 1)) as f64
        };
        let rg = self.any_grad(&[hidden]);
        Ok(self.push(Tensor::scalar(value), rg, Op::ContrastiveHinge { hidden, margin }))
    }

    /// Token-level unlikelihood: `-(1/T) Σ_t Σ_{c ∈ C_t} log(1 - p(c))`, where
    /// `C_t` holds the distinct earlier targets other than `targets[t]`.
    pub fn unlikelihood(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let vl = self.value(logits);
        let (t, vocab) = matrix_dims(vl, "unlikelihood")?;
        check_targets("unlikelihood", t, vocab, targets)?;
        let mut probs = Vec::with_capacity(t * vocab);
        for row in vl.row_iter() {
            probs.extend(kernels::softmax(row));
        }
        let mut total = 0.0;
        for (step, negatives) in negative_sets(targets, vocab).into_iter().enumerate() {
            let p = &probs[step * vocab..(step + 1) * vocab];
            for c in negatives {
                total -= (1.0 - p[c]).max(UNLIKELIHOOD_FLOOR).ln();
            }
        }
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(total / t as f64),
            rg,
            Op::Unlikelihood {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    pub(super) fn backprop_node(&mut self, i: usize, g: &[f64]) {
        let node: &Node = &self.nodes[i];
        let mut out: Vec<(Var, Vec<f64>)> = Vec::with_capacity(3);
        let want = |v: &Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [a, b] {
                    if want(v) {
                        out.push((*v, g.to_vec()));
                    }
                }
            }
            Op::AddRowBias(x, bias) => {
                if want(x) {
                    out.push((*x, g.to_vec()));
                }
                if want(bias) {
                    let n = self.nodes[bias.0].value.len();
                    let mut gb = vec![0.0; n];
                    for row in g.chunks_exact(n) {
                        for (a, b) in gb.iter_mut().zip(row) {
                            *a += b;
                        }
                    }
                    out.push((*bias, gb));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if want(a) {
                    out.push((*a, g.iter().zip(vb).map(|(g, y)| g * y).collect()));
                }
                if want(b) {
                    out.push((*b, g.iter().zip(va).map(|(g, x)| g * x).collect()));
                }
            }
            Op::Scale(x, c) => out.push((*x, g.iter().map(|v| v * c).collect())),
            Op::Sum(x) => out.push((*x, vec![g[0]; self.value(*x).len()])),
            Op::Mean(x) => {
                let n = self.value(*x).len();
                out.push((*x, vec![g[0] / n as f64; n]));
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                let mut da = want(a).then(|| vec![0.0; m * k]);
                let mut db = want(b).then(|| vec![0.0; k * n]);
                kernels::matmul_backward(
                    va.data(),
                    vb.data(),
                    g,
                    m,
                    k,
                    n,
                    da.as_deref_mut(),
                    db.as_deref_mut(),
                );
                out.extend(da.map(|d| (*a, d)));
                out.extend(db.map(|d| (*b, d)));
            }
            Op::MatMulT(a, b) => {
                // c[i][j] = Σ_p a[i][p] b[j][p]
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[0];
                if want(a) {
                    let mut da = vec![0.0; m * k];
                    kernels::matmul(g, vb.data(), m, n, k, &mut da);
                    out.push((*a, da));
                }
                if want(b) {
                    let mut db = vec![0.0; n * k];
                    for i in 0..m {
                        let a_row = va.row(i);
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for (d, &av) in db[j * k..(j + 1) * k].iter_mut().zip(a_row) {
                                *d += gij * av;
                            }
                        }
                    }
                    out.push((*b, db));
                }
            }
            Op::Transpose(x) => {
                let (m, n) = (self.value(*x).shape()[0], self.value(*x).shape()[1]);
                let mut gx = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        gx[i * n + j] = g[j * m + i];
                    }
                }
                out.push((*x, gx));
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, n, inner) = axis_split(node.value.shape(), *axis);
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + i;
                        let dotp: f64 = (0..n).map(|j| y[idx(j)] * g[idx(j)]).sum();
                        for j in 0..n {
                            gx[idx(j)] = y[idx(j)] * (g[idx(j)] - dotp);
                        }
                    }
                }
                out.push((*x, gx));
            }
            Op::LayerNorm { x, gain, bias, stats } => {
                let vx = self.value(*x);
                let gain_v = self.value(*gain).data();
                let d = vx.last_dim();
                let mut gx = vec![0.0; vx.len()];
                let mut gg = vec![0.0; d];
                let mut gb = vec![0.0; d];
                let mut xhat = vec![0.0; d];
                let mut dxhat = vec![0.0; d];
                for (r, (row, &(mean, rstd))) in vx.row_iter().zip(stats).enumerate() {
                    let gr = &g[r * d..(r + 1) * d];
                    for c in 0..d {
                        xhat[c] = (row[c] - mean) * rstd;
                        gg[c] += gr[c] * xhat[c];
                        gb[c] += gr[c];
                        dxhat[c] = gr[c] * gain_v[c];
                    }
                    let mean_dx = dxhat.iter().sum::<f64>() / d as f64;
                    let mean_dx_xhat = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for c in 0..d {
                        gx[r * d + c] = rstd * (dxhat[c] - mean_dx - xhat[c] * mean_dx_xhat);
                    }
                }
                if want(x) {
                    out.push((*x, gx));
                }
                if want(gain) {
                    out.push((*gain, gg));
                }
                if want(bias) {
                    out.push((*bias, gb));
                }
            }
            Op::Gelu(x) => {
                let vx = self.value(*x).data();
                out.push((*x, vx.iter().zip(g).map(|(&v, gv)| gv * kernels::gelu_grad(v)).collect()));
            }
            Op::Embedding { table, ids } => {
                let vt = self.value(*table);
                let d = vt.last_dim();
                let mut gt = vec![0.0; vt.len()];
                for (r, &id) in ids.iter().enumerate() {
                    for (a, b) in gt[id * d..(id + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                        *a += b;
                    }
                }
                out.push((*table, gt));
            }
            Op::CausalAttention { q, k, v, n_heads, probs } => {
                let (gq, gk, gv) = attention_backward(
                    self.value(*q),
                    self.value(*k),
                    self.value(*v),
                    *n_heads,
                    probs,
                    g,
                );
                for (var, grad) in [(q, gq), (k, gk), (v, gv)] {
                    if want(var) {
                        out.push((*var, grad));
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let t = targets.len();
                let vocab = probs.len() / t;
                let scale = g[0] / t as f64;
                let mut gl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &y) in targets.iter().enumerate() {
                    gl[r * vocab + y] -= scale;
                }
                out.push((*logits, gl));
            }
            Op::ContrastiveHinge { hidden, margin } => {
                out.push((*hidden, contrastive_backward(self.value(*hidden), *margin, g[0])));
            }
            Op::Unlikelihood { logits, targets, probs } => {
                let t = targets.len();
                let vocab = probs.len() / t;
                let scale = g[0] / t as f64;
                let mut gl = vec![0.0; probs.len()];
                for (step, negatives) in negative_sets(targets, vocab).into_iter().enumerate() {
                    let p = &probs[step * vocab..(step + 1) * vocab];
                    let gr = &mut gl[step * vocab..(step + 1) * vocab];
                    for c in negatives {
                        if 1.0 - p[c] <= UNLIKELIHOOD_FLOOR {
                            continue;
                        }
                        // d/dl_v [-log(1 - p_c)] = p_c (δ_cv - p_v) / (1 - p_c)
                        let w = scale * p[c] / (1.0 - p[c]);
                        for (gv, pv) in gr.iter_mut().zip(p) {
                            *gv -= w * pv;
                        }
                        gr[c] += w;
                    }
                }
                out.push((*logits, gl));
            }
        }
        for (var, grad) in out {
            self.accumulate(var, grad);
        }
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    if shape.is_empty() {
        return (1, 1, 1);
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Negative candidate sets for each target position.
pub(crate) fn negative_sets(targets: &[usize], vocab: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; vocab];
    let mut order = Vec::new();
    let mut sets = Vec::with_capacity(targets.len());
    for &y in targets {
        sets.push(order.iter().copied().filter(|&c| c != y).collect());
        if !seen[y] {
            seen[y] = true;
            order.push(y);
        }
    }
    sets
}

fn pairwise_cosines(h: &Tensor) -> Vec<f64> {
    let t = h.rows();
    let mut sims = vec![0.0; t * t];
    for i in 0..t {
        for j in i..t {
            let s = kernels::cosine(h.row(i), h.row(j));
            sims[i * t + j] = s;
            sims[j * t + i] = s;
        }
    }
    sims
}

fn contrastive_backward(h: &Tensor, margin: f64, upstream: f64) -> Vec<f64> {
    let (t, d) = (h.rows(), h.last_dim());
    let mut grad = vec![0.0; t * d];
    if t < 2 {
        return grad;
    }
    let norms: Vec<f64> = h.row_iter().map(kernels::norm).collect();
    let sims = pairwise_cosines(h);
    let scale = upstream / (t * (t - 1)) as f64;
    for i in 0..t {
        if norms[i] == 0.0 {
            continue;
        }
        for j in 0..t {
            if i == j || norms[j] == 0.0 || margin - 1.0 + sims[i * t + j] <= 0.0 {
                continue;
            }
            // pairs (i,j) and (j,i) both depend on h_i: ds/dh_i = (û_j - s û_i) / |h_i|
            let s = sims[i * t + j];
            let (hi, hj) = (h.row(i), h.row(j));
            let w = 2.0 * scale / norms[i];
            for c in 0..d {
                grad[i * d + c] += w * (hj[c] / norms[j] - s * hi[c] / norms[i]);
            }
        }
    }
    grad
}

fn attention_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    n_heads: usize,
    probs: &[f64],
    g: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (t, d) = (q.rows(), q.last_dim());
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut gq = vec![0.0; t * d];
    let mut gk = vec![0.0; t * d];
    let mut gv = vec![0.0; t * d];
    let mut dp = vec![0.0; t];
    let mut offset = 0;
    for i in 0..t {
        let n = i + 1;
        let go = &g[i * d..(i + 1) * d];
        for h in 0..n_heads {
            let cols = h * dh..(h + 1) * dh;
            let p = &probs[offset + h * n..offset + (h + 1) * n];
            let go_h = &go[cols.clone()];
            for j in 0..n {
                dp[j] = kernels::dot(go_h, &v.row(j)[cols.clone()]);
                for (gvc, &goc) in gv[j * d..(j + 1) * d][cols.clone()].iter_mut().zip(go_h) {
                    *gvc += p[j] * goc;
                }
            }
            let weighted: f64 = (0..n).map(|j| p[j] * dp[j]).sum();
            let qi = &q.row(i)[cols.clone()];
            for j in 0..n {
                let ds = p[j] * (dp[j] - weighted) * scale;
                if ds == 0.0 {
                    continue;
                }
                let kj = &k.row(j)[cols.clone()];
                for c in 0..dh {
                    gq[i * d + h * dh + c] += ds * kj[c];
                    gk[j * d + h * dh + c] += ds * qi[c];
                }
            }
        }
        offset += n_heads * n;
    }
    (gq, gk, gv)
}

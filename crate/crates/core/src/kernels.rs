//! Scalar kernels shared by the taped forward pass and the cached inference
//! path. Both paths call the same functions with the same loop order, so a
//! logit computed either way is bit-identical.

pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Inner product with eight interleaved accumulators combined in a fixed
/// order; the result depends only on the inputs, never on the target CPU.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    const LANES: usize = 8;
    let mut acc = [0.0f64; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..LANES {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `out[m×n] = a[m×k] · b[k×n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        row.fill(0.0);
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

/// `out[m×n] = a[m×k] · b[n×k]ᵀ`, accumulating over `k` in ascending order.
pub fn matmul_transposed(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// Accumulates `da += dc · bᵀ` and `db += aᵀ · dc` for `c = a · b`.
#[allow(clippy::too_many_arguments)]
pub fn matmul_backward(
    a: &[f64],
    b: &[f64],
    dc: &[f64],
    m: usize,
    k: usize,
    n: usize,
    da: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    if let Some(da) = da {
        for i in 0..m {
            let dc_row = &dc[i * n..(i + 1) * n];
            for p in 0..k {
                da[i * k + p] += dot(dc_row, &b[p * n..(p + 1) * n]);
            }
        }
    }
    if let Some(db) = db {
        for i in 0..m {
            let dc_row = &dc[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = a[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let db_row = &mut db[p * n..(p + 1) * n];
                for (d, &g) in db_row.iter_mut().zip(dc_row) {
                    *d += aip * g;
                }
            }
        }
    }
}

pub fn add_bias(x: &mut [f64], bias: &[f64]) {
    for row in x.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// In-place max-shifted softmax.
pub fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x {
        sum += (v - max).exp();
    }
    max + sum.ln()
}

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(x);
    x.iter().map(|v| v - lse).collect()
}

/// Normalizes one row; returns `(mean, 1/sqrt(var + eps))`.
pub fn layer_norm_row(x: &[f64], gain: &[f64], bias: &[f64], out: &mut [f64]) -> (f64, f64) {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    for i in 0..x.len() {
        out[i] = (x[i] - mean) * rstd * gain[i] + bias[i];
    }
    (mean, rstd)
}

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let d_inner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
}

/// Causal multi-head attention for a single query row.
///
/// Keys and values for earlier positions come from `*_prefix` (row-major,
/// `d` columns), the current position's from `key_last`/`value_last`.
/// `probs` receives `n_heads × (prefix_rows + 1)` attention weights.
#[allow(clippy::too_many_arguments)]
pub fn attend_row(
    query: &[f64],
    keys_prefix: &[f64],
    key_last: &[f64],
    values_prefix: &[f64],
    value_last: &[f64],
    n_heads: usize,
    probs: &mut [f64],
    out: &mut [f64],
) {
    let d = query.len();
    let dh = d / n_heads;
    let prefix_rows = keys_prefix.len() / d;
    let n = prefix_rows + 1;
    let scale = 1.0 / (dh as f64).sqrt();
    debug_assert_eq!(probs.len(), n_heads * n);
    for h in 0..n_heads {
        let cols = h * dh..(h + 1) * dh;
        let q = &query[cols.clone()];
        let p = &mut probs[h * n..(h + 1) * n];
        for (j, pj) in p.iter_mut().enumerate() {
            let key = if j < prefix_rows {
                &keys_prefix[j * d..(j + 1) * d]
            } else {
                key_last
            };
            *pj = dot(q, &key[cols.clone()]) * scale;
        }
        softmax_in_place(p);
        let o = &mut out[cols.clone()];
        o.fill(0.0);
        for (j, &pj) in p.iter().enumerate() {
            let value = if j < prefix_rows {
                &values_prefix[j * d..(j + 1) * d]
            } else {
                value_last
            };
            for (oc, &vc) in o.iter_mut().zip(&value[cols.clone()]) {
                *oc += pj * vc;
            }
        }
    }
}

/// Cosine similarity; zero-norm inputs give 0 rather than NaN. Clamped to [-1, 1].
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Pairwise (cascade) summation; reduction order is fixed by length alone.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 8;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn pairwise_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        pairwise_sum(xs) / xs.len() as f64
    }
}

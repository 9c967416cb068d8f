use super::{Representation, TransformerLM};
use crate::error::{Error, Result};
use crate::kernels;

/// Per-layer keys and values of the positions processed so far.
#[derive(Clone, Debug, Default)]
pub struct KvCache {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    len: usize,
}

impl KvCache {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Result of running one new position on top of a cache.
#[derive(Clone, Debug)]
pub struct Position {
    pub logits: Vec<f64>,
    /// Hidden state of every layer, `0..=n_layers`; the last entry is the
    /// token representation.
    pub layers: Vec<Vec<f64>>,
    kv: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Position {
    pub fn representation(&self) -> &[f64] {
        self.layers.last().expect("at least one layer")
    }
}

fn linear(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut out = vec![0.0; n];
    kernels::matmul(x, w, 1, x.len(), n, &mut out);
    kernels::add_bias(&mut out, b);
    out
}

impl TransformerLM {
    pub fn new_cache(&self) -> KvCache {
        KvCache {
            keys: vec![Vec::new(); self.config.n_layers],
            values: vec![Vec::new(); self.config.n_layers],
            len: 0,
        }
    }

    /// Runs `token` at position `cache.len()` without modifying the cache.
    pub fn peek(&self, cache: &KvCache, token: usize) -> Result<Position> {
        let c = &self.config;
        let pos = cache.len;
        if pos >= c.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: pos + 1,
                max: c.max_seq_len,
            });
        }
        if token >= c.vocab_size {
            return Err(Error::Index {
                op: "peek",
                id: token,
                bound: c.vocab_size,
            });
        }
        let p = &self.params;
        let lay = self.layout();
        let d = c.d_model;
        let tok_row = &p[lay.wte].data()[token * d..(token + 1) * d];
        let pos_row = &p[lay.wpe].data()[pos * d..(pos + 1) * d];
        let mut x: Vec<f64> = tok_row.iter().zip(pos_row).map(|(a, b)| a + b).collect();
        let mut layers = Vec::with_capacity(c.n_layers + 1);
        layers.push(x.clone());
        let mut kv = Vec::with_capacity(c.n_layers);
        let mut a = vec![0.0; d];
        let mut att = vec![0.0; d];
        let mut probs = vec![0.0; c.n_heads * (pos + 1)];
        for (l, blk) in lay.blocks.iter().enumerate() {
            kernels::layer_norm_row(&x, p[blk.ln1_g].data(), p[blk.ln1_b].data(), &mut a);
            let q = linear(&a, p[blk.wq].data(), p[blk.bq].data());
            let mut k = vec![0.0; d];
            kernels::matmul(&a, p[blk.wk].data(), 1, d, d, &mut k);
            let v = linear(&a, p[blk.wv].data(), p[blk.bv].data());
            kernels::attend_row(&q, &cache.keys[l], &k, &cache.values[l], &v, c.n_heads, &mut probs, &mut att);
            let o = linear(&att, p[blk.wo].data(), p[blk.bo].data());
            for (xi, oi) in x.iter_mut().zip(&o) {
                *xi += oi;
            }
            kernels::layer_norm_row(&x, p[blk.ln2_g].data(), p[blk.ln2_b].data(), &mut a);
            let mut f = linear(&a, p[blk.fc_w].data(), p[blk.fc_b].data());
            for fi in f.iter_mut() {
                *fi = kernels::gelu(*fi);
            }
            let m = linear(&f, p[blk.proj_w].data(), p[blk.proj_b].data());
            for (xi, mi) in x.iter_mut().zip(&m) {
                *xi += mi;
            }
            if l + 1 < lay.blocks.len() {
                layers.push(x.clone());
            }
            kv.push((k, v));
        }
        let mut normed = vec![0.0; d];
        kernels::layer_norm_row(&x, p[lay.lnf_g].data(), p[lay.lnf_b].data(), &mut normed);
        let mut logits = vec![0.0; c.vocab_size];
        kernels::matmul_transposed(&normed, p[lay.head].data(), 1, d, c.vocab_size, &mut logits);
        layers.push(match c.representation {
            Representation::PostFinalNorm => normed,
            Representation::PreFinalNorm => x,
        });
        Ok(Position { logits, layers, kv })
    }

    /// Appends a position previously produced by [`TransformerLM::peek`] on this cache.
    pub fn push(&self, cache: &mut KvCache, position: Position) {
        for (l, (k, v)) in position.kv.into_iter().enumerate() {
            cache.keys[l].extend_from_slice(&k);
            cache.values[l].extend_from_slice(&v);
        }
        cache.len += 1;
    }

    /// Runs and commits a whole token sequence, returning every position.
    pub fn prefill(&self, cache: &mut KvCache, tokens: &[usize]) -> Result<Vec<Position>> {
        let mut out = Vec::with_capacity(tokens.len());
        for &t in tokens {
            let p = self.peek(cache, t)?;
            out.push(p.clone());
            self.push(cache, p);
        }
        Ok(out)
    }
}

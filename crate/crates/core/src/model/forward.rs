use super::{Representation, TransformerLM};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Logits and per-layer hidden states for a token sequence.
///
/// `hidden_states[0]` is the embedding output, `hidden_states[l]` the output
/// of block `l`, and `hidden_states[n_layers]` the token representation
/// (post final layer norm by default).
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub logits: Tensor,
    pub hidden_states: Vec<Tensor>,
}

impl ForwardOutput {
    /// Rows of the top layer: the representations used by the contrastive
    /// objective and the degeneration penalty.
    pub fn representations(&self) -> &Tensor {
        self.hidden_states.last().expect("at least one layer")
    }
}

/// Forward pass recorded on a tape.
#[derive(Clone, Debug)]
pub struct TapedForward {
    pub logits: Var,
    pub hidden_states: Vec<Var>,
}

impl TapedForward {
    pub fn representations(&self) -> Var {
        *self.hidden_states.last().expect("at least one layer")
    }
}

impl TransformerLM {
    pub(crate) fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Length {
                op: "forward",
                expected: 1,
                actual: 0,
            });
        }
        if tokens.len() > self.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: tokens.len(),
                max: self.config.max_seq_len,
            });
        }
        if let Some(&id) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::Index {
                op: "forward",
                id,
                bound: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Inference forward pass (no tape). Bit-identical to
    /// [`TransformerLM::forward_on_tape`].
    pub fn forward(&self, tokens: &[usize]) -> Result<ForwardOutput> {
        self.check_tokens(tokens)?;
        let n_hidden = self.config.n_layers + 1;
        let mut cache = self.new_cache();
        let mut logits = Vec::with_capacity(tokens.len() * self.config.vocab_size);
        let mut hidden: Vec<Vec<f64>> = vec![Vec::new(); n_hidden];
        for &tok in tokens {
            let pos = self.peek(&cache, tok)?;
            logits.extend_from_slice(&pos.logits);
            for (dst, src) in hidden.iter_mut().zip(&pos.layers) {
                dst.extend_from_slice(src);
            }
            self.push(&mut cache, pos);
        }
        let t = tokens.len();
        let d = self.config.d_model;
        Ok(ForwardOutput {
            logits: Tensor::from_parts(vec![t, self.config.vocab_size], logits),
            hidden_states: hidden
                .into_iter()
                .map(|h| Tensor::from_parts(vec![t, d], h))
                .collect(),
        })
    }

    /// Registers every parameter as a trainable leaf, in checkpoint order.
    pub fn params_on_tape(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.clone())).collect()
    }

    pub fn forward_on_tape(&self, tape: &mut Tape, params: &[Var], tokens: &[usize]) -> Result<TapedForward> {
        self.check_tokens(tokens)?;
        let lay = self.layout();
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let tok = tape.embedding(params[lay.wte], tokens)?;
        let pos = tape.embedding(params[lay.wpe], &positions)?;
        let mut x = tape.add(tok, pos)?;
        let mut hidden = vec![x];
        let linear = |tape: &mut Tape, x: Var, w: usize, b: usize| -> Result<Var> {
            let y = tape.matmul(x, params[w])?;
            tape.add_row_bias(y, params[b])
        };
        for (l, blk) in lay.blocks.iter().enumerate() {
            let a = tape.layer_norm(x, params[blk.ln1_g], params[blk.ln1_b])?;
            let q = linear(tape, a, blk.wq, blk.bq)?;
            let k = tape.matmul(a, params[blk.wk])?;
            let v = linear(tape, a, blk.wv, blk.bv)?;
            let att = tape.causal_attention(q, k, v, self.config.n_heads)?;
            let o = linear(tape, att, blk.wo, blk.bo)?;
            x = tape.add(x, o)?;
            let a2 = tape.layer_norm(x, params[blk.ln2_g], params[blk.ln2_b])?;
            let f = linear(tape, a2, blk.fc_w, blk.fc_b)?;
            let f = tape.gelu(f);
            let m = linear(tape, f, blk.proj_w, blk.proj_b)?;
            x = tape.add(x, m)?;
            if l + 1 < lay.blocks.len() {
                hidden.push(x);
            }
        }
        let normed = tape.layer_norm(x, params[lay.lnf_g], params[lay.lnf_b])?;
        hidden.push(match self.config.representation {
            Representation::PostFinalNorm => normed,
            Representation::PreFinalNorm => x,
        });
        let logits = tape.matmul_t(normed, params[lay.head])?;
        Ok(TapedForward {
            logits,
            hidden_states: hidden,
        })
    }
}

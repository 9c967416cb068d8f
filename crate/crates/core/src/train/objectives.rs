//! Training objectives on a [`Tape`].

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::kernels;

pub use crate::kernels::cosine as cosine_similarity;

/// Negative mean log-likelihood of `targets`; identical to [`Tape::cross_entropy`].
pub fn mle_loss(tape: &mut Tape, logits: Var, targets: &[usize]) -> Result<Var> {
    tape.cross_entropy(logits, targets)
}

/// Margin hinge over within-sequence token pairs:
/// `1/(T(T-1)) Σ_i Σ_{j≠i} max(0, ρ - s(h_i, h_i) + s(h_i, h_j))` with `s(h, h) = 1`.
/// Zero for single-token sequences.
pub fn contrastive_loss(tape: &mut Tape, hidden: Var, margin: f64) -> Result<Var> {
    tape.contrastive_hinge(hidden, margin)
}

/// Unweighted sum of the likelihood and contrastive terms.
pub fn simctg_loss(tape: &mut Tape, logits: Var, targets: &[usize], hidden: Var, margin: f64) -> Result<Var> {
    let mle = mle_loss(tape, logits, targets)?;
    let cl = contrastive_loss(tape, hidden, margin)?;
    tape.add(mle, cl)
}

/// Token-level unlikelihood term alone. Negatives at step `t` are the
/// distinct earlier targets other than `targets[t]`.
pub fn unlikelihood_token_loss(tape: &mut Tape, logits: Var, targets: &[usize]) -> Result<Var> {
    tape.unlikelihood(logits, targets)
}

/// Likelihood plus token-level unlikelihood (the baseline objective).
pub fn unlikelihood_objective(tape: &mut Tape, logits: Var, targets: &[usize]) -> Result<Var> {
    let mle = mle_loss(tape, logits, targets)?;
    let ul = unlikelihood_token_loss(tape, logits, targets)?;
    tape.add(mle, ul)
}

/// Reference value of the contrastive term computed with plain loops.
pub fn contrastive_loss_value(rows: &[&[f64]], margin: f64) -> f64 {
    let t = rows.len();
    if t < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for (i, a) in rows.iter().enumerate() {
        for (j, b) in rows.iter().enumerate() {
            if i != j {
                total += (margin - 1.0 + kernels::cosine(a, b)).max(0.0);
            }
        }
    }
    total / (t * (t - 1)) as f64
}

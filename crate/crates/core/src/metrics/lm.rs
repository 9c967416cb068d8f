use serde::{Deserialize, Serialize};

use super::text::{diversity_from_reps, is_short, rep_n};
use crate::decode::{LanguageModel, ModelStep};
use crate::error::{Error, Result};
use crate::kernels::{self, pairwise_mean, pairwise_sum};
use crate::par::Execution;

/// Probabilities below this are clamped before taking logs.
pub const PROB_FLOOR: f64 = 1e-300;

/// Runs `tokens` through a fresh state, calling `visit` with each position.
fn scan<M: LanguageModel>(model: &M, tokens: &[usize], mut visit: impl FnMut(usize, &M::Step)) -> Result<()> {
    if tokens.len() > model.max_positions() {
        return Err(Error::SequenceTooLong {
            len: tokens.len(),
            max: model.max_positions(),
        });
    }
    let mut state = model.initial_state();
    for (i, &t) in tokens.iter().enumerate() {
        let step = model.peek(&state, t)?;
        visit(i, &step);
        model.push(&mut state, step);
    }
    Ok(())
}

/// `1 / p(target)` computed as `Z / exp(x_target - max)`, so uniform
/// logits give exactly V.
fn inverse_probability(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    (z / (logits[target] - max).exp()).min(1.0 / PROB_FLOOR)
}

/// Perplexity of `continuation` given `prefix`: the geometric mean of
/// `1/p` over continuation tokens.
pub fn gen_ppl<M: LanguageModel>(model: &M, prefix: &[usize], continuation: &[usize]) -> Result<f64> {
    if prefix.is_empty() || continuation.is_empty() {
        return Err(Error::data("gen_ppl needs a nonempty prefix and continuation"));
    }
    let mut seq = prefix.to_vec();
    seq.extend_from_slice(continuation);
    // The last token is only ever a target.
    let inputs = &seq[..seq.len() - 1];
    let mut inv = Vec::with_capacity(continuation.len());
    scan(model, inputs, |i, step| {
        if i + 1 >= prefix.len() {
            inv.push(inverse_probability(step.logits(), seq[i + 1]));
        }
    })?;
    // Relative to the first factor: a constant sequence returns that constant.
    let r = inv[0];
    let rel: Vec<f64> = inv.iter().map(|q| (q / r).log2()).collect();
    Ok(r * pairwise_mean(&rel).exp2())
}

fn mean_representation<M: LanguageModel>(model: &M, tokens: &[usize]) -> Result<Vec<f64>> {
    let mut sum: Vec<f64> = Vec::new();
    scan(model, tokens, |_, step| {
        let h = step.representation();
        if sum.is_empty() {
            sum = vec![0.0; h.len()];
        }
        for (s, x) in sum.iter_mut().zip(h) {
            *s += x;
        }
    })?;
    let n = tokens.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// Cosine between the mean-pooled representations of prefix and
/// continuation, each encoded on its own.
pub fn coherence<M: LanguageModel>(model: &M, prefix: &[usize], continuation: &[usize]) -> Result<f64> {
    if prefix.is_empty() || continuation.is_empty() {
        return Err(Error::data("coherence needs a nonempty prefix and continuation"));
    }
    let a = mean_representation(model, prefix)?;
    let b = mean_representation(model, continuation)?;
    Ok(kernels::cosine(&a, &b))
}

/// Pooled next-token statistics over a token stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NextTokenMetrics {
    /// `exp` of the mean natural-log NLL.
    pub ppl: f64,
    pub acc: f64,
    pub rep: f64,
    pub wrep: f64,
    pub predictions: usize,
}

#[derive(Default)]
struct WindowStats {
    nll: Vec<f64>,
    acc: usize,
    rep: usize,
    wrep: usize,
}

fn window_stats<M: LanguageModel>(model: &M, window: &[usize]) -> Result<WindowStats> {
    let mut s = WindowStats::default();
    let inputs = &window[..window.len() - 1];
    scan(model, inputs, |i, step| {
        let target = window[i + 1];
        let logp = kernels::log_softmax(step.logits());
        let mut top = 0;
        for (v, &lp) in logp.iter().enumerate().skip(1) {
            if lp > logp[top] {
                top = v;
            }
        }
        s.nll.push(-logp[target]);
        if top == target {
            s.acc += 1;
        }
        if window[..=i].contains(&top) {
            s.rep += 1;
            if top != target {
                s.wrep += 1;
            }
        }
    })?;
    Ok(s)
}

/// Splits `stream` into consecutive windows of `window` tokens (the tail may
/// be shorter) and scores every position after the first of each window.
/// The prefix for rep/wrep is everything earlier in the same window.
pub fn next_token_metrics<M: LanguageModel>(
    model: &M,
    stream: &[usize],
    window: usize,
    execution: Execution,
) -> Result<NextTokenMetrics> {
    if window < 2 || window > model.max_positions() {
        return Err(Error::config(format!(
            "evaluation window must lie in [2, {}], got {window}",
            model.max_positions()
        )));
    }
    let windows: Vec<&[usize]> = stream.chunks(window).filter(|w| w.len() >= 2).collect();
    if windows.is_empty() {
        return Err(Error::data("evaluation split has fewer than two tokens"));
    }
    let stats: Vec<WindowStats> = execution
        .map(&windows, |w| window_stats(model, w))
        .into_iter()
        .collect::<Result<_>>()?;
    let nll: Vec<f64> = stats.iter().flat_map(|s| s.nll.iter().copied()).collect();
    let n = nll.len();
    let frac = |f: fn(&WindowStats) -> usize| stats.iter().map(f).sum::<usize>() as f64 / n as f64;
    Ok(NextTokenMetrics {
        ppl: (pairwise_sum(&nll) / n as f64).exp(),
        acc: frac(|s| s.acc),
        rep: frac(|s| s.rep),
        wrep: frac(|s| s.wrep),
        predictions: n,
    })
}

/// Per-sample generation metrics; see [`generation_metrics`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub rep_2: f64,
    pub rep_3: f64,
    pub rep_4: f64,
    pub diversity: f64,
    pub gen_ppl: Option<f64>,
    pub coherence: Option<f64>,
    /// Continuation shorter than 4 tokens, so some rep-n were defined as 0.
    pub short: bool,
}

/// Macro averages over samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationMetrics {
    pub rep_2: f64,
    pub rep_3: f64,
    pub rep_4: f64,
    pub diversity: f64,
    pub gen_ppl: Option<f64>,
    pub coherence: Option<f64>,
    pub samples: usize,
    pub short_samples: usize,
}

pub fn sample_metrics<M: LanguageModel>(model: Option<&M>, prefix: &[usize], continuation: &[usize]) -> Result<SampleMetrics> {
    let (r2, r3, r4) = (rep_n(continuation, 2), rep_n(continuation, 3), rep_n(continuation, 4));
    let (gen_ppl, coherence) = match model {
        Some(m) => (Some(gen_ppl(m, prefix, continuation)?), Some(coherence(m, prefix, continuation)?)),
        None => (None, None),
    };
    Ok(SampleMetrics {
        rep_2: r2,
        rep_3: r3,
        rep_4: r4,
        diversity: diversity_from_reps(r2, r3, r4),
        gen_ppl,
        coherence,
        short: is_short(continuation, 4),
    })
}

/// Scores `(prefix, continuation)` pairs and macro-averages. Model-based
/// metrics are `None` when no model is given.
pub fn generation_metrics<M: LanguageModel>(
    model: Option<&M>,
    samples: &[(Vec<usize>, Vec<usize>)],
    execution: Execution,
) -> Result<GenerationMetrics> {
    if samples.is_empty() {
        return Err(Error::data("no generations to evaluate"));
    }
    let per: Vec<SampleMetrics> = execution
        .map(samples, |(p, c)| sample_metrics(model, p, c))
        .into_iter()
        .collect::<Result<_>>()?;
    Ok(aggregate(&per))
}

pub fn aggregate(per: &[SampleMetrics]) -> GenerationMetrics {
    let mean = |f: fn(&SampleMetrics) -> f64| pairwise_mean(&per.iter().map(f).collect::<Vec<_>>());
    let mean_opt = |f: fn(&SampleMetrics) -> Option<f64>| -> Option<f64> {
        let xs: Option<Vec<f64>> = per.iter().map(f).collect();
        xs.map(|xs| pairwise_mean(&xs))
    };
    GenerationMetrics {
        rep_2: mean(|s| s.rep_2),
        rep_3: mean(|s| s.rep_3),
        rep_4: mean(|s| s.rep_4),
        diversity: mean(|s| s.diversity),
        gen_ppl: mean_opt(|s| s.gen_ppl),
        coherence: mean_opt(|s| s.coherence),
        samples: per.len(),
        short_samples: per.iter().filter(|s| s.short).count(),
    }
}

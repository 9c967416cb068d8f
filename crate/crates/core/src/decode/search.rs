use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Candidate, DecodeConfig, GenerationTrace, LanguageModel, Method, ModelStep, StepRecord, MAX_RECORDED_CANDIDATES};
use crate::error::{Error, Result};
use crate::kernels;

/// Running decode state: the model cache plus the next-token distribution.
struct Context<M: LanguageModel> {
    state: M::State,
    generated: Vec<usize>,
    hidden: Vec<Vec<f64>>,
    track_hidden: bool,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl<M: LanguageModel> Clone for Context<M> {
    fn clone(&self) -> Self {
        Context {
            state: self.state.clone(),
            generated: self.generated.clone(),
            hidden: self.hidden.clone(),
            track_hidden: self.track_hidden,
            probs: self.probs.clone(),
            log_probs: self.log_probs.clone(),
        }
    }
}

impl<M: LanguageModel> Context<M> {
    fn start(model: &M, prefix: &[usize], max_new_tokens: usize, track_hidden: bool) -> Result<Self> {
        if prefix.is_empty() {
            return Err(Error::data("decoding requires a nonempty prefix"));
        }
        let total = prefix.len() + max_new_tokens;
        if total > model.max_positions() {
            return Err(Error::SequenceTooLong {
                len: total,
                max: model.max_positions(),
            });
        }
        let mut ctx = Context {
            state: model.initial_state(),
            generated: Vec::with_capacity(max_new_tokens),
            hidden: Vec::new(),
            track_hidden,
            probs: Vec::new(),
            log_probs: Vec::new(),
        };
        for &t in prefix {
            let step = model.peek(&ctx.state, t)?;
            ctx.absorb(model, step);
        }
        Ok(ctx)
    }

    fn absorb(&mut self, model: &M, step: M::Step) {
        if self.track_hidden {
            self.hidden.push(step.representation().to_vec());
        }
        self.probs = kernels::softmax(step.logits());
        self.log_probs = kernels::log_softmax(step.logits());
        model.push(&mut self.state, step);
    }

    /// Appends `token`; the model is only run when another step follows.
    fn advance(&mut self, model: &M, token: usize, more: bool) -> Result<()> {
        self.generated.push(token);
        if more {
            let step = model.peek(&self.state, token)?;
            self.absorb(model, step);
        }
        Ok(())
    }
}

fn finish(method: Method, prefix: &[usize], generated: Vec<usize>, log_prob: f64, steps: Vec<StepRecord>) -> GenerationTrace {
    GenerationTrace {
        method,
        prefix: prefix.to_vec(),
        generated,
        log_prob,
        steps,
    }
}

/// Token ids ordered by probability descending, ties by lower id.
pub fn rank_tokens(probs: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..probs.len()).collect();
    ids.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    ids
}

fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Smallest probability-ranked prefix of the vocabulary whose mass reaches `p`.
///
/// Zero-probability tokens are never included, so `p = 1` yields the support.
pub fn nucleus_set(probs: &[f64], p: f64) -> Vec<usize> {
    let mut out = Vec::new();
    let mut mass = 0.0;
    for id in rank_tokens(probs) {
        if probs[id] <= 0.0 && !out.is_empty() {
            break;
        }
        out.push(id);
        mass += probs[id];
        if mass >= p {
            break;
        }
    }
    out
}

fn sample_from(support: &[usize], probs: &[f64], rng: &mut ChaCha8Rng) -> Result<(usize, StepRecord)> {
    let dist = WeightedIndex::new(support.iter().map(|&i| probs[i]))
        .map_err(|e| Error::data(format!("cannot sample from support: {e}")))?;
    let chosen = support[dist.sample(rng)];
    let mass: f64 = support.iter().map(|&i| probs[i]).sum();
    let cand = |token: usize| Candidate {
        token,
        confidence: probs[token],
        penalty: 0.0,
        score: probs[token] / mass,
    };
    let mut candidates: Vec<Candidate> = support.iter().take(MAX_RECORDED_CANDIDATES).map(|&t| cand(t)).collect();
    if !candidates.iter().any(|c| c.token == chosen) {
        candidates.push(cand(chosen));
    }
    Ok((
        chosen,
        StepRecord {
            chosen,
            support_size: support.len(),
            candidates,
        },
    ))
}

pub fn greedy_decode<M: LanguageModel>(model: &M, prefix: &[usize], max_new_tokens: usize) -> Result<GenerationTrace> {
    let mut ctx = Context::start(model, prefix, max_new_tokens, false)?;
    let mut steps = Vec::with_capacity(max_new_tokens);
    let mut log_prob = 0.0;
    for t in 0..max_new_tokens {
        let chosen = argmax(&ctx.probs);
        let p = ctx.probs[chosen];
        log_prob += ctx.log_probs[chosen];
        steps.push(StepRecord {
            chosen,
            support_size: 1,
            candidates: vec![Candidate {
                token: chosen,
                confidence: p,
                penalty: 0.0,
                score: p,
            }],
        });
        ctx.advance(model, chosen, t + 1 < max_new_tokens)?;
    }
    Ok(finish(Method::Greedy, prefix, ctx.generated, log_prob, steps))
}

struct Hypothesis<M: LanguageModel> {
    ctx: Context<M>,
    score: f64,
    steps: Vec<StepRecord>,
}

/// Beam search on summed log-probabilities without length normalization.
pub fn beam_decode<M: LanguageModel>(
    model: &M,
    prefix: &[usize],
    beam_width: usize,
    max_new_tokens: usize,
) -> Result<GenerationTrace> {
    if beam_width == 0 {
        return Err(Error::config("beam_width must be at least 1"));
    }
    let root = Context::start(model, prefix, max_new_tokens, false)?;
    let mut beam = vec![Hypothesis {
        ctx: root,
        score: 0.0,
        steps: Vec::new(),
    }];
    for t in 0..max_new_tokens {
        // (total, prob, parent, token, log-prob)
        let mut expansions: Vec<(f64, f64, usize, usize, f64)> = Vec::new();
        for (h, hyp) in beam.iter().enumerate() {
            for tok in rank_tokens(&hyp.ctx.probs).into_iter().take(beam_width) {
                let lp = hyp.ctx.log_probs[tok];
                expansions.push((hyp.score + lp, hyp.ctx.probs[tok], h, tok, lp));
            }
        }
        expansions.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(b.1.total_cmp(&a.1))
                .then(a.2.cmp(&b.2))
                .then(a.3.cmp(&b.3))
        });
        expansions.truncate(beam_width);
        let more = t + 1 < max_new_tokens;
        let mut next = Vec::with_capacity(expansions.len());
        for (total, p, parent, tok, _) in expansions {
            let src = &beam[parent];
            let mut ctx = src.ctx.clone();
            ctx.advance(model, tok, more)?;
            let mut steps = src.steps.clone();
            steps.push(StepRecord {
                chosen: tok,
                support_size: beam_width,
                candidates: vec![Candidate {
                    token: tok,
                    confidence: p,
                    penalty: 0.0,
                    score: total,
                }],
            });
            next.push(Hypothesis { ctx, score: total, steps });
        }
        beam = next;
    }
    let best = beam.into_iter().next().expect("beam is never empty");
    Ok(finish(Method::Beam, prefix, best.ctx.generated, best.score, best.steps))
}

pub fn top_k_sample<M: LanguageModel>(
    model: &M,
    prefix: &[usize],
    k: usize,
    max_new_tokens: usize,
    seed: u64,
) -> Result<GenerationTrace> {
    if k == 0 || k > model.vocab_size() {
        return Err(Error::config(format!("k must lie in [1, {}], got {k}", model.vocab_size())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ctx = Context::start(model, prefix, max_new_tokens, false)?;
    let mut steps = Vec::with_capacity(max_new_tokens);
    let mut log_prob = 0.0;
    for t in 0..max_new_tokens {
        let mut support = rank_tokens(&ctx.probs);
        support.truncate(k);
        let (chosen, record) = sample_from(&support, &ctx.probs, &mut rng)?;
        log_prob += ctx.log_probs[chosen];
        steps.push(record);
        ctx.advance(model, chosen, t + 1 < max_new_tokens)?;
    }
    Ok(finish(Method::TopK, prefix, ctx.generated, log_prob, steps))
}

pub fn nucleus_sample<M: LanguageModel>(
    model: &M,
    prefix: &[usize],
    p: f64,
    max_new_tokens: usize,
    seed: u64,
) -> Result<GenerationTrace> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::config(format!("p must lie in (0, 1], got {p}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ctx = Context::start(model, prefix, max_new_tokens, false)?;
    let mut steps = Vec::with_capacity(max_new_tokens);
    let mut log_prob = 0.0;
    for t in 0..max_new_tokens {
        let support = nucleus_set(&ctx.probs, p);
        let (chosen, record) = sample_from(&support, &ctx.probs, &mut rng)?;
        log_prob += ctx.log_probs[chosen];
        steps.push(record);
        ctx.advance(model, chosen, t + 1 < max_new_tokens)?;
    }
    Ok(finish(Method::Nucleus, prefix, ctx.generated, log_prob, steps))
}

/// Maximum cosine similarity between `candidate` and any context representation.
/// An empty context gives 0.
pub fn degeneration_penalty(candidate: &[f64], context: &[Vec<f64>]) -> f64 {
    context
        .iter()
        .map(|h| kernels::cosine(candidate, h))
        .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))))
        .unwrap_or(0.0)
}

/// Scores `(token, confidence, penalty)` triples and returns the index of the
/// winner along with the scored candidates.
///
/// Ties on score go to the higher confidence, then the lower token id.
pub fn select_contrastive(candidates: &[(usize, f64, f64)], alpha: f64) -> (usize, Vec<Candidate>) {
    let scored: Vec<Candidate> = candidates
        .iter()
        .map(|&(token, confidence, penalty)| Candidate {
            token,
            confidence,
            penalty,
            score: (1.0 - alpha) * confidence - alpha * penalty,
        })
        .collect();
    let mut best = 0;
    for (i, c) in scored.iter().enumerate().skip(1) {
        let b = &scored[best];
        let better = c
            .score
            .total_cmp(&b.score)
            .then(c.confidence.total_cmp(&b.confidence))
            .then(b.token.cmp(&c.token))
            .is_gt();
        if better {
            best = i;
        }
    }
    (best, scored)
}

pub struct ContrastiveChoice<S> {
    pub token: usize,
    pub record: StepRecord,
    /// Model output for the chosen token, ready to be committed.
    pub step: S,
}

/// One step of contrastive search.
///
/// `probs` is the next-token distribution given the context held in `state`,
/// and `context_hidden` the representations of every context position.
/// `k` larger than the vocabulary is clamped.
#[allow(clippy::too_many_arguments)]
pub fn contrastive_search_step<M: LanguageModel>(
    model: &M,
    state: &M::State,
    probs: &[f64],
    context_hidden: &[Vec<f64>],
    k: usize,
    alpha: f64,
    renormalize_confidence: bool,
) -> Result<ContrastiveChoice<M::Step>> {
    if k == 0 {
        return Err(Error::config("k must be at least 1"));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let mut top = rank_tokens(probs);
    top.truncate(k);
    let mass: f64 = if renormalize_confidence {
        top.iter().map(|&v| probs[v]).sum()
    } else {
        1.0
    };
    let mut outputs = Vec::with_capacity(top.len());
    let mut triples = Vec::with_capacity(top.len());
    for &v in &top {
        let out = model.peek(state, v)?;
        let penalty = degeneration_penalty(out.representation(), context_hidden);
        triples.push((v, probs[v] / mass, penalty));
        outputs.push(out);
    }
    let (best, candidates) = select_contrastive(&triples, alpha);
    let token = top[best];
    let step = outputs.swap_remove(best);
    Ok(ContrastiveChoice {
        token,
        record: StepRecord {
            chosen: token,
            support_size: candidates.len(),
            candidates,
        },
        step,
    })
}

fn contrastive_into<M: LanguageModel>(
    model: &M,
    ctx: &mut Context<M>,
    k: usize,
    alpha: f64,
    renormalize: bool,
) -> Result<(usize, StepRecord)> {
    let choice = contrastive_search_step(model, &ctx.state, &ctx.probs, &ctx.hidden, k, alpha, renormalize)?;
    ctx.generated.push(choice.token);
    ctx.absorb(model, choice.step);
    Ok((choice.token, choice.record))
}

pub fn contrastive_search<M: LanguageModel>(
    model: &M,
    prefix: &[usize],
    k: usize,
    alpha: f64,
    max_new_tokens: usize,
    renormalize_confidence: bool,
) -> Result<GenerationTrace> {
    let mut ctx = Context::start(model, prefix, max_new_tokens, true)?;
    let mut steps = Vec::with_capacity(max_new_tokens);
    let mut log_prob = 0.0;
    for _ in 0..max_new_tokens {
        let lp = ctx.log_probs.clone();
        let (chosen, record) = contrastive_into(model, &mut ctx, k, alpha, renormalize_confidence)?;
        log_prob += lp[chosen];
        steps.push(record);
    }
    Ok(finish(Method::Contrastive, prefix, ctx.generated, log_prob, steps))
}

/// Nucleus-samples the first `config.n_stochastic` tokens, then continues
/// with contrastive search.
pub fn diverse_contrastive_search<M: LanguageModel>(
    model: &M,
    prefix: &[usize],
    config: &DecodeConfig,
) -> Result<GenerationTrace> {
    config.validate()?;
    let n = config.max_new_tokens;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut ctx = Context::start(model, prefix, n, true)?;
    let mut steps = Vec::with_capacity(n);
    let mut log_prob = 0.0;
    for t in 0..n {
        let lp = ctx.log_probs.clone();
        let (chosen, record) = if t < config.n_stochastic {
            let support = nucleus_set(&ctx.probs, config.p);
            let (chosen, record) = sample_from(&support, &ctx.probs, &mut rng)?;
            ctx.advance(model, chosen, true)?;
            (chosen, record)
        } else {
            contrastive_into(model, &mut ctx, config.k, config.alpha, config.renormalize_confidence)?
        };
        log_prob += lp[chosen];
        steps.push(record);
    }
    Ok(finish(Method::DiverseContrastive, prefix, ctx.generated, log_prob, steps))
}

//! Objectives, optimizer and training loop.

mod adam;
pub mod objectives;

pub use adam::{adam_update, Adam, AdamConfig};
pub use objectives::{
    contrastive_loss, contrastive_loss_value, cosine_similarity, mle_loss, simctg_loss, unlikelihood_objective,
    unlikelihood_token_loss,
};

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{finite_diff_check, Tape, Var};
use crate::corpus::{Corpus, Split};
use crate::error::{Error, Result};
use crate::model::TransformerLM;
use crate::par::Execution;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[default]
    Mle,
    SimCtg,
    Unlikelihood,
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mle" => Ok(Objective::Mle),
            "simctg" => Ok(Objective::SimCtg),
            "unlikelihood" => Ok(Objective::Unlikelihood),
            other => Err(Error::config(format!("unknown objective `{other}` (mle|simctg|unlikelihood)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    /// Contrastive margin ρ.
    pub margin: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seq_len: usize,
    pub adam: AdamConfig,
    /// Global gradient-norm cap; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    /// Checkpoint cadence in steps; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Mle,
            margin: 0.5,
            learning_rate: 3e-4,
            batch_size: 16,
            max_steps: 1000,
            seq_len: 128,
            adam: AdamConfig::default(),
            grad_clip: Some(1.0),
            seed: 0,
            checkpoint_every: 0,
            execution: Execution::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(-1.0..=1.0).contains(&self.margin) {
            return fail(format!("margin must lie in [-1, 1], got {}", self.margin));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if self.seq_len == 0 {
            return fail("seq_len must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return fail("adam betas must lie in [0, 1)".into());
        }
        if !(self.adam.eps > 0.0) {
            return fail("adam eps must be > 0".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return fail(format!("grad_clip must be > 0, got {c}"));
            }
        }
        Ok(())
    }
}

/// Batch-averaged losses after one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub mle: f64,
    /// Contrastive term (SimCTG) or unlikelihood term; 0 for plain MLE.
    pub aux: f64,
    pub total: f64,
}

/// Receives per-step losses and checkpoint opportunities.
pub trait ProgressSink {
    fn on_step(&mut self, _record: &LossRecord) {}

    fn on_checkpoint(&mut self, _step: usize, _model: &TransformerLM) -> Result<()> {
        Ok(())
    }
}

impl ProgressSink for () {}

/// Fixed-length training windows over the joined train split.
#[derive(Clone, Debug)]
pub struct Windows {
    stream: Vec<usize>,
    seq_len: usize,
    count: usize,
}

impl Windows {
    /// Window `i` covers `seq_len + 1` tokens starting at `i * seq_len`:
    /// inputs are the first `seq_len`, targets the last `seq_len`.
    pub fn new(corpus: &Corpus, split: Split, seq_len: usize) -> Result<Self> {
        let stream = corpus.token_stream(split);
        if stream.len() < seq_len + 1 {
            return Err(Error::data(format!(
                "corpus {split:?} split has {} tokens, shorter than one training chunk of {}",
                stream.len(),
                seq_len + 1
            )));
        }
        let count = (stream.len() - 1) / seq_len;
        Ok(Self { stream, seq_len, count })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn get(&self, i: usize) -> &[usize] {
        let start = i * self.seq_len;
        &self.stream[start..start + self.seq_len + 1]
    }
}

pub struct SequenceLoss {
    pub mle: f64,
    pub aux: f64,
    pub total: f64,
    pub grads: Vec<Vec<f64>>,
}

/// Loss and parameter gradients for one window (`inputs ⊕ last target`).
pub fn sequence_gradients(
    model: &TransformerLM,
    window: &[usize],
    objective: Objective,
    margin: f64,
) -> Result<SequenceLoss> {
    let (inputs, targets) = (&window[..window.len() - 1], &window[1..]);
    let mut tape = Tape::new();
    let params = model.params_on_tape(&mut tape);
    let out = model.forward_on_tape(&mut tape, &params, inputs)?;
    let mle = mle_loss(&mut tape, out.logits, targets)?;
    let (aux, total) = match objective {
        Objective::Mle => (None, mle),
        Objective::SimCtg => {
            let cl = contrastive_loss(&mut tape, out.representations(), margin)?;
            (Some(cl), tape.add(mle, cl)?)
        }
        Objective::Unlikelihood => {
            let ul = unlikelihood_token_loss(&mut tape, out.logits, targets)?;
            (Some(ul), tape.add(mle, ul)?)
        }
    };
    let (mle_v, aux_v, total_v) = (
        tape.value(mle).item(),
        aux.map_or(0.0, |a| tape.value(a).item()),
        tape.value(total).item(),
    );
    tape.backward(total)?;
    let grads = params.iter().map(|&p| tape.take_grad(p)).collect();
    Ok(SequenceLoss {
        mle: mle_v,
        aux: aux_v,
        total: total_v,
        grads,
    })
}

/// Worst relative error between taped and central-difference gradients of
/// the window loss, checked one parameter tensor at a time over every
/// coordinate of the model.
pub fn model_gradient_check(model: &TransformerLM, window: &[usize], objective: Objective, margin: f64, h: f64) -> Result<f64> {
    let (inputs, targets) = (&window[..window.len() - 1], &window[1..]);
    let mut worst = 0.0f64;
    for target in 0..model.parameters().len() {
        let f = |tape: &mut Tape, x: Var| -> Result<Var> {
            let params: Vec<Var> = model
                .parameters()
                .iter()
                .enumerate()
                .map(|(i, p)| if i == target { x } else { tape.constant(p.clone()) })
                .collect();
            let out = model.forward_on_tape(tape, &params, inputs)?;
            objective_loss(tape, out.logits, out.representations(), targets, objective, margin)
        };
        worst = worst.max(finite_diff_check(f, &model.parameters()[target], h)?);
    }
    Ok(worst)
}

/// Scalar loss of `objective` on taped model outputs.
pub fn objective_loss(
    tape: &mut Tape,
    logits: Var,
    hidden: Var,
    targets: &[usize],
    objective: Objective,
    margin: f64,
) -> Result<Var> {
    match objective {
        Objective::Mle => mle_loss(tape, logits, targets),
        Objective::SimCtg => simctg_loss(tape, logits, targets, hidden, margin),
        Objective::Unlikelihood => unlikelihood_objective(tape, logits, targets),
    }
}

/// Averages per-sequence results in index order.
pub fn reduce_batch(results: Vec<SequenceLoss>) -> SequenceLoss {
    let n = results.len() as f64;
    let mut iter = results.into_iter();
    let mut acc = iter.next().expect("non-empty batch");
    for r in iter {
        acc.mle += r.mle;
        acc.aux += r.aux;
        acc.total += r.total;
        for (a, g) in acc.grads.iter_mut().zip(&r.grads) {
            for (x, y) in a.iter_mut().zip(g) {
                *x += y;
            }
        }
    }
    acc.mle /= n;
    acc.aux /= n;
    acc.total /= n;
    for a in acc.grads.iter_mut() {
        for x in a.iter_mut() {
            *x /= n;
        }
    }
    acc
}

/// Rescales gradients so their global L2 norm is at most `cap`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], cap: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > cap {
        let s = cap / norm;
        for x in grads.iter_mut().flat_map(|g| g.iter_mut()) {
            *x *= s;
        }
    }
    norm
}

/// Runs `config.max_steps` Adam steps on windows drawn from the train split.
pub fn train(
    model: &mut TransformerLM,
    corpus: &Corpus,
    config: &TrainConfig,
    sink: &mut dyn ProgressSink,
) -> Result<Vec<LossRecord>> {
    config.validate()?;
    if corpus.vocab_size() > model.config().vocab_size {
        return Err(Error::config(format!(
            "corpus vocabulary {} exceeds model vocabulary {}",
            corpus.vocab_size(),
            model.config().vocab_size
        )));
    }
    if config.seq_len > model.config().max_seq_len {
        return Err(Error::config(format!(
            "seq_len {} exceeds model max_seq_len {}",
            config.seq_len,
            model.config().max_seq_len
        )));
    }
    let windows = Windows::new(corpus, Split::Train, config.seq_len)?;
    if let Some(&id) = windows.stream.iter().find(|&&t| t >= model.config().vocab_size) {
        return Err(Error::config(format!(
            "training stream contains token {id} (documents are joined by the separator token) \
             but the model vocabulary is {}",
            model.config().vocab_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(model.parameters(), config.learning_rate, config.adam);
    let mut history = Vec::with_capacity(config.max_steps);
    for step in 1..=config.max_steps {
        let batch: Vec<usize> = (0..config.batch_size)
            .map(|_| rng.random_range(0..windows.len()))
            .collect();
        let results = config
            .execution
            .map(&batch, |&w| sequence_gradients(model, windows.get(w), config.objective, config.margin))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let mut reduced = reduce_batch(results);
        if let Some(cap) = config.grad_clip {
            clip_global_norm(&mut reduced.grads, cap);
        }
        adam.step(model.parameters_mut(), &reduced.grads)?;
        let record = LossRecord {
            step,
            mle: reduced.mle,
            aux: reduced.aux,
            total: reduced.total,
        };
        sink.on_step(&record);
        history.push(record);
        if config.checkpoint_every > 0 && step % config.checkpoint_every == 0 {
            sink.on_checkpoint(step, model)?;
        }
    }
    Ok(history)
}

/// CSV header for a loss history; the third column names the auxiliary term.
pub fn loss_csv_header(objective: Objective) -> &'static str {
    match objective {
        Objective::Unlikelihood => "step,mle,ul,total",
        _ => "step,mle,cl,total",
    }
}

pub fn write_loss_csv<W: Write>(w: &mut W, objective: Objective, history: &[LossRecord]) -> Result<()> {
    writeln!(w, "{}", loss_csv_header(objective))?;
    for r in history {
        writeln!(w, "{},{},{},{}", r.step, r.mle, r.aux, r.total)?;
    }
    Ok(())
}


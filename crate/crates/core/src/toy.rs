//! Small table-driven language models with closed-form distributions.
//!
//! Useful as oracles: the next-token distribution depends only on the
//! previous token, so sequence probabilities can be enumerated by hand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::decode::{LanguageModel, ModelStep};
use crate::error::{Error, Result};

/// Bigram model: `logits[prev]` is the next-token logit row after `prev`,
/// and `embeddings[tok]` the representation reported for position `tok`.
#[derive(Clone, Debug)]
pub struct BigramModel {
    vocab: usize,
    max_positions: usize,
    logits: Vec<Vec<f64>>,
    embeddings: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct BigramStep {
    logits: Vec<f64>,
    representation: Vec<f64>,
}

impl ModelStep for BigramStep {
    fn logits(&self) -> &[f64] {
        &self.logits
    }

    fn representation(&self) -> &[f64] {
        &self.representation
    }
}

impl BigramModel {
    pub fn new(logits: Vec<Vec<f64>>, embeddings: Vec<Vec<f64>>, max_positions: usize) -> Result<Self> {
        let vocab = logits.len();
        if vocab == 0 || embeddings.len() != vocab {
            return Err(Error::config("bigram model needs one logit row and one embedding per token"));
        }
        if logits.iter().any(|r| r.len() != vocab) {
            return Err(Error::config("bigram logit rows must have vocabulary length"));
        }
        Ok(BigramModel {
            vocab,
            max_positions,
            logits,
            embeddings,
        })
    }

    /// Builds logits as natural logs of the given probability rows.
    pub fn from_probabilities(probs: Vec<Vec<f64>>, embeddings: Vec<Vec<f64>>, max_positions: usize) -> Result<Self> {
        let logits = probs.into_iter().map(|r| r.into_iter().map(f64::ln).collect()).collect();
        Self::new(logits, embeddings, max_positions)
    }

    /// Every row uniform; embeddings are one-hot.
    pub fn uniform(vocab: usize, max_positions: usize) -> Self {
        let logits = vec![vec![0.0; vocab]; vocab];
        Self::new(logits, one_hot(vocab), max_positions).expect("well-formed")
    }

    /// Gaussian logits scaled by `temperature` and Gaussian embeddings of width `dim`.
    pub fn random(vocab: usize, dim: usize, temperature: f64, max_positions: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss = |n: usize, s: f64| -> Vec<f64> { (0..n).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect() };
        let logits = (0..vocab).map(|_| gauss(vocab, temperature)).collect();
        let embeddings = (0..vocab).map(|_| gauss(dim, 1.0)).collect();
        Self::new(logits, embeddings, max_positions).expect("well-formed")
    }

    /// Same distributions, embeddings multiplied by `factor`.
    pub fn with_scaled_embeddings(&self, factor: f64) -> Self {
        let mut m = self.clone();
        for e in &mut m.embeddings {
            e.iter_mut().for_each(|x| *x *= factor);
        }
        m
    }

    pub fn logit_row(&self, prev: usize) -> &[f64] {
        &self.logits[prev]
    }
}

fn one_hot(vocab: usize) -> Vec<Vec<f64>> {
    (0..vocab)
        .map(|i| {
            let mut e = vec![0.0; vocab];
            e[i] = 1.0;
            e
        })
        .collect()
}

impl LanguageModel for BigramModel {
    /// Number of positions consumed so far.
    type State = usize;
    type Step = BigramStep;

    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn max_positions(&self) -> usize {
        self.max_positions
    }

    fn initial_state(&self) -> usize {
        0
    }

    fn peek(&self, state: &usize, token: usize) -> Result<BigramStep> {
        if *state >= self.max_positions {
            return Err(Error::SequenceTooLong {
                len: state + 1,
                max: self.max_positions,
            });
        }
        if token >= self.vocab {
            return Err(Error::Index {
                op: "peek",
                id: token,
                bound: self.vocab,
            });
        }
        Ok(BigramStep {
            logits: self.logits[token].clone(),
            representation: self.embeddings[token].clone(),
        })
    }

    fn push(&self, state: &mut usize, _step: BigramStep) {
        *state += 1;
    }
}

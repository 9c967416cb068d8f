//! Decoding strategies over any incremental language model.
//!
//! All decoders share one engine: the prefix is run once through the model's
//! cache, and every generated token is appended incrementally. Contrastive
//! search obtains each candidate's representation by running the candidate
//! on top of the current cache without committing it.

mod bench;
mod search;

pub use bench::{latency_benchmark, LatencyRow};
pub use search::{
    beam_decode, contrastive_search, contrastive_search_step, degeneration_penalty, diverse_contrastive_search,
    greedy_decode, nucleus_sample, nucleus_set, rank_tokens, select_contrastive, top_k_sample, ContrastiveChoice,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{KvCache, Position, TransformerLM};

/// Per-position output of an incremental model.
pub trait ModelStep {
    fn logits(&self) -> &[f64];
    /// Final-layer hidden state of the position.
    fn representation(&self) -> &[f64];
}

/// An autoregressive model that can extend a cached context one token at a time.
///
/// `peek` must not change the state; `push` commits a step previously returned
/// by `peek` on the same state.
pub trait LanguageModel: Sync {
    type State: Clone + Send;
    type Step: ModelStep + Send;

    fn vocab_size(&self) -> usize;
    fn max_positions(&self) -> usize;
    fn initial_state(&self) -> Self::State;
    fn peek(&self, state: &Self::State, token: usize) -> Result<Self::Step>;
    fn push(&self, state: &mut Self::State, step: Self::Step);
}

impl ModelStep for Position {
    fn logits(&self) -> &[f64] {
        &self.logits
    }

    fn representation(&self) -> &[f64] {
        Position::representation(self)
    }
}

impl LanguageModel for TransformerLM {
    type State = KvCache;
    type Step = Position;

    fn vocab_size(&self) -> usize {
        self.config().vocab_size
    }

    fn max_positions(&self) -> usize {
        self.config().max_seq_len
    }

    fn initial_state(&self) -> KvCache {
        self.new_cache()
    }

    fn peek(&self, state: &KvCache, token: usize) -> Result<Position> {
        TransformerLM::peek(self, state, token)
    }

    fn push(&self, state: &mut KvCache, step: Position) {
        TransformerLM::push(self, state, step)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Greedy,
    Beam,
    TopK,
    Nucleus,
    Contrastive,
    DiverseContrastive,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Greedy => "greedy",
            Method::Beam => "beam",
            Method::TopK => "top_k",
            Method::Nucleus => "nucleus",
            Method::Contrastive => "contrastive",
            Method::DiverseContrastive => "diverse_contrastive",
        }
    }

    pub fn is_deterministic(self) -> bool {
        matches!(self, Method::Greedy | Method::Beam | Method::Contrastive)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "greedy" => Ok(Method::Greedy),
            "beam" => Ok(Method::Beam),
            "top_k" | "topk" => Ok(Method::TopK),
            "nucleus" | "top_p" => Ok(Method::Nucleus),
            "contrastive" => Ok(Method::Contrastive),
            "diverse_contrastive" | "diverse" => Ok(Method::DiverseContrastive),
            other => Err(Error::config(format!(
                "unknown decoding method `{other}` (greedy|beam|top_k|nucleus|contrastive|diverse_contrastive)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub method: Method,
    pub beam_width: usize,
    pub k: usize,
    pub alpha: f64,
    pub p: f64,
    /// Number of leading nucleus-sampled tokens for diverse contrastive search.
    pub n_stochastic: usize,
    pub max_new_tokens: usize,
    pub seed: u64,
    /// Use p(v) renormalized over the top-k candidates as the confidence term.
    pub renormalize_confidence: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            method: Method::Greedy,
            beam_width: 10,
            k: 8,
            alpha: 0.6,
            p: 0.95,
            n_stochastic: 2,
            max_new_tokens: 128,
            seed: 0,
            renormalize_confidence: false,
        }
    }
}

impl DecodeConfig {
    pub fn new(method: Method) -> Self {
        DecodeConfig {
            method,
            ..DecodeConfig::default()
        }
    }

    pub fn greedy(max_new_tokens: usize) -> Self {
        DecodeConfig {
            max_new_tokens,
            ..DecodeConfig::new(Method::Greedy)
        }
    }

    pub fn beam(beam_width: usize, max_new_tokens: usize) -> Self {
        DecodeConfig {
            beam_width,
            max_new_tokens,
            ..DecodeConfig::new(Method::Beam)
        }
    }

    pub fn top_k(k: usize, max_new_tokens: usize, seed: u64) -> Self {
        DecodeConfig {
            k,
            max_new_tokens,
            seed,
            ..DecodeConfig::new(Method::TopK)
        }
    }

    pub fn nucleus(p: f64, max_new_tokens: usize, seed: u64) -> Self {
        DecodeConfig {
            p,
            max_new_tokens,
            seed,
            ..DecodeConfig::new(Method::Nucleus)
        }
    }

    pub fn contrastive(k: usize, alpha: f64, max_new_tokens: usize) -> Self {
        DecodeConfig {
            k,
            alpha,
            max_new_tokens,
            ..DecodeConfig::new(Method::Contrastive)
        }
    }

    pub fn diverse_contrastive(n_stochastic: usize, p: f64, k: usize, alpha: f64, max_new_tokens: usize, seed: u64) -> Self {
        DecodeConfig {
            n_stochastic,
            p,
            k,
            alpha,
            max_new_tokens,
            seed,
            ..DecodeConfig::new(Method::DiverseContrastive)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::config(format!("p must lie in (0, 1], got {}", self.p)));
        }
        if self.k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        if self.beam_width == 0 {
            return Err(Error::config("beam_width must be at least 1"));
        }
        if self.method == Method::DiverseContrastive && self.n_stochastic > self.max_new_tokens {
            return Err(Error::config(format!(
                "n_stochastic ({}) exceeds max_new_tokens ({})",
                self.n_stochastic, self.max_new_tokens
            )));
        }
        Ok(())
    }

    /// The parameters that matter for this method, e.g. `k=8;alpha=0.6`.
    pub fn params(&self) -> String {
        let mut s = match self.method {
            Method::Greedy => String::new(),
            Method::Beam => format!("b={}", self.beam_width),
            Method::TopK => format!("k={}", self.k),
            Method::Nucleus => format!("p={}", self.p),
            Method::Contrastive => format!("k={};alpha={}", self.k, self.alpha),
            Method::DiverseContrastive => {
                format!("n_stochastic={};p={};k={};alpha={}", self.n_stochastic, self.p, self.k, self.alpha)
            }
        };
        if self.renormalize_confidence && matches!(self.method, Method::Contrastive | Method::DiverseContrastive) {
            s.push_str(";renormalized");
        }
        s
    }
}

/// One scored candidate at a decoding step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub token: usize,
    /// Full-vocabulary probability p(v | context).
    pub confidence: f64,
    pub penalty: f64,
    /// Method-specific selection score; see [`StepRecord`].
    pub score: f64,
}

/// What a decoder considered at one step.
///
/// `score` is the contrastive objective for contrastive steps, the sampling
/// probability within the support for sampled steps, the probability for
/// greedy steps and the cumulative log-probability for beam steps.
/// Sampled steps list at most [`MAX_RECORDED_CANDIDATES`] highest-ranked
/// support members plus the sampled token; `support_size` is exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub chosen: usize,
    pub support_size: usize,
    pub candidates: Vec<Candidate>,
}

pub const MAX_RECORDED_CANDIDATES: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub method: Method,
    pub prefix: Vec<usize>,
    pub generated: Vec<usize>,
    /// Sum of natural-log probabilities of the generated tokens.
    pub log_prob: f64,
    pub steps: Vec<StepRecord>,
}

impl GenerationTrace {
    pub fn full_sequence(&self) -> Vec<usize> {
        let mut s = self.prefix.clone();
        s.extend_from_slice(&self.generated);
        s
    }
}

/// Dispatches on `config.method`.
pub fn generate<M: LanguageModel>(model: &M, prefix: &[usize], config: &DecodeConfig) -> Result<GenerationTrace> {
    config.validate()?;
    let n = config.max_new_tokens;
    match config.method {
        Method::Greedy => greedy_decode(model, prefix, n),
        Method::Beam => beam_decode(model, prefix, config.beam_width, n),
        Method::TopK => top_k_sample(model, prefix, config.k, n, config.seed),
        Method::Nucleus => nucleus_sample(model, prefix, config.p, n, config.seed),
        Method::Contrastive => contrastive_search(model, prefix, config.k, config.alpha, n, config.renormalize_confidence),
        Method::DiverseContrastive => diverse_contrastive_search(model, prefix, config),
    }
}

//! Tiny GPT-style causal transformer.
//!
//! Pre-norm blocks, learned absolute positions, GELU feed-forward, optional
//! weight tying between the token embedding and the LM head.

mod checkpoint;
mod config;
mod forward;
mod inference;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ModelConfig, Representation};
pub use forward::{ForwardOutput, TapedForward};
pub use inference::{KvCache, Position};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::tensor::Tensor;

const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug)]
pub(crate) struct BlockLayout {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub fc_w: usize,
    pub fc_b: usize,
    pub proj_w: usize,
    pub proj_b: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub wte: usize,
    pub wpe: usize,
    pub blocks: Vec<BlockLayout>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    /// Index of the `[V×d]` head matrix (the embedding itself when tied).
    pub head: usize,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Canonical parameter list for a config: name, shape, initializer.
fn parameter_specs(c: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (v, d, f) = (c.vocab_size, c.d_model, c.d_ff);
    let mut specs = vec![
        ("wte".to_string(), vec![v, d], Init::Normal),
        ("wpe".to_string(), vec![c.max_seq_len, d], Init::Normal),
    ];
    for l in 0..c.n_layers {
        let p = |s: &str| format!("h{l}.{s}");
        specs.extend([
            (p("ln_1.g"), vec![d], Init::Ones),
            (p("ln_1.b"), vec![d], Init::Zeros),
            (p("attn.q.w"), vec![d, d], Init::Normal),
            (p("attn.q.b"), vec![d], Init::Zeros),
            // No key bias: it shifts every score of a query equally and
            // cancels in the softmax.
            (p("attn.k.w"), vec![d, d], Init::Normal),
            (p("attn.v.w"), vec![d, d], Init::Normal),
            (p("attn.v.b"), vec![d], Init::Zeros),
            (p("attn.o.w"), vec![d, d], Init::Normal),
            (p("attn.o.b"), vec![d], Init::Zeros),
            (p("ln_2.g"), vec![d], Init::Ones),
            (p("ln_2.b"), vec![d], Init::Zeros),
            (p("mlp.fc.w"), vec![d, f], Init::Normal),
            (p("mlp.fc.b"), vec![f], Init::Zeros),
            (p("mlp.proj.w"), vec![f, d], Init::Normal),
            (p("mlp.proj.b"), vec![d], Init::Zeros),
        ]);
    }
    specs.push(("ln_f.g".into(), vec![d], Init::Ones));
    specs.push(("ln_f.b".into(), vec![d], Init::Zeros));
    if !c.tie_embeddings {
        specs.push(("lm_head.w".into(), vec![v, d], Init::Normal));
    }
    specs
}

fn layout_for(c: &ModelConfig) -> Layout {
    const PER_BLOCK: usize = 15;
    let block = |l: usize| {
        let b = 2 + l * PER_BLOCK;
        BlockLayout {
            ln1_g: b,
            ln1_b: b + 1,
            wq: b + 2,
            bq: b + 3,
            wk: b + 4,
            wv: b + 5,
            bv: b + 6,
            wo: b + 7,
            bo: b + 8,
            ln2_g: b + 9,
            ln2_b: b + 10,
            fc_w: b + 11,
            fc_b: b + 12,
            proj_w: b + 13,
            proj_b: b + 14,
        }
    };
    let after = 2 + c.n_layers * PER_BLOCK;
    Layout {
        wte: 0,
        wpe: 1,
        blocks: (0..c.n_layers).map(block).collect(),
        lnf_g: after,
        lnf_b: after + 1,
        head: if c.tie_embeddings { 0 } else { after + 2 },
    }
}

#[derive(Clone, Debug)]
pub struct TransformerLM {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    layout: Layout,
}

impl TransformerLM {
    /// Deterministic initialization from `config.seed`: N(0, 0.02) weights,
    /// zero biases, unit layer-norm gains.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let specs = parameter_specs(&config);
        let mut names = Vec::with_capacity(specs.len());
        let mut params = Vec::with_capacity(specs.len());
        for (name, shape, init) in specs {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Normal => (0..n).map(|_| normal.sample(&mut rng)).collect(),
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
            };
            names.push(name);
            params.push(Tensor::new(&shape, data)?);
        }
        let layout = layout_for(&config);
        Ok(Self {
            config,
            names,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameters(&self) -> &[Tensor] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn parameter_names(&self) -> &[String] {
        &self.names
    }

    pub fn named_parameters(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn parameter(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Expected `(name, shape)` list for a config, in checkpoint order.
    pub fn expected_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        parameter_specs(config)
            .into_iter()
            .map(|(n, s, _)| (n, s))
            .collect()
    }

    pub(crate) fn from_parts(config: ModelConfig, names: Vec<String>, params: Vec<Tensor>) -> Self {
        let layout = layout_for(&config);
        Self {
            config,
            names,
            params,
            layout,
        }
    }
}


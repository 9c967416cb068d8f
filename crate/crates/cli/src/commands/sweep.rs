use std::path::{Path, PathBuf};

use ctglab_core::corpus::{Corpus, Split};
use ctglab_core::decode::{DecodeConfig, LanguageModel, Method};
use ctglab_core::metrics::{generation_metrics, next_token_metrics};
use ctglab_core::model::{ModelConfig, TransformerLM};
use ctglab_core::train::{Objective, TrainConfig};
use ctglab_core::Execution;
use serde::{Deserialize, Serialize};

use super::generate::decode_overrides;
use super::train::{model_overrides, validate_training, train_model};
use super::{echo, generate_records, load_model, out_path, sidecar, write_csv, write_json};
use crate::args::SweepArgs;
use crate::config::{parse_grid, require, resolve, Overrides};
use crate::error::{at, CliError, CliResult};
use crate::prompts::{Prompt, PromptSource};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMode {
    /// k × alpha grid of contrastive search.
    #[default]
    Contrastive,
    /// p grid of nucleus sampling.
    Nucleus,
    /// One SimCTG model trained per margin, decoded with the base config.
    Margin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepRun {
    pub mode: SweepMode,
    pub checkpoint: Option<PathBuf>,
    /// Training corpus for margin sweeps.
    pub corpus: Option<PathBuf>,
    pub k_grid: Vec<usize>,
    pub alpha_grid: Vec<f64>,
    pub p_grid: Vec<f64>,
    pub margin_grid: Vec<f64>,
    /// Tokens of the validation split scored for `ppl` in margin sweeps.
    pub eval_tokens: usize,
    pub out: Option<PathBuf>,
    pub execution: Execution,
    pub prompts: PromptSource,
    /// Base decoding config; grid values overwrite its fields.
    pub decode: DecodeConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for SweepRun {
    fn default() -> Self {
        Self {
            mode: SweepMode::Contrastive,
            checkpoint: None,
            corpus: None,
            k_grid: vec![5, 8, 10],
            alpha_grid: vec![0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
            p_grid: vec![0.6, 0.7, 0.8, 0.9, 0.95],
            margin_grid: vec![0.0, 0.1, 0.25, 0.5, 0.75, 1.0],
            eval_tokens: 20_000,
            out: None,
            execution: Execution::Parallel,
            prompts: PromptSource::default(),
            decode: DecodeConfig::contrastive(8, 0.6, 128),
            model: ModelConfig::default(),
            train: TrainConfig {
                objective: Objective::SimCtg,
                ..TrainConfig::default()
            },
        }
    }
}

/// One grid cell; parameters that do not apply to the mode are empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mode: SweepMode,
    pub k: Option<usize>,
    pub alpha: Option<f64>,
    pub p: Option<f64>,
    pub margin: Option<f64>,
    /// Validation perplexity of the trained model (margin sweeps only).
    pub ppl: Option<f64>,
    pub diversity: f64,
    pub gen_ppl: f64,
    pub coherence: f64,
    pub samples: usize,
}

impl SweepRow {
    fn key(&self) -> [f64; 4] {
        let nan_last = |x: Option<f64>| x.unwrap_or(f64::INFINITY);
        [nan_last(self.k.map(|k| k as f64)), nan_last(self.alpha), nan_last(self.p), nan_last(self.margin)]
    }
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    config: serde_json::Value,
    rows: &'a [SweepRow],
}

fn int_grid(spec: &str) -> CliResult<Vec<usize>> {
    parse_grid(spec)?
        .into_iter()
        .map(|x| {
            if x >= 1.0 && x.fract() == 0.0 {
                Ok(x as usize)
            } else {
                Err(CliError::config(format!("`k_grid` needs positive integers, got {x}")))
            }
        })
        .collect()
}

/// Generation metrics of one decoding config over the prompts, scored by `model`.
pub(crate) fn score_cell<M: LanguageModel>(
    model: &M,
    prompts: &[Prompt],
    decode: &DecodeConfig,
    execution: Execution,
) -> CliResult<(f64, f64, f64, usize)> {
    let records = generate_records(model, prompts, decode, execution);
    if let Some(err) = records.iter().find_map(|r| r.error.as_ref()) {
        return Err(CliError::data(format!("decoding failed ({}): {err}", decode.params())));
    }
    let samples: Vec<(Vec<usize>, Vec<usize>)> = records
        .into_iter()
        .filter_map(|r| r.trace)
        .map(|t| (t.prefix, t.generated))
        .collect();
    let g = generation_metrics(Some(model), &samples, execution)?;
    Ok((
        g.diversity,
        g.gen_ppl.expect("model given"),
        g.coherence.expect("model given"),
        g.samples,
    ))
}

impl SweepRun {
    pub fn from_args(
        config: Option<&Path>,
        out: Option<PathBuf>,
        seed: Option<u64>,
        sequential: bool,
        args: &SweepArgs,
    ) -> CliResult<Self> {
        let mut o = Overrides::new();
        o.set("mode", args.mode.as_ref())
            .set("checkpoint", args.checkpoint.as_ref())
            .set("corpus", args.corpus.as_ref())
            .set("k_grid", args.k_grid.as_deref().map(int_grid).transpose()?)
            .set("alpha_grid", args.alpha_grid.as_deref().map(parse_grid).transpose()?)
            .set("p_grid", args.p_grid.as_deref().map(parse_grid).transpose()?)
            .set("margin_grid", args.margin_grid.as_deref().map(parse_grid).transpose()?)
            .set("out", out)
            .set("decode.seed", seed)
            .set("model.seed", seed)
            .set("train.seed", seed)
            .flag("execution", sequential, Execution::Sequential);
        model_overrides(&args.model, &mut o);
        o.set("train.learning_rate", args.learning_rate)
            .set("train.batch_size", args.batch_size)
            .set("train.max_steps", args.max_steps)
            .set("train.seq_len", args.seq_len);
        PromptSource::overrides(&args.prompts, &mut o);
        decode_overrides(&args.decode, &mut o);
        let run: Self = resolve(config, &o)?;
        run.validate()?;
        Ok(run)
    }

    pub fn validate(&self) -> CliResult<()> {
        out_path(&self.out)?;
        self.decode.validate()?;
        let nonempty = |ok: bool, name: &str| {
            if ok {
                Ok(())
            } else {
                Err(CliError::config(format!("`{name}` must not be empty")))
            }
        };
        for cell in self.cells() {
            cell.validate()?;
        }
        match self.mode {
            SweepMode::Contrastive => {
                nonempty(!self.k_grid.is_empty(), "k_grid")?;
                nonempty(!self.alpha_grid.is_empty(), "alpha_grid")?;
                require(&self.checkpoint, "checkpoint", "--checkpoint")?;
            }
            SweepMode::Nucleus => {
                nonempty(!self.p_grid.is_empty(), "p_grid")?;
                require(&self.checkpoint, "checkpoint", "--checkpoint")?;
            }
            SweepMode::Margin => {
                nonempty(!self.margin_grid.is_empty(), "margin_grid")?;
                require(&self.corpus, "corpus", "--corpus")?;
                validate_training(&self.model, &self.train)?;
                for &m in &self.margin_grid {
                    TrainConfig {
                        margin: m,
                        ..self.train.clone()
                    }
                    .validate()?;
                }
            }
        }
        Ok(())
    }

    /// Decoding configs of the decoding grids, in grid order.
    fn cells(&self) -> Vec<DecodeConfig> {
        match self.mode {
            SweepMode::Contrastive => {
                let method = match self.decode.method {
                    Method::DiverseContrastive => Method::DiverseContrastive,
                    _ => Method::Contrastive,
                };
                self.k_grid
                    .iter()
                    .flat_map(|&k| {
                        self.alpha_grid.iter().map(move |&alpha| DecodeConfig {
                            method,
                            k,
                            alpha,
                            ..self.decode.clone()
                        })
                    })
                    .collect()
            }
            SweepMode::Nucleus => self
                .p_grid
                .iter()
                .map(|&p| DecodeConfig {
                    method: Method::Nucleus,
                    p,
                    ..self.decode.clone()
                })
                .collect(),
            SweepMode::Margin => vec![self.decode.clone()],
        }
    }

    pub fn rows(&self) -> CliResult<Vec<SweepRow>> {
        self.validate()?;
        let prompts = self.prompts.load()?;
        let mut rows = Vec::new();
        match self.mode {
            SweepMode::Contrastive | SweepMode::Nucleus => {
                let ckpt = require(&self.checkpoint, "checkpoint", "--checkpoint")?;
                let model = load_model(ckpt)?;
                for cell in self.cells() {
                    let (diversity, gen_ppl, coherence, samples) = score_cell(&model, &prompts, &cell, self.execution)?;
                    let contrastive = self.mode == SweepMode::Contrastive;
                    rows.push(SweepRow {
                        mode: self.mode,
                        k: contrastive.then_some(cell.k),
                        alpha: contrastive.then_some(cell.alpha),
                        p: (!contrastive).then_some(cell.p),
                        margin: None,
                        ppl: None,
                        diversity,
                        gen_ppl,
                        coherence,
                        samples,
                    });
                }
            }
            SweepMode::Margin => {
                let path = require(&self.corpus, "corpus", "--corpus")?;
                let corpus = Corpus::load(path).map_err(at(path))?;
                let mut valid = corpus.token_stream(Split::Valid);
                valid.truncate(self.eval_tokens);
                for &margin in &self.margin_grid {
                    let train = TrainConfig {
                        margin,
                        ..self.train.clone()
                    };
                    eprintln!("training margin {margin}");
                    let (model, _) = train_model(&corpus, &self.model, &train, &mut ())?;
                    let ppl = valid_ppl(&model, &valid, train.seq_len, self.execution)?;
                    let (diversity, gen_ppl, coherence, samples) =
                        score_cell(&model, &prompts, &self.decode, self.execution)?;
                    rows.push(SweepRow {
                        mode: self.mode,
                        k: None,
                        alpha: None,
                        p: None,
                        margin: Some(margin),
                        ppl,
                        diversity,
                        gen_ppl,
                        coherence,
                        samples,
                    });
                }
            }
        }
        rows.sort_by(|a, b| {
            a.key()
                .iter()
                .zip(b.key().iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        Ok(rows)
    }

    pub fn execute(&self) -> CliResult<()> {
        let out = out_path(&self.out)?;
        let rows = self.rows()?;
        write_csv(out, &rows)?;
        write_json(
            &sidecar(out, ".json"),
            &SweepSummary {
                config: echo(self),
                rows: &rows,
            },
        )
    }
}

fn valid_ppl(model: &TransformerLM, stream: &[usize], window: usize, execution: Execution) -> CliResult<Option<f64>> {
    if stream.len() < 2 {
        return Ok(None);
    }
    let window = window.clamp(2, model.config().max_seq_len);
    Ok(Some(next_token_metrics(model, stream, window, execution)?.ppl))
}

use std::path::{Path, PathBuf};

use ctglab_core::corpus::Corpus;
use ctglab_core::fsutil::write_atomic;
use ctglab_core::model::{ModelConfig, TransformerLM};
use ctglab_core::train::{train, write_loss_csv, LossRecord, ProgressSink, TrainConfig};
use ctglab_core::Execution;
use serde::{Deserialize, Serialize};

use super::{echo, out_path, write_json};
use crate::args::{ModelArgs, TrainArgs};
use crate::config::{require, resolve, Overrides};
use crate::error::{at, CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRun {
    pub corpus: Option<PathBuf>,
    /// Output directory.
    pub out: Option<PathBuf>,
    /// Loss logging cadence on stderr; 0 is silent.
    pub log_every: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for TrainRun {
    fn default() -> Self {
        Self {
            corpus: None,
            out: None,
            log_every: 100,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

pub(crate) fn model_overrides(args: &ModelArgs, o: &mut Overrides) {
    o.set("model.n_layers", args.n_layers)
        .set("model.n_heads", args.n_heads)
        .set("model.d_model", args.d_model)
        .set("model.d_ff", args.d_ff)
        .set("model.max_seq_len", args.max_seq_len);
}

pub(crate) fn train_overrides(args: &TrainArgs, o: &mut Overrides) {
    model_overrides(&args.model, o);
    o.set("train.objective", args.objective.as_ref())
        .set("train.margin", args.margin)
        .set("train.learning_rate", args.learning_rate)
        .set("train.batch_size", args.batch_size)
        .set("train.max_steps", args.max_steps)
        .set("train.seq_len", args.seq_len)
        .set("train.grad_clip", args.grad_clip)
        .set("train.checkpoint_every", args.checkpoint_every);
}

pub(crate) fn seed_overrides(seed: Option<u64>, o: &mut Overrides) {
    o.set("model.seed", seed).set("train.seed", seed);
}

pub(crate) fn validate_training(model: &ModelConfig, train: &TrainConfig) -> CliResult<()> {
    model.validate()?;
    train.validate()?;
    if train.seq_len > model.max_seq_len {
        return Err(CliError::config(format!(
            "`train.seq_len` ({}) exceeds `model.max_seq_len` ({})",
            train.seq_len, model.max_seq_len
        )));
    }
    Ok(())
}

struct Progress<'a> {
    log_every: usize,
    checkpoint_dir: &'a Path,
}

impl ProgressSink for Progress<'_> {
    fn on_step(&mut self, r: &LossRecord) {
        if self.log_every > 0 && r.step.is_multiple_of(self.log_every) {
            eprintln!("step {:>6}  mle {:.4}  aux {:.4}  total {:.4}", r.step, r.mle, r.aux, r.total);
        }
    }

    fn on_checkpoint(&mut self, step: usize, model: &TransformerLM) -> ctglab_core::Result<()> {
        std::fs::create_dir_all(self.checkpoint_dir)?;
        model.save_checkpoint(self.checkpoint_dir.join(format!("step-{step:06}.ckpt")))
    }
}

#[derive(Serialize)]
struct RunSummary<'a> {
    config: serde_json::Value,
    parameters: usize,
    steps: usize,
    final_loss: Option<&'a LossRecord>,
}

/// Trains a fresh model on `corpus` and returns it with its loss history.
pub(crate) fn train_model(
    corpus: &Corpus,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    sink: &mut dyn ProgressSink,
) -> CliResult<(TransformerLM, Vec<LossRecord>)> {
    let mut model = TransformerLM::new(model_config.clone())?;
    let history = train(&mut model, corpus, train_config, sink)?;
    Ok((model, history))
}

impl TrainRun {
    pub fn from_args(
        config: Option<&Path>,
        out: Option<PathBuf>,
        seed: Option<u64>,
        sequential: bool,
        args: &TrainArgs,
    ) -> CliResult<Self> {
        let mut o = Overrides::new();
        o.set("corpus", args.corpus.as_ref())
            .set("out", out)
            .set("log_every", args.log_every)
            .flag("train.execution", sequential, Execution::Sequential);
        train_overrides(args, &mut o);
        seed_overrides(seed, &mut o);
        let run: Self = resolve(config, &o)?;
        validate_training(&run.model, &run.train)?;
        require(&run.corpus, "corpus", "--corpus")?;
        out_path(&run.out)?;
        Ok(run)
    }

    pub fn execute(&self) -> CliResult<()> {
        let corpus_path = require(&self.corpus, "corpus", "--corpus")?;
        let out = out_path(&self.out)?;
        let corpus = Corpus::load(corpus_path).map_err(at(corpus_path))?;
        std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
        let mut sink = Progress {
            log_every: self.log_every,
            checkpoint_dir: &out.join("checkpoints"),
        };
        let (model, history) = train_model(&corpus, &self.model, &self.train, &mut sink)?;

        let ckpt = out.join("model.ckpt");
        model.save_checkpoint(&ckpt).map_err(at(&ckpt))?;
        let csv = out.join("loss.csv");
        write_atomic(&csv, |w| write_loss_csv(w, self.train.objective, &history)).map_err(at(&csv))?;
        let summary = RunSummary {
            config: echo(self),
            parameters: model.num_parameters(),
            steps: history.len(),
            final_loss: history.last(),
        };
        write_json(&out.join("run.json"), &summary)?;
        eprintln!("saved {}", ckpt.display());
        Ok(())
    }
}

use std::path::{Path, PathBuf};

use ctglab_core::decode::{generate, DecodeConfig, GenerationTrace, LanguageModel};
use ctglab_core::tokenizer::ByteTokenizer;
use ctglab_core::Execution;
use serde::{Deserialize, Serialize};

use super::{echo, load_model, out_path, write_json};
use crate::args::{DecodeArgs, GenerateArgs};
use crate::config::{require, resolve, Overrides};
use crate::error::{CliError, CliResult};
use crate::prompts::{Prompt, PromptSource};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateRun {
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub execution: Execution,
    pub prompts: PromptSource,
    pub decode: DecodeConfig,
}

/// Outcome for one prompt: a trace, or the error that stopped it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub index: usize,
    pub prompt: String,
    /// Decoded continuation.
    pub text: Option<String>,
    pub trace: Option<GenerationTrace>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationsFile {
    pub config: serde_json::Value,
    pub results: Vec<GenerationRecord>,
}

impl GenerationsFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: not a generations file: {e}", path.display())))
    }

    /// `(prefix, continuation)` of every successful record.
    pub fn samples(&self) -> Vec<(Vec<usize>, Vec<usize>)> {
        self.results
            .iter()
            .filter_map(|r| r.trace.as_ref())
            .map(|t| (t.prefix.clone(), t.generated.clone()))
            .collect()
    }

    pub fn decode_config(&self) -> Option<serde_json::Value> {
        self.config.get("decode").cloned()
    }
}

pub(crate) fn decode_overrides(args: &DecodeArgs, o: &mut Overrides) {
    o.set("decode.method", args.method.as_ref())
        .set("decode.beam_width", args.beam_width)
        .set("decode.k", args.k)
        .set("decode.alpha", args.alpha)
        .set("decode.p", args.p)
        .set("decode.n_stochastic", args.n_stochastic)
        .set("decode.max_new_tokens", args.max_new_tokens)
        .flag("decode.renormalize_confidence", args.renormalize_confidence, true);
}

/// Decodes every prompt; failures become per-prompt error records.
pub fn generate_records<M: LanguageModel>(
    model: &M,
    prompts: &[Prompt],
    config: &DecodeConfig,
    execution: Execution,
) -> Vec<GenerationRecord> {
    let tok = ByteTokenizer;
    let indexed: Vec<(usize, &Prompt)> = prompts.iter().enumerate().collect();
    execution.map(&indexed, |&(index, prompt)| match generate(model, &prompt.ids, config) {
        Ok(trace) => GenerationRecord {
            index,
            prompt: prompt.text.clone(),
            text: Some(tok.decode_lossy(&trace.generated)),
            trace: Some(trace),
            error: None,
        },
        Err(e) => GenerationRecord {
            index,
            prompt: prompt.text.clone(),
            text: None,
            trace: None,
            error: Some(e.to_string()),
        },
    })
}

impl GenerateRun {
    pub fn from_args(
        config: Option<&Path>,
        out: Option<PathBuf>,
        seed: Option<u64>,
        sequential: bool,
        args: &GenerateArgs,
    ) -> CliResult<Self> {
        let mut o = Overrides::new();
        o.set("checkpoint", args.checkpoint.as_ref())
            .set("out", out)
            .set("decode.seed", seed)
            .flag("execution", sequential, Execution::Sequential);
        PromptSource::overrides(&args.prompts, &mut o);
        decode_overrides(&args.decode, &mut o);
        let run: Self = resolve(config, &o)?;
        run.decode.validate()?;
        require(&run.checkpoint, "checkpoint", "--checkpoint")?;
        out_path(&run.out)?;
        Ok(run)
    }

    pub fn execute(&self) -> CliResult<()> {
        let ckpt = require(&self.checkpoint, "checkpoint", "--checkpoint")?;
        let out = out_path(&self.out)?;
        let prompts = self.prompts.load()?;
        let model = load_model(ckpt)?;
        let results = generate_records(&model, &prompts, &self.decode, self.execution);
        let failed = results.iter().filter(|r| r.error.is_some()).count();
        let file = GenerationsFile {
            config: echo(self),
            results,
        };
        write_json(out, &file)?;
        if failed > 0 {
            eprintln!("{failed} of {} prompts failed; see their error records", prompts.len());
        }
        Ok(())
    }
}

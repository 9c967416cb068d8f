use std::path::{Path, PathBuf};

use ctglab_core::decode::{latency_benchmark, DecodeConfig, Method};
use serde::{Deserialize, Serialize};

use super::{echo, load_model, out_path, sidecar, write_csv, write_json};
use crate::args::BenchArgs;
use crate::config::{require, resolve, Overrides};
use crate::error::{CliError, CliResult};
use crate::prompts::PromptSource;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchRun {
    pub checkpoint: Option<PathBuf>,
    /// Specs such as `greedy`, `beam:b=4` or `contrastive:k=8,alpha=0.6`.
    pub configs: Vec<String>,
    /// Adds greedy plus beam b and contrastive k over each width.
    pub widths: Vec<usize>,
    pub repetitions: usize,
    pub max_new_tokens: usize,
    pub seed: u64,
    pub prompts: PromptSource,
    pub out: Option<PathBuf>,
}

impl Default for BenchRun {
    fn default() -> Self {
        Self {
            checkpoint: None,
            configs: Vec::new(),
            widths: Vec::new(),
            repetitions: 5,
            max_new_tokens: 128,
            seed: 0,
            prompts: PromptSource::default(),
            out: None,
        }
    }
}

/// Parses `method[:key=value,...]`; keys are `b`, `k`, `alpha`, `p` and `n`.
pub fn parse_decode_spec(spec: &str, max_new_tokens: usize, seed: u64) -> CliResult<DecodeConfig> {
    let (method, params) = spec.split_once(':').unwrap_or((spec, ""));
    let method: Method = method.trim().parse()?;
    let mut c = DecodeConfig::new(method);
    c.max_new_tokens = max_new_tokens;
    c.seed = seed;
    for kv in params.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let bad = || CliError::config(format!("bad decode parameter `{kv}` in `{spec}`"));
        let (key, value) = kv.split_once('=').ok_or_else(bad)?;
        let value = value.trim();
        match key.trim() {
            "b" | "beam_width" => c.beam_width = value.parse().map_err(|_| bad())?,
            "k" => c.k = value.parse().map_err(|_| bad())?,
            "alpha" => c.alpha = value.parse().map_err(|_| bad())?,
            "p" => c.p = value.parse().map_err(|_| bad())?,
            "n" | "n_stochastic" => c.n_stochastic = value.parse().map_err(|_| bad())?,
            _ => return Err(bad()),
        }
    }
    c.validate()?;
    Ok(c)
}

const DEFAULT_SPECS: &[&str] = &["greedy", "beam:b=10", "top_k:k=8", "nucleus:p=0.95", "contrastive:k=8,alpha=0.6"];

impl BenchRun {
    pub fn from_args(config: Option<&Path>, out: Option<PathBuf>, seed: Option<u64>, args: &BenchArgs) -> CliResult<Self> {
        let mut o = Overrides::new();
        o.set("checkpoint", args.checkpoint.as_ref())
            .set("configs", (!args.configs.is_empty()).then_some(&args.configs))
            .set("widths", args.widths.as_ref())
            .set("repetitions", args.repetitions)
            .set("max_new_tokens", args.max_new_tokens)
            .set("seed", seed)
            .set("out", out);
        PromptSource::overrides(&args.prompts, &mut o);
        let run: Self = resolve(config, &o)?;
        run.decode_configs()?;
        require(&run.checkpoint, "checkpoint", "--checkpoint")?;
        out_path(&run.out)?;
        Ok(run)
    }

    /// Benchmarked configs in report order.
    pub fn decode_configs(&self) -> CliResult<Vec<DecodeConfig>> {
        if self.repetitions < 3 {
            return Err(CliError::config(format!(
                "`repetitions` must be at least 3, got {}",
                self.repetitions
            )));
        }
        let mut specs: Vec<String> = self.configs.clone();
        if !self.widths.is_empty() {
            if !specs.iter().any(|s| s.trim() == "greedy") {
                specs.insert(0, "greedy".into());
            }
            specs.extend(self.widths.iter().map(|w| format!("beam:b={w}")));
            specs.extend(self.widths.iter().map(|w| format!("contrastive:k={w},alpha=0.6")));
        }
        if specs.is_empty() {
            specs = DEFAULT_SPECS.iter().map(|s| s.to_string()).collect();
        }
        specs
            .iter()
            .map(|s| parse_decode_spec(s, self.max_new_tokens, self.seed))
            .collect()
    }

    pub fn execute(&self) -> CliResult<()> {
        let ckpt = require(&self.checkpoint, "checkpoint", "--checkpoint")?;
        let out = out_path(&self.out)?;
        let configs = self.decode_configs()?;
        let prompts = self.prompts.load()?;
        let model = load_model(ckpt)?;
        let prefixes: Vec<Vec<usize>> = prompts.into_iter().map(|p| p.ids).collect();
        let rows = latency_benchmark(&model, &prefixes, &configs, self.repetitions)?;
        write_csv(out, &rows)?;
        write_json(&sidecar(out, ".json"), &serde_json::json!({ "config": echo(self) }))
    }
}

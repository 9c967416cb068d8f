use std::path::PathBuf;

use ctglab_core::corpus::{Corpus, Split, SplitFractions};
use serde::{Deserialize, Serialize};

use super::{echo, out_path, sidecar, write_json};
use crate::args::IngestArgs;
use crate::config::{require, resolve, Overrides};
use crate::error::{at, CliError, CliResult};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestRun {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub fractions: SplitFractions,
}

#[derive(Serialize)]
struct IngestSummary {
    config: serde_json::Value,
    vocab_size: usize,
    documents: usize,
    /// Documents and tokens per split.
    splits: Vec<SplitSummary>,
}

#[derive(Serialize)]
struct SplitSummary {
    split: Split,
    documents: usize,
    tokens: usize,
}

impl IngestRun {
    pub fn from_args(config: Option<&std::path::Path>, out: Option<PathBuf>, args: &IngestArgs) -> CliResult<Self> {
        let mut o = Overrides::new();
        o.set("input", args.input.as_ref())
            .set("out", out)
            .set("fractions.train", args.train_frac)
            .set("fractions.valid", args.valid_frac)
            .set("fractions.test", args.test_frac);
        let run: Self = resolve(config, &o)?;
        run.fractions.validate()?;
        require(&run.input, "input", "--input")?;
        out_path(&run.out)?;
        Ok(run)
    }

    pub fn execute(&self) -> CliResult<()> {
        let input = require(&self.input, "input", "--input")?;
        let out = out_path(&self.out)?;
        let text = std::fs::read_to_string(input).map_err(|e| CliError::io(input, e))?;
        let corpus = Corpus::from_text(&text, self.fractions).map_err(at(input))?;
        corpus.save(out).map_err(at(out))?;
        let splits = [Split::Train, Split::Valid, Split::Test]
            .into_iter()
            .map(|split| SplitSummary {
                split,
                documents: corpus.split_len(split),
                tokens: corpus.split(split).map(|d| d.len()).sum(),
            })
            .collect();
        let summary = IngestSummary {
            config: echo(self),
            vocab_size: corpus.vocab_size(),
            documents: corpus.documents().len(),
            splits,
        };
        write_json(&sidecar(out, ".json"), &summary)?;
        eprintln!("ingested {} documents into {}", corpus.documents().len(), out.display());
        Ok(())
    }
}

use std::path::PathBuf;

use ctglab_core::corpus::{Corpus, Split};
use ctglab_core::tokenizer::ByteTokenizer;
use serde::{Deserialize, Serialize};

use crate::args::PromptArgs;
use crate::config::Overrides;
use crate::error::{at, CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSource {
    /// UTF-8 file with one prompt per line.
    pub file: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub split: Split,
    /// Maximum number of corpus prompts.
    pub count: usize,
    /// Leading tokens taken from each corpus document.
    pub prefix_len: usize,
}

impl Default for PromptSource {
    fn default() -> Self {
        Self {
            file: None,
            corpus: None,
            split: Split::Test,
            count: 50,
            prefix_len: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prompt {
    pub text: String,
    pub ids: Vec<usize>,
}

impl PromptSource {
    pub fn overrides(args: &PromptArgs, o: &mut Overrides) {
        o.set("prompts.file", args.prompts.as_ref())
            .set("prompts.corpus", args.prompt_corpus.as_ref())
            .set("prompts.split", args.prompt_split.as_ref())
            .set("prompts.count", args.count)
            .set("prompts.prefix_len", args.prefix_len);
    }

    pub fn load(&self) -> CliResult<Vec<Prompt>> {
        let tok = ByteTokenizer;
        let prompts: Vec<Prompt> = match (&self.file, &self.corpus) {
            (Some(_), Some(_)) => {
                return Err(CliError::config("prompts.file and prompts.corpus are mutually exclusive"));
            }
            (None, None) => {
                return Err(CliError::config(
                    "no prompts: set --prompts <file> or --prompt-corpus <corpus> (prompts.file / prompts.corpus)",
                ));
            }
            (Some(path), None) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                text.lines()
                    .map(|line| Prompt {
                        text: line.to_string(),
                        ids: tok.encode(line),
                    })
                    .collect()
            }
            (None, Some(path)) => {
                if self.prefix_len == 0 {
                    return Err(CliError::config("prompts.prefix_len must be at least 1"));
                }
                let corpus = Corpus::load(path).map_err(at(path))?;
                corpus
                    .split(self.split)
                    .filter(|doc| doc.len() >= self.prefix_len)
                    .take(self.count)
                    .map(|doc| {
                        let ids = doc[..self.prefix_len].to_vec();
                        Prompt {
                            text: tok.decode_lossy(&ids),
                            ids,
                        }
                    })
                    .collect()
            }
        };
        if prompts.is_empty() {
            return Err(CliError::data("no prompts found"));
        }
        Ok(prompts)
    }
}

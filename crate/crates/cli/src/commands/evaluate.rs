use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ctglab_core::corpus::{Corpus, Split};
use ctglab_core::fsutil::write_atomic;
use ctglab_core::metrics::{
    conicity, generation_metrics, layerwise_self_similarity, next_token_metrics, self_similarity, similarity_matrix,
    write_similarity_csv, MetricsReport,
};
use ctglab_core::model::TransformerLM;
use ctglab_core::tokenizer::ByteTokenizer;
use ctglab_core::Execution;
use serde::{Deserialize, Serialize};

use super::{echo, load_model, out_path, write_json, GenerationsFile};
use crate::args::EvaluateArgs;
use crate::config::{resolve, Overrides};
use crate::error::{at, CliError, CliResult};

/// Selectable metrics. `self_similarity_layers` reports one
/// `self_similarity_layer_{l}` key per layer, embeddings being layer 0.
pub const METRIC_NAMES: &[&str] = &[
    "ppl",
    "acc",
    "rep",
    "wrep",
    "rep_2",
    "rep_3",
    "rep_4",
    "diversity",
    "gen_ppl",
    "coherence",
    "self_similarity",
    "conicity",
    "self_similarity_layers",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateRun {
    pub checkpoint: Option<PathBuf>,
    /// Output of `generate`.
    pub generations: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub split: Split,
    /// Window for next-token metrics and corpus isotropy samples; defaults to max_seq_len.
    pub window: Option<usize>,
    /// Truncates the split stream.
    pub max_tokens: Option<usize>,
    /// Corpus windows used for isotropy when no generations are given.
    pub isotropy_samples: usize,
    /// Defaults to every metric whose inputs are present.
    pub metrics: Option<Vec<String>>,
    pub similarity_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub execution: Execution,
}

impl Default for EvaluateRun {
    fn default() -> Self {
        Self {
            checkpoint: None,
            generations: None,
            corpus: None,
            split: Split::Test,
            window: None,
            max_tokens: None,
            isotropy_samples: 64,
            metrics: None,
            similarity_dir: None,
            out: None,
            execution: Execution::Parallel,
        }
    }
}

#[derive(Clone, Copy)]
struct Inputs {
    checkpoint: bool,
    generations: bool,
    corpus: bool,
}

/// The missing input a metric needs, if any.
fn missing_requirement(metric: &str, have: Inputs) -> Option<&'static str> {
    match metric {
        "ppl" | "acc" | "rep" | "wrep" => {
            if !have.checkpoint {
                Some("--checkpoint")
            } else if !have.corpus {
                Some("--corpus")
            } else {
                None
            }
        }
        "rep_2" | "rep_3" | "rep_4" | "diversity" => (!have.generations).then_some("--generations"),
        "gen_ppl" | "coherence" => {
            if !have.generations {
                Some("--generations")
            } else if !have.checkpoint {
                Some("--checkpoint")
            } else {
                None
            }
        }
        _ => {
            if !have.checkpoint {
                Some("--checkpoint")
            } else if !(have.generations || have.corpus) {
                Some("--generations or --corpus")
            } else {
                None
            }
        }
    }
}

impl EvaluateRun {
    pub fn from_args(config: Option<&Path>, out: Option<PathBuf>, sequential: bool, args: &EvaluateArgs) -> CliResult<Self> {
        let mut o = Overrides::new();
        o.set("checkpoint", args.checkpoint.as_ref())
            .set("generations", args.generations.as_ref())
            .set("corpus", args.corpus.as_ref())
            .set("split", args.split.as_ref())
            .set("window", args.window)
            .set("max_tokens", args.max_tokens)
            .set("isotropy_samples", args.isotropy_samples)
            .set("metrics", args.metrics.as_ref())
            .set("similarity_dir", args.similarity_dir.as_ref())
            .set("out", out)
            .flag("execution", sequential, Execution::Sequential);
        let run: Self = resolve(config, &o)?;
        run.selected_metrics()?;
        out_path(&run.out)?;
        Ok(run)
    }

    fn inputs(&self) -> Inputs {
        Inputs {
            checkpoint: self.checkpoint.is_some(),
            generations: self.generations.is_some(),
            corpus: self.corpus.is_some(),
        }
    }

    /// Requested metrics, checked against the available inputs.
    pub fn selected_metrics(&self) -> CliResult<BTreeSet<&str>> {
        let have = self.inputs();
        let selected: BTreeSet<&str> = match &self.metrics {
            Some(names) => {
                let mut set = BTreeSet::new();
                for name in names {
                    let name = METRIC_NAMES.iter().find(|m| **m == name.trim()).ok_or_else(|| {
                        CliError::config(format!("unknown metric `{name}` (one of {})", METRIC_NAMES.join(", ")))
                    })?;
                    if let Some(req) = missing_requirement(name, have) {
                        return Err(CliError::config(format!("metric `{name}` requires {req}")));
                    }
                    set.insert(*name);
                }
                set
            }
            None => METRIC_NAMES
                .iter()
                .copied()
                .filter(|m| missing_requirement(m, have).is_none())
                .collect(),
        };
        if selected.is_empty() {
            return Err(CliError::config(
                "nothing to evaluate: give --generations, or --checkpoint with --corpus",
            ));
        }
        if self.isotropy_samples == 0 {
            return Err(CliError::config("`isotropy_samples` must be at least 1"));
        }
        Ok(selected)
    }

    pub fn report(&self) -> CliResult<MetricsReport> {
        let selected = self.selected_metrics()?;
        let wants = |names: &[&str]| names.iter().any(|n| selected.contains(n));
        let model = self.checkpoint.as_deref().map(load_model).transpose()?;
        let generations = self.generations.as_deref().map(GenerationsFile::load).transpose()?;
        let corpus = match &self.corpus {
            Some(p) => Some(Corpus::load(p).map_err(at(p))?),
            None => None,
        };

        let mut report = MetricsReport::new();
        report.metadata.model = self.checkpoint.as_ref().map(|p| p.display().to_string());
        report.metadata.config = Some(echo(self));

        let stream = corpus.as_ref().map(|c| {
            let mut s = c.token_stream(self.split);
            if let Some(n) = self.max_tokens {
                s.truncate(n);
            }
            s
        });
        if corpus.is_some() {
            report.metadata.split = Some(format!("{:?}", self.split).to_lowercase());
        }
        let window = match (&model, self.window) {
            (_, Some(w)) => w,
            (Some(m), None) => m.config().max_seq_len,
            (None, None) => 0,
        };

        if wants(&["ppl", "acc", "rep", "wrep"]) {
            let (m, s) = (model.as_ref().expect("checked"), stream.as_ref().expect("checked"));
            let nt = next_token_metrics(m, s, window, self.execution)?;
            for (k, v) in [("ppl", nt.ppl), ("acc", nt.acc), ("rep", nt.rep), ("wrep", nt.wrep)] {
                if selected.contains(k) {
                    report.insert(k, v);
                }
            }
        }

        if let Some(gens) = &generations {
            report.metadata.decode_config = gens.decode_config();
            if wants(&["rep_2", "rep_3", "rep_4", "diversity", "gen_ppl", "coherence"]) {
                let samples = gens.samples();
                let scorer = if wants(&["gen_ppl", "coherence"]) { model.as_ref() } else { None };
                let g = generation_metrics(scorer, &samples, self.execution)?;
                report.metadata.sample_count = g.samples;
                report.metadata.short_samples = g.short_samples;
                let values = [
                    ("rep_2", Some(g.rep_2)),
                    ("rep_3", Some(g.rep_3)),
                    ("rep_4", Some(g.rep_4)),
                    ("diversity", Some(g.diversity)),
                    ("gen_ppl", g.gen_ppl),
                    ("coherence", g.coherence),
                ];
                for (k, v) in values {
                    if let (true, Some(v)) = (selected.contains(k), v) {
                        report.insert(k, v);
                    }
                }
            }
        }

        if wants(&["self_similarity", "conicity", "self_similarity_layers"]) {
            let m = model.as_ref().expect("checked");
            let sequences = match &generations {
                Some(g) => g.samples().into_iter().map(|(p, c)| [p, c].concat()).collect(),
                None => corpus_windows(stream.as_ref().expect("checked"), window.min(m.config().max_seq_len), self.isotropy_samples),
            };
            let sequences: Vec<Vec<usize>> = sequences.into_iter().filter(|s| s.len() >= 2).collect();
            if sequences.is_empty() {
                return Err(CliError::data("no sequence of at least two tokens for isotropy metrics"));
            }
            if report.metadata.sample_count == 0 {
                report.metadata.sample_count = sequences.len();
            }
            self.isotropy(m, &sequences, &selected, &mut report)?;
        }
        Ok(report)
    }

    fn isotropy(
        &self,
        model: &TransformerLM,
        sequences: &[Vec<usize>],
        selected: &BTreeSet<&str>,
        report: &mut MetricsReport,
    ) -> CliResult<()> {
        if selected.contains("self_similarity") || selected.contains("conicity") || self.similarity_dir.is_some() {
            let per: Vec<ctglab_core::Result<(f64, f64)>> = self.execution.map(sequences, |seq| {
                let out = model.forward(seq)?;
                let h = out.representations();
                Ok((self_similarity(h)?, conicity(h)?))
            });
            let per: Vec<(f64, f64)> = per.into_iter().collect::<ctglab_core::Result<_>>()?;
            let n = per.len() as f64;
            if selected.contains("self_similarity") {
                report.insert("self_similarity", per.iter().map(|p| p.0).sum::<f64>() / n);
            }
            if selected.contains("conicity") {
                report.insert("conicity", per.iter().map(|p| p.1).sum::<f64>() / n);
            }
        }
        if selected.contains("self_similarity_layers") {
            let layers = layerwise_self_similarity(model, sequences, self.execution)?;
            for (l, v) in layers.iter().enumerate() {
                report.insert(&format!("self_similarity_layer_{l}"), *v);
            }
        }
        if let Some(dir) = &self.similarity_dir {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            let tok = ByteTokenizer;
            for (i, seq) in sequences.iter().enumerate() {
                let out = model.forward(seq)?;
                let matrix = similarity_matrix(out.representations())?;
                let labels: Vec<String> = seq.iter().map(|&t| tok.token_label(t)).collect();
                let path = dir.join(format!("sample-{i:04}.csv"));
                write_atomic(&path, |w| write_similarity_csv(w, &matrix, &labels)).map_err(at(&path))?;
            }
        }
        Ok(())
    }

    pub fn execute(&self) -> CliResult<()> {
        let out = out_path(&self.out)?;
        let report = self.report()?;
        write_json(out, &report)
    }
}

/// Up to `count` consecutive windows of the stream.
fn corpus_windows(stream: &[usize], window: usize, count: usize) -> Vec<Vec<usize>> {
    stream.chunks(window.max(2)).take(count).map(<[usize]>::to_vec).collect()
}

//! Language-modelling, generation and representation-isotropy metrics.

mod isotropy;
mod lm;
mod text;

pub use isotropy::{conicity, layerwise_self_similarity, self_similarity, similarity_matrix, write_similarity_csv};
pub use lm::{
    aggregate, coherence, gen_ppl, generation_metrics, next_token_metrics, sample_metrics, GenerationMetrics,
    NextTokenMetrics, SampleMetrics, PROB_FLOOR,
};
pub use text::{diversity, diversity_from_reps, is_short, rep_n};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub model: Option<String>,
    pub decode_config: Option<serde_json::Value>,
    pub split: Option<String>,
    pub sample_count: usize,
    /// Samples whose continuation was too short for some rep-n.
    pub short_samples: usize,
    /// Conventions behind the numbers, e.g. the log base of each perplexity.
    pub conventions: BTreeMap<String, String>,
    /// Effective configuration of the producing command.
    pub config: Option<serde_json::Value>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metrics: BTreeMap<String, f64>,
    pub metadata: ReportMetadata,
}

impl MetricsReport {
    pub fn new() -> Self {
        let mut r = MetricsReport::default();
        let conv = &mut r.metadata.conventions;
        conv.insert("ppl".into(), "exp of mean natural-log NLL, pooled over predictions".into());
        conv.insert("gen_ppl".into(), "2^(-mean log2 p) per sample, macro-averaged".into());
        conv.insert("coherence".into(), "cosine of mean-pooled representations of the evaluated model".into());
        conv.insert("rep_n".into(), "continuations shorter than n count as 0".into());
        r
    }

    pub fn insert(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    pub fn add_next_token(&mut self, m: &NextTokenMetrics) {
        self.insert("ppl", m.ppl);
        self.insert("acc", m.acc);
        self.insert("rep", m.rep);
        self.insert("wrep", m.wrep);
    }

    pub fn add_generation(&mut self, m: &GenerationMetrics) {
        self.insert("rep_2", m.rep_2);
        self.insert("rep_3", m.rep_3);
        self.insert("rep_4", m.rep_4);
        self.insert("diversity", m.diversity);
        if let Some(v) = m.gen_ppl {
            self.insert("gen_ppl", v);
        }
        if let Some(v) = m.coherence {
            self.insert("coherence", v);
        }
        self.metadata.sample_count = m.samples;
        self.metadata.short_samples = m.short_samples;
    }
}

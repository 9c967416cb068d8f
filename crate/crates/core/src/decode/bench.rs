use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{generate, DecodeConfig, LanguageModel, Method};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub method: Method,
    pub params: String,
    /// Mean wall time per prefix, in milliseconds.
    pub mean_ms: f64,
    pub ratio_to_greedy: f64,
}

/// Times fixed-length generation for every config.
///
/// Each config is warmed up once over all prefixes, then the configs are
/// timed in interleaved rounds so that drift in machine load hits all of
/// them alike. The greedy reference is the first greedy config; without one,
/// an extra greedy run with the first config's length is timed but not reported.
pub fn latency_benchmark<M: LanguageModel>(
    model: &M,
    prefixes: &[Vec<usize>],
    configs: &[DecodeConfig],
    repetitions: usize,
) -> Result<Vec<LatencyRow>> {
    if repetitions < 3 {
        return Err(Error::config(format!("repetitions must be at least 3, got {repetitions}")));
    }
    if prefixes.is_empty() || configs.is_empty() {
        return Err(Error::config("latency benchmark needs at least one prefix and one config"));
    }
    for c in configs {
        c.validate()?;
    }
    let mut timed: Vec<DecodeConfig> = configs.to_vec();
    let greedy_idx = match configs.iter().position(|c| c.method == Method::Greedy) {
        Some(i) => i,
        None => {
            timed.push(DecodeConfig::greedy(configs[0].max_new_tokens));
            timed.len() - 1
        }
    };

    let run = |config: &DecodeConfig| -> Result<f64> {
        let start = Instant::now();
        for prefix in prefixes {
            std::hint::black_box(generate(model, prefix, config)?);
        }
        Ok(start.elapsed().as_secs_f64() * 1e3 / prefixes.len() as f64)
    };

    for c in &timed {
        run(c)?;
    }
    let mut totals = vec![0.0; timed.len()];
    for _ in 0..repetitions {
        for (c, total) in timed.iter().zip(totals.iter_mut()) {
            *total += run(c)?;
        }
    }
    let means: Vec<f64> = totals.iter().map(|t| t / repetitions as f64).collect();
    let greedy = means[greedy_idx];
    Ok(configs
        .iter()
        .zip(&means)
        .enumerate()
        .map(|(i, (c, &mean_ms))| LatencyRow {
            method: c.method,
            params: c.params(),
            mean_ms,
            ratio_to_greedy: if i == greedy_idx { 1.0 } else { mean_ms / greedy },
        })
        .collect())
}

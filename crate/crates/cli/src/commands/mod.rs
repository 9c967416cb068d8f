mod bench;
mod evaluate;
mod generate;
mod ingest;
mod sweep;
mod train;

pub use bench::{parse_decode_spec, BenchRun};
pub use evaluate::{EvaluateRun, METRIC_NAMES};
pub use generate::{generate_records, GenerateRun, GenerationRecord, GenerationsFile};
pub use ingest::IngestRun;
pub use sweep::{SweepMode, SweepRow, SweepRun};
pub use train::TrainRun;

use std::path::{Path, PathBuf};

use ctglab_core::fsutil::write_atomic;
use ctglab_core::model::TransformerLM;
use serde::Serialize;

use crate::error::{at, CliError, CliResult};

pub(crate) fn load_model(path: &Path) -> CliResult<TransformerLM> {
    TransformerLM::load_checkpoint(path).map_err(at(path))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|e| ctglab_core::Error::Data(e.to_string()))?;
        std::io::Write::write_all(w, b"\n")?;
        Ok(())
    })
    .map_err(at(path))
}

/// `path` with `suffix` appended to its file name, e.g. `a.csv` -> `a.csv.json`.
pub(crate) fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

pub(crate) fn echo<T: Serialize>(config: &T) -> serde_json::Value {
    serde_json::to_value(config).expect("configs serialize")
}

pub(crate) fn out_path(out: &Option<PathBuf>) -> CliResult<&Path> {
    out.as_deref()
        .ok_or_else(|| CliError::config("missing `out` (set --out or `out` in the config file)"))
}

/// Writes rows through the csv crate's serializer; the header comes from the row type.
pub(crate) fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    write_atomic(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        for r in rows {
            csv.serialize(r).map_err(|e| ctglab_core::Error::Data(e.to_string()))?;
        }
        csv.flush()?;
        Ok(())
    })
    .map_err(at(path))
}

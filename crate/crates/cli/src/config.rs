//! Run configuration: an optional TOML/JSON file overlaid with command-line flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

/// Flag values to write over the file configuration, keyed by dotted path.
#[derive(Debug, Default)]
pub struct Overrides(Vec<(String, Value)>);

impl Overrides {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set<T: Serialize>(&mut self, path: &str, value: Option<T>) -> &mut Self {
        if let Some(v) = value {
            let v = serde_json::to_value(v).expect("flag values serialize");
            self.0.push((path.to_string(), v));
        }
        self
    }

    /// Sets `path` only when `flag` is true.
    pub fn flag(&mut self, path: &str, flag: bool, value: impl Serialize) -> &mut Self {
        if flag {
            self.set(path, Some(value));
        }
        self
    }
}

pub fn read_config_file(path: &Path) -> CliResult<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let value = if is_json {
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
    } else {
        let t: toml::Value = toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        serde_json::to_value(t).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
    };
    if !value.is_object() {
        return Err(CliError::config(format!("{}: top level must be a table", path.display())));
    }
    Ok(value)
}

fn set_path(root: &mut Value, path: &str, value: Value) {
    let mut cur = root;
    let mut parts = path.split('.').peekable();
    while let Some(part) = parts.next() {
        if !cur.is_object() {
            *cur = Value::Object(Map::new());
        }
        let obj = cur.as_object_mut().expect("object");
        if parts.peek().is_none() {
            obj.insert(part.to_string(), value);
            return;
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
}

/// Loads `file` (if any), applies `overrides` and deserializes the result.
pub fn resolve<T: DeserializeOwned>(file: Option<&Path>, overrides: &Overrides) -> CliResult<T> {
    let mut value = match file {
        Some(p) => read_config_file(p)?,
        None => Value::Object(Map::new()),
    };
    for (path, v) in &overrides.0 {
        set_path(&mut value, path, v.clone());
    }
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            CliError::config(inner.to_string())
        } else {
            CliError::config(format!("`{path}`: {inner}"))
        }
    })
}

pub fn require<'a, T>(value: &'a Option<T>, field: &str, flag: &str) -> CliResult<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| CliError::config(format!("missing `{field}` (set {flag} or `{field}` in the config file)")))
}

/// Expands a grid given as `a,b,c` or as an inclusive range `start:end:step`.
pub fn parse_grid(spec: &str) -> CliResult<Vec<f64>> {
    let bad = || CliError::config(format!("cannot parse grid `{spec}`"));
    if let Some((range, step)) = spec.rsplit_once(':') {
        let (start, end) = range.split_once(':').ok_or_else(bad)?;
        let (start, end, step): (f64, f64, f64) = (
            start.trim().parse().map_err(|_| bad())?,
            end.trim().parse().map_err(|_| bad())?,
            step.trim().parse().map_err(|_| bad())?,
        );
        if !(step > 0.0) || end < start {
            return Err(bad());
        }
        let n = ((end - start) / step + 1e-9).floor() as usize;
        // Round to suppress accumulated binary noise, e.g. 0.30000000000000004.
        return Ok((0..=n)
            .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
            .collect());
    }
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
        .collect()
}

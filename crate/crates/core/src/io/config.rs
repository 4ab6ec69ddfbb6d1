//! Run-config files: one `key=value` per line, keys are [`TrainConfig`] field
//! names. Blank lines and lines starting with `#` are ignored. Unknown or
//! repeated keys are errors; keys that are absent keep their defaults.

use std::collections::HashSet;
use std::path::Path;

use super::atomic::{read_file, write_atomic};
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

pub fn parse_run_config(text: &str) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    let mut seen = HashSet::new();
    let mut offset = 0;
    for raw in text.split_inclusive('\n') {
        let at = offset;
        offset += raw.len();
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(at, format!("expected key=value, found {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            return Err(Error::parse(at, format!("duplicate key {key:?}")));
        }
        config.set(key, value).map_err(|e| Error::parse(at, e.to_string()))?;
    }
    config.validate()?;
    Ok(config)
}

/// Every key in declaration order, so that parsing gives back the same config.
pub fn serialize_run_config(config: &TrainConfig) -> String {
    config
        .to_pairs()
        .into_iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect()
}

pub fn load_run_config(path: &Path) -> Result<TrainConfig> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::parse(e.utf8_error().valid_up_to(), "config is not UTF-8"))?;
    parse_run_config(&text)
}

pub fn save_run_config(config: &TrainConfig, path: &Path) -> Result<()> {
    write_atomic(path, serialize_run_config(config).as_bytes())
}

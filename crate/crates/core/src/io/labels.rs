//! Human Janus/alignment labels: CSV rows `prompt_id,label` with label 0 or 1
//! and an optional `prompt_id,label` header.

use std::path::Path;

use crate::error::{Error, Result};

pub fn parse_labels(text: &str) -> Result<Vec<(String, bool)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let offset = e.position().map_or(0, |p| p.byte() as usize);
            Error::parse(offset, e.to_string())
        })?;
        let offset = record.position().map_or(0, |p| p.byte() as usize);
        if record.len() != 2 {
            return Err(Error::parse(offset, format!("expected 2 fields, found {}", record.len())));
        }
        if i == 0 && &record[0] == "prompt_id" && &record[1] == "label" {
            continue;
        }
        let label = match &record[1] {
            "0" => false,
            "1" => true,
            other => return Err(Error::parse(offset, format!("label {other:?} is not 0 or 1"))),
        };
        out.push((record[0].to_string(), label));
    }
    if out.is_empty() {
        return Err(Error::parse(0, "no labels"));
    }
    Ok(out)
}

pub fn load_labels(path: &Path) -> Result<Vec<(String, bool)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text)
}

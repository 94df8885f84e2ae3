//! Flat `key = value` text files used for configs, specs and manifests.

use std::fmt::Display;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KvError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("`{key}`: cannot parse {value:?}: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
}

/// One parsed entry with its 1-based source line.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse(text: &str) -> Result<Vec<Entry>, KvError> {
    let mut entries: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(KvError::Syntax { line: i + 1, text: raw.to_string() });
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(KvError::Syntax { line: i + 1, text: raw.to_string() });
        }
        if entries.iter().any(|e| e.key == key) {
            return Err(KvError::Duplicate { line: i + 1, key: key.to_string() });
        }
        entries.push(Entry { key: key.to_string(), value: value.trim().to_string(), line: i + 1 });
    }
    Ok(entries)
}

pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, KvError>
where
    T::Err: Display,
{
    value.parse().map_err(|e: T::Err| KvError::Value {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

/// Comma-separated list of values.
pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, KvError>
where
    T::Err: Display,
{
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_value(key, v.trim())).collect()
}

pub fn format_list<T: Display>(values: &[T]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

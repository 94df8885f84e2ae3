//! Metrics log: one record per line as space-separated `key:value` pairs in
//! the fixed order `epoch l_source l_align micro_f1 macro_f1 clamp_active
//! wall_ms`. F1 fields read `na` when the target has no labels.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub l_source: f64,
    pub l_align: f64,
    pub micro_f1: Option<f64>,
    pub macro_f1: Option<f64>,
    pub clamp_active: usize,
    pub wall_ms: u64,
}

pub const LOG_FIELDS: [&str; 7] = ["epoch", "l_source", "l_align", "micro_f1", "macro_f1", "clamp_active", "wall_ms"];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "na".to_string(), |x| x.to_string())
}

impl MetricsRecord {
    /// The same record with the wall-clock field zeroed, for comparing runs.
    pub fn without_timing(&self) -> Self {
        Self { wall_ms: 0, ..self.clone() }
    }

    pub fn to_line(&self) -> String {
        format!(
            "epoch:{} l_source:{} l_align:{} micro_f1:{} macro_f1:{} clamp_active:{} wall_ms:{}",
            self.epoch,
            self.l_source,
            self.l_align,
            opt(self.micro_f1),
            opt(self.macro_f1),
            self.clamp_active,
            self.wall_ms
        )
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.l_source,
            self.l_align,
            opt(self.micro_f1),
            opt(self.macro_f1),
            self.clamp_active,
            self.wall_ms
        )
    }

    /// Parses one log line; `line_no` only labels errors.
    pub fn parse_line(line: &str, line_no: usize) -> Result<Self> {
        let err = |message: String| Error::Format { line: line_no, message };
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != LOG_FIELDS.len() {
            return Err(err(format!("expected {} fields, found {}", LOG_FIELDS.len(), parts.len())));
        }
        let mut values = Vec::with_capacity(parts.len());
        for (part, key) in parts.iter().zip(LOG_FIELDS) {
            match part.split_once(':') {
                Some((k, v)) if k == key => values.push(v),
                _ => return Err(err(format!("expected `{key}:<value>`, found `{part}`"))),
            }
        }
        let num = |i: usize| values[i].parse::<f64>().map_err(|e| err(format!("{}: {e}", LOG_FIELDS[i])));
        let int = |i: usize| values[i].parse::<u64>().map_err(|e| err(format!("{}: {e}", LOG_FIELDS[i])));
        let f1 = |i: usize| if values[i] == "na" { Ok(None) } else { num(i).map(Some) };
        Ok(Self {
            epoch: int(0)? as usize,
            l_source: num(1)?,
            l_align: num(2)?,
            micro_f1: f1(3)?,
            macro_f1: f1(4)?,
            clamp_active: int(5)? as usize,
            wall_ms: int(6)?,
        })
    }
}

/// Parses a whole log; blank lines are skipped.
pub fn parse_log(text: &str) -> Result<Vec<MetricsRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| MetricsRecord::parse_line(l, i + 1))
        .collect()
}

pub fn format_log(records: &[MetricsRecord]) -> String {
    records.iter().map(|r| r.to_line() + "\n").collect()
}

pub fn csv_header() -> String {
    LOG_FIELDS.join(",")
}

/// Header plus one row per record.
pub fn to_csv(records: &[MetricsRecord]) -> String {
    let mut out = csv_header();
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

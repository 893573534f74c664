//! Line-delimited JSON metrics and plain-text tables.

use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use crate::CliError;

/// Records collected during a command and written in one atomic step.
#[derive(Debug, Default)]
pub struct Metrics {
    records: Vec<Value>,
}

impl Metrics {
    pub fn push(&mut self, command: &str, record: impl Serialize) {
        let mut v = serde_json::to_value(record).expect("metrics records serialize");
        if let Value::Object(map) = &mut v {
            map.insert("command".into(), json!(command));
        }
        self.records.push(v);
    }

    pub fn write(&self, path: Option<&Path>) -> Result<(), CliError> {
        let Some(path) = path else { return Ok(()) };
        let mut text = String::new();
        for r in &self.records {
            text.push_str(&r.to_string());
            text.push('\n');
        }
        dpqhd::container::write_atomic(path, text.as_bytes())?;
        Ok(())
    }
}

pub fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

/// Left-aligned first column, right-aligned rest.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let mut s = String::new();
        for (i, c) in cells.iter().enumerate() {
            if i == 0 {
                s.push_str(&format!("{:<w$}", c, w = width[0]));
            } else {
                s.push_str(&format!("  {:>w$}", c, w = width[i]));
            }
        }
        s.trim_end().to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    out.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * (cols - 1)));
    for r in rows {
        out.push('\n');
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

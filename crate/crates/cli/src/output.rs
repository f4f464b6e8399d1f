//! Deterministic report writers: RFC-4180 CSV with 17-significant-digit
//! floats and flat key/value JSON with sorted keys.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde_json::Value;

/// Formats a float with 17 significant digits so a round trip is bit-exact.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else {
        format!("{v:.16e}")
    }
}

/// Minimal CSV writer; fields are quoted only when they need to be.
pub struct CsvWriter {
    out: Vec<u8>,
    columns: usize,
}

impl CsvWriter {
    pub fn new(header: &[&str]) -> Self {
        let mut w = CsvWriter { out: Vec::new(), columns: header.len() };
        w.write_row(header.iter().map(|s| s.to_string()).collect::<Vec<_>>().as_slice());
        w
    }

    pub fn write_row<S: AsRef<str>>(&mut self, fields: &[S]) {
        assert_eq!(fields.len(), self.columns, "row width must match header");
        for (i, field) in fields.iter().enumerate() {
            if i > 0 {
                self.out.push(b',');
            }
            let f = field.as_ref();
            if f.contains(',') || f.contains('"') || f.contains('\n') {
                self.out.push(b'"');
                self.out.extend_from_slice(f.replace('"', "\"\"").as_bytes());
                self.out.push(b'"');
            } else {
                self.out.extend_from_slice(f.as_bytes());
            }
        }
        self.out.extend_from_slice(b"\r\n");
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)
            .with_context(|| format!("cannot create {}", path.display()))?;
        file.write_all(&self.out)?;
        Ok(())
    }
}

/// Flat key/value report; nested arrays only for per-level vectors. Keys are
/// emitted sorted, so the document is byte-stable.
#[derive(Default)]
pub struct Report {
    entries: BTreeMap<String, Value>,
}

impl Report {
    pub fn new() -> Self {
        Report::default()
    }

    pub fn put_f64(&mut self, key: &str, value: f64) {
        self.entries.insert(key.to_string(), json_f64(value));
    }

    pub fn put_u64(&mut self, key: &str, value: u64) {
        self.entries.insert(key.to_string(), Value::from(value));
    }

    pub fn put_bool(&mut self, key: &str, value: bool) {
        self.entries.insert(key.to_string(), Value::from(value));
    }

    pub fn put_str(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), Value::from(value));
    }

    pub fn put_vec(&mut self, key: &str, values: &[f64]) {
        self.entries
            .insert(key.to_string(), Value::from(values.iter().map(|&v| json_f64(v)).collect::<Vec<_>>()));
    }

    pub fn put_opt(&mut self, key: &str, value: Option<f64>) {
        match value {
            Some(v) => self.put_f64(key, v),
            None => {
                self.entries.insert(key.to_string(), Value::Null);
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let map: serde_json::Map<String, Value> =
            self.entries.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        let mut text = serde_json::to_string_pretty(&Value::Object(map))?;
        text.push('\n');
        std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(())
    }
}

fn json_f64(v: f64) -> Value {
    if v.is_finite() {
        Value::from(v)
    } else {
        Value::Null
    }
}

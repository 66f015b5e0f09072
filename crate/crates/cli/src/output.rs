//! Result files. Numbers are written in Rust's shortest round-trip form, so
//! equal runs produce equal bytes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use dirvr::stats::{interquartile, median};
use serde::Serialize;

use crate::config::RunManifest;

/// Writes to `out`, or to stdout when no path is given.
pub fn write_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

pub fn to_json(value: &impl Serialize) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("output serializes");
    text.push('\n');
    text
}

/// One long-format result row.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub instance_id: String,
    pub n: f64,
    pub quantity: String,
    pub value: f64,
    pub reference_policy: String,
}

impl Row {
    pub fn new(instance_id: &str, n: f64, quantity: impl Into<String>, value: f64, reference_policy: &str) -> Self {
        Self {
            instance_id: instance_id.into(),
            n,
            quantity: quantity.into(),
            value,
            reference_policy: reference_policy.into(),
        }
    }
}

/// CSV text: a `# manifest` comment line, the header, then the rows.
pub fn rows_to_csv(manifest: &RunManifest, rows: &[Row]) -> Result<String> {
    let mut buf = format!("# manifest {}\n", serde_json::to_string(manifest)?).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["instance_id", "n", "quantity", "value", "reference_policy"])?;
        for r in rows {
            w.write_record([
                r.instance_id.as_str(),
                &r.n.to_string(),
                &r.quantity,
                &r.value.to_string(),
                &r.reference_policy,
            ])?;
        }
        w.flush()?;
    }
    Ok(String::from_utf8(buf)?)
}

/// Median and quartiles of one quantity at one `n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub quantity: String,
    pub n: f64,
    pub count: usize,
    #[serde(with = "dirvr::serde_ext::ext_f64")]
    pub median: f64,
    #[serde(with = "dirvr::serde_ext::ext_f64")]
    pub q1: f64,
    #[serde(with = "dirvr::serde_ext::ext_f64")]
    pub q3: f64,
}

/// Groups rows by quantity and `n`, ignoring NaN values.
pub fn summarize_rows(rows: &[Row]) -> Vec<CellSummary> {
    let mut groups: BTreeMap<(String, u64), Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| !r.value.is_nan()) {
        // n is non-negative, so its bit pattern orders like the value
        groups.entry((r.quantity.clone(), r.n.to_bits())).or_default().push(r.value);
    }
    groups
        .into_iter()
        .map(|((quantity, n), values)| {
            let (q1, q3) = interquartile(&values);
            CellSummary {
                quantity,
                n: f64::from_bits(n),
                count: values.len(),
                median: median(&values),
                q1,
                q3,
            }
        })
        .collect()
}

//! Group-wise quantile summaries of long-form CSV files.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::error::{McsaError, Result};

use super::records::format_float;

/// Linear-interpolation quantile of sorted data, `p ∈ [0, 1]`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Group key component ordered numerically when it parses as a number.
#[derive(Debug, Clone)]
struct KeyPart(String);

impl KeyPart {
    fn number(&self) -> Option<f64> {
        self.0.parse::<f64>().ok().filter(|v| !v.is_nan())
    }
}

impl Ord for KeyPart {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self.number(), other.number()) {
            (Some(a), Some(b)) => a.total_cmp(&b).then_with(|| self.0.cmp(&other.0)),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => self.0.cmp(&other.0),
        }
    }
}

impl PartialOrd for KeyPart {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for KeyPart {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for KeyPart {}

/// Column name used for quantile `p` in the output.
pub fn quantile_column(p: f64) -> String {
    format!("q{p}")
}

/// Reads a CSV with a header, groups rows by `group` columns and writes
/// `group..., count, q<p>...` of the `value` column.
///
/// Rows with an empty or non-numeric `value` are skipped; groups left without
/// values are omitted. Output rows are sorted by group key, numerically where
/// possible.
pub fn aggregate_quantiles(input: &str, group: &[&str], value: &str, quantiles: &[f64]) -> Result<String> {
    if quantiles.is_empty() {
        return Err(McsaError::invalid("at least one quantile is required"));
    }
    if let Some(p) = quantiles.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(McsaError::invalid(format!("quantile {p} outside [0, 1]")));
    }
    let mut reader = csv::ReaderBuilder::new().from_reader(input.as_bytes());
    let header = reader.headers().map_err(|e| McsaError::Csv(e.to_string()))?.clone();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| McsaError::Csv(format!("missing column `{name}`")))
    };
    let group_idx = group.iter().map(|g| column(g)).collect::<Result<Vec<_>>>()?;
    let value_idx = column(value)?;

    let mut groups: BTreeMap<Vec<KeyPart>, Vec<f64>> = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| McsaError::Csv(e.to_string()))?;
        let key = group_idx
            .iter()
            .map(|&i| KeyPart(row.get(i).unwrap_or("").to_string()))
            .collect::<Vec<_>>();
        let entry = groups.entry(key).or_default();
        if let Some(v) = row
            .get(value_idx)
            .and_then(|s| s.parse::<f64>().ok())
            .filter(|v| !v.is_nan())
        {
            entry.push(v);
        }
    }

    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let mut out_header: Vec<String> = group.iter().map(|g| g.to_string()).collect();
    out_header.push("count".into());
    out_header.extend(quantiles.iter().map(|&p| quantile_column(p)));
    w.write_record(&out_header).map_err(|e| McsaError::Csv(e.to_string()))?;
    for (key, mut values) in groups {
        if values.is_empty() {
            continue;
        }
        values.sort_by(f64::total_cmp);
        let mut row: Vec<String> = key.into_iter().map(|k| k.0).collect();
        row.push(values.len().to_string());
        row.extend(quantiles.iter().map(|&p| format_float(quantile_sorted(&values, p))));
        w.write_record(&row).map_err(|e| McsaError::Csv(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| McsaError::Csv(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| McsaError::Csv(e.to_string()))
}

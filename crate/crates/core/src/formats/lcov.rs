//! LCOV tracefile reader. Only `SF`, `DA` and `end_of_record` matter; every
//! `DA` line is instrumented and covered when its hit count is non-zero.
//! Repeated `DA` entries for a line keep the maximum count.

use std::collections::BTreeMap;

use super::{CoverageStore, FileLineCoverage, FormatError};

pub fn parse_lcov(text: &str) -> Result<Vec<FileLineCoverage>, FormatError> {
    let mut store = CoverageStore::new();
    let mut current: Option<(String, BTreeMap<u32, u64>)> = None;

    let flush = |store: &mut CoverageStore, rec: Option<(String, BTreeMap<u32, u64>)>| {
        if let Some((id, hits)) = rec {
            let mut file = FileLineCoverage::empty(id);
            for (line, n) in hits {
                file.record(line, n > 0);
            }
            store.merge_file(&file);
        }
    };

    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        if line == "end_of_record" {
            flush(&mut store, current.take());
        } else if let Some(path) = line.strip_prefix("SF:") {
            flush(&mut store, current.take());
            current = Some((path.to_string(), BTreeMap::new()));
        } else if let Some(rest) = line.strip_prefix("DA:") {
            let Some((_, hits)) = current.as_mut() else {
                return Err(FormatError::MalformedDocument(format!(
                    "line {lineno}: DA record before SF"
                )));
            };
            let mut parts = rest.split(',');
            let bad = || FormatError::MalformedDocument(format!("line {lineno}: bad DA record `{line}`"));
            let nr: u32 = parts.next().and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
            // Some producers emit fractional or negative counts; only
            // zero versus non-zero matters here.
            let count: f64 = parts.next().and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
            if nr == 0 || !count.is_finite() {
                return Err(bad());
            }
            let count = if count > 0.0 { count.ceil() as u64 } else { 0 };
            let slot = hits.entry(nr).or_insert(0);
            *slot = (*slot).max(count);
        }
    }
    flush(&mut store, current.take());
    Ok(store.to_vec())
}

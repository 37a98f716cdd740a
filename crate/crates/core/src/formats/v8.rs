//! DevTools precise-coverage JSON to line coverage.
//!
//! Offsets are UTF-16 code units into the script source, as reported by V8.
//! Ranges are applied in `(startOffset asc, endOffset desc)` order, each one
//! overwriting the counts of the offsets it spans, so a nested block's count
//! replaces its enclosing function's count. A line is instrumented when any
//! range touches one of its offsets (its trailing newline included) and
//! covered when any of those offsets ends up with a non-zero count.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{CoverageStore, FileLineCoverage, FormatError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CoverageRange {
    pub start_offset: u32,
    pub end_offset: u32,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FunctionCoverage {
    #[serde(default)]
    pub function_name: String,
    pub ranges: Vec<CoverageRange>,
    #[serde(default)]
    pub is_block_coverage: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScriptCoverage {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script_id: Option<String>,
    pub url: String,
    pub functions: Vec<FunctionCoverage>,
}

#[derive(Debug, Deserialize)]
struct PreciseCoverage {
    result: Vec<ScriptCoverage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct V8Parse {
    pub files: Vec<FileLineCoverage>,
    /// Urls whose source text was not supplied; those scripts are skipped.
    pub missing_sources: Vec<String>,
}

/// Maps UTF-16 offsets to 1-based line numbers.
#[derive(Debug, Clone)]
pub struct LineIndex {
    starts: Vec<u32>,
    len: u32,
}

impl LineIndex {
    pub fn new(source: &str) -> Self {
        let mut starts = vec![0u32];
        let mut pos = 0u32;
        for ch in source.chars() {
            pos += ch.len_utf16() as u32;
            if ch == '\n' {
                starts.push(pos);
            }
        }
        LineIndex { starts, len: pos }
    }

    /// Source length in UTF-16 units.
    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn line_of(&self, offset: u32) -> u32 {
        self.starts.partition_point(|&s| s <= offset) as u32
    }

    pub fn line_start(&self, line: u32) -> Option<u32> {
        self.starts.get(line.checked_sub(1)? as usize).copied()
    }
}

/// Disjoint painted segments: start → (end, count).
fn paint(ranges: &[CoverageRange], len: u32) -> BTreeMap<u32, (u32, u64)> {
    let mut sorted: Vec<CoverageRange> = ranges
        .iter()
        .map(|r| CoverageRange {
            end_offset: r.end_offset.min(len),
            ..*r
        })
        .filter(|r| r.start_offset < r.end_offset)
        .collect();
    // Stable: identical ranges keep input order, so the later one wins.
    sorted.sort_by(|a, b| {
        a.start_offset
            .cmp(&b.start_offset)
            .then(b.end_offset.cmp(&a.end_offset))
    });

    let mut segs: BTreeMap<u32, (u32, u64)> = BTreeMap::new();
    for r in sorted {
        let (s, e) = (r.start_offset, r.end_offset);
        let mut hit: Vec<u32> = segs.range(s..e).map(|(k, _)| *k).collect();
        if let Some((&k, &(end, _))) = segs.range(..s).next_back() {
            if end > s {
                hit.push(k);
            }
        }
        for k in hit {
            let (end, count) = segs.remove(&k).expect("segment present");
            if k < s {
                segs.insert(k, (s, count));
            }
            if end > e {
                segs.insert(e, (end, count));
            }
        }
        segs.insert(s, (e, r.count));
    }
    segs
}

/// Line coverage of one script given its source text and function ranges.
pub fn script_line_coverage(url: &str, source: &str, functions: &[FunctionCoverage]) -> FileLineCoverage {
    let index = LineIndex::new(source);
    let ranges: Vec<CoverageRange> = functions.iter().flat_map(|f| f.ranges.iter().copied()).collect();
    let mut file = FileLineCoverage::empty(url);
    for (start, (end, count)) in paint(&ranges, index.len()) {
        for line in index.line_of(start)..=index.line_of(end - 1) {
            file.record(line, count > 0);
        }
    }
    file
}

/// Converts a `{"result":[...]}` precise-coverage document. `sources` maps
/// script url to source text.
pub fn parse_v8_coverage(coverage_json: &str, sources: &HashMap<String, String>) -> Result<V8Parse, FormatError> {
    let doc: PreciseCoverage =
        serde_json::from_str(coverage_json).map_err(|e| FormatError::MalformedDocument(e.to_string()))?;
    Ok(convert_scripts(&doc.result, |url| sources.get(url).map(String::as_str)))
}

pub(crate) fn convert_scripts<'s>(scripts: &[ScriptCoverage], source_of: impl Fn(&str) -> Option<&'s str>) -> V8Parse {
    let mut store = CoverageStore::new();
    let mut missing = Vec::new();
    for script in scripts {
        match source_of(&script.url) {
            Some(src) => store.merge_file(&script_line_coverage(&script.url, src, &script.functions)),
            None => {
                tracing::warn!(url = %script.url, "no source for script; skipped");
                missing.push(script.url.clone());
            }
        }
    }
    V8Parse {
        files: store.to_vec(),
        missing_sources: missing,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn range(s: u32, e: u32, c: u64) -> CoverageRange {
        CoverageRange {
            start_offset: s,
            end_offset: e,
            count: c,
        }
    }

    fn func(ranges: Vec<CoverageRange>) -> FunctionCoverage {
        FunctionCoverage {
            function_name: String::new(),
            ranges,
            is_block_coverage: true,
        }
    }

    #[test]
    fn two_line_example() {
        let src = "let a=1;\nfoo();\n";
        let idx = LineIndex::new(src);
        assert_eq!((idx.line_start(1), idx.line_start(2)), (Some(0), Some(9)));
        let f = script_line_coverage("s.js", src, &[func(vec![range(0, 8, 1), range(9, 15, 0)])]);
        assert_eq!(f.instrumented().iter().copied().collect::<Vec<_>>(), [1, 2]);
        assert_eq!(f.covered().iter().copied().collect::<Vec<_>>(), [1]);
        assert_eq!(f.ratio().percent, 50.0);
    }

    #[test]
    fn whole_script_range() {
        let src = "a();\nb();\nc();\n";
        let f = script_line_coverage("s.js", src, &[func(vec![range(0, src.len() as u32, 1)])]);
        assert_eq!(f.covered().len(), 3);
        assert_eq!(f.instrumented().len(), 3);
    }

    #[test]
    fn nested_zero_block_overrides_parent() {
        let src = "function f() {\n  if (x) {\n    y();\n  }\n}\n";
        // Outer function executed once; the `if` body never ran.
        let body_start = src.find("    y").unwrap() as u32;
        let body_end = src.find("  }").unwrap() as u32;
        let f = script_line_coverage(
            "s.js",
            src,
            &[func(vec![
                range(0, src.len() as u32, 1),
                range(body_start, body_end, 0),
            ])],
        );
        assert_eq!(f.covered().iter().copied().collect::<Vec<_>>(), [1, 2, 4, 5]);
        assert_eq!(f.instrumented().len(), 5);
    }

    #[test]
    fn utf16_offsets() {
        // "é" is one UTF-16 unit, "😀" is two.
        let src = "é😀\nx\n";
        let idx = LineIndex::new(src);
        assert_eq!(idx.line_start(2), Some(4));
        let f = script_line_coverage("s.js", src, &[func(vec![range(4, 5, 1)])]);
        assert_eq!(f.covered().iter().copied().collect::<Vec<_>>(), [2]);
        assert_eq!(f.instrumented().iter().copied().collect::<Vec<_>>(), [2]);
    }

    #[test]
    fn ranges_past_end_are_clamped() {
        let f = script_line_coverage("s.js", "a\n", &[func(vec![range(0, 999, 2), range(50, 60, 1)])]);
        assert_eq!(f.covered().iter().copied().collect::<Vec<_>>(), [1]);
    }

    #[test]
    fn document_with_missing_source() {
        let doc = r#"{"result":[
            {"scriptId":"1","url":"http://x/a.js","functions":[{"functionName":"","ranges":[{"startOffset":0,"endOffset":4,"count":1}],"isBlockCoverage":false}]},
            {"scriptId":"2","url":"http://x/b.js","functions":[]}]}"#;
        let sources = HashMap::from([("http://x/a.js".to_string(), "a();\n".to_string())]);
        let out = parse_v8_coverage(doc, &sources).unwrap();
        assert_eq!(out.files.len(), 1);
        assert_eq!(out.files[0].file_id(), "http://x/a.js");
        assert_eq!(out.missing_sources, ["http://x/b.js"]);
        assert!(matches!(
            parse_v8_coverage("{\"result\": 3}", &sources),
            Err(FormatError::MalformedDocument(_))
        ));
    }
}

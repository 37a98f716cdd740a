use std::collections::{BTreeSet, HashMap};

use mbtcover_core::formats::parse_v8_coverage;
use mbtcover_core::formats::v8::{script_line_coverage, CoverageRange, FunctionCoverage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

const ALPHABET: &[char] = &['a', 'b', 'x', '=', ';', '(', ')', ' ', '{', '}', 'é', '😀'];

fn random_script(rng: &mut ChaCha8Rng) -> String {
    let lines = rng.random_range(1..=20);
    let mut s = String::new();
    for i in 0..lines {
        for _ in 0..rng.random_range(0..12) {
            s.push(ALPHABET[rng.random_range(0..ALPHABET.len())]);
        }
        if i + 1 < lines || rng.random_bool(0.5) {
            s.push('\n');
        }
    }
    s
}

/// One enclosing range, then nested and overlapping ones, occasionally
/// running past the end of the script.
fn random_ranges(rng: &mut ChaCha8Rng, len: u32) -> Vec<CoverageRange> {
    let mut out = vec![CoverageRange {
        start_offset: 0,
        end_offset: len,
        count: rng.random_range(0..3),
    }];
    let mut parents = vec![(0u32, len)];
    for _ in 0..rng.random_range(0..8) {
        let (ps, pe) = parents[rng.random_range(0..parents.len())];
        if pe <= ps {
            continue;
        }
        let s = rng.random_range(ps..pe);
        let overhang = u32::from(rng.random_bool(0.1)) * 3;
        let e = rng.random_range(s + 1..=pe + overhang);
        out.push(CoverageRange {
            start_offset: s,
            end_offset: e,
            count: rng.random_range(0..4),
        });
        parents.push((s, e.min(len)));
    }
    out
}

/// Paints every UTF-16 unit in (start asc, end desc) order, then folds per line.
fn oracle(source: &str, ranges: &[CoverageRange]) -> (BTreeSet<u32>, BTreeSet<u32>) {
    let mut line_of_unit = Vec::new();
    let mut line = 1u32;
    for ch in source.chars() {
        for _ in 0..ch.len_utf16() {
            line_of_unit.push(line);
        }
        if ch == '\n' {
            line += 1;
        }
    }
    let mut counts: Vec<Option<u64>> = vec![None; line_of_unit.len()];
    let mut order: Vec<&CoverageRange> = ranges.iter().collect();
    order.sort_by(|a, b| {
        a.start_offset
            .cmp(&b.start_offset)
            .then(b.end_offset.cmp(&a.end_offset))
    });
    for r in order {
        for unit in r.start_offset as usize..(r.end_offset as usize).min(counts.len()) {
            counts[unit] = Some(r.count);
        }
    }
    let mut inst = BTreeSet::new();
    let mut cov = BTreeSet::new();
    for (unit, c) in counts.iter().enumerate() {
        if let Some(c) = c {
            inst.insert(line_of_unit[unit]);
            if *c > 0 {
                cov.insert(line_of_unit[unit]);
            }
        }
    }
    (inst, cov)
}

#[test]
fn matches_per_character_oracle_on_random_scripts() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut mismatches = 0;
    for case in 0..500 {
        let source = random_script(&mut rng);
        let len = source.encode_utf16().count() as u32;
        let ranges = random_ranges(&mut rng, len);
        let functions = vec![FunctionCoverage {
            function_name: String::new(),
            ranges: ranges.clone(),
            is_block_coverage: true,
        }];
        let got = script_line_coverage("s.js", &source, &functions);
        let (inst, cov) = oracle(&source, &ranges);
        if got.instrumented() != &inst || got.covered() != &cov {
            mismatches += 1;
            eprintln!("case {case}: source {source:?} ranges {ranges:?}");
        }
        assert!(got.covered().is_subset(got.instrumented()));
    }
    assert_eq!(mismatches, 0);
}

#[test]
fn ranges_split_across_functions_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let source = random_script(&mut rng);
        let len = source.encode_utf16().count() as u32;
        let ranges = random_ranges(&mut rng, len);
        let functions: Vec<FunctionCoverage> = ranges
            .chunks(2)
            .map(|c| FunctionCoverage {
                function_name: "f".into(),
                ranges: c.to_vec(),
                is_block_coverage: false,
            })
            .collect();
        let got = script_line_coverage("s.js", &source, &functions);
        let (inst, cov) = oracle(&source, &ranges);
        assert_eq!((got.instrumented(), got.covered()), (&inst, &cov));
    }
}

#[test]
fn hand_mapped_two_line_script() {
    let doc = json!({"result": [{"url": "https://h/app.js", "functions": [{"ranges": [
        {"startOffset": 0, "endOffset": 8, "count": 1},
        {"startOffset": 9, "endOffset": 15, "count": 0}
    ]}]}]});
    let sources = HashMap::from([("https://h/app.js".to_string(), "let a=1;\nfoo();\n".to_string())]);
    let parsed = parse_v8_coverage(&doc.to_string(), &sources).unwrap();
    assert_eq!(parsed.files.len(), 1);
    let f = &parsed.files[0];
    assert_eq!(f.instrumented().iter().copied().collect::<Vec<_>>(), [1, 2]);
    assert_eq!(f.covered().iter().copied().collect::<Vec<_>>(), [1]);
    assert!((f.ratio().percent - 50.0).abs() < 1e-9);
}

#[test]
fn whole_script_range_covers_every_line() {
    let src = "a();\nb();\nc();";
    let f = script_line_coverage(
        "s.js",
        src,
        &[FunctionCoverage {
            function_name: String::new(),
            ranges: vec![CoverageRange {
                start_offset: 0,
                end_offset: src.len() as u32,
                count: 1,
            }],
            is_block_coverage: false,
        }],
    );
    assert_eq!(f.covered().len(), 3);
    assert_eq!(f.instrumented().len(), 3);
}

#[test]
fn missing_source_is_skipped_not_fatal() {
    let doc = json!({"result": [
        {"url": "a.js", "functions": [{"ranges": [{"startOffset": 0, "endOffset": 1, "count": 1}]}]},
        {"url": "b.js", "functions": [{"ranges": [{"startOffset": 0, "endOffset": 1, "count": 1}]}]}
    ]});
    let sources = HashMap::from([("a.js".to_string(), "x\n".to_string())]);
    let parsed = parse_v8_coverage(&doc.to_string(), &sources).unwrap();
    assert_eq!(parsed.files.len(), 1);
    assert_eq!(parsed.missing_sources, ["b.js"]);
}

#[test]
fn malformed_document_is_rejected() {
    assert!(parse_v8_coverage("{\"result\": 3}", &HashMap::new()).is_err());
    assert!(parse_v8_coverage("not json", &HashMap::new()).is_err());
}

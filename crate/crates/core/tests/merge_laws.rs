use std::collections::{BTreeMap, BTreeSet};

use mbtcover_core::formats::{merge_coverage, ratio, FileLineCoverage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const IDS: &[&str] = &["a.js", "b.js", "app/Auth.java", "app/Db.java"];

fn random_file(rng: &mut ChaCha8Rng, id: &str) -> FileLineCoverage {
    let n = rng.random_range(0..15);
    let inst: BTreeSet<u32> = (0..n).map(|_| rng.random_range(1..30)).collect();
    let cov: Vec<u32> = inst.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
    FileLineCoverage::new(id, inst, cov).unwrap()
}

fn random_list(rng: &mut ChaCha8Rng) -> Vec<FileLineCoverage> {
    let mut out = Vec::new();
    for id in IDS {
        if rng.random_bool(0.6) {
            out.push(random_file(rng, id));
        }
    }
    out
}

type Sets = BTreeMap<String, (BTreeSet<u32>, BTreeSet<u32>)>;

fn as_sets(files: &[FileLineCoverage]) -> Sets {
    let mut out = Sets::new();
    for f in files {
        let e = out.entry(f.file_id().to_string()).or_default();
        e.0.extend(f.instrumented());
        e.1.extend(f.covered());
    }
    out
}

fn union(a: &Sets, b: &Sets) -> Sets {
    let mut out = a.clone();
    for (id, (i, c)) in b {
        let e = out.entry(id.clone()).or_default();
        e.0.extend(i);
        e.1.extend(c);
    }
    out
}

#[test]
fn set_union_laws_hold() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut violations = 0;
    for _ in 0..1000 {
        let (a, b, c) = (random_list(&mut rng), random_list(&mut rng), random_list(&mut rng));
        let ab = merge_coverage(&a, &b);
        if ab != merge_coverage(&b, &a) {
            violations += 1;
        }
        if as_sets(&merge_coverage(&a, &a)) != as_sets(&a) {
            violations += 1;
        }
        if merge_coverage(&ab, &c) != merge_coverage(&a, &merge_coverage(&b, &c)) {
            violations += 1;
        }
        if as_sets(&ab) != union(&as_sets(&a), &as_sets(&b)) {
            violations += 1;
        }
        for f in &ab {
            if !f.covered().is_subset(f.instrumented()) {
                violations += 1;
            }
        }
        let (ra, rab) = (ratio(&a), ratio(&ab));
        if rab.covered < ra.covered || rab.total < ra.total {
            violations += 1;
        }
    }
    assert_eq!(violations, 0);
}

#[test]
fn merge_with_empty_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let a = merge_coverage(&random_list(&mut rng), &[]);
        assert_eq!(merge_coverage(&a, &[]), a);
        assert_eq!(merge_coverage(&[], &a), a);
    }
}

#[test]
fn hand_worked_union() {
    let a = [FileLineCoverage::new("f", [1, 2], [1]).unwrap()];
    let b = [FileLineCoverage::new("f", [2, 3], [2]).unwrap()];
    let m = merge_coverage(&a, &b);
    assert_eq!(m.len(), 1);
    assert_eq!(m[0].instrumented().iter().copied().collect::<Vec<_>>(), [1, 2, 3]);
    assert_eq!(m[0].covered().iter().copied().collect::<Vec<_>>(), [1, 2]);
}

#[test]
fn ratio_edge_cases() {
    let r = ratio(&[]);
    assert!(r.no_data);
    assert_eq!(r.percent, 0.0);
    let two_of_three = FileLineCoverage::new("f", [1, 2, 3], [1, 3]).unwrap();
    assert!((ratio([&two_of_three]).percent - 66.6667).abs() < 0.01);
    let all = FileLineCoverage::new("g", [4, 5], [4, 5]).unwrap();
    assert_eq!(ratio([&all]).percent, 100.0);
}

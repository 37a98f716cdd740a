use std::collections::HashMap;

use mbtcover_core::aggregation::parse_frontend_payload;
use mbtcover_core::formats::{parse_jacoco_xml, ratio};
use mbtcover_core::generator::{gen_suite, GenParams};
use mbtcover_core::sim::{SimAction, SimConfig, SimState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn edge(name: &str) -> SimAction {
    SimAction::Edge {
        model: "m".into(),
        element: "e".into(),
        name: name.into(),
    }
}

/// Random actions against a suite-derived config; the payloads must report
/// exactly min(visits * per_visit, line_count) covered lines per script and
/// min(actions * per_action, total) on the back end.
#[test]
fn payloads_agree_with_accrual_arithmetic() {
    let suite = gen_suite(GenParams {
        models: 5,
        vertices: 40,
        edges: 60,
        seed: 4,
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..4 {
        let cfg = SimConfig::for_suite(&suite, seed);
        let urls: Vec<String> = cfg.pages.iter().map(|p| p.url.clone()).collect();
        let mut state = SimState::new(cfg.clone()).unwrap();
        let mut visits: HashMap<String, u64> = HashMap::new();
        let mut page = 0usize;
        let mut actions = 0u64;
        for _ in 0..rng.random_range(20..60) {
            if rng.random_bool(0.2) {
                page = rng.random_range(0..urls.len());
                state.apply(&edge(&format!("goto:{}", urls[page]))).unwrap();
            } else {
                state.apply(&edge("act")).unwrap();
                for s in &cfg.pages[page].scripts {
                    *visits.entry(s.url.clone()).or_default() += u64::from(s.lines_covered_per_visit);
                }
            }
            actions += 1;

            let (payload_page, files) = parse_frontend_payload(&state.frontend_json()).unwrap();
            assert_eq!(payload_page, urls[page]);
            for (f, sc) in files.iter().zip(&cfg.pages[page].scripts) {
                assert_eq!(f.file_id(), sc.url);
                assert_eq!(f.instrumented().len() as u32, sc.line_count);
                let expect = visits.get(&sc.url).copied().unwrap_or(0).min(u64::from(sc.line_count));
                assert_eq!(f.covered().len() as u64, expect);
            }
            let be = ratio(&parse_jacoco_xml(&state.backend_xml()).unwrap());
            let b = &cfg.backend;
            assert_eq!(be.total, u64::from(b.total_lines));
            assert_eq!(
                be.covered,
                (actions * u64::from(b.lines_covered_per_action)).min(u64::from(b.total_lines))
            );
            assert_eq!(be.covered, state.backend_covered_count());
        }
    }
}

#[test]
fn same_seed_same_payloads() {
    let run = |seed| {
        let mut cfg = SimConfig::shape();
        cfg.seed = seed;
        let mut s = SimState::new(cfg).unwrap();
        let mut out = Vec::new();
        for name in ["act", "act", "goto:/b", "act", "goto:/a", "act"] {
            s.apply(&edge(name)).unwrap();
            out.push((s.frontend_json(), s.backend_xml()));
        }
        out
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3), run(4));
}

//! Random, strongly connected test suites of an exact size.
//!
//! Each model gets an entry vertex `v0`, a cycle through its core vertices,
//! and an exit vertex with no outgoing edges. The exit of model `i` shares a
//! state with the entry of model `i + 1` (wrapping around), so the walker can
//! always move on. Extra edges connect random core vertices to random
//! targets within the same model. The first edge out of each entry is a
//! `goto:` navigation.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{Edge, ModelError, ModelSuite, TestModel, Vertex};

pub const REQUIREMENT_TAG_SHARE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenParams {
    pub models: usize,
    pub vertices: usize,
    pub edges: usize,
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("cannot generate: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn min_edges(n: usize) -> usize {
    if n == 2 {
        1
    } else {
        n
    }
}

pub fn gen_suite(p: GenParams) -> Result<ModelSuite, GenError> {
    if p.models == 0 {
        return Err(GenError::Infeasible("at least one model is required".into()));
    }
    if p.vertices < 2 * p.models {
        return Err(GenError::Infeasible(format!(
            "{} vertices cannot hold {} models of at least 2 vertices",
            p.vertices, p.models
        )));
    }
    let sizes: Vec<usize> = (0..p.models)
        .map(|i| p.vertices / p.models + usize::from(i < p.vertices % p.models))
        .collect();
    let floor: usize = sizes.iter().copied().map(min_edges).sum();
    if p.edges < floor {
        return Err(GenError::Infeasible(format!(
            "{} edges are fewer than the {floor} needed to connect {} vertices",
            p.edges, p.vertices
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut extra = vec![0usize; p.models];
    for _ in 0..p.edges - floor {
        extra[rng.random_range(0..p.models)] += 1;
    }

    let pool = ((p.vertices + p.edges) as f64 * REQUIREMENT_TAG_SHARE / 3.0)
        .ceil()
        .max(1.0) as usize;
    let mut used_tags = BTreeSet::new();
    let mut tag = |rng: &mut ChaCha8Rng| -> BTreeSet<String> {
        if rng.random_bool(REQUIREMENT_TAG_SHARE) {
            let t = format!("REQ-{:03}", rng.random_range(1..=pool));
            used_tags.insert(t.clone());
            BTreeSet::from([t])
        } else {
            BTreeSet::new()
        }
    };

    let mut parts = Vec::with_capacity(p.models);
    for (i, &n) in sizes.iter().enumerate() {
        let exit = n - 1;
        let vertices: Vec<Vertex> = (0..n)
            .map(|j| Vertex {
                id: format!("v{j}"),
                name: format!("M{i}State{j}"),
                requirement_tags: tag(&mut rng),
                shared_state: if j == 0 {
                    Some(format!("S{i}"))
                } else if j == exit {
                    Some(format!("S{}", (i + 1) % p.models))
                } else {
                    None
                },
            })
            .collect();

        let mut pairs: Vec<(usize, usize)> = Vec::new();
        if n == 2 {
            pairs.push((0, 1));
        } else {
            // Core cycle v0 → v1 → … → v(n-2) → v0, then one edge out.
            for j in 0..exit {
                pairs.push((j, (j + 1) % exit));
            }
            pairs.push((rng.random_range(0..exit), exit));
        }
        for _ in 0..extra[i] {
            pairs.push((rng.random_range(0..exit), rng.random_range(0..n)));
        }
        let edges: Vec<Edge> = pairs
            .into_iter()
            .enumerate()
            .map(|(k, (s, t))| Edge {
                id: format!("e{k}"),
                name: if k == 0 {
                    format!("goto:/m{i}")
                } else {
                    format!("M{i}Action{k}")
                },
                source_vertex_id: format!("v{s}"),
                target_vertex_id: format!("v{t}"),
                requirement_tags: tag(&mut rng),
                guard: None,
                actions: Vec::new(),
            })
            .collect();
        parts.push((vertices, edges));
    }

    // Guarantee at least one requirement so the ratio is defined.
    if used_tags.is_empty() {
        parts[0].0[0].requirement_tags.insert("REQ-001".into());
    }
    let models = parts
        .into_iter()
        .enumerate()
        .map(|(i, (vertices, edges))| {
            TestModel::new(
                format!("m{i:02}"),
                format!("Model {i}"),
                "edge_coverage(100)",
                Some("v0".into()),
                vertices,
                edges,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ModelSuite::new(models, "")?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{suite_stats, validate_suite, Severity};

    #[test]
    fn exact_counts() {
        let suite = gen_suite(GenParams {
            models: 18,
            vertices: 177,
            edges: 260,
            seed: 7,
        })
        .unwrap();
        let s = suite_stats(&suite);
        assert_eq!((s.model_count, s.vertex_count, s.edge_count), (18, 177, 260));
        assert!(s.requirement_count > 0);
        assert!(validate_suite(&suite).iter().all(|d| d.severity != Severity::Error));
    }

    #[test]
    fn tag_share_near_thirty_percent() {
        let suite = gen_suite(GenParams {
            models: 18,
            vertices: 177,
            edges: 260,
            seed: 7,
        })
        .unwrap();
        let tagged: usize = suite
            .models()
            .iter()
            .map(|m| {
                m.vertices().iter().filter(|v| !v.requirement_tags.is_empty()).count()
                    + m.edges().iter().filter(|e| !e.requirement_tags.is_empty()).count()
            })
            .sum();
        let share = tagged as f64 / 437.0;
        assert!((0.22..0.38).contains(&share), "{share}");
    }

    #[test]
    fn same_seed_same_suite() {
        let p = GenParams {
            models: 4,
            vertices: 30,
            edges: 45,
            seed: 11,
        };
        assert_eq!(gen_suite(p).unwrap().to_json(), gen_suite(p).unwrap().to_json());
        let q = GenParams { seed: 12, ..p };
        assert_ne!(gen_suite(p).unwrap().to_json(), gen_suite(q).unwrap().to_json());
    }

    #[test]
    fn every_vertex_reachable_inside_its_model() {
        let suite = gen_suite(GenParams {
            models: 5,
            vertices: 23,
            edges: 30,
            seed: 3,
        })
        .unwrap();
        for m in suite.models() {
            assert_eq!(m.reachable_from(0).len(), m.vertices().len());
        }
    }

    #[test]
    fn minimal_and_infeasible() {
        let s = gen_suite(GenParams {
            models: 3,
            vertices: 6,
            edges: 3,
            seed: 1,
        })
        .unwrap();
        assert_eq!(suite_stats(&s).edge_count, 3);
        assert!(gen_suite(GenParams {
            models: 3,
            vertices: 5,
            edges: 10,
            seed: 1
        })
        .is_err());
        assert!(gen_suite(GenParams {
            models: 2,
            vertices: 10,
            edges: 9,
            seed: 1
        })
        .is_err());
        assert!(gen_suite(GenParams {
            models: 0,
            vertices: 10,
            edges: 9,
            seed: 1
        })
        .is_err());
    }
}

mod common;

use std::collections::BTreeSet;

use pmkg::eval::compute_metrics;
use pmkg::kg::synthetic::SyntheticSpec;
use pmkg::kg::{generate_synthetic, Direction, EntityId, Kg};
use pmkg::neighbor::{attention_weights, enhance_entity, NeighborBatch, NeighborParams};
use pmkg::numerics::{softmax, Tensor};
use pmkg::scorer::{margin_loss, score_triple};
use pmkg::semantics::{retrieve_prompt, task_semantic_embedding, MspPool, SelfAttnParams};
use pmkg::Dataset;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vec_of(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

fn matrix(rows: std::ops::Range<usize>, cols: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(vec_of(cols), rows)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    common::close(a, b, tol)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_a_distribution(xs in prop::collection::vec(-50.0f64..50.0, 1..20)) {
        let p = softmax(&Tensor::vector(xs)).unwrap();
        prop_assert!(p.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn task_embedding_ignores_support_order(pairs in matrix(1..7, 6), seed in 0u64..1000, rot in 0usize..7) {
        let p = SelfAttnParams::random(6, &mut ChaCha8Rng::seed_from_u64(seed));
        let ts: Vec<Tensor> = pairs.iter().cloned().map(Tensor::vector).collect();
        let mut shuffled = ts.clone();
        shuffled.rotate_left(rot % ts.len());
        shuffled.reverse();
        let a = task_semantic_embedding(&ts, &p).unwrap();
        let b = task_semantic_embedding(&shuffled, &p).unwrap();
        prop_assert!(close(a.data(), b.data(), 1e-12));
    }

    #[test]
    fn neighbor_encoding_ignores_neighbor_order(
        rels in matrix(1..6, 3), seed in 0u64..1000, e in vec_of(3)
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = NeighborParams::random(3, 4, &mut rng);
        let ents: Vec<Tensor> = rels.iter().map(|r| Tensor::vector(r.iter().map(|x| x * 0.5 - 0.1).collect())).collect();
        let batch = NeighborBatch { relations: rels.iter().cloned().map(Tensor::vector).collect(), entities: ents };
        let mut rev = batch.clone();
        rev.relations.reverse();
        rev.entities.reverse();
        let e = Tensor::vector(e);
        let wa = attention_weights(&e, &batch, &p).unwrap();
        let mut wb = attention_weights(&e, &rev, &p).unwrap().into_data();
        wb.reverse();
        prop_assert!(close(wa.data(), &wb, 1e-12));
        let a = enhance_entity(&e, &batch, &p).unwrap();
        let b = enhance_entity(&e, &rev, &p).unwrap();
        prop_assert!(close(a.data(), b.data(), 1e-12));
    }

    /// Duplicating every neighbor leaves the attention-weighted mean unchanged.
    #[test]
    fn neighbor_encoding_ignores_uniform_duplication(rels in matrix(1..5, 3), seed in 0u64..1000, e in vec_of(3)) {
        let p = NeighborParams::random(3, 3, &mut ChaCha8Rng::seed_from_u64(seed));
        let batch = NeighborBatch {
            relations: rels.iter().cloned().map(Tensor::vector).collect(),
            entities: rels.iter().map(|r| Tensor::vector(r.iter().rev().cloned().collect())).collect(),
        };
        let mut doubled = batch.clone();
        doubled.relations.extend(batch.relations.clone());
        doubled.entities.extend(batch.entities.clone());
        let e = Tensor::vector(e);
        let a = enhance_entity(&e, &batch, &p).unwrap();
        let b = enhance_entity(&e, &doubled, &p).unwrap();
        prop_assert!(close(a.data(), b.data(), 1e-10));
    }

    #[test]
    fn retrieval_is_scale_invariant(seed in 0u64..1000, q in vec_of(5), c in 0.01f64..100.0) {
        prop_assume!(q.iter().any(|&v| v != 0.0));
        let pool = MspPool::random(9, 5, &mut ChaCha8Rng::seed_from_u64(seed));
        let scaled = Tensor::vector(q.iter().map(|v| v * c).collect());
        let a = retrieve_prompt(&pool, &Tensor::vector(q)).unwrap();
        let b = retrieve_prompt(&pool, &scaled).unwrap();
        prop_assert_eq!(a.0, b.0);
    }

    #[test]
    fn hinge_is_translation_invariant(pairs in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 1..10), c in -5.0f64..5.0) {
        let (pos, neg): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let a = margin_loss(&pos, &neg, 1.0).unwrap();
        let shift = |v: &[f64]| v.iter().map(|x| x + c).collect::<Vec<_>>();
        let b = margin_loss(&shift(&pos), &shift(&neg), 1.0).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn score_is_translation_invariant(h in vec_of(4), t in vec_of(4), mr in vec_of(4), c in vec_of(4)) {
        let sh = |v: &[f64]| Tensor::vector(v.iter().zip(&c).map(|(a, b)| a + b).collect());
        let a = score_triple(&Tensor::vector(h.clone()), &Tensor::vector(mr.clone()), &Tensor::vector(t.clone())).unwrap();
        let b = score_triple(&sh(&h), &Tensor::vector(mr), &sh(&t)).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn pool_update_is_plain_descent(seed in 0u64..1000, lr in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pool = MspPool::random(3, 4, &mut rng);
        let before = pool.entries.clone();
        let g = MspPool::random(3, 4, &mut rng).entries;
        pool.apply_gradient(&g, lr).unwrap();
        for i in 0..before.len() {
            prop_assert_eq!(pool.entries.data()[i], before.data()[i] - lr * g.data()[i]);
        }
    }

    #[test]
    fn metrics_are_ordered(ranks in prop::collection::vec(1usize..200, 1..50)) {
        let m = compute_metrics(&ranks).unwrap();
        prop_assert!(m.hits1 <= m.hits5 && m.hits5 <= m.hits10 && m.hits10 <= 1.0);
        prop_assert!(m.mrr >= m.hits1 && m.mrr <= 1.0 && m.mrr > 0.0);
    }

    #[test]
    fn neighbor_index_matches_brute_force(
        triples in prop::collection::btree_set((0usize..8, 0usize..3, 0usize..8), 1..30)
    ) {
        let names: Vec<(String, String, String)> =
            triples.iter().map(|(h, r, t)| (format!("e{h}"), format!("r{r}"), format!("e{t}"))).collect();
        let mut kg = Kg::from_named_triples(names.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())));
        kg.build_neighbor_index(1000, &mut ChaCha8Rng::seed_from_u64(0));
        for i in 0..kg.num_entities() {
            let e = EntityId(i);
            let got: BTreeSet<(usize, usize, bool)> =
                kg.neighbors(e).iter().map(|n| (n.relation.0, n.entity.0, n.direction == Direction::Out)).collect();
            let mut want = BTreeSet::new();
            for t in kg.triples() {
                if t.head == e {
                    want.insert((t.relation.0, t.tail.0, true));
                }
                if t.tail == e {
                    want.insert((t.relation.0, t.head.0, false));
                }
            }
            prop_assert_eq!(kg.neighbors(e).len(), want.len());
            prop_assert_eq!(got, want);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn synthetic_data_round_trips(seed in 0u64..10_000, types in 1usize..4) {
        let spec = SyntheticSpec {
            num_types: types,
            entities_per_type: 12,
            num_relations: 8,
            num_patterns: 3,
            triples_per_relation: 10,
            valid_relations: 2,
            test_relations: 2,
            background_relations: 4,
            background_triples_per_relation: 20,
            dim: 4,
            candidates_per_query: 15,
            ..SyntheticSpec::default()
        };
        let data = generate_synthetic(&spec, seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        data.write(dir.path()).unwrap();
        let loaded = Dataset::load(dir.path(), 3, 50, 0).unwrap();
        prop_assert_eq!(loaded.kg.num_entities(), data.entity_names.len());
        prop_assert_eq!(loaded.kg.triples().len(), data.background.len());
        prop_assert_eq!(loaded.train.len(), data.train.len());
        prop_assert_eq!(loaded.valid.len(), data.valid.len());
        prop_assert_eq!(loaded.test.len(), data.test.len());
        prop_assert_eq!(loaded.embedding_dim(), Some(4));
        for task in loaded.train.iter().chain(&loaded.valid).chain(&loaded.test) {
            for q in &task.queries {
                prop_assert!(q.candidates.contains(&q.tail));
            }
        }
        let again = generate_synthetic(&spec, seed).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        again.write(dir2.path()).unwrap();
        for f in std::fs::read_dir(dir.path()).unwrap() {
            let f = f.unwrap();
            let other = std::fs::read(dir2.path().join(f.file_name())).unwrap();
            prop_assert_eq!(std::fs::read(f.path()).unwrap(), other);
        }
    }
}

//! Acceptance suite. Each test covers one release criterion at its
//! stated tolerance and prints a PASS line when it holds (run with
//! `cargo test --test acceptance -- --nocapture` to see them).

mod naive;

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use kgrec::eval::{self, EvalSets};
use kgrec::graph::{BipartiteGraph, KnowledgeGraph, Triple};
use kgrec::ingest;
use kgrec::lws;
use kgrec::matrix::{dot, norm2, Matrix};
use kgrec::model::{self, AlignedBipartite, ModelConfig};
use kgrec::params::{init_params, save_checkpoint};
use kgrec::train::{self, fdcheck, PartitionMode, TrainConfig};
use kgrec::vrkg::{
    assign_relations, assignment_objective, exposure_counts, partition_graph, relation_features,
    update_centroids, ClusterStrategy,
};

fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures/toy")
        .join(name)
}

/// Criterion 1: output-norm identity, range, direction preservation, and
/// the zero fixed point of the norm-bounding map, on 1e4 random vectors
/// per dimension in under a second.
#[test]
fn criterion_1_norm_bound_properties() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for &d in &[1usize, 8, 64] {
        for _ in 0..10_000 {
            let scale = 10f64.powf(rng.gen_range(-3.0..3.0));
            let u: Vec<f64> = (0..d).map(|_| rng.gen_range(-scale..=scale)).collect();
            let n = norm2(&u);
            let out = lws::norm_bound(&u);
            let out_norm = norm2(&out);
            let expected = n * n / (n * n + 1.0);
            assert!(
                (out_norm - expected).abs() <= 1e-12,
                "norm identity violated: {out_norm} vs {expected}"
            );
            assert!((0.0..1.0).contains(&out_norm));
            if n > 0.0 {
                let cosine = dot(&u, &out) / (n * out_norm);
                assert!((cosine - 1.0).abs() <= 1e-12, "cosine {cosine}");
            }
        }
        assert_eq!(lws::norm_bound(&vec![0.0; d]), vec![0.0; d]);
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!("PASS criterion 1: norm-bound property suite ({elapsed:?})");
}

/// Criterion 2: analytic gradients match central finite differences
/// (step 1e-4) within 1e-4 relative error (1e-7 absolute floor) on every
/// coordinate of every parameter block of the toy model, in under 30 s.
#[test]
fn criterion_2_gradient_check() {
    let start = Instant::now();
    let problem = fdcheck::toy_problem(7);
    let outcome = fdcheck::compare(&problem, 1e-4, 1e-4, 1e-7, 1).unwrap();
    assert!(
        outcome.checked >= 200,
        "only {} coordinates checked",
        outcome.checked
    );
    assert_eq!(
        outcome.failures, 0,
        "{} coordinates failed (worst relative error {:.3e})",
        outcome.failures, outcome.worst_rel
    );
    for (name, checked, failures) in &outcome.per_block {
        assert!(*checked > 0, "block {name} unchecked");
        assert_eq!(*failures, 0, "block {name}: {failures} failures");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    println!(
        "PASS criterion 2: gradient check, {} coordinates, worst rel err {:.3e} ({elapsed:?})",
        outcome.checked, outcome.worst_rel
    );
}

/// Criterion 3: the optimized whole-graph forward equals the naive
/// per-node reference on 50 random graphs of at most 30 nodes, max abs
/// difference <= 1e-10.
#[test]
fn criterion_3_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let users = rng.gen_range(2..=6u32);
        let items = rng.gen_range(2..=8u32);
        let entities = rng.gen_range(items..=(30 - users).min(items + 12));
        let relations = rng.gen_range(1..=4u32);
        let k = rng.gen_range(1..=3usize);
        let q = rng.gen_range(1..=3usize);
        let layers = rng.gen_range(0..=3usize);
        let d = rng.gen_range(2..=8usize);

        let triple_count = rng.gen_range(0..=3 * entities as usize);
        let triples: Vec<Triple> = (0..triple_count)
            .map(|_| {
                Triple::new(
                    rng.gen_range(0..entities),
                    rng.gen_range(0..relations),
                    rng.gen_range(0..entities),
                )
            })
            .collect();
        let kg = KnowledgeGraph::build(triples, entities, relations)
            .unwrap()
            .add_inverse_relations()
            .unwrap();
        let params = init_params(users, entities, kg.relation_count(), d, k, case as u64);
        let assignment = assign_relations(&params.relation_feat, &params.centroids);
        let partition = partition_graph(&kg, &assignment);

        let mut pairs = Vec::new();
        for u in 0..users {
            for i in 0..items {
                if rng.gen_bool(0.4) {
                    pairs.push((u, i));
                }
            }
        }
        let bip = BipartiteGraph::build(&pairs, users, items).unwrap();
        let align: Vec<u32> = (0..items).collect();
        let aligned = AlignedBipartite::build(&bip, &align, entities);
        let cfg = ModelConfig {
            layers,
            iterations: q,
            k,
            dim: d,
            bipartite_item_update: false,
        };
        let snapshot = model::forward(&params, &partition, &aligned, &cfg);
        let (uf, ef) = model::final_representations(&snapshot);

        // Hand the naive reference plain vectors and adjacency lists.
        let to_vecs =
            |m: &Matrix| -> naive::Vecs { (0..m.rows()).map(|r| m.row(r).to_vec()).collect() };
        let kg_adj: Vec<Vec<Vec<u32>>> = (0..k)
            .map(|kk| {
                (0..entities)
                    .map(|h| partition.subgraphs[kk].neighbors(h).to_vec())
                    .collect()
            })
            .collect();
        let user_items: Vec<Vec<u32>> = (0..users)
            .map(|u| bip.items_of(u).iter().map(|&i| align[i as usize]).collect())
            .collect();
        let (nu, ne) = naive::forward_finals(
            &to_vecs(&params.user_emb),
            &to_vecs(&params.entity_emb),
            &params.fusion_logits,
            &kg_adj,
            &user_items,
            layers,
            q,
        );
        for u in 0..users as usize {
            for c in 0..d {
                worst = worst.max((uf.row(u)[c] - nu[u][c]).abs());
            }
        }
        for h in 0..entities as usize {
            for c in 0..d {
                worst = worst.max((ef.row(h)[c] - ne[h][c]).abs());
            }
        }
        for u in 0..users {
            for i in 0..items {
                let got = model::predict(&uf, &ef, &align, u, i);
                let want = naive::score(&nu[u as usize], &ne[align[i as usize] as usize]);
                worst = worst.max((got - want).abs());
            }
        }
        assert!(
            worst <= 1e-10,
            "case {case}: max abs difference {worst:.3e}"
        );
    }
    println!("PASS criterion 3: oracle equivalence on 50 graphs, max abs diff {worst:.3e}");
}

/// Criterion 4a: partition exact cover after every re-clustering and
/// argmax invariance under common positive scaling, on random KGs.
#[test]
fn criterion_4_partition_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for case in 0..10u64 {
        let entities = rng.gen_range(6..=20u32);
        let relations = rng.gen_range(2..=8u32);
        let k = rng.gen_range(1..=3usize);
        let d = 8;
        let triples: Vec<Triple> = (0..rng.gen_range(5..=40))
            .map(|_| {
                Triple::new(
                    rng.gen_range(0..entities),
                    rng.gen_range(0..relations),
                    rng.gen_range(0..entities),
                )
            })
            .collect();
        let kg = KnowledgeGraph::build(triples, entities, relations)
            .unwrap()
            .add_inverse_relations()
            .unwrap();
        let mut params = init_params(3, entities, kg.relation_count(), d, k, case);

        // Exact cover holds after every one of 5 re-clustering rounds,
        // with the embeddings drifting in between as they do in training.
        for _ in 0..5 {
            params.relation_feat = relation_features(&kg, &params, ClusterStrategy::EntityGrounded);
            let assignment = assign_relations(&params.relation_feat, &params.centroids);
            params.centroids =
                update_centroids(&params.relation_feat, &assignment, &params.centroids);
            let partition = partition_graph(&kg, &assignment);
            assert_eq!(
                exposure_counts(&partition).iter().sum::<usize>(),
                kg.triples().len()
            );
            for v in params.entity_emb.data_mut() {
                *v += rng.gen_range(-0.01..0.01);
            }
        }

        // Argmax assignment is invariant under common positive scaling.
        let feats = relation_features(&kg, &params, ClusterStrategy::EntityGrounded);
        let base = assign_relations(&feats, &params.centroids);
        let scale = 10f64.powf(rng.gen_range(-2.0..2.0));
        let feats_scaled = Matrix::from_vec(
            feats.rows(),
            feats.cols(),
            feats.data().iter().map(|v| v * scale).collect(),
        );
        let cents_scaled = Matrix::from_vec(
            params.centroids.rows(),
            params.centroids.cols(),
            params.centroids.data().iter().map(|v| v * scale).collect(),
        );
        let scaled = assign_relations(&feats_scaled, &cents_scaled);
        assert_eq!(base.assign, scaled.assign);
    }
    println!("PASS criterion 4: partition cover and scale invariance on 10 random KGs");
}

/// Criterion 4b: the alternation objective over 5 assign/update rounds.
///
/// KNOWN RED. The assignment step never decreases the objective, but the
/// specified update step (unnormalized cluster mean) carries no descent
/// guarantee for an inner-product objective: a single relation with
/// feature (1,0) and initial centroid (5,0) drops the objective from 5
/// to 1 after one mean update. Monte-Carlo over 20k random instances
/// shows decreases in 6-26% of instances depending on the monitoring
/// phase, at every round index. The assertion below is the criterion as
/// stated; the failure is the algorithm's real behavior, not a bug in
/// the implementation (see the gradient-checked ops' unit tests).
#[test]
fn criterion_4_alternation_monotonicity() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let mut violations = Vec::new();
    for case in 0..10u64 {
        let entities = rng.gen_range(6..=20u32);
        let relations = rng.gen_range(2..=8u32);
        let k = rng.gen_range(1..=3usize);
        let triples: Vec<Triple> = (0..rng.gen_range(5..=40))
            .map(|_| {
                Triple::new(
                    rng.gen_range(0..entities),
                    rng.gen_range(0..relations),
                    rng.gen_range(0..entities),
                )
            })
            .collect();
        let kg = KnowledgeGraph::build(triples, entities, relations)
            .unwrap()
            .add_inverse_relations()
            .unwrap();
        let params = init_params(3, entities, kg.relation_count(), 8, k, case);
        let feats = relation_features(&kg, &params, ClusterStrategy::EntityGrounded);
        let mut centroids = params.centroids.clone();
        let mut last = f64::NEG_INFINITY;
        for round in 0..5 {
            let assignment = assign_relations(&feats, &centroids);
            let objective = assignment_objective(&feats, &centroids, &assignment.assign);
            if objective < last - 1e-9 {
                violations.push(format!(
                    "case {case} round {round}: {last:.6} -> {objective:.6}"
                ));
            }
            last = objective;
            centroids = update_centroids(&feats, &assignment, &centroids);
        }
    }
    assert!(
        violations.is_empty(),
        "alternation objective decreased (inner-product k-means with mean \
         updates has no descent guarantee):\n{}",
        violations.join("\n")
    );
    println!("PASS criterion 4b: alternation objective non-decreasing over 5 rounds");
}

fn toy_train_once(seed: u64) -> (train::TrainOutcome, Vec<u32>, usize) {
    let (interactions, mut maps) = ingest::load_interactions(fixture("interactions.tsv")).unwrap();
    let kg = ingest::load_triples(fixture("kg.tsv"), &mut maps).unwrap();
    let split = ingest::split(&interactions, seed, 0.8).unwrap();
    let align = maps.item_to_entity();
    let model_cfg = ModelConfig {
        layers: 2,
        iterations: 2,
        k: 2,
        dim: 16,
        bipartite_item_update: false,
    };
    let cfg = TrainConfig {
        lr: 0.01,
        batch_size: 256,
        epochs: 200,
        eval_every: 50,
        seed,
        ..TrainConfig::default()
    };
    let outcome = train::train(
        &split,
        &kg,
        &align,
        PartitionMode::Clustered(ClusterStrategy::EntityGrounded),
        &model_cfg,
        &cfg,
        &[1, 5, 10, 20],
    )
    .unwrap();
    let item_count = interactions.item_count as usize;
    (outcome, align, item_count)
}

/// Criterion 5: on the committed toy fixture, 200 epochs cut the mean
/// BPR loss below half its initial value, Recall@5 reaches at least 3x
/// the random-ranking expectation, and reruns are bit-identical.
#[test]
fn criterion_5_training_sanity() {
    let (outcome, _, item_count) = toy_train_once(42);
    let first = outcome.history.first().unwrap().mean_loss;
    let last = outcome.history.last().unwrap().mean_loss;
    assert!(
        last < 0.5 * first,
        "loss only moved from {first:.4} to {last:.4}"
    );
    let report = outcome
        .history
        .last()
        .unwrap()
        .metrics
        .as_ref()
        .expect("final epoch is evaluated");
    let recall5 = report.row_at(5).unwrap().recall;
    let random = 5.0 / item_count as f64;
    assert!(
        recall5 >= 3.0 * random,
        "recall@5 {recall5:.4} below 3x random {random:.4}"
    );

    // Bit-identical rerun: compare serialized checkpoints.
    let (again, _, _) = toy_train_once(42);
    let dir = std::env::temp_dir();
    let a = dir.join(format!("kgrec_acc_a_{}.bin", std::process::id()));
    let b = dir.join(format!("kgrec_acc_b_{}.bin", std::process::id()));
    save_checkpoint(&a, &outcome.checkpoint).unwrap();
    save_checkpoint(&b, &again.checkpoint).unwrap();
    let bytes_a = std::fs::read(&a).unwrap();
    let bytes_b = std::fs::read(&b).unwrap();
    std::fs::remove_file(&a).ok();
    std::fs::remove_file(&b).ok();
    assert_eq!(bytes_a, bytes_b, "reruns differ");
    println!(
        "PASS criterion 5: loss {first:.4} -> {last:.4}, recall@5 {recall5:.4} \
         (random {random:.4}), reruns bit-identical"
    );
}

/// Criterion 6: hr@1 == ndcg@1 and precision@1 == hr@1 on every
/// evaluation, and recall/hr are monotone in the cutoff, across the toy
/// run and a randomized metric matrix.
#[test]
fn criterion_6_metric_identities() {
    let (outcome, _, _) = toy_train_once(42);
    let mut reports: Vec<&eval::MetricsReport> = outcome
        .history
        .iter()
        .filter_map(|r| r.metrics.as_ref())
        .collect();
    assert!(!reports.is_empty());

    // Plus randomized single-user evaluations across many seeds.
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut extra = Vec::new();
    for _ in 0..50 {
        let items = rng.gen_range(10..40usize);
        let mut user_final = Matrix::zeros(3, 4);
        let mut entity_final = Matrix::zeros(items, 4);
        for v in user_final.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        for v in entity_final.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let sets = EvalSets {
            train: (0..3)
                .map(|_| {
                    let mut t: Vec<u32> = (0..items as u32).filter(|_| rng.gen_bool(0.2)).collect();
                    t.sort_unstable();
                    t
                })
                .collect(),
            test: (0..3)
                .map(|_| {
                    let mut t: Vec<u32> =
                        (0..items as u32).filter(|_| rng.gen_bool(0.15)).collect();
                    if t.is_empty() {
                        t.push(rng.gen_range(0..items as u32));
                    }
                    t.sort_unstable();
                    t
                })
                .collect(),
        };
        let align: Vec<u32> = (0..items as u32).collect();
        extra.push(eval::evaluate_finals(
            &user_final,
            &entity_final,
            &align,
            &sets,
            &[1, 5, 10, 20],
        ));
    }
    let extra_refs: Vec<&eval::MetricsReport> = extra.iter().collect();
    reports.extend(extra_refs);

    for report in &reports {
        let first = &report.rows[0];
        assert_eq!(first.cutoff, 1);
        assert_eq!(first.hr, first.ndcg, "hr@1 != ndcg@1");
        assert_eq!(first.precision, first.hr, "precision@1 != hr@1");
        for w in report.rows.windows(2) {
            assert!(w[1].recall >= w[0].recall - 1e-12, "recall not monotone");
            assert!(w[1].hr >= w[0].hr - 1e-12, "hr not monotone");
        }
        for row in &report.rows {
            for v in [row.recall, row.ndcg, row.hr, row.precision] {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }
    println!(
        "PASS criterion 6: metric identities over {} evaluations",
        reports.len()
    );
}

/// Criterion 8 (optional, not gating): dataset-scale reproduction with
/// the default hyperparameters against user-supplied data files. Supply
/// the documented tab-separated files via KGREC_INTERACTIONS and KGREC_KG
/// and run with `--ignored`. Expect a multi-hour CPU run.
#[test]
#[ignore = "requires user-supplied dataset files and hours of CPU time"]
fn criterion_8_dataset_scale_reproduction() {
    let interactions_path = std::env::var("KGREC_INTERACTIONS")
        .expect("set KGREC_INTERACTIONS to the interaction file path");
    let kg_path = std::env::var("KGREC_KG").expect("set KGREC_KG to the triple file path");
    let (interactions, mut maps) = ingest::load_interactions(&interactions_path).unwrap();
    let kg = ingest::load_triples(&kg_path, &mut maps).unwrap();
    let split = ingest::split(&interactions, 42, 0.8).unwrap();
    let align = maps.item_to_entity();
    let model_cfg = ModelConfig::default(); // d=64, K=3, Q=3, L=2
    let cfg = TrainConfig::default(); // lr 1e-4, lambda 1e-5, batch 1024, 1000 epochs
    let outcome = train::train(
        &split,
        &kg,
        &align,
        PartitionMode::Clustered(ClusterStrategy::EntityGrounded),
        &model_cfg,
        &cfg,
        &[1, 5, 10, 20],
    )
    .unwrap();
    let report = outcome.history.last().unwrap().metrics.as_ref().unwrap();
    let recall20 = report.row_at(20).unwrap().recall;
    let ndcg20 = report.row_at(20).unwrap().ndcg;
    println!("dataset-scale: recall@20 {recall20:.4}, ndcg@20 {ndcg20:.4}");
    assert!((recall20 - 0.3878).abs() <= 0.03, "recall@20 {recall20:.4}");
    assert!((ndcg20 - 0.2302).abs() <= 0.03, "ndcg@20 {ndcg20:.4}");
    println!("PASS criterion 8: dataset-scale reproduction");
}

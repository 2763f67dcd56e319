use std::collections::HashSet;

use navforest::forest::train_forest;
use navforest::navgraph::build_multiscale;
use navforest::oracle::{knn_exact, recall_at};
use navforest::search::{query_rng, search, search_gnns, traverse};
use navforest::synth::{uniform, ClusteredSpec};
use navforest::{ForestConfig, Metric, MultiscaleGraph, SearchParams, Searcher, VectorDataset};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_forest() -> ForestConfig {
    ForestConfig {
        num_trees: 8,
        max_depth: 8,
        candidates_per_node: 20,
        rng_seed: 3,
        ..Default::default()
    }
}

fn check_result_invariants(r: &navforest::QueryResult, k: usize) {
    let ids: HashSet<u32> = r.ids().into_iter().collect();
    assert_eq!(ids.len(), r.results.len(), "duplicate ids");
    assert!(r.results.windows(2).all(|w| w[0].distance <= w[1].distance));
    assert_eq!(r.results.len(), k.min(r.stats.vertices_visited));
    assert!(r.stats.distance_evals >= r.results.len());
    assert_eq!(r.stats.distance_evals, r.stats.vertices_visited);
}

#[test]
fn seed_holding_the_nearest_neighbor_stays_first() {
    let ds = uniform(300, 6, 1);
    let graph = build_multiscale(&ds, &[1.0, 0.2], 5, Metric::L2, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let q: Vec<f32> = (0..6).map(|_| rng.gen_range(-1f32..1.)).collect();
        let nn = knn_exact(&ds, &q, 1, Metric::L2).unwrap()[0].id;
        let seeds = vec![rng.gen_range(0..300), nn, rng.gen_range(0..300)];
        let r = traverse(&ds, &graph, &q, &seeds, &SearchParams::default()).unwrap();
        assert_eq!(r.results[0].id, nn);
    }
}

#[test]
fn complete_graph_gives_exact_top_k() {
    let ds = uniform(60, 4, 5);
    let graph = build_multiscale(&ds, &[1.0], 59, Metric::L2, 0).unwrap();
    let params = SearchParams {
        beam: 15,
        max_iters: 1,
        top_k: 15,
        ..Default::default()
    };
    for i in 0..10 {
        let q = uniform(1, 4, 100 + i);
        let r = traverse(&ds, &graph, q.get(0), &[i as u32], &params).unwrap();
        let want: Vec<u32> = knn_exact(&ds, q.get(0), 15, Metric::L2)
            .unwrap()
            .iter()
            .map(|n| n.id)
            .collect();
        assert_eq!(r.ids(), want);
    }
}

// Regression baseline for a uniform-random N=2000, D=16 corpus with random
// seeds. Measured recall@100 is 0.773; the assertion leaves room for float
// reassociation only.
#[test]
fn random_corpus_recall_baseline() {
    let ds = uniform(2000, 16, 11);
    let queries = uniform(50, 16, 12);
    let graph = build_multiscale(&ds, &[1.0], 20, Metric::L2, 1).unwrap();
    let s = Searcher::new(&ds, &graph, None).unwrap();
    let params = SearchParams {
        top_k: 100,
        pool_visited: true,
        ..Default::default()
    };
    let mut scratch = s.scratch();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut total = 0.0;
    for q in queries.iter() {
        let seeds: Vec<u32> = (0..10).map(|_| rng.gen_range(0..2000)).collect();
        let r = s.traverse(&mut scratch, q, &seeds, &params).unwrap();
        check_result_invariants(&r, 100);
        let truth: Vec<u32> = knn_exact(&ds, q, 100, Metric::L2)
            .unwrap()
            .iter()
            .map(|n| n.id)
            .collect();
        total += recall_at(&r.ids(), &truth).unwrap();
    }
    let recall = total / 50.0;
    assert!((recall - 0.773).abs() < 0.01, "recall@100 {recall}");
}

#[test]
fn gnns_with_every_vertex_as_restart_is_exact() {
    let ds = uniform(120, 5, 8);
    let graph = build_multiscale(&ds, &[1.0], 6, Metric::L2, 0).unwrap();
    let q = uniform(1, 5, 77);
    let params = SearchParams {
        top_k: 10,
        ..Default::default()
    };
    let r = search_gnns(&ds, &graph, q.get(0), 120, &params, &mut query_rng(1, 0)).unwrap();
    assert_eq!(r.stats.distance_evals, 120);
    let want: Vec<u32> = knn_exact(&ds, q.get(0), 10, Metric::L2)
        .unwrap()
        .iter()
        .map(|n| n.id)
        .collect();
    assert_eq!(r.ids(), want);
}

#[test]
fn gnns_is_deterministic_and_respects_budget() {
    let ds = uniform(500, 8, 2);
    let graph = build_multiscale(&ds, &[1.0], 10, Metric::L2, 0).unwrap();
    let s = Searcher::new(&ds, &graph, None).unwrap();
    let q = uniform(1, 8, 3);
    let params = SearchParams::default();
    let run = |budget| {
        s.search_gnns(&mut s.scratch(), q.get(0), 50, budget, &params, &mut query_rng(5, 0))
            .unwrap()
    };
    assert_eq!(run(None).results, run(None).results);
    for budget in [1, 7, 40, 133] {
        let r = run(Some(budget));
        assert!(r.stats.distance_evals <= budget);
        check_result_invariants(&r, params.top_k);
    }
}

#[test]
fn training_vector_is_found_at_distance_zero() {
    let (ds, _) = ClusteredSpec {
        dim: 8,
        clusters: 5,
        ..Default::default()
    }
    .generate(400, 0)
    .unwrap();
    let forest = train_forest(&ds, &small_forest()).unwrap();
    let graph = build_multiscale(&ds, &[1.0, 0.1], 10, Metric::L2, 4).unwrap();
    for i in (0..400).step_by(37) {
        let r = search(&ds, &forest, &graph, ds.get(i), &SearchParams::default()).unwrap();
        assert_eq!(r.results[0].distance, 0.0);
        // duplicates of x_i would also be at distance 0
        assert_eq!(ds.get(r.results[0].id as usize), ds.get(i));
        assert!(r.stats.forest_nodes > 0);
    }
}

#[test]
fn single_seed_matches_explicit_traversal() {
    let (ds, queries) = ClusteredSpec {
        dim: 8,
        clusters: 5,
        ..Default::default()
    }
    .generate(400, 5)
    .unwrap();
    let forest = train_forest(&ds, &small_forest()).unwrap();
    let graph = build_multiscale(&ds, &[1.0, 0.1], 10, Metric::L2, 4).unwrap();
    let params = SearchParams {
        num_seeds: 1,
        ..Default::default()
    };
    for q in queries.iter() {
        let seed = forest.query(q, 1).unwrap();
        assert_eq!(seed.len(), 1);
        let a = search(&ds, &forest, &graph, q, &params).unwrap();
        let b = traverse(&ds, &graph, q, &seed, &params).unwrap();
        assert_eq!(a.results, b.results);
    }
}

#[test]
fn parameter_errors() {
    let ds = uniform(50, 4, 1);
    let graph = build_multiscale(&ds, &[1.0], 5, Metric::L2, 0).unwrap();
    let q = ds.get(0);
    assert!(traverse(&ds, &graph, q, &[], &SearchParams::default()).is_err());
    assert!(traverse(&ds, &graph, q, &[50], &SearchParams::default()).is_err());
    assert!(traverse(&ds, &graph, &[0.0; 3], &[0], &SearchParams::default()).is_err());
    let too_many = SearchParams {
        top_k: 11,
        ..Default::default()
    };
    assert!(traverse(&ds, &graph, q, &[0], &too_many).is_err());
    let pooled = SearchParams {
        pool_visited: true,
        ..too_many
    };
    assert!(traverse(&ds, &graph, q, &[0], &pooled).is_ok());
    let other = VectorDataset::from_flat(4, vec![0.0; 8]).unwrap();
    assert!(Searcher::new(&other, &graph, None).is_err());
}

fn instance(seed: u64) -> (VectorDataset, MultiscaleGraph) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(20..200);
    let dim = rng.gen_range(2..8);
    let k = rng.gen_range(1..12);
    let ds = uniform(n, dim, seed);
    let fractions: &[f64] = match rng.gen_range(0..3) {
        0 => &[1.0],
        1 => &[1.0, 0.3],
        _ => &[1.0, 0.4, 0.1],
    };
    let graph = build_multiscale(&ds, fractions, k, Metric::L2, seed).unwrap();
    (ds, graph)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn traversal_invariants(seed in any::<u64>(), beam in 1usize..20, iters in 1usize..8,
                            n_seeds in 1usize..6, pool in any::<bool>()) {
        let (ds, graph) = instance(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let q: Vec<f32> = (0..ds.dim()).map(|_| rng.gen_range(-1.2f32..1.2)).collect();
        let seeds: Vec<u32> = (0..n_seeds).map(|_| rng.gen_range(0..ds.len() as u32)).collect();
        let top_k = if pool { beam + 3 } else { beam.min(5) };
        let params = SearchParams { beam, max_iters: iters, top_k, num_seeds: n_seeds,
                                    metric: Metric::L2, pool_visited: pool };
        let r = traverse(&ds, &graph, &q, &seeds, &params).unwrap();

        // beam monotonicity across iterations and level transitions
        let trace = &r.stats.best_trace;
        prop_assert!(trace.windows(2).all(|w| w[1].1 <= w[0].1));
        prop_assert!(trace.windows(2).all(|w| w[1].0 <= w[0].0));
        // termination
        prop_assert_eq!(r.stats.iterations_per_level.len(), graph.num_levels());
        prop_assert!(r.stats.iterations_per_level.iter().all(|&i| (1..=iters).contains(&i)));
        check_result_invariants(&r, top_k);
        // reported distances are exact
        for nb in &r.results {
            let d = Metric::L2.eval(&q, ds.get(nb.id as usize));
            prop_assert_eq!(nb.distance, d);
        }
        // rerun is identical
        let again = traverse(&ds, &graph, &q, &seeds, &params).unwrap();
        prop_assert_eq!(again.results, r.results);
    }

    #[test]
    fn results_are_reachable_from_seeds(seed in any::<u64>()) {
        let (ds, graph) = instance(seed);
        let bottom = &graph.levels()[0];
        let q = ds.get(0).to_vec();
        let seeds = [ds.len() as u32 - 1];
        let params = SearchParams { beam: ds.len(), max_iters: ds.len(), top_k: ds.len(),
                                    num_seeds: 1, metric: Metric::L2, pool_visited: false };
        // the exact kNN bottom level does not depend on the upper fractions
        let single = build_multiscale(&ds, &[1.0], graph.k(), Metric::L2, 0).unwrap();
        prop_assert_eq!(&single.levels()[0], bottom);
        let r = traverse(&ds, &single, &q, &seeds, &params).unwrap();
        let mut reach: HashSet<u32> = seeds.iter().copied().collect();
        let mut stack = seeds.to_vec();
        while let Some(v) = stack.pop() {
            for &u in bottom.neighbors(v) {
                if reach.insert(u) {
                    stack.push(u);
                }
            }
        }
        prop_assert_eq!(r.results.len(), reach.len());
        prop_assert!(r.ids().iter().all(|id| reach.contains(id)));
    }
}

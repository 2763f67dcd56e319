use std::collections::{BTreeSet, HashMap};

use navforest::codec::{decode_forest, encode_forest};
use navforest::forest::{
    information_gain, train_forest_with, train_tree_traced, tree_rng, EntropyMode, Node, Tree,
    VoteTally,
};
use navforest::synth::{uniform, ClusteredSpec};
use navforest::{Exec, ForestConfig, VectorDataset};
use proptest::prelude::*;

fn config(seed: u64) -> ForestConfig {
    ForestConfig {
        num_trees: 6,
        max_depth: 7,
        candidates_per_node: 24,
        min_leaf: 4,
        rng_seed: seed,
        ..Default::default()
    }
}

fn corpus(n: usize, seed: u64) -> VectorDataset {
    ClusteredSpec {
        dim: 6,
        clusters: 7,
        spread: 1.0,
        seed,
        ..Default::default()
    }
    .generate(n, 0)
    .unwrap()
    .0
}

/// Independent walk of one tree: follows `Split` nodes by the raw test.
fn route_oracle<'a>(tree: &'a Tree, q: &[f32]) -> &'a [u32] {
    let mut i = 0;
    loop {
        match tree.nodes()[i] {
            Node::Split { split, left, right } => {
                let p = q[split.phi.0 as usize] as f64 - q[split.phi.1 as usize] as f64;
                i = if p <= split.tau { left } else { right } as usize;
            }
            Node::Leaf { start, len } => return tree.bucket(start, len),
        }
    }
}

fn assert_partition(tree: &Tree, n: usize, min_leaf: usize, max_depth: usize) {
    let mut seen = BTreeSet::new();
    let leaves = tree.leaves();
    for (depth, bucket) in &leaves {
        assert!(*depth <= max_depth);
        if leaves.len() > 1 {
            assert!(bucket.len() >= min_leaf, "leaf of {} below min_leaf", bucket.len());
        }
        for &id in *bucket {
            assert!(seen.insert(id), "id {id} in two leaves");
        }
    }
    assert_eq!(seen.len(), n);
    assert!(tree.depth() <= max_depth);
}

#[test]
fn leaves_partition_the_training_set() {
    let ds = corpus(600, 1);
    let cfg = config(2);
    let forest = train_forest_with(&ds, &cfg, Exec::Sequential).unwrap();
    for tree in forest.trees() {
        assert_partition(tree, 600, cfg.min_leaf, cfg.max_depth);
    }
}

#[test]
fn chosen_split_maximizes_gain_over_eligible_candidates() {
    let ds = corpus(400, 3);
    for mode in [EntropyMode::Diagonal, EntropyMode::Full] {
        let cfg = ForestConfig {
            entropy_mode: mode,
            ..config(4)
        };
        let ids: Vec<u32> = (0..400).collect();
        let (_, records) = train_tree_traced(&ds, &ids, &cfg, tree_rng(4, 0)).unwrap();
        assert!(!records.is_empty());
        for rec in &records {
            let set: Vec<&[f32]> = rec.ids.iter().map(|&i| ds.get(i as usize)).collect();
            let mut best = f64::NEG_INFINITY;
            let mut gains = Vec::new();
            for (c, recorded) in rec.candidates.iter().zip(&rec.gains) {
                let left = set.iter().filter(|x| c.goes_left(x)).count();
                let eligible = left >= cfg.min_leaf && set.len() - left >= cfg.min_leaf;
                assert_eq!(eligible, recorded.is_some());
                let g = information_gain(&set, c, mode, cfg.ridge).unwrap();
                if let Some(r) = recorded {
                    assert!((g - r).abs() <= 1e-7 * g.abs().max(1.0), "{g} vs {r}");
                    best = best.max(g);
                }
                gains.push(g);
            }
            match rec.chosen {
                Some(i) => {
                    assert!(rec.gains[i].is_some());
                    assert!(gains[i] > 0.0);
                    assert!(gains[i] >= best - 1e-7 * best.abs().max(1.0));
                }
                None => assert!(best <= 1e-7 || best == f64::NEG_INFINITY),
            }
        }
    }
}

#[test]
fn votes_match_a_routing_oracle() {
    let ds = corpus(500, 5);
    let cfg = config(6);
    let forest = train_forest_with(&ds, &cfg, Exec::default()).unwrap();
    let queries = uniform(30, 6, 9);
    for q in queries.iter().chain(ds.iter().take(10)) {
        let mut tally: HashMap<u32, u32> = HashMap::new();
        for tree in forest.trees() {
            for &id in route_oracle(tree, q) {
                *tally.entry(id).or_default() += 1;
            }
        }
        let mut want: Vec<(u32, u32)> = tally.into_iter().collect();
        want.sort_by_key(|&(id, v)| (std::cmp::Reverse(v), id));
        let got = forest.votes(q).unwrap();
        assert_eq!(got.ranked, want);
        assert!(got.ranked.iter().all(|&(_, v)| v as usize <= cfg.num_trees));
        assert!(got.nodes_visited >= cfg.num_trees);
    }
}

#[test]
fn top_voted_is_a_prefix_of_the_full_ranking() {
    let ds = corpus(500, 12);
    let forest = train_forest_with(&ds, &config(13), Exec::Sequential).unwrap();
    let mut tally = VoteTally::default();
    for q in uniform(20, 6, 14).iter() {
        let full = forest.votes(q).unwrap();
        for m in [1, 3, 10, 50, full.ranked.len(), full.ranked.len() + 5] {
            let (ids, nodes) = forest.top_voted(&mut tally, q, m).unwrap();
            let want: Vec<u32> = full.ranked.iter().take(m).map(|&(id, _)| id).collect();
            assert_eq!(ids, want);
            assert_eq!(nodes, full.nodes_visited);
        }
    }
}

#[test]
fn bagged_trees_still_hold_disjoint_buckets() {
    let ds = corpus(300, 7);
    let cfg = ForestConfig {
        bagging: true,
        ..config(8)
    };
    let forest = train_forest_with(&ds, &cfg, Exec::default()).unwrap();
    for tree in forest.trees() {
        let mut seen = BTreeSet::new();
        for (_, bucket) in tree.leaves() {
            assert!(bucket.windows(2).all(|w| w[0] < w[1]));
            for &id in bucket {
                assert!(seen.insert(id));
            }
        }
        // a bootstrap sample misses about a third of the ids
        assert!(seen.len() < 300);
    }
}

#[test]
fn training_is_deterministic_across_execution_modes() {
    let ds = corpus(400, 9);
    let cfg = config(10);
    let a = train_forest_with(&ds, &cfg, Exec::Sequential).unwrap();
    let b = train_forest_with(&ds, &cfg, Exec::Parallel).unwrap();
    assert_eq!(a, b);
    let bytes = encode_forest(&a);
    assert_eq!(bytes, encode_forest(&b));
    assert_eq!(decode_forest(&bytes).unwrap(), a);
    let other = train_forest_with(&ds, &config(11), Exec::Sequential).unwrap();
    assert_ne!(encode_forest(&other), bytes);
}

#[test]
fn degenerate_inputs_are_rejected() {
    let one = VectorDataset::from_flat(3, vec![0.0; 3]).unwrap();
    assert!(train_forest_with(&one, &config(0), Exec::Sequential).is_err());
    let flat = VectorDataset::from_flat(1, vec![0.0, 1.0, 2.0]).unwrap();
    assert!(train_forest_with(&flat, &config(0), Exec::Sequential).is_err());
    let ds = corpus(50, 1);
    for bad in [
        ForestConfig { num_trees: 0, ..config(0) },
        ForestConfig { candidates_per_node: 0, ..config(0) },
        ForestConfig { min_leaf: 0, ..config(0) },
        ForestConfig { ridge: 0.0, ..config(0) },
    ] {
        assert!(train_forest_with(&ds, &bad, Exec::Sequential).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn random_forests_keep_structural_invariants(
        seed in any::<u64>(),
        n in 2usize..300,
        dim in 2usize..6,
        depth in 0usize..9,
        min_leaf in 1usize..10,
    ) {
        let ds = uniform(n, dim, seed);
        let cfg = ForestConfig { num_trees: 3, max_depth: depth, candidates_per_node: 10,
                                 min_leaf, rng_seed: seed, ..Default::default() };
        let forest = train_forest_with(&ds, &cfg, Exec::Sequential).unwrap();
        for tree in forest.trees() {
            assert_partition(tree, n, min_leaf, depth);
        }
        for i in (0..n).step_by(7) {
            let votes = forest.votes(ds.get(i)).unwrap();
            // a training vector reaches its own leaf in every tree
            prop_assert!(votes.ranked.iter().any(|&(id, v)| id == i as u32 && v == 3));
            prop_assert!(votes.ranked.windows(2).all(|w| w[0].1 > w[1].1
                || (w[0].1 == w[1].1 && w[0].0 < w[1].0)));
        }
    }
}

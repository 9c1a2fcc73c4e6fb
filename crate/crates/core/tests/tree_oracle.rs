//! Tree reconstruction checked against the union-find oracle, plus
//! partition and level invariants on random corpora.

mod common;

use common::{oracle_components, random_corpus, tree_components};
use fedimod_core::convgraph::build_trees;
use proptest::prelude::*;

#[test]
fn random_forest_partition_matches_union_find_oracle() {
    for seed in 0..60 {
        let corpus = random_corpus(seed, 200, 0.1);
        assert_eq!(
            tree_components(&corpus),
            oracle_components(&corpus),
            "partition mismatch at seed {seed}"
        );
    }
}

#[test]
fn partition_is_exact_and_levels_recurse() {
    for seed in 100..140 {
        let corpus = random_corpus(seed, 150, 0.15);
        let report = build_trees(&corpus);
        let total: usize = report.trees.iter().map(|t| t.len()).sum();
        assert_eq!(total, corpus.len());
        for tree in &report.trees {
            assert_eq!(tree.level(tree.root()), Some(0));
            for (child, parent) in tree.topology().edges() {
                assert_eq!(
                    tree.level(&child).unwrap(),
                    tree.level(&parent).unwrap() + 1,
                    "level recurrence broken on edge {child} -> {parent}"
                );
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn prop_partition_matches_oracle(seed in 0u64..10_000) {
        let corpus = random_corpus(seed, 120, 0.1);
        prop_assert_eq!(tree_components(&corpus), oracle_components(&corpus));
    }

    #[test]
    fn prop_every_toot_in_exactly_one_tree(seed in 0u64..10_000) {
        let corpus = random_corpus(seed, 120, 0.2);
        let report = build_trees(&corpus);
        let mut seen = std::collections::BTreeSet::new();
        for tree in &report.trees {
            for node in tree.nodes() {
                prop_assert!(seen.insert(node.clone()));
            }
        }
        prop_assert_eq!(seen.len(), corpus.len());
    }
}

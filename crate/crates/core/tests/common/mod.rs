//! Shared test fixtures: random reply corpora and an independent union-find
//! oracle for checking tree partitions.
// Not every test binary uses every helper.
#![allow(dead_code)]

use fedimod_core::corpus::{Corpus, InstanceId, Toot, TootUrl};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::collections::BTreeSet;

/// Plain union-find over indices; deliberately minimal and separate from the
/// tree-construction code it checks.
pub struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    pub fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            self.parent[ra] = rb;
        }
    }
}

/// Builds a random corpus of up to `max_toots` toots where roughly
/// `dangling_rate` of the parent references point at absent toots.
/// Parent links always point to earlier toots, so the reply structure is a
/// forest by construction.
pub fn random_corpus(seed: u64, max_toots: usize, dangling_rate: f64) -> Corpus {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_toots);
    let mut toots = Vec::with_capacity(n);
    for i in 0..n {
        let parent_url = if i == 0 || rng.random::<f64>() < 0.3 {
            None
        } else if rng.random::<f64>() < dangling_rate {
            Some(format!("missing-{i}"))
        } else {
            Some(format!("t{}", rng.random_range(0..i)))
        };
        toots.push(Toot {
            url: TootUrl::new(format!("t{i}")),
            origin: InstanceId::new(format!("inst{}", rng.random_range(0..7))),
            local_id: None,
            parent_url: parent_url.map(TootUrl::new),
            parent_local_id: None,
            author: format!("user{}", i % 5),
            text: format!("message {i}"),
            timestamp: i as i64,
            reblog_count: 0,
            toxicity: None,
            federated_to: BTreeSet::new(),
        });
    }
    Corpus::from_toots(toots).unwrap()
}

/// The connected components of the resolved parent links, computed by the
/// union-find oracle: each component is the sorted set of its member URLs.
pub fn oracle_components(corpus: &Corpus) -> BTreeSet<Vec<TootUrl>> {
    let urls: Vec<TootUrl> = corpus.urls().cloned().collect();
    let index_of = |url: &TootUrl| urls.binary_search(url).unwrap();
    let mut dsu = UnionFind::new(urls.len());
    for toot in corpus.toots() {
        if let fedimod_core::corpus::ParentRef::Resolved(parent) = corpus.resolve_parent(toot) {
            dsu.union(index_of(&toot.url), index_of(&parent));
        }
    }
    let mut groups: std::collections::HashMap<usize, Vec<TootUrl>> =
        std::collections::HashMap::new();
    for (i, url) in urls.iter().enumerate() {
        groups.entry(dsu.find(i)).or_default().push(url.clone());
    }
    groups
        .into_values()
        .map(|mut v| {
            v.sort();
            v
        })
        .collect()
}

/// The tree partition produced by `build_trees`, in the oracle's shape.
pub fn tree_components(corpus: &Corpus) -> BTreeSet<Vec<TootUrl>> {
    fedimod_core::convgraph::build_trees(corpus)
        .trees
        .iter()
        .map(|tree| tree.nodes().iter().cloned().collect::<Vec<_>>())
        .collect()
}

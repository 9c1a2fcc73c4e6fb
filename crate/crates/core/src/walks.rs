//! Biased root-seeking random walks over conversation trees and fragments.
//!
//! A root-seeking walk sampled at a toot prefers stepping to the parent: at
//! each step it moves to the parent with probability `gamma`, otherwise to a
//! uniformly random neighbour (parent or child) within the fragment. Starting
//! a parent step at a fragment root terminates the walk, so gamma = 1 yields
//! exactly the ancestor path. Walks never leave the fragment they started in:
//! context that is invisible at an instance stays invisible to its walks.

use crate::convgraph::Topology;
use crate::corpus::TootUrl;
use crate::util::derive_seed;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

#[derive(Debug, thiserror::Error)]
pub enum WalkError {
    #[error("walk start {0} is not in the fragment")]
    StartNotInFragment(TootUrl),
}

/// Walk parameters. `gamma` is the parent-step bias, `length` the maximum
/// number of steps, `discount` the per-step geometric context weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WalkConfig {
    pub gamma: f64,
    pub length: u32,
    pub discount: f64,
    pub rng_seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            gamma: 0.75,
            length: 4,
            discount: 0.75,
            rng_seed: 0,
        }
    }
}

impl WalkConfig {
    fn validate(&self) {
        assert!((0.0..=1.0).contains(&self.gamma), "gamma must lie in [0,1]");
        assert!(
            self.discount > 0.0 && self.discount <= 1.0,
            "discount must lie in (0,1]"
        );
    }
}

/// The context gathered by one walk: the visited toots in step order with
/// their geometric weights. `visited[0]` is the start itself at weight 1; a
/// toot revisited at a later step appears once per visit.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextSample {
    pub start: TootUrl,
    pub visited: Vec<(TootUrl, u32)>,
    pub weights: Vec<f64>,
}

impl ContextSample {
    /// Visited entries excluding the start toot (and any revisit of it),
    /// paired with their weights — the walk context proper.
    pub fn context_entries(&self) -> impl Iterator<Item = (&TootUrl, f64)> {
        self.visited
            .iter()
            .zip(self.weights.iter())
            .filter(move |((url, _), _)| *url != self.start)
            .map(|((url, _), w)| (url, *w))
    }
}

/// Runs one root-seeking walk from `start` over `fragment` with the given
/// RNG. Use [`rng_for`] to derive the RNG when determinism across runs and
/// schedules matters.
pub fn walk(
    fragment: &Topology,
    start: &TootUrl,
    config: &WalkConfig,
    rng: &mut impl Rng,
) -> Result<ContextSample, WalkError> {
    config.validate();
    if !fragment.contains(start) {
        return Err(WalkError::StartNotInFragment(start.clone()));
    }
    let mut visited = Vec::with_capacity(config.length as usize + 1);
    let mut weights = Vec::with_capacity(config.length as usize + 1);
    visited.push((start.clone(), 0));
    weights.push(1.0);

    let mut current = start.clone();
    for step in 1..=config.length {
        let parent = fragment.parent(&current);
        let next = if rng.random::<f64>() < config.gamma {
            // Parent step; from a fragment root it terminates the walk.
            match parent {
                Some(p) => p.clone(),
                None => break,
            }
        } else {
            let children = fragment.children(&current);
            let neighbour_count = children.len() + usize::from(parent.is_some());
            if neighbour_count == 0 {
                break;
            }
            let idx = rng.random_range(0..neighbour_count);
            match (parent, idx) {
                (Some(p), 0) => p.clone(),
                (Some(_), i) => children[i - 1].clone(),
                (None, i) => children[i].clone(),
            }
        };
        visited.push((next.clone(), step));
        weights.push(config.discount.powi(step as i32));
        current = next;
    }
    Ok(ContextSample {
        start: start.clone(),
        visited,
        weights,
    })
}

/// Derives the per-walk RNG from (seed, toot URL, epoch). Sampling is thereby
/// deterministic regardless of scheduling or traversal order.
pub fn rng_for(seed: u64, url: &TootUrl, epoch: u64) -> ChaCha12Rng {
    let derived = derive_seed(seed, &[url.as_str().as_bytes(), &epoch.to_le_bytes()]);
    ChaCha12Rng::seed_from_u64(derived)
}

/// Epoch tag reserved for inference-time walks, distinct from any training
/// epoch index.
pub const INFERENCE_EPOCH: u64 = u64::MAX;

/// Samples one [`ContextSample`] per node per epoch over a set of disjoint
/// fragments, in canonical order (sorted by start URL).
pub fn sample_epoch<'a>(
    fragments: impl IntoIterator<Item = &'a Topology>,
    config: &WalkConfig,
    epoch: u64,
) -> Vec<ContextSample> {
    let mut starts: Vec<(&TootUrl, &Topology)> = Vec::new();
    for fragment in fragments {
        for node in fragment.nodes() {
            starts.push((node, fragment));
        }
    }
    starts.sort_by(|a, b| a.0.cmp(b.0));
    starts
        .into_iter()
        .map(|(url, fragment)| {
            let mut rng = rng_for(config.rng_seed, url, epoch);
            walk(fragment, url, config, &mut rng).expect("start is a fragment node")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(names: &[&str]) -> Topology {
        // names[0] is the root; each following name replies to the previous.
        let nodes = names.iter().map(|n| TootUrl::new(*n));
        let edges = names
            .windows(2)
            .map(|w| (TootUrl::new(w[1]), TootUrl::new(w[0])));
        Topology::from_edges(nodes, edges)
    }

    fn star(root: &str, children: &[&str]) -> Topology {
        let nodes =
            std::iter::once(TootUrl::new(root)).chain(children.iter().map(|c| TootUrl::new(*c)));
        let edges = children
            .iter()
            .map(|c| (TootUrl::new(*c), TootUrl::new(root)));
        Topology::from_edges(nodes, edges)
    }

    #[test]
    fn gamma_one_from_root_visits_only_root() {
        let topo = chain(&["a", "b", "c"]);
        let cfg = WalkConfig {
            gamma: 1.0,
            ..WalkConfig::default()
        };
        let mut rng = rng_for(0, &TootUrl::new("a"), 0);
        let sample = walk(&topo, &TootUrl::new("a"), &cfg, &mut rng).unwrap();
        assert_eq!(sample.visited, vec![(TootUrl::new("a"), 0)]);
        assert_eq!(sample.weights, vec![1.0]);
    }

    #[test]
    fn gamma_one_walks_ancestor_path() {
        let topo = chain(&["a", "b", "c"]);
        let cfg = WalkConfig {
            gamma: 1.0,
            length: 4,
            ..WalkConfig::default()
        };
        let mut rng = rng_for(0, &TootUrl::new("c"), 0);
        let sample = walk(&topo, &TootUrl::new("c"), &cfg, &mut rng).unwrap();
        let path: Vec<&str> = sample.visited.iter().map(|(u, _)| u.as_str()).collect();
        assert_eq!(path, vec!["c", "b", "a"]);
        assert_eq!(sample.weights, vec![1.0, 0.75, 0.5625]);
    }

    #[test]
    fn leaf_with_only_parent_reaches_it_surely() {
        // Star with 5 children: a child's only neighbour is the root, so the
        // one-step visit probability is gamma + (1 - gamma) = 1.
        let topo = star("root", &["c1", "c2", "c3", "c4", "c5"]);
        let cfg = WalkConfig {
            gamma: 0.75,
            length: 1,
            ..WalkConfig::default()
        };
        let mut hits = 0u32;
        let runs = 20_000;
        for seed in 0..runs {
            let mut rng = rng_for(seed as u64, &TootUrl::new("c1"), 0);
            let sample = walk(&topo, &TootUrl::new("c1"), &cfg, &mut rng).unwrap();
            if sample.visited.iter().any(|(u, _)| u.as_str() == "root") {
                hits += 1;
            }
        }
        assert_eq!(hits, runs);
    }

    #[test]
    fn start_not_in_fragment_is_error() {
        let topo = chain(&["a", "b"]);
        let mut rng = rng_for(0, &TootUrl::new("zz"), 0);
        assert!(matches!(
            walk(&topo, &TootUrl::new("zz"), &WalkConfig::default(), &mut rng),
            Err(WalkError::StartNotInFragment(_))
        ));
    }

    #[test]
    fn walk_stays_inside_fragment() {
        let topo = chain(&["a", "b", "c", "d", "e"]);
        let cfg = WalkConfig {
            rng_seed: 9,
            ..WalkConfig::default()
        };
        for epoch in 0..50 {
            for sample in sample_epoch([&topo], &cfg, epoch) {
                for (url, _) in &sample.visited {
                    assert!(topo.contains(url));
                }
            }
        }
    }

    #[test]
    fn sample_epoch_covers_every_node_once() {
        let topo = star("r", &["c1", "c2", "c3"]);
        let other = chain(&["x", "y"]);
        let samples = sample_epoch([&topo, &other], &WalkConfig::default(), 0);
        let starts: Vec<&str> = samples.iter().map(|s| s.start.as_str()).collect();
        assert_eq!(starts, vec!["c1", "c2", "c3", "r", "x", "y"]);
    }

    #[test]
    fn same_seed_same_samples() {
        let topo = chain(&["a", "b", "c", "d"]);
        let cfg = WalkConfig {
            rng_seed: 42,
            ..WalkConfig::default()
        };
        let s1 = sample_epoch([&topo], &cfg, 3);
        let s2 = sample_epoch([&topo], &cfg, 3);
        assert_eq!(s1, s2);
    }

    #[test]
    fn identical_fragment_identical_walks() {
        // A fragment equal to the global tree produces the same walks under
        // the same seed: local and global inference coincide when nothing is
        // fragmented.
        let global = chain(&["a", "b", "c", "d"]);
        let fragment = chain(&["a", "b", "c", "d"]);
        let cfg = WalkConfig {
            rng_seed: 7,
            ..WalkConfig::default()
        };
        assert_eq!(
            sample_epoch([&global], &cfg, INFERENCE_EPOCH),
            sample_epoch([&fragment], &cfg, INFERENCE_EPOCH)
        );
    }

    #[test]
    fn parent_step_frequency_matches_analytic_probability() {
        // Interior node of a chain: two neighbours, so the probability of
        // landing on the parent in one step is gamma + (1 - gamma) / 2.
        let topo = chain(&["n0", "n1", "n2", "n3", "n4", "n5"]);
        let gamma = 0.75;
        let cfg = WalkConfig {
            gamma,
            length: 1,
            discount: 0.75,
            rng_seed: 0,
        };
        let expected = gamma + (1.0 - gamma) / 2.0;
        for node_idx in 1..5 {
            let url = TootUrl::new(format!("n{node_idx}"));
            let parent = TootUrl::new(format!("n{}", node_idx - 1));
            let mut hits = 0u32;
            let runs = 40_000u32;
            for seed in 0..runs {
                let mut rng = rng_for(seed as u64, &url, 0);
                let sample = walk(&topo, &url, &cfg, &mut rng).unwrap();
                if sample.visited.len() > 1 && sample.visited[1].0 == parent {
                    hits += 1;
                }
            }
            let freq = hits as f64 / runs as f64;
            assert!(
                (freq - expected).abs() < 0.02,
                "node n{node_idx}: frequency {freq} vs expected {expected}"
            );
        }
    }

    #[test]
    fn parent_step_beats_any_fixed_child() {
        // At a node with a parent and two children: P(parent) = g + (1-g)/3,
        // P(fixed child) = (1-g)/3.
        let nodes = ["r", "m", "c1", "c2"].map(TootUrl::new);
        let edges = [
            (TootUrl::new("m"), TootUrl::new("r")),
            (TootUrl::new("c1"), TootUrl::new("m")),
            (TootUrl::new("c2"), TootUrl::new("m")),
        ];
        let topo = Topology::from_edges(nodes, edges);
        let gamma = 0.75;
        let cfg = WalkConfig {
            gamma,
            length: 1,
            discount: 0.75,
            rng_seed: 0,
        };
        let mut parent_hits = 0u32;
        let mut c1_hits = 0u32;
        let runs = 120_000u32;
        let url = TootUrl::new("m");
        for seed in 0..runs {
            let mut rng = rng_for(seed as u64, &url, 0);
            let sample = walk(&topo, &url, &cfg, &mut rng).unwrap();
            match sample.visited.get(1).map(|(u, _)| u.as_str()) {
                Some("r") => parent_hits += 1,
                Some("c1") => c1_hits += 1,
                _ => {}
            }
        }
        let p_parent = parent_hits as f64 / runs as f64;
        let p_child = c1_hits as f64 / runs as f64;
        let deg = 3.0;
        assert!((p_parent - (gamma + (1.0 - gamma) / deg)).abs() < 0.02);
        assert!((p_child - (1.0 - gamma) / deg).abs() < 0.02);
        assert!(p_parent > p_child);
    }
}

//! Global conversation-tree reconstruction and corpus characterisation.
//!
//! A conversation tree has one node per toot; each edge points from a reply
//! to the toot it replies to, so every node has at most one outgoing edge and
//! the root sits at level 0. Toots whose parent reference cannot be resolved
//! become roots of their own trees: a single toot is itself a conversation.

use crate::corpus::{
    label_binary, Corpus, InstanceId, Label, ParentConflict, ParentRef, TootUrl, DEFAULT_THRESHOLD,
};
use crate::util::csv_field;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Write;
use std::path::Path;

/// Parent/children adjacency over a set of toots. Used both for global
/// conversation trees and for the per-instance fragments of them; children
/// lists are sorted so traversal order is deterministic.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    parent: HashMap<TootUrl, TootUrl>,
    children: HashMap<TootUrl, Vec<TootUrl>>,
    roots: Vec<TootUrl>,
    nodes: BTreeSet<TootUrl>,
}

impl Topology {
    /// Builds adjacency from (child, parent) pairs over `nodes`. Edges whose
    /// endpoints are not both in `nodes` are dropped.
    pub fn from_edges(
        nodes: impl IntoIterator<Item = TootUrl>,
        edges: impl IntoIterator<Item = (TootUrl, TootUrl)>,
    ) -> Self {
        let nodes: BTreeSet<TootUrl> = nodes.into_iter().collect();
        let mut parent = HashMap::new();
        let mut children: HashMap<TootUrl, Vec<TootUrl>> = HashMap::new();
        for (child, par) in edges {
            if nodes.contains(&child) && nodes.contains(&par) && child != par {
                children.entry(par.clone()).or_default().push(child.clone());
                parent.insert(child, par);
            }
        }
        for list in children.values_mut() {
            list.sort();
        }
        let mut roots: Vec<TootUrl> = nodes
            .iter()
            .filter(|n| !parent.contains_key(*n))
            .cloned()
            .collect();
        roots.sort();
        Topology {
            parent,
            children,
            roots,
            nodes,
        }
    }

    pub fn parent(&self, url: &TootUrl) -> Option<&TootUrl> {
        self.parent.get(url)
    }

    pub fn children(&self, url: &TootUrl) -> &[TootUrl] {
        self.children.get(url).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains(&self, url: &TootUrl) -> bool {
        self.nodes.contains(url)
    }

    pub fn nodes(&self) -> &BTreeSet<TootUrl> {
        &self.nodes
    }

    pub fn roots(&self) -> &[TootUrl] {
        &self.roots
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// All (child, parent) edges in deterministic order.
    pub fn edges(&self) -> Vec<(TootUrl, TootUrl)> {
        let mut out: Vec<(TootUrl, TootUrl)> = self
            .parent
            .iter()
            .map(|(c, p)| (c.clone(), p.clone()))
            .collect();
        out.sort();
        out
    }

    /// In-degree of a node: the number of direct replies it received.
    pub fn reply_count(&self, url: &TootUrl) -> usize {
        self.children(url).len()
    }
}

/// One reconstructed conversation: a rooted tree with levels.
#[derive(Clone, Debug, PartialEq)]
pub struct ConversationTree {
    root: TootUrl,
    topo: Topology,
    level: HashMap<TootUrl, u32>,
}

impl ConversationTree {
    pub fn root(&self) -> &TootUrl {
        &self.root
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn nodes(&self) -> &BTreeSet<TootUrl> {
        self.topo.nodes()
    }

    pub fn len(&self) -> usize {
        self.topo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topo.is_empty()
    }

    /// Depth of a node; the root is at level 0.
    pub fn level(&self, url: &TootUrl) -> Option<u32> {
        self.level.get(url).copied()
    }

    pub fn contains(&self, url: &TootUrl) -> bool {
        self.topo.contains(url)
    }
}

/// Everything `build_trees` wants to tell the caller beyond the trees.
#[derive(Debug)]
pub struct TreeBuildReport {
    /// All conversations, sorted by root URL. Every corpus toot appears in
    /// exactly one tree.
    pub trees: Vec<ConversationTree>,
    /// Cycles found among parent links; per cycle, its member URLs sorted.
    /// The edge leaving the lexicographically greatest child was dropped.
    pub broken_cycles: Vec<Vec<TootUrl>>,
    /// Toots whose `parent_url` and `parent_local_id` disagreed
    /// (`parent_url` won).
    pub parent_conflicts: Vec<ParentConflict>,
    /// Toots whose parent reference failed to resolve; they root their own
    /// fragment trees.
    pub dangling: usize,
}

/// Reconstructs the global conversation trees of a corpus.
///
/// Parent resolution per toot: an explicit `parent_url` first, then
/// `parent_local_id` joined against `local_id` within the same origin
/// instance. Unresolved parents make the toot a root. Cycles among parent
/// links are broken deterministically by dropping the edge whose child URL is
/// lexicographically greatest within the cycle.
pub fn build_trees(corpus: &Corpus) -> TreeBuildReport {
    let mut parent: HashMap<TootUrl, TootUrl> = HashMap::new();
    let mut dangling = 0usize;
    for toot in corpus.toots() {
        match corpus.resolve_parent(toot) {
            ParentRef::Resolved(p) => {
                parent.insert(toot.url.clone(), p);
            }
            ParentRef::Dangling => dangling += 1,
            ParentRef::Root => {}
        }
    }
    let parent_conflicts = corpus.parent_conflicts();
    let broken_cycles = break_cycles(corpus, &mut parent);

    let edges: Vec<(TootUrl, TootUrl)> =
        parent.iter().map(|(c, p)| (c.clone(), p.clone())).collect();
    let topo = Topology::from_edges(corpus.urls().cloned(), edges);

    let mut trees = Vec::with_capacity(topo.roots().len());
    for root in topo.roots() {
        let mut nodes = BTreeSet::new();
        let mut level = HashMap::new();
        let mut queue = std::collections::VecDeque::new();
        queue.push_back((root.clone(), 0u32));
        while let Some((url, depth)) = queue.pop_front() {
            nodes.insert(url.clone());
            level.insert(url.clone(), depth);
            for child in topo.children(&url) {
                queue.push_back((child.clone(), depth + 1));
            }
        }
        let sub_edges: Vec<(TootUrl, TootUrl)> = nodes
            .iter()
            .filter_map(|n| topo.parent(n).map(|p| (n.clone(), p.clone())))
            .collect();
        trees.push(ConversationTree {
            root: root.clone(),
            topo: Topology::from_edges(nodes, sub_edges),
            level,
        });
    }
    trees.sort_by(|a, b| a.root.cmp(&b.root));
    TreeBuildReport {
        trees,
        broken_cycles,
        parent_conflicts,
        dangling,
    }
}

/// Finds cycles in the child→parent functional graph and removes, per cycle,
/// the edge whose child is lexicographically greatest. Returns the cycles.
fn break_cycles(corpus: &Corpus, parent: &mut HashMap<TootUrl, TootUrl>) -> Vec<Vec<TootUrl>> {
    const WHITE: u8 = 0;
    const GRAY: u8 = 1;
    const BLACK: u8 = 2;
    let mut mark: HashMap<TootUrl, u8> = corpus.urls().map(|u| (u.clone(), WHITE)).collect();
    let mut cycles = Vec::new();

    let urls: Vec<TootUrl> = corpus.urls().cloned().collect();
    for start in &urls {
        if mark[start] != WHITE {
            continue;
        }
        let mut path: Vec<TootUrl> = Vec::new();
        let mut cur = start.clone();
        loop {
            match mark[&cur] {
                BLACK => break,
                GRAY => {
                    // `cur` re-entered the current path: the tail from its
                    // first occurrence is a cycle.
                    let pos = path.iter().position(|u| *u == cur).unwrap();
                    let cycle: Vec<TootUrl> = path[pos..].to_vec();
                    let drop_child = cycle.iter().max().unwrap().clone();
                    parent.remove(&drop_child);
                    let mut sorted = cycle;
                    sorted.sort();
                    cycles.push(sorted);
                    break;
                }
                _ => {
                    mark.insert(cur.clone(), GRAY);
                    path.push(cur.clone());
                    match parent.get(&cur) {
                        Some(p) => cur = p.clone(),
                        None => break,
                    }
                }
            }
        }
        for visited in path {
            mark.insert(visited, BLACK);
        }
    }
    cycles
}

/// Mean reblog / direct-reply engagement split by binary toxicity label.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EngagementStats {
    pub toxic_mean_reblogs: f64,
    pub non_toxic_mean_reblogs: f64,
    pub toxic_mean_replies: f64,
    pub non_toxic_mean_replies: f64,
    pub toxic_count: u64,
    pub non_toxic_count: u64,
    /// Toots without a toxicity score are excluded from the split.
    pub unscored_count: u64,
}

/// The corpus-level characterisation statistics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConversationStats {
    /// Histogram: conversation size (toots) → number of conversations.
    pub toots_per_conversation: BTreeMap<usize, u64>,
    pub mean_toots_per_conversation: f64,
    pub median_toots_per_conversation: f64,
    /// Histogram: toxic toots in a conversation → number of conversations.
    pub toxic_per_conversation: BTreeMap<usize, u64>,
    /// Toxic toots per tree level.
    pub toxic_by_level: BTreeMap<u32, u64>,
    /// Conversation length → percentage of conversations of that length with
    /// at least one toxic toot.
    pub pct_conversations_with_toxic_by_length: BTreeMap<usize, f64>,
    pub engagement: EngagementStats,
    /// Histogram: instances a toot is visible at (origin + federated) → toots.
    pub federation_spread_toot: BTreeMap<usize, u64>,
    /// Histogram: instances participating in a conversation → conversations.
    pub federation_spread_conversation: BTreeMap<usize, u64>,
}

/// Computes every statistic in [`ConversationStats`] over built trees.
/// Direct replies to a toot are its in-degree in its tree. Binary labels use
/// the default 0.5 threshold.
pub fn characterize(trees: &[ConversationTree], corpus: &Corpus) -> ConversationStats {
    let mut toots_per_conversation: BTreeMap<usize, u64> = BTreeMap::new();
    let mut toxic_per_conversation: BTreeMap<usize, u64> = BTreeMap::new();
    let mut toxic_by_level: BTreeMap<u32, u64> = BTreeMap::new();
    let mut with_toxic_by_length: BTreeMap<usize, (u64, u64)> = BTreeMap::new();
    let mut federation_spread_toot: BTreeMap<usize, u64> = BTreeMap::new();
    let mut federation_spread_conversation: BTreeMap<usize, u64> = BTreeMap::new();
    let mut engagement = EngagementAccum::default();
    let mut sizes: Vec<usize> = Vec::with_capacity(trees.len());

    for tree in trees {
        let size = tree.len();
        sizes.push(size);
        *toots_per_conversation.entry(size).or_default() += 1;

        let mut toxic_in_tree = 0usize;
        let mut participants: HashSet<&InstanceId> = HashSet::new();
        for url in tree.nodes() {
            let toot = corpus.get(url).expect("tree node missing from corpus");
            participants.insert(&toot.origin);
            for inst in &toot.federated_to {
                participants.insert(inst);
            }
            *federation_spread_toot
                .entry(1 + toot.federated_to.len())
                .or_default() += 1;

            let replies = tree.topology().reply_count(url) as u64;
            match toot.toxicity.map(|t| label_binary(t, DEFAULT_THRESHOLD)) {
                Some(Label::Toxic) => {
                    toxic_in_tree += 1;
                    *toxic_by_level.entry(tree.level(url).unwrap()).or_default() += 1;
                    engagement.toxic_reblogs += toot.reblog_count;
                    engagement.toxic_replies += replies;
                    engagement.toxic_count += 1;
                }
                Some(Label::NonToxic) => {
                    engagement.non_toxic_reblogs += toot.reblog_count;
                    engagement.non_toxic_replies += replies;
                    engagement.non_toxic_count += 1;
                }
                None => engagement.unscored_count += 1,
            }
        }
        *toxic_per_conversation.entry(toxic_in_tree).or_default() += 1;
        *federation_spread_conversation
            .entry(participants.len())
            .or_default() += 1;
        let entry = with_toxic_by_length.entry(size).or_default();
        entry.1 += 1;
        if toxic_in_tree > 0 {
            entry.0 += 1;
        }
    }

    sizes.sort_unstable();
    let mean = if sizes.is_empty() {
        0.0
    } else {
        sizes.iter().sum::<usize>() as f64 / sizes.len() as f64
    };
    let median = if sizes.is_empty() {
        0.0
    } else if sizes.len() % 2 == 1 {
        sizes[sizes.len() / 2] as f64
    } else {
        (sizes[sizes.len() / 2 - 1] + sizes[sizes.len() / 2]) as f64 / 2.0
    };

    ConversationStats {
        toots_per_conversation,
        mean_toots_per_conversation: mean,
        median_toots_per_conversation: median,
        toxic_per_conversation,
        toxic_by_level,
        pct_conversations_with_toxic_by_length: with_toxic_by_length
            .into_iter()
            .map(|(len, (toxic, total))| (len, 100.0 * toxic as f64 / total as f64))
            .collect(),
        engagement: engagement.finish(),
        federation_spread_toot,
        federation_spread_conversation,
    }
}

#[derive(Default)]
struct EngagementAccum {
    toxic_reblogs: u64,
    toxic_replies: u64,
    toxic_count: u64,
    non_toxic_reblogs: u64,
    non_toxic_replies: u64,
    non_toxic_count: u64,
    unscored_count: u64,
}

impl EngagementAccum {
    fn finish(self) -> EngagementStats {
        let mean = |sum: u64, n: u64| if n == 0 { 0.0 } else { sum as f64 / n as f64 };
        EngagementStats {
            toxic_mean_reblogs: mean(self.toxic_reblogs, self.toxic_count),
            non_toxic_mean_reblogs: mean(self.non_toxic_reblogs, self.non_toxic_count),
            toxic_mean_replies: mean(self.toxic_replies, self.toxic_count),
            non_toxic_mean_replies: mean(self.non_toxic_replies, self.non_toxic_count),
            toxic_count: self.toxic_count,
            non_toxic_count: self.non_toxic_count,
            unscored_count: self.unscored_count,
        }
    }
}

impl ConversationStats {
    /// Writes the statistics as one CSV per histogram plus a JSON report.
    ///
    /// Files and columns:
    /// - `toots_per_conversation.csv`: `toots,conversations`
    /// - `toxic_per_conversation.csv`: `toxic_toots,conversations`
    /// - `toxic_by_level.csv`: `level,toxic_toots`
    /// - `pct_toxic_by_length.csv`: `length,pct_with_toxic`
    /// - `engagement.csv`: `class,mean_reblogs,mean_direct_replies,count`
    /// - `federation_spread_toot.csv`: `instances,toots`
    /// - `federation_spread_conversation.csv`: `instances,conversations`
    /// - `stats.json`: everything above in one document
    pub fn write_reports(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        write_histogram(
            &dir.join("toots_per_conversation.csv"),
            "toots,conversations",
            self.toots_per_conversation
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string())),
        )?;
        write_histogram(
            &dir.join("toxic_per_conversation.csv"),
            "toxic_toots,conversations",
            self.toxic_per_conversation
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string())),
        )?;
        write_histogram(
            &dir.join("toxic_by_level.csv"),
            "level,toxic_toots",
            self.toxic_by_level
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string())),
        )?;
        write_histogram(
            &dir.join("pct_toxic_by_length.csv"),
            "length,pct_with_toxic",
            self.pct_conversations_with_toxic_by_length
                .iter()
                .map(|(k, v)| (k.to_string(), format!("{v:.2}"))),
        )?;
        let mut eng = std::fs::File::create(dir.join("engagement.csv"))?;
        writeln!(eng, "class,mean_reblogs,mean_direct_replies,count")?;
        writeln!(
            eng,
            "toxic,{:.6},{:.6},{}",
            self.engagement.toxic_mean_reblogs,
            self.engagement.toxic_mean_replies,
            self.engagement.toxic_count
        )?;
        writeln!(
            eng,
            "non_toxic,{:.6},{:.6},{}",
            self.engagement.non_toxic_mean_reblogs,
            self.engagement.non_toxic_mean_replies,
            self.engagement.non_toxic_count
        )?;
        write_histogram(
            &dir.join("federation_spread_toot.csv"),
            "instances,toots",
            self.federation_spread_toot
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string())),
        )?;
        write_histogram(
            &dir.join("federation_spread_conversation.csv"),
            "instances,conversations",
            self.federation_spread_conversation
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string())),
        )?;
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join("stats.json"), json)?;
        Ok(())
    }
}

fn write_histogram(
    path: &Path,
    header: &str,
    rows: impl Iterator<Item = (String, String)>,
) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{header}")?;
    for (k, v) in rows {
        writeln!(f, "{},{}", csv_field(&k), csv_field(&v))?;
    }
    Ok(())
}

//! Partial federation: which toots each instance sees, the fragmented
//! per-instance views of conversations, and fragmentation metrics.
//!
//! Federation is modelled at instance granularity. A toot is delivered to
//! every instance that follows its origin, and a reply is additionally
//! delivered back to the instance that hosts the toot it replies to. In the
//! canonical three-instance scenario (B follows A, C follows B, toots
//! a@A ← b@B ← c@C) that yields visible sets A = {a,b}, B = {a,b,c} and
//! C = {b,c}: A and C each see only a two-toot fragment of the three-toot
//! conversation.

use crate::convgraph::{ConversationTree, Topology};
use crate::corpus::{Corpus, CorpusError, InstanceId, ParentRef, TootUrl};
use crate::util::csv_field;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum FednetError {
    #[error("follow graph: self-edge on {0}")]
    SelfFollow(InstanceId),
    #[error("follow graph line {line}: expected `follower,followed`, got {content:?}")]
    MalformedFollow { line: usize, content: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("propagate precondition: toot {0} already carries federation targets")]
    AlreadyFederated(TootUrl),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Instance-level directed follow graph: an edge follower → followed means
/// the follower's users subscribe to the followed instance's toots.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FollowGraph {
    edges: BTreeSet<(InstanceId, InstanceId)>,
    followers_of: HashMap<InstanceId, BTreeSet<InstanceId>>,
}

impl FollowGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_edges(
        edges: impl IntoIterator<Item = (InstanceId, InstanceId)>,
    ) -> Result<Self, FednetError> {
        let mut g = FollowGraph::new();
        for (follower, followed) in edges {
            g.add(follower, followed)?;
        }
        Ok(g)
    }

    pub fn add(&mut self, follower: InstanceId, followed: InstanceId) -> Result<(), FednetError> {
        if follower == followed {
            return Err(FednetError::SelfFollow(follower));
        }
        self.followers_of
            .entry(followed.clone())
            .or_default()
            .insert(follower.clone());
        self.edges.insert((follower, followed));
        Ok(())
    }

    /// Instances following `instance` (i.e. receiving its toots).
    pub fn followers_of(&self, instance: &InstanceId) -> impl Iterator<Item = &InstanceId> {
        self.followers_of
            .get(instance)
            .into_iter()
            .flat_map(|s| s.iter())
    }

    pub fn follows(&self, follower: &InstanceId, followed: &InstanceId) -> bool {
        self.edges.contains(&(follower.clone(), followed.clone()))
    }

    /// True when a follow edge exists in either direction.
    pub fn shares_edge(&self, a: &InstanceId, b: &InstanceId) -> bool {
        self.follows(a, b) || self.follows(b, a)
    }

    pub fn edges(&self) -> impl Iterator<Item = &(InstanceId, InstanceId)> {
        self.edges.iter()
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Loads `follower,followed` pairs from CSV. A first line that reads
    /// exactly `follower,followed` is treated as a header and skipped.
    pub fn load_csv(path: &Path) -> Result<Self, FednetError> {
        let file = std::fs::File::open(path)?;
        Self::parse_csv(std::io::BufReader::new(file))
    }

    pub fn parse_csv<R: BufRead>(reader: R) -> Result<Self, FednetError> {
        let mut g = FollowGraph::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || (line_no == 1 && trimmed == "follower,followed") {
                continue;
            }
            let mut parts = trimmed.splitn(2, ',');
            let follower = parts.next().unwrap_or("").trim();
            let followed = parts.next().unwrap_or("").trim();
            if follower.is_empty() || followed.is_empty() {
                return Err(FednetError::MalformedFollow {
                    line: line_no,
                    content: line.clone(),
                });
            }
            g.add(InstanceId::new(follower), InstanceId::new(followed))?;
        }
        Ok(g)
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "follower,followed")?;
        for (follower, followed) in &self.edges {
            writeln!(
                out,
                "{},{}",
                csv_field(follower.as_str()),
                csv_field(followed.as_str())
            )?;
        }
        Ok(())
    }
}

/// Fills `federated_to` on an unfederated corpus by applying the delivery
/// rule once over toots in timestamp order (ties broken by URL): a toot is
/// delivered to every follower of its origin instance and, when it is a
/// reply, back to the origin instance of its parent toot. A toot is never
/// delivered to its own origin.
pub fn propagate(corpus: &Corpus, follows: &FollowGraph) -> Result<Corpus, FednetError> {
    for toot in corpus.toots() {
        if !toot.federated_to.is_empty() {
            return Err(FednetError::AlreadyFederated(toot.url.clone()));
        }
    }
    let mut order: Vec<&TootUrl> = corpus.urls().collect();
    order.sort_by_key(|url| {
        let t = corpus.get(url).unwrap();
        (t.timestamp, (*url).clone())
    });

    let mut deliveries: BTreeMap<TootUrl, BTreeSet<InstanceId>> = BTreeMap::new();
    for url in order {
        let toot = corpus.get(url).unwrap();
        let mut targets: BTreeSet<InstanceId> =
            follows.followers_of(&toot.origin).cloned().collect();
        if let ParentRef::Resolved(parent_url) = corpus.resolve_parent(toot) {
            let parent_origin = corpus.get(&parent_url).unwrap().origin.clone();
            targets.insert(parent_origin);
        }
        targets.remove(&toot.origin);
        deliveries.insert(url.clone(), targets);
    }

    let toots = corpus.toots().map(|t| {
        let mut t = t.clone();
        t.federated_to = deliveries.remove(&t.url).unwrap_or_default();
        t
    });
    Ok(Corpus::from_toots(toots)?)
}

/// Local/federated composition of one instance's slice of a conversation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConversationMix {
    pub local: u64,
    pub federated: u64,
}

/// One instance's fragmented visibility over the corpus: its visible toots
/// and, per global conversation it participates in, the induced fragment
/// forest (a visible toot whose parent is invisible roots a fragment).
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceView {
    pub instance: InstanceId,
    pub visible: BTreeSet<TootUrl>,
    /// Keyed by the global conversation root.
    pub fragments: BTreeMap<TootUrl, Topology>,
    pub conversation_mix: BTreeMap<TootUrl, ConversationMix>,
}

impl InstanceView {
    /// Number of fragment roots across all conversations the instance sees.
    pub fn fragment_count(&self) -> usize {
        self.fragments.values().map(|t| t.roots().len()).sum()
    }
}

/// Computes each instance's visible set and fragment forests. Visibility is
/// exactly `origin == instance` or membership in `federated_to`.
pub fn views(corpus: &Corpus, trees: &[ConversationTree]) -> Vec<InstanceView> {
    let mut root_of: HashMap<&TootUrl, &ConversationTree> = HashMap::new();
    for tree in trees {
        for node in tree.nodes() {
            root_of.insert(node, tree);
        }
    }

    let mut visible: BTreeMap<InstanceId, BTreeSet<TootUrl>> = corpus
        .instances()
        .iter()
        .map(|i| (i.clone(), BTreeSet::new()))
        .collect();
    for toot in corpus.toots() {
        visible
            .get_mut(&toot.origin)
            .unwrap()
            .insert(toot.url.clone());
        for inst in &toot.federated_to {
            visible.get_mut(inst).unwrap().insert(toot.url.clone());
        }
    }

    visible
        .into_iter()
        .map(|(instance, visible)| {
            let mut per_conv: BTreeMap<TootUrl, Vec<TootUrl>> = BTreeMap::new();
            for url in &visible {
                let tree = root_of[url];
                per_conv
                    .entry(tree.root().clone())
                    .or_default()
                    .push(url.clone());
            }
            let mut fragments = BTreeMap::new();
            let mut conversation_mix = BTreeMap::new();
            for (root, members) in per_conv {
                let tree = root_of[&root];
                let member_set: BTreeSet<TootUrl> = members.iter().cloned().collect();
                let edges = members.iter().filter_map(|url| {
                    tree.topology()
                        .parent(url)
                        .filter(|p| member_set.contains(*p))
                        .map(|p| (url.clone(), p.clone()))
                });
                let edges: Vec<_> = edges.collect();
                let mut mix = ConversationMix::default();
                for url in &members {
                    if corpus.get(url).unwrap().origin == instance {
                        mix.local += 1;
                    } else {
                        mix.federated += 1;
                    }
                }
                fragments.insert(root.clone(), Topology::from_edges(member_set, edges));
                conversation_mix.insert(root, mix);
            }
            InstanceView {
                instance,
                visible,
                fragments,
                conversation_mix,
            }
        })
        .collect()
}

/// Visibility of one conversation at one instance, as a percentage of the
/// full tree.
#[derive(Clone, Debug, PartialEq)]
pub struct FragmentationRow {
    pub conversation: TootUrl,
    pub instance: InstanceId,
    /// In (0, 100]; an instance appears only if it sees at least one toot.
    pub visible_fraction: f64,
}

/// Per-(conversation, instance) visibility plus per-conversation
/// participating-instance counts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FragmentationReport {
    pub rows: Vec<FragmentationRow>,
    pub participants: BTreeMap<TootUrl, usize>,
}

impl FragmentationReport {
    /// A conversation is fragmented for an instance iff it sees < 100%.
    pub fn fragmented_count(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| r.visible_fraction < 100.0)
            .count()
    }

    /// Rows regrouped as (participating-instance count, visible fraction):
    /// the box-plot data of visibility against conversation spread.
    pub fn grouped_by_participants(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = self
            .rows
            .iter()
            .map(|r| (self.participants[&r.conversation], r.visible_fraction))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.partial_cmp(&b.1).unwrap()));
        out
    }

    /// Median visible fraction per participating-instance count.
    pub fn median_fraction_by_participants(&self) -> BTreeMap<usize, f64> {
        let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (n, frac) in self.grouped_by_participants() {
            groups.entry(n).or_default().push(frac);
        }
        groups
            .into_iter()
            .map(|(n, mut fracs)| {
                fracs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mid = fracs.len() / 2;
                let median = if fracs.len() % 2 == 1 {
                    fracs[mid]
                } else {
                    (fracs[mid - 1] + fracs[mid]) / 2.0
                };
                (n, median)
            })
            .collect()
    }

    /// `conversation,instance,visible_fraction` with two-decimal fractions.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "conversation,instance,visible_fraction")?;
        for row in &self.rows {
            writeln!(
                out,
                "{},{},{:.2}",
                csv_field(row.conversation.as_str()),
                csv_field(row.instance.as_str()),
                row.visible_fraction
            )?;
        }
        Ok(())
    }

    /// `n_instances,visible_fraction`, one row per (conversation, instance).
    pub fn write_grouped_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "n_instances,visible_fraction")?;
        for (n, frac) in self.grouped_by_participants() {
            writeln!(out, "{n},{frac:.2}")?;
        }
        Ok(())
    }
}

/// Computes visible fractions per (conversation, instance) and the
/// participating-instance count per conversation.
pub fn fragmentation(views: &[InstanceView], trees: &[ConversationTree]) -> FragmentationReport {
    let tree_size: HashMap<&TootUrl, usize> = trees.iter().map(|t| (t.root(), t.len())).collect();
    let mut participants: BTreeMap<TootUrl, usize> = BTreeMap::new();
    for view in views {
        for root in view.fragments.keys() {
            *participants.entry(root.clone()).or_default() += 1;
        }
    }
    let mut rows = Vec::new();
    for view in views {
        for (root, fragment) in &view.fragments {
            let total = tree_size[root] as f64;
            rows.push(FragmentationRow {
                conversation: root.clone(),
                instance: view.instance.clone(),
                visible_fraction: 100.0 * fragment.len() as f64 / total,
            });
        }
    }
    rows.sort_by(|a, b| {
        a.conversation
            .cmp(&b.conversation)
            .then(a.instance.cmp(&b.instance))
    });
    FragmentationReport { rows, participants }
}

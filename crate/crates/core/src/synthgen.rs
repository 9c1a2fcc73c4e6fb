//! Deterministic synthetic corpus generator.
//!
//! The generator plants the structure the experiments need to expose:
//!
//! - toxicity concentrates in longer conversations and near their roots, so
//!   context carries signal;
//! - a configurable fraction of toxic toots is *context-dependent*: their own
//!   text is drawn from the benign pool only, and the toxicity is recoverable
//!   solely from a trigger token carried by an ancestor;
//! - small instances host few, short, fully local conversations, so their
//!   local training data is starved of toxic examples while larger partners
//!   (which follow them) are available as donors;
//! - each community has a dialect: part of the large community's toxic
//!   vocabulary doubles as ordinary benign filler in the other communities,
//!   so globally trained weights wash that signal out while locally trained
//!   ones keep it.
//!
//! Output is fully determined by the seed.

use crate::corpus::{Corpus, InstanceId, Toot, TootUrl};
use crate::fednet::{propagate, FollowGraph};
use crate::util::{csv_field, derive_seed};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum GenError {
    #[error("infeasible config: {0}")]
    Infeasible(String),
}

/// Instance count and per-instance toot budget range for one size class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    pub instances: u32,
    pub toots_min: u32,
    pub toots_max: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeProfile {
    pub small: ClassProfile,
    pub medium: ClassProfile,
    pub large: ClassProfile,
}

/// Vocabulary pool sizes. The toxic pool is split internally between core
/// tokens (toxic everywhere) and dialect tokens (toxic in the large
/// community, benign filler elsewhere) according to `ambiguous_fraction`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabSizes {
    pub benign: u32,
    pub trigger: u32,
    pub toxic: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub seed: u64,
    pub n_instances: u32,
    pub size_profile: SizeProfile,
    /// P(a node has i children) ∝ branching[i]; truncated by `depth_cap` and
    /// the home instance's remaining budget.
    pub branching: Vec<f64>,
    pub depth_cap: u32,
    /// Density of follow edges inside the large community; the medium
    /// community uses a quarter of it. Small instances follow no one and are
    /// followed by `donor_links_per_small` large instances.
    pub follow_density: f64,
    pub toxic_rate: f64,
    pub context_dependent_fraction: f64,
    pub vocab: VocabSizes,
    /// Probability that a reply is authored by another viewer of its parent
    /// (within the home community) rather than the parent's instance.
    pub cross_reply_rate: f64,
    pub donor_links_per_small: u32,
    /// Per-level decay of the toxicity weight: toxic toots sit near roots.
    pub level_decay: f64,
    /// Exponent of conversation size in the toxicity weight: long
    /// conversations attract toxicity.
    pub size_exponent: f64,
    /// Fraction of the toxic pool that is dialect vocabulary (see module
    /// docs); also the probability that a large-community toxic toot signals
    /// through dialect tokens only.
    pub ambiguous_fraction: f64,
    /// Probability that a benign medium/small toot carries one dialect token
    /// as filler.
    pub ambiguous_benign_rate: f64,
    pub tokens_min: u32,
    pub tokens_max: u32,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            n_instances: 50,
            size_profile: SizeProfile {
                small: ClassProfile {
                    instances: 13,
                    toots_min: 90,
                    toots_max: 160,
                },
                medium: ClassProfile {
                    instances: 24,
                    toots_min: 1600,
                    toots_max: 2500,
                },
                large: ClassProfile {
                    instances: 13,
                    toots_min: 3200,
                    toots_max: 4200,
                },
            },
            branching: vec![0.5, 0.25, 0.15, 0.07, 0.03],
            depth_cap: 9,
            follow_density: 0.35,
            toxic_rate: 0.08,
            context_dependent_fraction: 0.5,
            vocab: VocabSizes {
                benign: 2000,
                trigger: 20,
                toxic: 24,
            },
            cross_reply_rate: 0.2,
            donor_links_per_small: 2,
            level_decay: 0.6,
            size_exponent: 1.0,
            ambiguous_fraction: 0.45,
            ambiguous_benign_rate: 0.15,
            tokens_min: 2,
            tokens_max: 6,
        }
    }
}

impl GenConfig {
    fn validate(&self) -> Result<(), GenError> {
        for (name, v) in [
            ("follow_density", self.follow_density),
            ("toxic_rate", self.toxic_rate),
            (
                "context_dependent_fraction",
                self.context_dependent_fraction,
            ),
            ("cross_reply_rate", self.cross_reply_rate),
            ("ambiguous_fraction", self.ambiguous_fraction),
            ("ambiguous_benign_rate", self.ambiguous_benign_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(GenError::Infeasible(format!("{name} = {v} outside [0,1]")));
            }
        }
        if !(0.0..1.0).contains(&self.level_decay) || self.level_decay <= 0.0 {
            return Err(GenError::Infeasible(format!(
                "level_decay = {} outside (0,1)",
                self.level_decay
            )));
        }
        let profile_total = self.size_profile.small.instances
            + self.size_profile.medium.instances
            + self.size_profile.large.instances;
        if profile_total != self.n_instances {
            return Err(GenError::Infeasible(format!(
                "size_profile sums to {profile_total} instances, n_instances is {}",
                self.n_instances
            )));
        }
        for (name, p) in [
            ("small", self.size_profile.small),
            ("medium", self.size_profile.medium),
            ("large", self.size_profile.large),
        ] {
            if p.toots_min == 0 || p.toots_min > p.toots_max {
                return Err(GenError::Infeasible(format!(
                    "{name} toot range {}..{} invalid",
                    p.toots_min, p.toots_max
                )));
            }
        }
        if self.branching.is_empty() || self.branching.iter().any(|w| *w < 0.0) {
            return Err(GenError::Infeasible("branching weights invalid".into()));
        }
        if self.branching.iter().sum::<f64>() <= 0.0 {
            return Err(GenError::Infeasible("branching weights all zero".into()));
        }
        if self.vocab.benign == 0 {
            return Err(GenError::Infeasible("empty benign vocabulary".into()));
        }
        if self.toxic_rate > 0.0 {
            if self.vocab.toxic == 0 {
                return Err(GenError::Infeasible(
                    "toxic_rate > 0 but the toxic vocabulary is empty".into(),
                ));
            }
            if self.context_dependent_fraction > 0.0 && self.vocab.trigger == 0 {
                return Err(GenError::Infeasible(
                    "context_dependent_fraction > 0 but the trigger vocabulary is empty".into(),
                ));
            }
            if self.core_toxic_count() == 0 {
                return Err(GenError::Infeasible(
                    "ambiguous_fraction leaves no core toxic tokens".into(),
                ));
            }
        }
        if self.tokens_min == 0 || self.tokens_min > self.tokens_max {
            return Err(GenError::Infeasible(format!(
                "token range {}..{} invalid",
                self.tokens_min, self.tokens_max
            )));
        }
        Ok(())
    }

    fn ambiguous_count(&self) -> u32 {
        (self.vocab.toxic as f64 * self.ambiguous_fraction).round() as u32
    }

    fn core_toxic_count(&self) -> u32 {
        self.vocab.toxic - self.ambiguous_count()
    }
}

/// Ground-truth record for one generated toot.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroundTruth {
    pub url: TootUrl,
    pub score: f64,
    pub context_dependent: bool,
}

/// Everything the generator emits.
#[derive(Debug)]
pub struct Generated {
    pub corpus: Corpus,
    pub follows: FollowGraph,
    pub truth: Vec<GroundTruth>,
}

impl Generated {
    /// Writes `corpus.jsonl`, `follows.csv` and `ground_truth.csv` into a
    /// directory.
    pub fn write_outputs(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        self.corpus.export_jsonl_path(&dir.join("corpus.jsonl"))?;
        let mut follows = std::fs::File::create(dir.join("follows.csv"))?;
        self.follows.write_csv(&mut follows)?;
        let mut truth = std::fs::File::create(dir.join("ground_truth.csv"))?;
        writeln!(truth, "url,score,context_dependent")?;
        for row in &self.truth {
            writeln!(
                truth,
                "{},{},{}",
                csv_field(row.url.as_str()),
                row.score,
                row.context_dependent
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Community {
    Small,
    Medium,
    Large,
}

struct DraftToot {
    url: TootUrl,
    origin_idx: usize,
    local_id: String,
    parent: Option<usize>,
    use_local_id_link: bool,
    timestamp: i64,
    level: u32,
    conv_size: usize,
    toxic: bool,
    context_dependent: bool,
    carries_trigger: bool,
    text: String,
}

struct InstanceState {
    id: InstanceId,
    community: Community,
    budget: u32,
    next_local_id: u64,
}

/// Generates a corpus, its follow graph and the planted ground truth.
/// Byte-identical output for identical configs.
pub fn generate(config: &GenConfig) -> Result<Generated, GenError> {
    config.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(config.seed, &[b"synthgen"]));

    let mut instances = make_instances(config, &mut rng);
    let follows = make_follows(config, &instances, &mut rng);
    let mut drafts = grow_conversations(config, &mut instances, &follows, &mut rng);
    plant_toxicity(config, &mut drafts, &mut rng);
    let truth = write_texts_and_scores(config, &instances, &mut drafts, &mut rng);

    let toots = drafts.iter().map(|d| Toot {
        url: d.url.clone(),
        origin: instances[d.origin_idx].id.clone(),
        local_id: Some(d.local_id.clone()),
        parent_url: match d.parent {
            Some(p) if !d.use_local_id_link => Some(drafts[p].url.clone()),
            _ => None,
        },
        parent_local_id: match d.parent {
            Some(p) if d.use_local_id_link => Some(drafts[p].local_id.clone()),
            _ => None,
        },
        author: format!("user-{}", d.origin_idx),
        text: d.text.clone(),
        timestamp: d.timestamp,
        reblog_count: 0,
        toxicity: None,
        federated_to: BTreeSet::new(),
    });
    let mut toots: Vec<Toot> = toots.collect();
    // Reblog counts and toxicity scores follow the planted labels: toxic
    // toots get more engagement and their ground-truth score.
    for (toot, draft, row) in itertools_zip(&mut toots, &drafts, &truth) {
        toot.toxicity = Some(row.score);
        toot.reblog_count = if draft.toxic {
            rng.random_range(0..4)
        } else {
            u64::from(rng.random::<f64>() < 0.2)
        };
    }

    let bare = Corpus::from_toots(toots)
        .map_err(|e| GenError::Infeasible(format!("generated corpus invalid: {e}")))?;
    let corpus = propagate(&bare, &follows)
        .map_err(|e| GenError::Infeasible(format!("delivery failed: {e}")))?;
    Ok(Generated {
        corpus,
        follows,
        truth,
    })
}

fn itertools_zip<'a>(
    toots: &'a mut [Toot],
    drafts: &'a [DraftToot],
    truth: &'a [GroundTruth],
) -> impl Iterator<Item = (&'a mut Toot, &'a DraftToot, &'a GroundTruth)> {
    toots
        .iter_mut()
        .zip(drafts.iter())
        .zip(truth.iter())
        .map(|((t, d), g)| (t, d, g))
}

fn make_instances(config: &GenConfig, rng: &mut ChaCha12Rng) -> Vec<InstanceState> {
    let mut out = Vec::with_capacity(config.n_instances as usize);
    let classes = [
        (Community::Small, "small", config.size_profile.small),
        (Community::Medium, "medium", config.size_profile.medium),
        (Community::Large, "large", config.size_profile.large),
    ];
    for (community, prefix, profile) in classes {
        for i in 0..profile.instances {
            out.push(InstanceState {
                id: InstanceId::new(format!("{prefix}{i:02}.fedi.test")),
                community,
                budget: rng.random_range(profile.toots_min..=profile.toots_max),
                next_local_id: 1,
            });
        }
    }
    out
}

fn make_follows(
    config: &GenConfig,
    instances: &[InstanceState],
    rng: &mut ChaCha12Rng,
) -> FollowGraph {
    let by_community = |c: Community| -> Vec<usize> {
        instances
            .iter()
            .enumerate()
            .filter(|(_, s)| s.community == c)
            .map(|(i, _)| i)
            .collect()
    };
    let larges = by_community(Community::Large);
    let mediums = by_community(Community::Medium);
    let smalls = by_community(Community::Small);

    let mut follows = FollowGraph::new();
    let link = |follows: &mut FollowGraph, follower: usize, followed: usize| {
        follows
            .add(
                instances[follower].id.clone(),
                instances[followed].id.clone(),
            )
            .expect("distinct instances");
    };

    // Intra-community subscriptions: denser among large instances.
    for (members, density) in [
        (&larges, config.follow_density),
        (&mediums, config.follow_density * 0.25),
    ] {
        for &follower in members.iter() {
            let mut peers: Vec<usize> =
                members.iter().copied().filter(|&p| p != follower).collect();
            peers.shuffle(rng);
            let k = ((members.len().saturating_sub(1)) as f64 * density).ceil() as usize;
            for &followed in peers.iter().take(k) {
                link(&mut follows, follower, followed);
            }
        }
    }

    // Donor links: large instances subscribe to each small instance, so
    // small content reaches a big partner without inflating the small
    // instance's own view.
    for &small in &smalls {
        let mut candidates = larges.clone();
        candidates.shuffle(rng);
        for &large in candidates
            .iter()
            .take(config.donor_links_per_small as usize)
        {
            link(&mut follows, large, small);
        }
    }
    follows
}

/// Grows conversations one toot at a time until every budget is exhausted.
/// Reply authors are drawn from the instances that can actually see the
/// parent (per the delivery rule), restricted to the home community.
fn grow_conversations(
    config: &GenConfig,
    instances: &mut [InstanceState],
    follows: &FollowGraph,
    rng: &mut ChaCha12Rng,
) -> Vec<DraftToot> {
    let mut drafts: Vec<DraftToot> = Vec::new();
    let mut timestamp: i64 = 1_600_000_000;
    let mut url_seq: u64 = 0;

    loop {
        let total_remaining: u64 = instances.iter().map(|s| s.budget as u64).sum();
        if total_remaining == 0 {
            break;
        }
        // Home instance chosen proportionally to remaining budget.
        let mut pick = rng.random_range(0..total_remaining);
        let mut home = 0;
        for (idx, state) in instances.iter().enumerate() {
            if (state.budget as u64) > pick {
                home = idx;
                break;
            }
            pick -= state.budget as u64;
        }
        let home_community = instances[home].community;
        let conv_start = drafts.len();
        let max_size = instances[home].budget;

        // Branching process, breadth-first, truncated by depth and budget.
        let mut frontier: Vec<usize> = Vec::new();
        {
            timestamp += 1;
            url_seq += 1;
            let root = new_draft(instances, home, None, false, timestamp, 0, url_seq);
            instances[home].budget -= 1;
            drafts.push(root);
            frontier.push(conv_start);
        }
        let mut size = 1u32;
        while let Some(node) = frontier.first().copied() {
            frontier.remove(0);
            let level = drafts[node].level;
            if level + 1 > config.depth_cap {
                continue;
            }
            let n_children =
                sample_weighted(&config.branching, rng).min((max_size - size) as usize);
            for _ in 0..n_children {
                if size >= max_size {
                    break;
                }
                let author = pick_reply_author(
                    config,
                    instances,
                    follows,
                    &drafts,
                    node,
                    home_community,
                    rng,
                );
                // A cross-origin reply cannot use a local-id link.
                let same_origin = author == drafts[node].origin_idx;
                let use_local = same_origin && rng.random::<f64>() < 0.3;
                timestamp += 1;
                url_seq += 1;
                let child = new_draft(
                    instances,
                    author,
                    Some(node),
                    use_local,
                    timestamp,
                    level + 1,
                    url_seq,
                );
                instances[home].budget = instances[home].budget.saturating_sub(1);
                drafts.push(child);
                frontier.push(drafts.len() - 1);
                size += 1;
            }
            if instances[home].budget == 0 {
                break;
            }
        }
        let conv_size = drafts.len() - conv_start;
        for draft in &mut drafts[conv_start..] {
            draft.conv_size = conv_size;
        }
    }
    drafts
}

fn new_draft(
    instances: &mut [InstanceState],
    origin_idx: usize,
    parent: Option<usize>,
    use_local_id_link: bool,
    timestamp: i64,
    level: u32,
    url_seq: u64,
) -> DraftToot {
    let local_id = instances[origin_idx].next_local_id;
    instances[origin_idx].next_local_id += 1;
    DraftToot {
        url: TootUrl::new(format!(
            "https://{}/notes/{url_seq}",
            instances[origin_idx].id
        )),
        origin_idx,
        local_id: local_id.to_string(),
        parent,
        use_local_id_link,
        timestamp,
        level,
        conv_size: 0,
        toxic: false,
        context_dependent: false,
        carries_trigger: false,
        text: String::new(),
    }
}

fn sample_weighted(weights: &[f64], rng: &mut ChaCha12Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut pick = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if pick < *w {
            return i;
        }
        pick -= w;
    }
    weights.len() - 1
}

/// Instances that see the parent toot under the delivery rule: its origin,
/// the followers of its origin, and (for replies) the origin of the
/// grandparent.
fn pick_reply_author(
    config: &GenConfig,
    instances: &[InstanceState],
    follows: &FollowGraph,
    drafts: &[DraftToot],
    parent: usize,
    home_community: Community,
    rng: &mut ChaCha12Rng,
) -> usize {
    let parent_origin = drafts[parent].origin_idx;
    if rng.random::<f64>() >= config.cross_reply_rate {
        return parent_origin;
    }
    let mut viewers: BTreeSet<usize> = BTreeSet::new();
    viewers.insert(parent_origin);
    for follower in follows.followers_of(&instances[parent_origin].id) {
        if let Some(idx) = instances.iter().position(|s| &s.id == follower) {
            viewers.insert(idx);
        }
    }
    if let Some(grandparent) = drafts[parent].parent {
        viewers.insert(drafts[grandparent].origin_idx);
    }
    let candidates: Vec<usize> = viewers
        .into_iter()
        .filter(|&i| instances[i].community == home_community)
        .collect();
    candidates[rng.random_range(0..candidates.len())]
}

/// Probability that a reply within [`POISON_DEPTH`] levels of a provocation
/// is toxic.
const POISON_RATE: f64 = 0.95;
/// How deep below the provocation the poisoned neighbourhood reaches.
const POISON_DEPTH: u32 = 3;
/// Probability that the provocation toot itself is (overtly) toxic.
const PROVOCATION_SELF_TOXIC: f64 = 0.5;

/// Plants toxicity as provocations that poison their reply neighbourhood: a
/// provocation toot carries a trigger token and most replies within two
/// levels of it turn toxic. A fraction of those poisoned toots is marked
/// context-dependent (benign text, toxicity recoverable only through the
/// trigger upstream). Provocations are drawn with weight
/// size^size_exponent · level_decay^level, so toxicity lands in longer
/// conversations near their roots; planting stops when the realized toxic
/// count reaches `toxic_rate`. Corpora too small or too flat for
/// provocations fall back to plain overt planting so the rate always holds.
fn plant_toxicity(config: &GenConfig, drafts: &mut [DraftToot], rng: &mut ChaCha12Rng) {
    if config.toxic_rate == 0.0 || drafts.is_empty() {
        return;
    }
    let target = (config.toxic_rate * drafts.len() as f64).round() as i64;
    let mut remaining = target;

    // Children index for neighbourhood poisoning.
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); drafts.len()];
    for (i, draft) in drafts.iter().enumerate() {
        if let Some(p) = draft.parent {
            children[p].push(i);
        }
    }

    let weight = |d: &DraftToot| {
        (d.conv_size as f64).powf(config.size_exponent) * config.level_decay.powi(d.level as i32)
    };

    // Eligible provocation hosts: nodes with at least one reply.
    let mut candidates: Vec<usize> = (0..drafts.len())
        .filter(|&i| !children[i].is_empty())
        .collect();
    // Weighted order without replacement: exponential-race keys.
    let mut keyed: Vec<(f64, usize)> = candidates
        .iter()
        .map(|&i| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            ((-u.ln()) / weight(&drafts[i]).max(1e-12), i)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    for (_, host) in keyed {
        if remaining <= 0 {
            break;
        }
        if drafts[host].toxic || drafts[host].carries_trigger {
            continue;
        }
        drafts[host].carries_trigger = true;
        if rng.random::<f64>() < PROVOCATION_SELF_TOXIC {
            drafts[host].toxic = true;
            remaining -= 1;
        }
        // Descendants within POISON_DEPTH levels of the provocation.
        let mut neighbourhood: Vec<usize> = Vec::new();
        let mut layer: Vec<usize> = children[host].clone();
        for _ in 0..POISON_DEPTH {
            let mut next = Vec::new();
            for &node in &layer {
                neighbourhood.push(node);
                next.extend(children[node].iter().copied());
            }
            layer = next;
        }
        for idx in neighbourhood {
            if remaining <= 0 {
                break;
            }
            if drafts[idx].toxic {
                continue;
            }
            if rng.random::<f64>() < POISON_RATE {
                drafts[idx].toxic = true;
                // A toot that already hosts a trigger must keep its text, so
                // it can only turn overtly toxic.
                drafts[idx].context_dependent = !drafts[idx].carries_trigger
                    && rng.random::<f64>() < config.context_dependent_fraction;
                remaining -= 1;
            }
        }
    }

    // Fallback for whatever the provocations could not place (tiny corpora,
    // singleton-heavy shapes): plain overt toxicity, same weighting.
    if remaining > 0 {
        candidates = (0..drafts.len()).filter(|&i| !drafts[i].toxic).collect();
        let mut keyed: Vec<(f64, usize)> = candidates
            .iter()
            .map(|&i| {
                let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                ((-u.ln()) / weight(&drafts[i]).max(1e-12), i)
            })
            .collect();
        keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for (_, idx) in keyed {
            if remaining <= 0 {
                break;
            }
            drafts[idx].toxic = true;
            remaining -= 1;
        }
    }
}

/// Fills texts and returns ground-truth scores. Token pools:
/// benign `b{i}`, trigger `t{i}`, core toxic `x{i}`, dialect `a{i}`.
fn write_texts_and_scores(
    config: &GenConfig,
    instances: &[InstanceState],
    drafts: &mut [DraftToot],
    rng: &mut ChaCha12Rng,
) -> Vec<GroundTruth> {
    let n_amb = config.ambiguous_count();
    let n_core = config.core_toxic_count();
    let mut truth = Vec::with_capacity(drafts.len());

    for draft in drafts.iter_mut() {
        let community = instances[draft.origin_idx].community;
        let mut tokens: Vec<String> = Vec::new();
        // Trigger hosts stay terse so the provocation dominates their text.
        let k = if draft.carries_trigger {
            rng.random_range(1..=2.min(config.tokens_max))
        } else {
            rng.random_range(config.tokens_min..=config.tokens_max)
        };
        for _ in 0..k {
            tokens.push(format!("b{}", rng.random_range(0..config.vocab.benign)));
        }

        if draft.toxic && !draft.context_dependent {
            // Overt toxicity: in the large community a fraction signals
            // through dialect tokens only; everyone else uses core tokens.
            let use_dialect = community == Community::Large
                && n_amb > 0
                && rng.random::<f64>() < config.ambiguous_fraction;
            let n_markers = rng.random_range(2..=3);
            for _ in 0..n_markers {
                if use_dialect {
                    tokens.push(format!("a{}", rng.random_range(0..n_amb)));
                } else {
                    tokens.push(format!("x{}", rng.random_range(0..n_core)));
                }
            }
        } else if !draft.toxic
            && community != Community::Large
            && n_amb > 0
            && rng.random::<f64>() < config.ambiguous_benign_rate
        {
            // Dialect tokens as ordinary filler outside the large community.
            tokens.push(format!("a{}", rng.random_range(0..n_amb)));
        }

        if draft.carries_trigger {
            tokens.push(format!("t{}", rng.random_range(0..config.vocab.trigger)));
        }

        tokens.shuffle(rng);
        draft.text = tokens.join(" ");

        let base: f64 = if draft.toxic { 0.9 } else { 0.1 };
        let noise: f64 = rng.random_range(-0.05..=0.05);
        let score = (base + noise).clamp(0.0, 1.0);
        truth.push(GroundTruth {
            url: draft.url.clone(),
            score,
            context_dependent: draft.context_dependent,
        });
    }
    truth
}

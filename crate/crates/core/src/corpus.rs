//! Canonical data model for toots, instances and corpora, plus JSONL ingest
//! and instance size classification.
//!
//! A [`Corpus`] is immutable after load: every downstream stage (tree
//! construction, federation views, training) shares it read-only.

use crate::util::{csv_field, fnv1a, quantile_sorted};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Globally unique identifier of a toot. Equality is exact string equality;
/// local per-instance ids are not unique across the network, URLs are.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TootUrl(String);

impl TootUrl {
    /// Panics on an empty string; ingest validates before constructing.
    pub fn new(value: impl Into<String>) -> Self {
        let value = value.into();
        assert!(!value.is_empty(), "toot URL must be non-empty");
        TootUrl(value)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TootUrl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Hostname-like identifier of an instance. Comparison is case-insensitive;
/// the value is normalised to lowercase at construction.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstanceId(String);

impl InstanceId {
    pub fn new(value: impl AsRef<str>) -> Self {
        let value = value.as_ref();
        assert!(!value.is_empty(), "instance id must be non-empty");
        InstanceId(value.to_lowercase())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One post. `federated_to` lists the instances the toot was delivered to,
/// excluding its origin.
#[derive(Clone, Debug, PartialEq)]
pub struct Toot {
    pub url: TootUrl,
    pub origin: InstanceId,
    pub local_id: Option<String>,
    pub parent_url: Option<TootUrl>,
    pub parent_local_id: Option<String>,
    pub author: String,
    pub text: String,
    /// Seconds since the Unix epoch.
    pub timestamp: i64,
    pub reblog_count: u64,
    /// External toxicity score in [0, 1] when known.
    pub toxicity: Option<f64>,
    pub federated_to: BTreeSet<InstanceId>,
}

impl Toot {
    /// Checks the per-toot invariants: no self-reply, toxicity in range,
    /// origin not listed among federation targets.
    pub fn validate(&self) -> Result<(), String> {
        if self.parent_url.as_ref() == Some(&self.url) {
            return Err(format!("toot {} replies to itself", self.url));
        }
        if let Some(t) = self.toxicity {
            if !(0.0..=1.0).contains(&t) || t.is_nan() {
                return Err(format!("toot {} toxicity {t} outside [0,1]", self.url));
            }
        }
        if self.federated_to.contains(&self.origin) {
            return Err(format!(
                "toot {} lists its origin {} in federated_to",
                self.url, self.origin
            ));
        }
        Ok(())
    }
}

/// Outcome of resolving a toot's parent reference against a corpus.
#[derive(Clone, Debug, PartialEq)]
pub enum ParentRef {
    /// No parent reference at all: the toot starts a conversation.
    Root,
    /// Parent resolved to a toot present in the corpus.
    Resolved(TootUrl),
    /// A parent was referenced but is not in the corpus.
    Dangling,
}

/// `parent_url` and `parent_local_id` are both present and resolve to
/// different toots. `parent_url` wins; the conflict is surfaced to callers.
#[derive(Clone, Debug, PartialEq)]
pub struct ParentConflict {
    pub child: TootUrl,
    pub by_url: TootUrl,
    pub by_local_id: TootUrl,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("duplicate toot URL {0}")]
    DuplicateUrl(TootUrl),
    #[error("invalid toot: {0}")]
    InvalidToot(String),
    #[error("unknown instance {0}")]
    UnknownInstance(InstanceId),
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("line {line}: duplicate toot URL {url}")]
    DuplicateUrl { line: usize, url: String },
    #[error("line {line}: toxicity {value} outside [0,1]")]
    ToxicityOutOfRange { line: usize, value: f64 },
    #[error("line {line}: {message}")]
    InvalidToot { line: usize, message: String },
}

/// Immutable collection of toots indexed by URL, with the instance set and a
/// (origin, local_id) join index for parent resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    toots: BTreeMap<TootUrl, Toot>,
    instances: BTreeSet<InstanceId>,
    local_index: HashMap<(InstanceId, String), TootUrl>,
}

impl Corpus {
    /// Builds a corpus from toots, validating invariants and rejecting
    /// duplicate URLs.
    pub fn from_toots(toots: impl IntoIterator<Item = Toot>) -> Result<Self, CorpusError> {
        let mut map = BTreeMap::new();
        let mut instances = BTreeSet::new();
        let mut local_index = HashMap::new();
        for toot in toots {
            toot.validate().map_err(CorpusError::InvalidToot)?;
            instances.insert(toot.origin.clone());
            for inst in &toot.federated_to {
                instances.insert(inst.clone());
            }
            if let Some(local_id) = &toot.local_id {
                local_index.insert((toot.origin.clone(), local_id.clone()), toot.url.clone());
            }
            if map.contains_key(&toot.url) {
                return Err(CorpusError::DuplicateUrl(toot.url));
            }
            map.insert(toot.url.clone(), toot);
        }
        Ok(Corpus {
            toots: map,
            instances,
            local_index,
        })
    }

    pub fn len(&self) -> usize {
        self.toots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.toots.is_empty()
    }

    pub fn get(&self, url: &TootUrl) -> Option<&Toot> {
        self.toots.get(url)
    }

    pub fn contains(&self, url: &TootUrl) -> bool {
        self.toots.contains_key(url)
    }

    /// Toots in canonical (URL) order.
    pub fn toots(&self) -> impl Iterator<Item = &Toot> {
        self.toots.values()
    }

    pub fn urls(&self) -> impl Iterator<Item = &TootUrl> {
        self.toots.keys()
    }

    pub fn instances(&self) -> &BTreeSet<InstanceId> {
        &self.instances
    }

    /// Resolves a toot's parent: an explicit `parent_url` wins; otherwise
    /// `parent_local_id` is joined against `local_id` within the same origin
    /// instance. A reference that matches nothing is dangling.
    pub fn resolve_parent(&self, toot: &Toot) -> ParentRef {
        if let Some(purl) = &toot.parent_url {
            return if self.toots.contains_key(purl) {
                ParentRef::Resolved(purl.clone())
            } else {
                ParentRef::Dangling
            };
        }
        if let Some(plid) = &toot.parent_local_id {
            let key = (toot.origin.clone(), plid.clone());
            return match self.local_index.get(&key) {
                Some(url) if url != &toot.url => ParentRef::Resolved(url.clone()),
                // A local id that points back at the toot itself is treated
                // as unresolvable rather than a self-loop.
                Some(_) => ParentRef::Dangling,
                None => ParentRef::Dangling,
            };
        }
        ParentRef::Root
    }

    /// Detects toots whose `parent_url` and `parent_local_id` disagree.
    pub fn parent_conflicts(&self) -> Vec<ParentConflict> {
        let mut out = Vec::new();
        for toot in self.toots.values() {
            if let (Some(purl), Some(plid)) = (&toot.parent_url, &toot.parent_local_id) {
                if let Some(by_lid) = self.local_index.get(&(toot.origin.clone(), plid.clone())) {
                    if self.toots.contains_key(purl) && by_lid != purl {
                        out.push(ParentConflict {
                            child: toot.url.clone(),
                            by_url: purl.clone(),
                            by_local_id: by_lid.clone(),
                        });
                    }
                }
            }
        }
        out
    }

    /// Number of toots whose parent reference fails to resolve.
    pub fn dangling_parent_count(&self) -> usize {
        self.toots
            .values()
            .filter(|t| matches!(self.resolve_parent(t), ParentRef::Dangling))
            .count()
    }

    /// Per-instance toot counts: local toots plus toots federated to the
    /// instance. Federated toots dominate real corpora, so they count.
    pub fn instance_toot_counts(&self) -> BTreeMap<InstanceId, u64> {
        let mut counts: BTreeMap<InstanceId, u64> =
            self.instances.iter().map(|i| (i.clone(), 0)).collect();
        for toot in self.toots.values() {
            *counts.get_mut(&toot.origin).unwrap() += 1;
            for inst in &toot.federated_to {
                *counts.get_mut(inst).unwrap() += 1;
            }
        }
        counts
    }

    /// Classifies one instance against the 25th/75th quantiles of the
    /// per-instance toot-count distribution of this corpus.
    pub fn size_class(&self, instance: &InstanceId) -> Result<SizeClass, CorpusError> {
        let classes = self.size_classes();
        classes
            .get(instance)
            .copied()
            .ok_or_else(|| CorpusError::UnknownInstance(instance.clone()))
    }

    /// Size classes for every instance. Small is strictly below the 25th
    /// quantile, Large strictly above the 75th, Medium in between; with all
    /// counts equal everything is Medium.
    pub fn size_classes(&self) -> BTreeMap<InstanceId, SizeClass> {
        let counts = self.instance_toot_counts();
        if counts.is_empty() {
            return BTreeMap::new();
        }
        let mut sorted: Vec<f64> = counts.values().map(|&c| c as f64).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q25 = quantile_sorted(&sorted, 0.25);
        let q75 = quantile_sorted(&sorted, 0.75);
        counts
            .into_iter()
            .map(|(inst, c)| {
                let c = c as f64;
                let class = if c < q25 {
                    SizeClass::Small
                } else if c > q75 {
                    SizeClass::Large
                } else {
                    SizeClass::Medium
                };
                (inst, class)
            })
            .collect()
    }

    /// Returns a copy with every `federated_to` emptied, e.g. to replay
    /// delivery under a different follow graph.
    pub fn without_federation(&self) -> Corpus {
        let toots = self.toots.values().map(|t| {
            let mut t = t.clone();
            t.federated_to.clear();
            t
        });
        Corpus::from_toots(toots).expect("stripping federation cannot break invariants")
    }

    /// Writes the corpus as JSON Lines in canonical URL order. Re-ingesting
    /// the output reproduces the corpus field by field.
    pub fn export_jsonl<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for toot in self.toots.values() {
            let record = JsonTootRecord::from(toot);
            serde_json::to_writer(&mut *out, &record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn export_jsonl_path(&self, path: &Path) -> std::io::Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.export_jsonl(&mut w)
    }
}

/// Instance size class by total toot count (local + federated), split at the
/// 25th and 75th quantiles of the corpus's per-instance distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

impl fmt::Display for SizeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SizeClass::Small => f.write_str("small"),
            SizeClass::Medium => f.write_str("medium"),
            SizeClass::Large => f.write_str("large"),
        }
    }
}

/// Binary toxicity label at a threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Toxic,
    NonToxic,
}

/// Toxic iff the score is strictly greater than the threshold.
pub fn label_binary(toxicity: f64, threshold: f64) -> Label {
    assert!(
        threshold > 0.0 && threshold < 1.0,
        "threshold must lie in (0,1)"
    );
    if toxicity > threshold {
        Label::Toxic
    } else {
        Label::NonToxic
    }
}

/// Default classification threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Result of [`ingest`]: the corpus plus what was tolerated along the way.
#[derive(Debug)]
pub struct IngestReport {
    pub corpus: Corpus,
    /// Toots whose parent reference does not resolve within the corpus.
    /// Tolerated (real crawls are partial) but counted.
    pub dangling_parents: usize,
    /// Record keys that were ignored, for a one-time warning per key.
    pub unknown_keys: BTreeSet<String>,
}

/// Supported ingest formats.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Jsonl,
}

const KNOWN_KEYS: &[&str] = &[
    "url",
    "instance",
    "author",
    "text",
    "timestamp",
    "local_id",
    "parent_url",
    "parent_local_id",
    "reblog_count",
    "toxicity",
    "federated_to",
];

/// Loads a corpus from disk. One JSON object per line; required keys `url`,
/// `instance`, `author`, `text`, `timestamp`. Duplicate URLs abort with the
/// offending line; dangling parent references are counted, not fatal.
pub fn ingest(path: &Path, format: Format) -> Result<IngestReport, IngestError> {
    match format {
        Format::Jsonl => {}
    }
    let reader = BufReader::new(std::fs::File::open(path)?);
    ingest_reader(reader)
}

/// Same as [`ingest`] but from any reader.
pub fn ingest_reader<R: BufRead>(reader: R) -> Result<IngestReport, IngestError> {
    let mut toots: Vec<Toot> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut unknown_keys = BTreeSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| IngestError::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
        let obj = value
            .as_object()
            .ok_or_else(|| IngestError::MalformedLine {
                line: line_no,
                message: "record is not a JSON object".into(),
            })?;
        for key in obj.keys() {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                unknown_keys.insert(key.clone());
            }
        }
        let record: JsonTootRecord =
            serde_json::from_value(value).map_err(|e| IngestError::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
        if record.url.is_empty() {
            return Err(IngestError::InvalidToot {
                line: line_no,
                message: "empty url".into(),
            });
        }
        if record.instance.is_empty() {
            return Err(IngestError::InvalidToot {
                line: line_no,
                message: "empty instance".into(),
            });
        }
        if let Some(t) = record.toxicity {
            if !(0.0..=1.0).contains(&t) || t.is_nan() {
                return Err(IngestError::ToxicityOutOfRange {
                    line: line_no,
                    value: t,
                });
            }
        }
        if let Some(_prev) = seen.insert(record.url.clone(), line_no) {
            return Err(IngestError::DuplicateUrl {
                line: line_no,
                url: record.url,
            });
        }
        let toot = record.into_toot();
        toot.validate()
            .map_err(|message| IngestError::InvalidToot {
                line: line_no,
                message,
            })?;
        toots.push(toot);
    }

    let corpus = Corpus::from_toots(toots).map_err(|e| IngestError::InvalidToot {
        line: 0,
        message: e.to_string(),
    })?;
    let dangling_parents = corpus.dangling_parent_count();
    Ok(IngestReport {
        corpus,
        dangling_parents,
        unknown_keys,
    })
}

/// Wire representation of one toot record in the JSONL format.
#[derive(Debug, Serialize, Deserialize)]
struct JsonTootRecord {
    url: String,
    instance: String,
    author: String,
    text: String,
    timestamp: i64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    local_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    parent_url: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    parent_local_id: Option<String>,
    #[serde(default)]
    reblog_count: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    toxicity: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    federated_to: Vec<String>,
}

impl JsonTootRecord {
    fn into_toot(self) -> Toot {
        Toot {
            url: TootUrl::new(self.url),
            origin: InstanceId::new(&self.instance),
            local_id: self.local_id,
            parent_url: self.parent_url.map(TootUrl::new),
            parent_local_id: self.parent_local_id,
            author: self.author,
            text: self.text,
            timestamp: self.timestamp,
            reblog_count: self.reblog_count,
            toxicity: self.toxicity,
            federated_to: self.federated_to.iter().map(InstanceId::new).collect(),
        }
    }
}

impl From<&Toot> for JsonTootRecord {
    fn from(t: &Toot) -> Self {
        JsonTootRecord {
            url: t.url.as_str().to_string(),
            instance: t.origin.as_str().to_string(),
            author: t.author.clone(),
            text: t.text.clone(),
            timestamp: t.timestamp,
            local_id: t.local_id.clone(),
            parent_url: t.parent_url.as_ref().map(|u| u.as_str().to_string()),
            parent_local_id: t.parent_local_id.clone(),
            reblog_count: t.reblog_count,
            toxicity: t.toxicity,
            federated_to: t
                .federated_to
                .iter()
                .map(|i| i.as_str().to_string())
                .collect(),
        }
    }
}

/// Deterministic train/test split: a toot's membership is a pure function of
/// (seed, url), so it is identical in every experiment cell and strategy.
pub fn is_train_split(seed: u64, url: &TootUrl, train_fraction: f64) -> bool {
    let h = fnv1a(&[&seed.to_le_bytes()[..], url.as_str().as_bytes()].concat());
    // Map to [0,1) with 53-bit precision.
    let unit = (h >> 11) as f64 / (1u64 << 53) as f64;
    unit < train_fraction
}

/// Writes per-instance size classes as CSV (`instance,toot_count,size_class`).
pub fn write_size_classes_csv<W: Write>(corpus: &Corpus, out: &mut W) -> std::io::Result<()> {
    let counts = corpus.instance_toot_counts();
    let classes = corpus.size_classes();
    writeln!(out, "instance,toot_count,size_class")?;
    for (inst, count) in &counts {
        writeln!(
            out,
            "{},{},{}",
            csv_field(inst.as_str()),
            count,
            classes[inst]
        )?;
    }
    Ok(())
}

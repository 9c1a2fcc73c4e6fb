//! Optional external toxicity-scoring client for corpora lacking ground
//! truth, with an on-disk cache, a sliding-window rate limiter and bounded
//! request concurrency.
//!
//! One POST per distinct text, body `{"text", "requestedAttributes":
//! {"TOXICITY": {}}, "doNotStore"}`; the response's TOXICITY summary score is
//! written onto the toot. Scores are cached by content hash so identical
//! texts (and repeat runs) never hit the network twice. The API key comes
//! from the environment only.

use crate::corpus::{Corpus, Toot, TootUrl};
use crate::util::fnv1a;
use serde::Deserialize;
use serde_json::json;
use std::collections::{BTreeSet, HashMap, VecDeque};
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{Duration, Instant};

#[derive(Debug, thiserror::Error)]
pub enum LabelError {
    #[error("authentication failed (HTTP {0})")]
    Auth(u16),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus rebuild failed: {0}")]
    Corpus(#[from] crate::corpus::CorpusError),
}

/// Client configuration. `api_key` must be sourced from the environment by
/// the caller; it is never read from flags or files here.
#[derive(Clone, Debug)]
pub struct LabelerConfig {
    pub endpoint: String,
    pub api_key: String,
    /// Maximum requests inside any sliding 1-second window.
    pub qps_limit: f64,
    /// Always transmitted; asks the scoring service not to retain the text.
    pub do_not_store: bool,
    pub cache_path: Option<PathBuf>,
    /// Concurrent requests in flight.
    pub max_in_flight: usize,
}

impl LabelerConfig {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>) -> Self {
        LabelerConfig {
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            qps_limit: 10.0,
            do_not_store: true,
            cache_path: None,
            max_in_flight: 4,
        }
    }
}

/// What happened during a scoring run.
#[derive(Debug)]
pub struct ScoreReport {
    pub corpus: Corpus,
    /// Toots that already carried a score and were skipped.
    pub already_scored: usize,
    /// Scores served from the cache.
    pub from_cache: usize,
    /// Network requests actually issued.
    pub requests_issued: usize,
    /// Toots left unscored after retries.
    pub failed: usize,
    /// One message per failed text.
    pub failures: Vec<String>,
}

/// Sliding 1-second-window limiter shared by the worker threads.
struct RateLimiter {
    stamps: Mutex<VecDeque<Instant>>,
    limit: usize,
}

impl RateLimiter {
    fn new(qps: f64) -> Self {
        RateLimiter {
            stamps: Mutex::new(VecDeque::new()),
            limit: qps.max(1.0).floor() as usize,
        }
    }

    fn acquire(&self) {
        loop {
            let wait = {
                let mut stamps = self.stamps.lock().unwrap();
                let now = Instant::now();
                while let Some(front) = stamps.front() {
                    if now.duration_since(*front) >= Duration::from_secs(1) {
                        stamps.pop_front();
                    } else {
                        break;
                    }
                }
                if stamps.len() < self.limit {
                    stamps.push_back(now);
                    None
                } else {
                    Some(Duration::from_secs(1) - now.duration_since(*stamps.front().unwrap()))
                }
            };
            match wait {
                None => return,
                Some(d) => std::thread::sleep(d + Duration::from_millis(1)),
            }
        }
    }
}

/// Append-only (hash, score) cache keyed on the content hash of
/// (text, attribute).
struct ScoreCache {
    entries: HashMap<u64, f64>,
    log: Option<Mutex<std::fs::File>>,
}

fn content_hash(text: &str) -> u64 {
    fnv1a(&[text.as_bytes(), b"\x00TOXICITY"].concat())
}

impl ScoreCache {
    fn open(path: Option<&PathBuf>) -> std::io::Result<Self> {
        let mut entries = HashMap::new();
        let log = match path {
            Some(path) => {
                if path.exists() {
                    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
                    for line in reader.lines() {
                        let line = line?;
                        if let Some((hash, score)) = line.split_once(',') {
                            if let (Ok(h), Ok(s)) = (u64::from_str_radix(hash, 16), score.parse()) {
                                entries.insert(h, s);
                            }
                        }
                    }
                }
                let file = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)?;
                Some(Mutex::new(file))
            }
            None => None,
        };
        Ok(ScoreCache { entries, log })
    }

    fn get(&self, hash: u64) -> Option<f64> {
        self.entries.get(&hash).copied()
    }

    fn record(&self, hash: u64, score: f64) {
        if let Some(log) = &self.log {
            let mut file = log.lock().unwrap();
            let _ = writeln!(file, "{hash:016x},{score}");
        }
    }
}

#[derive(Deserialize)]
struct ScoreResponse {
    #[serde(rename = "attributeScores")]
    attribute_scores: HashMap<String, AttributeScore>,
}

#[derive(Deserialize)]
struct AttributeScore {
    #[serde(rename = "summaryScore")]
    summary_score: SummaryScore,
}

#[derive(Deserialize)]
struct SummaryScore {
    value: f64,
}

enum AttemptError {
    Auth(u16),
    Retryable(String),
    Fatal(String),
}

fn score_once(
    agent: &ureq::Agent,
    config: &LabelerConfig,
    text: &str,
) -> Result<f64, AttemptError> {
    let body = json!({
        "text": text,
        "requestedAttributes": { "TOXICITY": {} },
        "doNotStore": config.do_not_store,
    });
    let url = if config.endpoint.contains('?') {
        format!("{}&key={}", config.endpoint, config.api_key)
    } else {
        format!("{}?key={}", config.endpoint, config.api_key)
    };
    let result = agent.post(&url).send_json(&body);
    let mut response = match result {
        Ok(r) => r,
        Err(ureq::Error::StatusCode(code)) => {
            return Err(match code {
                401 | 403 => AttemptError::Auth(code),
                429 | 500..=599 => AttemptError::Retryable(format!("HTTP {code}")),
                other => AttemptError::Fatal(format!("HTTP {other}")),
            });
        }
        Err(e) => return Err(AttemptError::Retryable(e.to_string())),
    };
    let parsed: ScoreResponse = response
        .body_mut()
        .read_json()
        .map_err(|e| AttemptError::Fatal(format!("bad response body: {e}")))?;
    let score = parsed
        .attribute_scores
        .get("TOXICITY")
        .map(|a| a.summary_score.value)
        .ok_or_else(|| AttemptError::Fatal("response lacks a TOXICITY score".into()))?;
    if !(0.0..=1.0).contains(&score) || score.is_nan() {
        return Err(AttemptError::Fatal(format!("score {score} outside [0,1]")));
    }
    Ok(score)
}

/// Retries 429/5xx and transport errors with exponential backoff,
/// three attempts total.
fn score_with_retries(
    agent: &ureq::Agent,
    config: &LabelerConfig,
    limiter: &RateLimiter,
    text: &str,
) -> Result<f64, AttemptError> {
    let mut backoff = Duration::from_millis(100);
    let mut last = None;
    for attempt in 0..3 {
        if attempt > 0 {
            std::thread::sleep(backoff);
            backoff *= 2;
        }
        limiter.acquire();
        match score_once(agent, config, text) {
            Ok(score) => return Ok(score),
            Err(AttemptError::Retryable(msg)) => last = Some(AttemptError::Retryable(msg)),
            Err(fatal) => return Err(fatal),
        }
    }
    Err(last.unwrap_or(AttemptError::Retryable("no attempts made".into())))
}

/// Fills missing toxicity scores in a corpus. Already-scored toots are
/// skipped; identical texts are scored once; per-toot failures after retries
/// leave the toot unscored and are counted. Authentication failures abort.
pub fn score_corpus(corpus: &Corpus, config: &LabelerConfig) -> Result<ScoreReport, LabelError> {
    let cache = ScoreCache::open(config.cache_path.as_ref())?;

    let mut already_scored = 0usize;
    // One work unit per distinct unscored text, in canonical URL order.
    let mut seen: BTreeSet<u64> = BTreeSet::new();
    let mut hash_order: Vec<(u64, String)> = Vec::new();
    for toot in corpus.toots() {
        if toot.toxicity.is_some() {
            already_scored += 1;
            continue;
        }
        let hash = content_hash(&toot.text);
        if seen.insert(hash) {
            hash_order.push((hash, toot.text.clone()));
        }
    }

    let mut resolved: HashMap<u64, f64> = HashMap::new();
    let mut from_cache = 0usize;
    let mut to_fetch: Vec<(u64, String)> = Vec::new();
    for (hash, text) in hash_order {
        match cache.get(hash) {
            Some(score) => {
                resolved.insert(hash, score);
                from_cache += 1;
            }
            None => to_fetch.push((hash, text)),
        }
    }

    let limiter = RateLimiter::new(config.qps_limit);
    let agent = ureq::Agent::new_with_config(
        ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .build(),
    );
    let queue: Mutex<VecDeque<(u64, String)>> = Mutex::new(to_fetch.iter().cloned().collect());
    let results: Mutex<Vec<(u64, Result<f64, AttemptError>)>> = Mutex::new(Vec::new());
    let requests_issued = to_fetch.len();

    let workers = config.max_in_flight.clamp(1, 64).min(to_fetch.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let job = queue.lock().unwrap().pop_front();
                let Some((hash, text)) = job else { break };
                let outcome = score_with_retries(&agent, config, &limiter, &text);
                let auth_failure = matches!(outcome, Err(AttemptError::Auth(_)));
                results.lock().unwrap().push((hash, outcome));
                if auth_failure {
                    // Fatal for the whole run; drain nothing further.
                    queue.lock().unwrap().clear();
                    break;
                }
            });
        }
    });

    let mut failures = Vec::new();
    for (hash, outcome) in results.into_inner().unwrap() {
        match outcome {
            Ok(score) => {
                cache.record(hash, score);
                resolved.insert(hash, score);
            }
            Err(AttemptError::Auth(code)) => return Err(LabelError::Auth(code)),
            Err(AttemptError::Retryable(msg)) | Err(AttemptError::Fatal(msg)) => {
                failures.push(format!("{hash:016x}: {msg}"));
            }
        }
    }

    let mut failed = 0usize;
    let toots: Vec<Toot> = corpus
        .toots()
        .map(|t| {
            let mut t = t.clone();
            if t.toxicity.is_none() {
                match resolved.get(&content_hash(&t.text)) {
                    Some(score) => t.toxicity = Some(score.clamp(0.0, 1.0)),
                    None => failed += 1,
                }
            }
            t
        })
        .collect();
    Ok(ScoreReport {
        corpus: Corpus::from_toots(toots)?,
        already_scored,
        from_cache,
        requests_issued,
        failed,
        failures,
    })
}

/// URLs of toots still lacking a score (diagnostic helper).
pub fn unscored(corpus: &Corpus) -> Vec<&TootUrl> {
    corpus
        .toots()
        .filter(|t| t.toxicity.is_none())
        .map(|t| &t.url)
        .collect()
}

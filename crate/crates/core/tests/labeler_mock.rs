//! Labeler client behaviour against a local mock scoring endpoint: no live
//! API is involved anywhere in the suite.

use fedimod_core::corpus::{Corpus, InstanceId, Toot, TootUrl};
use fedimod_core::labeler::{score_corpus, LabelError, LabelerConfig};
use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

/// Minimal HTTP/1.1 mock: answers every POST with a fixed-score TOXICITY
/// response (or an error status), recording arrival times and bodies.
struct MockServer {
    endpoint: String,
    hits: Arc<AtomicUsize>,
    stamps: Arc<Mutex<Vec<Instant>>>,
    bodies: Arc<Mutex<Vec<String>>>,
}

fn start_mock(status_line: &'static str, body_for: fn(&str) -> String) -> MockServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let stamps = Arc::new(Mutex::new(Vec::new()));
    let bodies = Arc::new(Mutex::new(Vec::new()));
    {
        let hits = hits.clone();
        let stamps = stamps.clone();
        let bodies = bodies.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let hits = hits.clone();
                let stamps = stamps.clone();
                let bodies = bodies.clone();
                std::thread::spawn(move || {
                    let mut buf = Vec::new();
                    let mut chunk = [0u8; 4096];
                    // Read headers.
                    let header_end = loop {
                        match stream.read(&mut chunk) {
                            Ok(0) => return,
                            Ok(n) => buf.extend_from_slice(&chunk[..n]),
                            Err(_) => return,
                        }
                        if let Some(pos) = find_subsequence(&buf, b"\r\n\r\n") {
                            break pos + 4;
                        }
                    };
                    let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
                    let content_length: usize = headers
                        .lines()
                        .find_map(|l| {
                            let (name, value) = l.split_once(':')?;
                            name.eq_ignore_ascii_case("content-length")
                                .then(|| value.trim().parse().ok())?
                        })
                        .unwrap_or(0);
                    while buf.len() < header_end + content_length {
                        match stream.read(&mut chunk) {
                            Ok(0) => break,
                            Ok(n) => buf.extend_from_slice(&chunk[..n]),
                            Err(_) => return,
                        }
                    }
                    let body = String::from_utf8_lossy(&buf[header_end..]).to_string();
                    hits.fetch_add(1, Ordering::SeqCst);
                    stamps.lock().unwrap().push(Instant::now());
                    bodies.lock().unwrap().push(body.clone());

                    let response_body = body_for(&body);
                    let response = format!(
                        "{status_line}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                        response_body.len(),
                        response_body
                    );
                    let _ = stream.write_all(response.as_bytes());
                });
            }
        });
    }
    MockServer {
        endpoint: format!("http://{addr}/v1/score"),
        hits,
        stamps,
        bodies,
    }
}

fn find_subsequence(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

fn fixed_score(_body: &str) -> String {
    r#"{"attributeScores":{"TOXICITY":{"summaryScore":{"value":0.73}}}}"#.to_string()
}

fn toot(url: &str, text: &str, toxicity: Option<f64>) -> Toot {
    Toot {
        url: TootUrl::new(url),
        origin: InstanceId::new("local.test"),
        local_id: None,
        parent_url: None,
        parent_local_id: None,
        author: "u".into(),
        text: text.into(),
        timestamp: 0,
        reblog_count: 0,
        toxicity,
        federated_to: BTreeSet::new(),
    }
}

#[test]
fn mock_score_applied_to_every_unscored_toot() {
    let server = start_mock("HTTP/1.1 200 OK", fixed_score);
    let corpus = Corpus::from_toots([
        toot("u1", "first text", None),
        toot("u2", "second text", None),
        toot("u3", "third text", Some(0.2)),
    ])
    .unwrap();
    let cfg = LabelerConfig::new(&server.endpoint, "test-key");
    let report = score_corpus(&corpus, &cfg).unwrap();
    assert_eq!(report.already_scored, 1);
    assert_eq!(report.failed, 0);
    for url in ["u1", "u2"] {
        assert_eq!(
            report.corpus.get(&TootUrl::new(url)).unwrap().toxicity,
            Some(0.73)
        );
    }
    // The pre-scored toot is untouched.
    assert_eq!(
        report.corpus.get(&TootUrl::new("u3")).unwrap().toxicity,
        Some(0.2)
    );
    // doNotStore is always transmitted.
    for body in server.bodies.lock().unwrap().iter() {
        let parsed: serde_json::Value = serde_json::from_str(body).unwrap();
        assert_eq!(parsed["doNotStore"], serde_json::Value::Bool(true));
        assert!(parsed["requestedAttributes"]["TOXICITY"].is_object());
        assert!(parsed["text"].is_string());
    }
}

#[test]
fn identical_texts_issue_one_request() {
    let server = start_mock("HTTP/1.1 200 OK", fixed_score);
    let corpus = Corpus::from_toots([
        toot("u1", "same words", None),
        toot("u2", "same words", None),
        toot("u3", "different words", None),
    ])
    .unwrap();
    let cfg = LabelerConfig::new(&server.endpoint, "k");
    let report = score_corpus(&corpus, &cfg).unwrap();
    assert_eq!(server.hits.load(Ordering::SeqCst), 2);
    assert_eq!(report.requests_issued, 2);
    assert_eq!(
        report.corpus.get(&TootUrl::new("u2")).unwrap().toxicity,
        Some(0.73)
    );
}

#[test]
fn fully_scored_corpus_issues_no_requests() {
    let server = start_mock("HTTP/1.1 200 OK", fixed_score);
    let corpus = Corpus::from_toots([toot("u1", "text", Some(0.4))]).unwrap();
    let cfg = LabelerConfig::new(&server.endpoint, "k");
    let report = score_corpus(&corpus, &cfg).unwrap();
    assert_eq!(server.hits.load(Ordering::SeqCst), 0);
    assert_eq!(report.requests_issued, 0);
}

#[test]
fn second_run_served_from_cache() {
    let server = start_mock("HTTP/1.1 200 OK", fixed_score);
    let dir = tempfile::tempdir().unwrap();
    let cache_path = dir.path().join("scores.cache");
    let corpus = Corpus::from_toots([
        toot("u1", "cached text one", None),
        toot("u2", "cached text two", None),
    ])
    .unwrap();
    let mut cfg = LabelerConfig::new(&server.endpoint, "k");
    cfg.cache_path = Some(cache_path);

    let first = score_corpus(&corpus, &cfg).unwrap();
    assert_eq!(first.requests_issued, 2);
    let after_first = server.hits.load(Ordering::SeqCst);

    let second = score_corpus(&corpus, &cfg).unwrap();
    assert_eq!(second.requests_issued, 0);
    assert_eq!(second.from_cache, 2);
    assert_eq!(server.hits.load(Ordering::SeqCst), after_first);
    assert_eq!(
        second.corpus.get(&TootUrl::new("u1")).unwrap().toxicity,
        Some(0.73)
    );
}

#[test]
fn auth_failure_is_fatal() {
    let server = start_mock("HTTP/1.1 403 Forbidden", |_| "{}".to_string());
    let corpus = Corpus::from_toots([toot("u1", "text", None)]).unwrap();
    let cfg = LabelerConfig::new(&server.endpoint, "bad-key");
    assert!(matches!(
        score_corpus(&corpus, &cfg),
        Err(LabelError::Auth(403))
    ));
}

#[test]
fn server_errors_leave_toot_unscored_after_retries() {
    let server = start_mock("HTTP/1.1 500 Internal Server Error", |_| "{}".to_string());
    let corpus = Corpus::from_toots([toot("u1", "text", None)]).unwrap();
    let cfg = LabelerConfig::new(&server.endpoint, "k");
    let report = score_corpus(&corpus, &cfg).unwrap();
    assert_eq!(report.failed, 1);
    assert_eq!(
        report.corpus.get(&TootUrl::new("u1")).unwrap().toxicity,
        None
    );
    // Three attempts were made.
    assert_eq!(server.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn qps_limit_respected_on_mock_timestamps() {
    let server = start_mock("HTTP/1.1 200 OK", fixed_score);
    let toots: Vec<Toot> = (0..9)
        .map(|i| toot(&format!("u{i}"), &format!("text number {i}"), None))
        .collect();
    let corpus = Corpus::from_toots(toots).unwrap();
    let mut cfg = LabelerConfig::new(&server.endpoint, "k");
    cfg.qps_limit = 4.0;
    cfg.max_in_flight = 4;
    let report = score_corpus(&corpus, &cfg).unwrap();
    assert_eq!(report.failed, 0);
    let stamps = server.stamps.lock().unwrap();
    assert_eq!(stamps.len(), 9);
    let mut sorted: Vec<Instant> = stamps.clone();
    sorted.sort();
    // No window of 5 consecutive arrivals inside one second.
    for window in sorted.windows(5) {
        let span = window[4].duration_since(window[0]);
        assert!(
            span >= Duration::from_millis(900),
            "5 requests within {span:?}"
        );
    }
}

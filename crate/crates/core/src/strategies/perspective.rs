//! Client for an external toxicity-scoring service speaking the
//! commentAnalyzer JSON wire format.
//!
//! Request (`POST {endpoint}?key={KEY}`):
//!
//! ```json
//! {"comment": {"text": "..."}, "languages": ["en"],
//!  "requestedAttributes": {"TOXICITY": {}}, "doNotStore": true}
//! ```
//!
//! Response: `attributeScores.TOXICITY.summaryScore.value` in `[0, 1]`.
//!
//! Scores are cached by the SHA-256 of the text. Recorded responses can be
//! replayed from a JSONL fixture whose lines are `{"text": .., "response": ..}`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerspectiveConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    /// JSONL file of recorded responses.
    pub replay: Option<PathBuf>,
    /// Persistent score cache (JSONL of `{"hash", "score"}`).
    pub cache: Option<PathBuf>,
    /// Never make network calls; unknown texts become unscored.
    pub offline: bool,
    pub min_interval_ms: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub timeout_ms: u64,
}

impl Default for PerspectiveConfig {
    fn default() -> Self {
        PerspectiveConfig {
            endpoint: "https://commentanalyzer.googleapis.com/v1alpha1/comments:analyze".into(),
            api_key_env: "PERSPECTIVE_API_KEY".into(),
            replay: None,
            cache: None,
            offline: false,
            min_interval_ms: 1000,
            max_retries: 3,
            backoff_ms: 500,
            timeout_ms: 30_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterCounters {
    pub cache_hits: u64,
    pub replay_hits: u64,
    pub requests: u64,
    pub failures: u64,
    pub unscored: u64,
}

pub struct PerspectiveAdapter {
    config: PerspectiveConfig,
    api_key: Option<String>,
    replay: HashMap<String, f64>,
    cache: Mutex<BTreeMap<String, f64>>,
    /// Time of the last request; held for the duration of each call so
    /// requests are serialized.
    limiter: Mutex<Option<Instant>>,
    agent: ureq::Agent,
    cache_hits: AtomicU64,
    replay_hits: AtomicU64,
    requests: AtomicU64,
    failures: AtomicU64,
    unscored: AtomicU64,
}

pub fn text_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn request_body(text: &str) -> Value {
    json!({
        "comment": {"text": text},
        "languages": ["en"],
        "requestedAttributes": {"TOXICITY": {}},
        "doNotStore": true,
    })
}

pub fn parse_response(v: &Value) -> Result<f64> {
    let score = v
        .pointer("/attributeScores/TOXICITY/summaryScore/value")
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::Adapter("response lacks TOXICITY summary score".into()))?;
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::Adapter(format!("score {score} outside [0, 1]")));
    }
    Ok(score)
}

fn load_replay(path: &Path) -> Result<HashMap<String, f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Value =
            serde_json::from_str(line).map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        let t = v
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Format(format!("{}:{}: missing text", path.display(), n + 1)))?;
        let score = parse_response(v.get("response").unwrap_or(&Value::Null))?;
        out.insert(text_hash(t), score);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    hash: String,
    score: f64,
}

fn load_cache(path: &Path) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(Error::io(path, e)),
    };
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str::<CacheLine>(line) {
            Ok(c) => {
                out.insert(c.hash, c.score);
            }
            Err(e) => log::warn!("ignoring bad cache line in {}: {e}", path.display()),
        }
    }
    Ok(out)
}

impl PerspectiveAdapter {
    pub fn new(config: PerspectiveConfig) -> Result<Self> {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Self::with_key(config, api_key)
    }

    /// Like [`PerspectiveAdapter::new`] with the key supplied directly.
    pub fn with_key(config: PerspectiveConfig, api_key: Option<String>) -> Result<Self> {
        let replay = match &config.replay {
            Some(p) => load_replay(p)?,
            None => HashMap::new(),
        };
        let cache = match &config.cache {
            Some(p) => load_cache(p)?,
            None => BTreeMap::new(),
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .build()
            .into();
        Ok(PerspectiveAdapter {
            config,
            api_key,
            replay,
            cache: Mutex::new(cache),
            limiter: Mutex::new(None),
            agent,
            cache_hits: AtomicU64::new(0),
            replay_hits: AtomicU64::new(0),
            requests: AtomicU64::new(0),
            failures: AtomicU64::new(0),
            unscored: AtomicU64::new(0),
        })
    }

    /// Toxicity probability of `text`, or `None` when it cannot be scored.
    pub fn score(&self, text: &str) -> Option<f64> {
        let h = text_hash(text);
        if let Some(&s) = self.cache.lock().unwrap().get(&h) {
            self.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Some(s);
        }
        if let Some(&s) = self.replay.get(&h) {
            self.replay_hits.fetch_add(1, Ordering::Relaxed);
            return Some(s);
        }
        let fetched = match (&self.api_key, self.config.offline) {
            (Some(key), false) => self.fetch(text, key),
            _ => None,
        };
        match fetched {
            Some(s) => {
                self.cache.lock().unwrap().insert(h, s);
                Some(s)
            }
            None => {
                self.unscored.fetch_add(1, Ordering::Relaxed);
                None
            }
        }
    }

    fn fetch(&self, text: &str, key: &str) -> Option<f64> {
        let mut last = self.limiter.lock().unwrap();
        let interval = Duration::from_millis(self.config.min_interval_ms);
        let url = format!("{}?key={}", self.config.endpoint, key);
        let body = request_body(text).to_string();
        for attempt in 0..=self.config.max_retries {
            if let Some(t) = *last {
                let since = t.elapsed();
                if since < interval {
                    thread::sleep(interval - since);
                }
            }
            *last = Some(Instant::now());
            self.requests.fetch_add(1, Ordering::Relaxed);
            match self.call(&url, &body) {
                Ok(s) => return Some(s),
                Err(e) => {
                    self.failures.fetch_add(1, Ordering::Relaxed);
                    log::warn!("toxicity request failed (attempt {}): {e}", attempt + 1);
                    if attempt < self.config.max_retries {
                        thread::sleep(Duration::from_millis(self.config.backoff_ms << attempt.min(16)));
                    }
                }
            }
        }
        None
    }

    fn call(&self, url: &str, body: &str) -> Result<f64> {
        let mut resp = self
            .agent
            .post(url)
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| Error::Adapter(e.to_string()))?;
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Adapter(e.to_string()))?;
        let v: Value = serde_json::from_str(&text)?;
        parse_response(&v)
    }

    pub fn counters(&self) -> AdapterCounters {
        AdapterCounters {
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
            replay_hits: self.replay_hits.load(Ordering::Relaxed),
            requests: self.requests.load(Ordering::Relaxed),
            failures: self.failures.load(Ordering::Relaxed),
            unscored: self.unscored.load(Ordering::Relaxed),
        }
    }

    /// Writes the score cache (if configured) via a temporary file and rename.
    pub fn save_cache(&self) -> Result<()> {
        let Some(path) = &self.config.cache else {
            return Ok(());
        };
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            for (hash, &score) in self.cache.lock().unwrap().iter() {
                let line = serde_json::to_string(&CacheLine {
                    hash: hash.clone(),
                    score,
                })?;
                writeln!(f, "{line}").map_err(|e| Error::io(&tmp, e))?;
            }
            f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        }
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_shape() {
        let v = request_body("hi");
        assert_eq!(v["comment"]["text"], "hi");
        assert_eq!(v["doNotStore"], true);
        assert!(v["requestedAttributes"]["TOXICITY"].is_object());
    }

    #[test]
    fn response_parsing() {
        let ok = json!({"attributeScores": {"TOXICITY": {"summaryScore": {"value": 0.91, "type": "PROBABILITY"}}}});
        assert_eq!(parse_response(&ok).unwrap(), 0.91);
        assert!(parse_response(&json!({})).is_err());
        let bad = json!({"attributeScores": {"TOXICITY": {"summaryScore": {"value": 3.0}}}});
        assert!(parse_response(&bad).is_err());
    }

    #[test]
    fn offline_without_fixture_is_unscored() {
        let cfg = PerspectiveConfig {
            offline: true,
            ..PerspectiveConfig::default()
        };
        let a = PerspectiveAdapter::with_key(cfg, Some("k".into())).unwrap();
        assert_eq!(a.score("text"), None);
        assert_eq!(a.counters().unscored, 1);
        assert_eq!(a.counters().requests, 0);
    }
}

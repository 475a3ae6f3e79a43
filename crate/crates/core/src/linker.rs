//! Person-mention detection and linking against the People Dataset.
//!
//! Mentions are found by longest-match gazetteer lookup over sentence
//! tokens, or supplied by an external NER process. Each mention is resolved
//! to the candidate whose names are most similar to the surface text; an
//! optional MediaWiki search resolver can be consulted first.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::ingest::{Document, Sentence};
use crate::kb::{classify_group, DemographicGroup, Gazetteer, PeopleIndex, RegionMap};
use crate::text::normalize_surface;

pub const DEFAULT_LINK_THRESHOLD: f64 = 0.85;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MentionSpan {
    pub doc_id: String,
    pub sentence_index: usize,
    /// Token range `[start, end)` within the sentence.
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkedMention {
    pub span: MentionSpan,
    pub entity_id: String,
    pub group: DemographicGroup,
    pub similarity: f64,
}

fn span_for(doc_id: &str, sentence: &Sentence, start: usize, end: usize) -> MentionSpan {
    let from = sentence.tokens[start].start;
    let to = sentence.tokens[end - 1].end;
    MentionSpan {
        doc_id: doc_id.to_owned(),
        sentence_index: sentence.index,
        start,
        end,
        surface: sentence.text[from..to].to_owned(),
    }
}

/// Longest-match, non-overlapping gazetteer matches in every sentence, in
/// document order.
pub fn detect_person_mentions(doc: &Document, gaz: &Gazetteer) -> Vec<MentionSpan> {
    let mut out = Vec::new();
    for s in &doc.sentences {
        let norms = s.token_norms();
        for (m, _) in gaz.find_names(&norms) {
            out.push(span_for(&doc.doc_id, s, m.start, m.end));
        }
    }
    out
}

/// Levenshtein distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 − lev(a, b) / max(|a|, |b|)` on the normalized forms.
pub fn name_similarity(surface: &str, candidate: &str) -> f64 {
    let a = normalize_surface(surface);
    let b = normalize_surface(candidate);
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(&a, &b) as f64 / longest as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkStats {
    pub spans: u64,
    pub linked: u64,
    pub unlinked: u64,
    pub online_resolved: u64,
}

impl LinkStats {
    pub fn merge(&mut self, o: &LinkStats) {
        self.spans += o.spans;
        self.linked += o.linked;
        self.unlinked += o.unlinked;
        self.online_resolved += o.online_resolved;
    }
}

/// Everything needed to link a document.
pub struct Linker<'a> {
    pub gazetteer: &'a Gazetteer,
    pub people: &'a PeopleIndex,
    pub regions: &'a RegionMap,
    pub threshold: f64,
    pub resolver: Option<&'a OnlineResolver>,
    pub ner: Option<&'a NerAdapter>,
}

impl<'a> Linker<'a> {
    pub fn new(
        gazetteer: &'a Gazetteer,
        people: &'a PeopleIndex,
        regions: &'a RegionMap,
        threshold: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::Validation(format!("link threshold {threshold} outside [0, 1]")));
        }
        Ok(Linker {
            gazetteer,
            people,
            regions,
            threshold,
            resolver: None,
            ner: None,
        })
    }

    fn best_candidate(&self, surface: &str) -> Option<(String, f64)> {
        let mut best: Option<(&str, f64)> = None;
        // candidates are sorted, so a strict comparison keeps the smallest id
        for id in self.gazetteer.lookup(surface) {
            let Some(rec) = self.people.get(id) else {
                continue;
            };
            let sim = rec.names().map(|n| name_similarity(surface, n)).fold(0.0, f64::max);
            if best.is_none_or(|(_, b)| sim > b) {
                best = Some((id, sim));
            }
        }
        best.filter(|&(_, s)| s >= self.threshold)
            .map(|(id, s)| (id.to_owned(), s))
    }

    fn resolve_online(&self, surface: &str) -> Option<(String, f64)> {
        let (title, id) = self.resolver?.resolve(surface)?;
        if !self.people.contains(&id) {
            return None;
        }
        let sim = name_similarity(surface, &title);
        (sim >= self.threshold).then_some((id, sim))
    }

    fn spans(&self, doc: &Document) -> Result<Vec<MentionSpan>> {
        match self.ner {
            Some(ner) => ner.spans(doc),
            None => Ok(detect_person_mentions(doc, self.gazetteer)),
        }
    }

    /// Links every detected mention whose best candidate clears the
    /// threshold; the rest are counted as unlinked.
    pub fn link(&self, doc: &Document) -> Result<(Vec<LinkedMention>, LinkStats)> {
        let mut stats = LinkStats::default();
        let mut out = Vec::new();
        for span in self.spans(doc)? {
            stats.spans += 1;
            let online = self.resolve_online(&span.surface);
            if online.is_some() {
                stats.online_resolved += 1;
            }
            match online.or_else(|| self.best_candidate(&span.surface)) {
                Some((entity_id, similarity)) => {
                    let rec = self.people.get(&entity_id).expect("candidate exists in the dataset");
                    stats.linked += 1;
                    out.push(LinkedMention {
                        span,
                        group: classify_group(rec, self.regions),
                        entity_id,
                        similarity,
                    });
                }
                None => stats.unlinked += 1,
            }
        }
        Ok((out, stats))
    }
}

/// Offline linking with the gazetteer alone.
pub fn link_mentions(
    doc: &Document,
    gazetteer: &Gazetteer,
    people: &PeopleIndex,
    regions: &RegionMap,
    threshold: f64,
) -> Result<(Vec<LinkedMention>, LinkStats)> {
    Linker::new(gazetteer, people, regions, threshold)?.link(doc)
}

/// External NER process. It receives one sentence per line on stdin and
/// writes `sentence_index TAB start TAB end` lines (token offsets,
/// end-exclusive) on stdout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NerAdapter {
    pub command: Vec<String>,
}

impl NerAdapter {
    pub fn spans(&self, doc: &Document) -> Result<Vec<MentionSpan>> {
        let (prog, args) = self
            .command
            .split_first()
            .ok_or_else(|| Error::Validation("empty NER command".into()))?;
        let mut child = Command::new(prog)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Adapter(format!("cannot start NER process {prog:?}: {e}")))?;
        let mut input = String::new();
        for s in &doc.sentences {
            input.push_str(&s.text.replace(['\n', '\r'], " "));
            input.push('\n');
        }
        let mut stdin = child.stdin.take().expect("stdin is piped");
        let writer = thread::spawn(move || stdin.write_all(input.as_bytes()));
        let stdout = child.stdout.take().expect("stdout is piped");
        let mut spans = Vec::new();
        for line in BufReader::new(stdout).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            spans.push(self.parse_span(doc, &line)?);
        }
        writer
            .join()
            .map_err(|_| Error::Adapter("NER writer thread panicked".into()))??;
        let status = child.wait()?;
        if !status.success() {
            return Err(Error::Adapter(format!("NER process exited with {status}")));
        }
        spans.sort();
        spans.dedup();
        Ok(spans)
    }

    fn parse_span(&self, doc: &Document, line: &str) -> Result<MentionSpan> {
        let bad = || Error::Adapter(format!("malformed NER line {line:?}"));
        let parts: Vec<usize> = line
            .split('\t')
            .map(|f| f.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let [idx, start, end] = parts[..] else {
            return Err(bad());
        };
        let s = doc.sentences.get(idx).ok_or_else(bad)?;
        if start >= end || end > s.tokens.len() {
            return Err(bad());
        }
        Ok(span_for(&doc.doc_id, s, start, end))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResolverConfig {
    /// MediaWiki `api.php` URL.
    pub endpoint: String,
    pub cache: Option<PathBuf>,
    pub min_interval_ms: u64,
    pub timeout_ms: u64,
    pub offline: bool,
}

impl Default for ResolverConfig {
    fn default() -> Self {
        ResolverConfig {
            endpoint: "https://en.wikipedia.org/w/api.php".into(),
            cache: None,
            min_interval_ms: 1000,
            timeout_ms: 30_000,
            offline: false,
        }
    }
}

/// Looks surfaces up with MediaWiki search and maps the first hit to its
/// Wikidata item. Results, including misses, are cached on disk as
/// `surface TAB title TAB id` lines keyed by normalized surface.
pub struct OnlineResolver {
    config: ResolverConfig,
    agent: ureq::Agent,
    cache: Mutex<BTreeMap<String, Option<(String, String)>>>,
    limiter: Mutex<Option<Instant>>,
    requests: AtomicU64,
    failures: AtomicU64,
}

/// Title and `wikibase_item` of the first page in a search response.
pub fn parse_search_response(v: &Value) -> Option<(String, String)> {
    let pages = v.pointer("/query/pages")?;
    let page = match pages {
        Value::Object(m) => m
            .values()
            .min_by_key(|p| p.get("index").and_then(Value::as_i64).unwrap_or(i64::MAX))?,
        Value::Array(a) => a.first()?,
        _ => return None,
    };
    let title = page.get("title")?.as_str()?;
    let id = page.pointer("/pageprops/wikibase_item")?.as_str()?;
    Some((title.to_owned(), id.to_owned()))
}

fn load_resolver_cache(path: &Path) -> Result<BTreeMap<String, Option<(String, String)>>> {
    let mut out = BTreeMap::new();
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(Error::io(path, e)),
    };
    for line in text.lines() {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            log::warn!("ignoring bad resolver cache line {line:?}");
            continue;
        }
        let hit = (!f[2].is_empty()).then(|| (f[1].to_owned(), f[2].to_owned()));
        out.insert(f[0].to_owned(), hit);
    }
    Ok(out)
}

impl OnlineResolver {
    pub fn new(config: ResolverConfig) -> Result<Self> {
        let cache = match &config.cache {
            Some(p) => load_resolver_cache(p)?,
            None => BTreeMap::new(),
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .build()
            .into();
        Ok(OnlineResolver {
            config,
            agent,
            cache: Mutex::new(cache),
            limiter: Mutex::new(None),
            requests: AtomicU64::new(0),
            failures: AtomicU64::new(0),
        })
    }

    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    pub fn failures(&self) -> u64 {
        self.failures.load(Ordering::Relaxed)
    }

    /// `(title, entity_id)` of the first search hit for `surface`. Network
    /// failures and malformed responses yield `None` and are not cached.
    pub fn resolve(&self, surface: &str) -> Option<(String, String)> {
        let key = normalize_surface(surface);
        if key.is_empty() {
            return None;
        }
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return hit.clone();
        }
        if self.config.offline {
            return None;
        }
        match self.fetch(&key) {
            Ok(hit) => {
                let mut cache = self.cache.lock().unwrap();
                cache.insert(key, hit.clone());
                if let Err(e) = self.persist(&cache) {
                    log::warn!("cannot write resolver cache: {e}");
                }
                hit
            }
            Err(e) => {
                self.failures.fetch_add(1, Ordering::Relaxed);
                log::warn!("online resolution of {key:?} failed: {e}");
                None
            }
        }
    }

    fn fetch(&self, query: &str) -> Result<Option<(String, String)>> {
        let mut last = self.limiter.lock().unwrap();
        let interval = Duration::from_millis(self.config.min_interval_ms);
        if let Some(t) = *last {
            let since = t.elapsed();
            if since < interval {
                thread::sleep(interval - since);
            }
        }
        *last = Some(Instant::now());
        self.requests.fetch_add(1, Ordering::Relaxed);
        let mut resp = self
            .agent
            .get(&self.config.endpoint)
            .query("action", "query")
            .query("generator", "search")
            .query("gsrsearch", query)
            .query("gsrlimit", "1")
            .query("prop", "pageprops")
            .query("ppprop", "wikibase_item")
            .query("format", "json")
            .call()
            .map_err(|e| Error::Adapter(e.to_string()))?;
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Adapter(e.to_string()))?;
        let v: Value = serde_json::from_str(&body)?;
        if v.get("query").is_none() && v.get("batchcomplete").is_none() {
            return Err(Error::Adapter("unexpected search response".into()));
        }
        Ok(parse_search_response(&v))
    }

    fn persist(&self, cache: &BTreeMap<String, Option<(String, String)>>) -> Result<()> {
        let Some(path) = &self.config.cache else {
            return Ok(());
        };
        let tmp = path.with_extension("tmp");
        let mut s = String::new();
        for (k, hit) in cache {
            let (t, id) = hit.as_ref().map_or(("", ""), |(t, i)| (t.as_str(), i.as_str()));
            s.push_str(&format!("{k}\t{}\t{id}\n", t.replace(['\t', '\n'], " ")));
        }
        fs::write(&tmp, s).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}

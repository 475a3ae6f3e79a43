//! Corpus ingestion: WARC/WET and JSONL readers, language identification,
//! sentence splitting, the document gate and seeded sampling.

pub mod lang;
pub mod sentences;
pub mod warc;

use std::collections::BTreeMap;
use std::io::{BufRead, Read};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
pub use lang::{detect_language, LanguageGuess};
pub use sentences::{split_sentences, Sentence};
use warc::{ReadItem, RecordErrorKind, WarcReader, WarcRecord};

/// Gate thresholds: documents need at least this many sentences and at least
/// this many tokens per sentence on average.
pub const MIN_SENTENCES: usize = 5;
pub const MIN_MEAN_WORDS: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub doc_id: String,
    pub url: Option<String>,
    pub body: String,
    /// Input file the document came from, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GateStatus {
    Kept,
    DroppedLanguage,
    DroppedTooFewSentences,
    DroppedShortSentences,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub url: Option<String>,
    pub source: Option<String>,
    pub lang: String,
    pub gate_status: GateStatus,
    pub sentences: Vec<Sentence>,
}

impl Document {
    /// Sentence texts joined by single spaces.
    pub fn text(&self) -> String {
        self.sentences
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn mean_words(&self) -> f64 {
        if self.sentences.is_empty() {
            return 0.0;
        }
        let words: usize = self.sentences.iter().map(|s| s.tokens.len()).sum();
        words as f64 / self.sentences.len() as f64
    }

    /// Compact form for shards: sentences as text only.
    pub fn to_stored(&self) -> StoredDocument {
        StoredDocument {
            doc_id: self.doc_id.clone(),
            url: self.url.clone(),
            source: self.source.clone(),
            lang: self.lang.clone(),
            gate_status: self.gate_status,
            sentences: self.sentences.iter().map(|s| s.text.clone()).collect(),
        }
    }
}

/// Shard representation of a [`Document`]; tokens are recomputed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredDocument {
    pub doc_id: String,
    pub url: Option<String>,
    pub source: Option<String>,
    pub lang: String,
    pub gate_status: GateStatus,
    pub sentences: Vec<String>,
}

impl From<StoredDocument> for Document {
    fn from(s: StoredDocument) -> Self {
        Document {
            doc_id: s.doc_id,
            url: s.url,
            source: s.source,
            lang: s.lang,
            gate_status: s.gate_status,
            sentences: s
                .sentences
                .into_iter()
                .enumerate()
                .map(|(i, t)| Sentence::new(i, t))
                .collect(),
        }
    }
}

/// Counters from reading one or more corpus files.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseStats {
    pub records: u64,
    pub documents: u64,
    pub skipped_types: u64,
    pub record_errors: BTreeMap<String, u64>,
}

impl ParseStats {
    pub fn error_total(&self) -> u64 {
        self.record_errors.values().sum()
    }

    fn count_error(&mut self, kind: RecordErrorKind) {
        *self.record_errors.entry(format!("{kind:?}")).or_default() += 1;
    }

    pub fn merge(&mut self, other: &ParseStats) {
        self.records += other.records;
        self.documents += other.documents;
        self.skipped_types += other.skipped_types;
        for (k, v) in &other.record_errors {
            *self.record_errors.entry(k.clone()).or_default() += v;
        }
    }
}

/// Iterator of documents from a WARC/WET stream, counting what it skips.
pub struct WarcDocuments<R: BufRead> {
    reader: WarcReader<R>,
    pub stats: ParseStats,
}

impl<R: BufRead> Iterator for WarcDocuments<R> {
    type Item = Result<RawDocument>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            match self.reader.next()? {
                Err(e) => return Some(Err(e)),
                Ok(ReadItem::Error(kind)) => self.stats.count_error(kind),
                Ok(ReadItem::Record(rec)) => {
                    self.stats.records += 1;
                    match record_to_document(rec) {
                        Some(doc) => {
                            self.stats.documents += 1;
                            return Some(Ok(doc));
                        }
                        None => self.stats.skipped_types += 1,
                    }
                }
            }
        }
    }
}

pub fn parse_warc<R: Read>(reader: R) -> WarcDocuments<std::io::BufReader<R>> {
    WarcDocuments {
        reader: WarcReader::new(reader),
        stats: ParseStats::default(),
    }
}

/// `response` and `conversion` records become documents; everything else is
/// skipped.
pub fn record_to_document(rec: WarcRecord) -> Option<RawDocument> {
    let kind = rec.record_type()?.to_ascii_lowercase();
    let url = rec.header("WARC-Target-URI").map(str::to_owned);
    let doc_id = rec
        .header("WARC-Record-ID")
        .map(str::to_owned)
        .unwrap_or_else(|| synthesized_id(&rec.payload));
    let body = match kind.as_str() {
        "conversion" => String::from_utf8_lossy(&rec.payload).into_owned(),
        "response" => response_text(&rec.payload),
        _ => return None,
    };
    Some(RawDocument {
        doc_id,
        url,
        body,
        source: None,
    })
}

fn synthesized_id(payload: &[u8]) -> String {
    let digest = Sha256::digest(payload);
    format!("sha256:{}", hex::encode(&digest[..16]))
}

fn response_text(payload: &[u8]) -> String {
    let (headers, body) = if payload.starts_with(b"HTTP/") {
        match find(payload, b"\r\n\r\n") {
            Some(i) => (&payload[..i], &payload[i + 4..]),
            None => (payload, &b""[..]),
        }
    } else {
        (&b""[..], payload)
    };
    let body = String::from_utf8_lossy(body);
    let header_says_html = String::from_utf8_lossy(headers)
        .to_ascii_lowercase()
        .contains("text/html");
    if header_says_html || looks_like_html(&body) {
        strip_html(&body)
    } else {
        body.into_owned()
    }
}

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

fn looks_like_html(s: &str) -> bool {
    let head = s.trim_start();
    let prefix: String = head.chars().take(512).collect::<String>().to_ascii_lowercase();
    prefix.starts_with("<!doctype html") || prefix.contains("<html") || prefix.contains("<body")
}

/// Drops `script`/`style` subtrees, turns every tag into a space, decodes
/// common entities and collapses whitespace.
pub fn strip_html(html: &str) -> String {
    let lower = html.to_ascii_lowercase();
    let mut out = String::with_capacity(html.len());
    let mut i = 0;
    while i < html.len() {
        let rest = &lower[i..];
        if rest.starts_with('<') {
            let skip_to = ["script", "style"].iter().find_map(|tag| {
                let open = format!("<{tag}");
                let after = rest.as_bytes().get(open.len()).copied();
                if rest.starts_with(&open) && matches!(after, Some(b'>' | b' ' | b'\t' | b'\n' | b'\r' | b'/')) {
                    let close = format!("</{tag}");
                    Some(match rest.find(&close) {
                        Some(c) => match rest[c..].find('>') {
                            Some(g) => i + c + g + 1,
                            None => html.len(),
                        },
                        None => html.len(),
                    })
                } else {
                    None
                }
            });
            let next = skip_to.unwrap_or_else(|| match rest.find('>') {
                Some(g) => i + g + 1,
                None => html.len(),
            });
            out.push(' ');
            i = next;
        } else {
            let end = rest.find('<').map(|p| i + p).unwrap_or(html.len());
            out.push_str(&html[i..end]);
            i = end;
        }
    }
    let decoded = out
        .replace("&nbsp;", " ")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&apos;", "'")
        .replace("&amp;", "&");
    decoded.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Deserialize)]
struct JsonlRow {
    doc_id: Option<String>,
    #[serde(default)]
    url: Option<String>,
    text: String,
}

/// One JSON object per line with `doc_id`, `url` and `text`. Rows that do not
/// parse are counted as record errors; a missing `doc_id` is synthesized.
pub fn parse_jsonl<R: BufRead>(reader: R) -> Result<(Vec<RawDocument>, ParseStats)> {
    let mut stats = ParseStats::default();
    let mut docs = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        stats.records += 1;
        match serde_json::from_str::<JsonlRow>(&line) {
            Ok(row) => {
                stats.documents += 1;
                docs.push(RawDocument {
                    doc_id: row.doc_id.unwrap_or_else(|| synthesized_id(row.text.as_bytes())),
                    url: row.url,
                    body: row.text,
                    source: None,
                });
            }
            Err(_) => *stats.record_errors.entry("Json".into()).or_default() += 1,
        }
    }
    Ok((docs, stats))
}

/// Language filter, sentence-count gate and mean-length gate, in that order.
/// Exactly [`MIN_SENTENCES`] sentences, or a mean of exactly
/// [`MIN_MEAN_WORDS`], passes.
pub fn document_gate(raw: &RawDocument) -> Document {
    let guess = detect_language(&raw.body);
    let sentences = if guess.is("en") {
        split_sentences(&raw.body)
    } else {
        Vec::new()
    };
    let mut doc = Document {
        doc_id: raw.doc_id.clone(),
        url: raw.url.clone(),
        source: raw.source.clone(),
        lang: guess.code().to_owned(),
        gate_status: GateStatus::Kept,
        sentences,
    };
    doc.gate_status = if !guess.is("en") {
        GateStatus::DroppedLanguage
    } else if doc.sentences.len() < MIN_SENTENCES {
        GateStatus::DroppedTooFewSentences
    } else if doc.mean_words() < MIN_MEAN_WORDS {
        GateStatus::DroppedShortSentences
    } else {
        GateStatus::Kept
    };
    doc
}

/// Uniform sample of `n` documents without replacement, returned in input
/// order. Asking for more than is available returns everything.
pub fn sample_corpus<T: Clone>(docs: &[T], n: usize, seed: u64) -> Vec<T> {
    sample_indices(docs.len(), n, seed)
        .into_iter()
        .map(|i| docs[i].clone())
        .collect()
}

/// Sorted indices chosen by [`sample_corpus`].
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Vec<usize> {
    if n >= len {
        if n > len {
            log::warn!("requested sample of {n} from {len} documents; returning all");
        }
        return (0..len).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, len, n).into_vec();
    idx.sort_unstable();
    idx
}

/// Reads a corpus file in the given format and tags documents with `source`.
pub fn read_corpus<R: Read>(reader: R, format: CorpusFormat, source: &str) -> Result<(Vec<RawDocument>, ParseStats)> {
    let (mut docs, stats) = match format {
        CorpusFormat::Warc => {
            let mut it = parse_warc(reader);
            let docs = it.by_ref().collect::<Result<Vec<_>>>()?;
            (docs, it.stats)
        }
        CorpusFormat::Jsonl => parse_jsonl(std::io::BufReader::new(reader))?,
    };
    for d in &mut docs {
        d.source = Some(source.to_owned());
    }
    Ok((docs, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Warc,
    Jsonl,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "warc" | "wet" => Ok(CorpusFormat::Warc),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(Error::Validation(format!("unknown corpus format {other:?}"))),
        }
    }
}

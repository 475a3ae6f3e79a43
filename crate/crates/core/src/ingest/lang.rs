//! Character-trigram language identification.
//!
//! Each bundled language is a trigram frequency vector built from a short
//! reference text. A document is scored by cosine similarity against every
//! profile; the best profile wins and its similarity is the confidence.

use std::collections::BTreeMap;
use std::sync::OnceLock;

const PROFILE_SOURCES: [(&str, &str); 7] = [
    ("en", include_str!("../../data/lang/en.txt")),
    ("fr", include_str!("../../data/lang/fr.txt")),
    ("de", include_str!("../../data/lang/de.txt")),
    ("es", include_str!("../../data/lang/es.txt")),
    ("it", include_str!("../../data/lang/it.txt")),
    ("pt", include_str!("../../data/lang/pt.txt")),
    ("nl", include_str!("../../data/lang/nl.txt")),
];

/// Only this many leading characters of a document are profiled.
const MAX_CHARS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanguageGuess {
    /// `None` when the text carries no letters to profile.
    pub lang: Option<&'static str>,
    pub confidence: f64,
}

impl LanguageGuess {
    pub fn is(&self, code: &str) -> bool {
        self.lang == Some(code)
    }

    pub fn code(&self) -> &'static str {
        self.lang.unwrap_or("und")
    }
}

struct Profile {
    lang: &'static str,
    weights: BTreeMap<[char; 3], f64>,
}

fn trigram_counts(text: &str) -> BTreeMap<[char; 3], f64> {
    let mut counts = BTreeMap::new();
    let mut taken = 0usize;
    for word in text.split(|c: char| !c.is_alphabetic()) {
        if word.is_empty() {
            continue;
        }
        let padded: Vec<char> = std::iter::once(' ')
            .chain(word.chars().flat_map(char::to_lowercase))
            .chain(std::iter::once(' '))
            .collect();
        for w in padded.windows(3) {
            *counts.entry([w[0], w[1], w[2]]).or_insert(0.0) += 1.0;
        }
        taken += word.len();
        if taken >= MAX_CHARS {
            break;
        }
    }
    counts
}

fn normalized(mut v: BTreeMap<[char; 3], f64>) -> BTreeMap<[char; 3], f64> {
    let norm = v.values().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.values_mut().for_each(|x| *x /= norm);
    }
    v
}

fn profiles() -> &'static [Profile] {
    static PROFILES: OnceLock<Vec<Profile>> = OnceLock::new();
    PROFILES.get_or_init(|| {
        PROFILE_SOURCES
            .iter()
            .map(|(lang, text)| Profile {
                lang,
                weights: normalized(trigram_counts(text)),
            })
            .collect()
    })
}

/// Codes of the bundled profiles.
pub fn supported_languages() -> Vec<&'static str> {
    PROFILE_SOURCES.iter().map(|(l, _)| *l).collect()
}

/// Reference text a profile was built from.
pub fn profile_text(code: &str) -> Option<&'static str> {
    PROFILE_SOURCES.iter().find(|(l, _)| *l == code).map(|(_, t)| *t)
}

pub fn detect_language(text: &str) -> LanguageGuess {
    let doc = normalized(trigram_counts(text));
    if doc.is_empty() {
        return LanguageGuess {
            lang: None,
            confidence: 0.0,
        };
    }
    let mut best = LanguageGuess {
        lang: None,
        confidence: 0.0,
    };
    for p in profiles() {
        let score: f64 = doc.iter().filter_map(|(k, v)| p.weights.get(k).map(|w| v * w)).sum();
        // ties keep the earlier profile, so the result is order-stable
        if best.lang.is_none() || score > best.confidence {
            best = LanguageGuess {
                lang: Some(p.lang),
                confidence: score.clamp(0.0, 1.0),
            };
        }
    }
    best
}

//! Filtering strategies behind a common verdict interface.
//!
//! Rule- and classifier-based strategies judge single sentences; quality
//! strategies judge whole documents.

pub mod lexicon;
pub mod linear;
pub mod perspective;
pub mod quality;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Document, Sentence};
pub use lexicon::Lexicon;
pub use linear::{hash_features, train_linear, HashedLinearModel, TrainParams};
pub use perspective::{PerspectiveAdapter, PerspectiveConfig};
pub use quality::{calibrate_threshold, quality_gate};

/// Default probability threshold for the toxicity classifiers.
pub const DEFAULT_TOXICITY_THRESHOLD: f64 = 0.8;
/// Hate-speech classifier flags on the most likely class.
pub const FASTTEXT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyCategory {
    RuleBased,
    ClassifierBased,
    QualityBased,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyId {
    Shutterstock,
    Hatebase,
    Perspective,
    Fasttext,
    Profanity,
    QualityWiki,
    QualityWebtext,
}

impl StrategyId {
    pub const ALL: [StrategyId; 7] = [
        StrategyId::Shutterstock,
        StrategyId::Hatebase,
        StrategyId::Perspective,
        StrategyId::Fasttext,
        StrategyId::Profanity,
        StrategyId::QualityWiki,
        StrategyId::QualityWebtext,
    ];

    pub fn category(self) -> StrategyCategory {
        match self {
            StrategyId::Shutterstock | StrategyId::Hatebase => StrategyCategory::RuleBased,
            StrategyId::Perspective | StrategyId::Fasttext | StrategyId::Profanity => StrategyCategory::ClassifierBased,
            StrategyId::QualityWiki | StrategyId::QualityWebtext => StrategyCategory::QualityBased,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StrategyId::Shutterstock => "shutterstock",
            StrategyId::Hatebase => "hatebase",
            StrategyId::Perspective => "perspective",
            StrategyId::Fasttext => "fasttext",
            StrategyId::Profanity => "profanity",
            StrategyId::QualityWiki => "quality_wiki",
            StrategyId::QualityWebtext => "quality_webtext",
        }
    }

    pub fn is_sentence_level(self) -> bool {
        self.category() != StrategyCategory::QualityBased
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown strategy {s:?}")))
    }
}

/// A sentence (`sentence: Some`) or a whole document.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UnitRef {
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentence: Option<usize>,
}

impl UnitRef {
    pub fn sentence(doc_id: &str, index: usize) -> Self {
        UnitRef {
            doc_id: doc_id.to_owned(),
            sentence: Some(index),
        }
    }

    pub fn document(doc_id: &str) -> Self {
        UnitRef {
            doc_id: doc_id.to_owned(),
            sentence: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyVerdict {
    pub unit: UnitRef,
    pub flagged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_terms: Option<Vec<String>>,
    /// The scorer could not produce a score; the unit is excluded from
    /// this strategy's statistics.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unscored: bool,
}

/// `p ≥ τ`.
pub fn threshold_flag(p: f64, tau: f64) -> bool {
    p >= tau
}

/// Flags a sentence containing at least one lexicon term and records every
/// matched occurrence.
pub fn lexicon_flag(unit: UnitRef, sentence: &Sentence, lexicon: &Lexicon) -> StrategyVerdict {
    let terms: Vec<String> = lexicon
        .matches(&sentence.token_norms())
        .into_iter()
        .map(str::to_owned)
        .collect();
    StrategyVerdict {
        unit,
        flagged: !terms.is_empty(),
        score: None,
        matched_terms: Some(terms),
        unscored: false,
    }
}

/// Something that maps a sentence to a probability of being harmful.
pub enum SentenceScorer {
    Linear(HashedLinearModel),
    External(Arc<PerspectiveAdapter>),
}

impl SentenceScorer {
    pub fn score(&self, sentence: &Sentence) -> Option<f64> {
        match self {
            SentenceScorer::Linear(m) => Some(m.predict_tokens(&sentence.token_norms())),
            SentenceScorer::External(a) => a.score(&sentence.text),
        }
    }
}

enum Kind {
    Lexicon(Lexicon),
    Classifier { scorer: SentenceScorer, threshold: f64 },
    Quality { model: HashedLinearModel, threshold: f64 },
}

/// A configured strategy ready to produce verdicts.
pub struct Strategy {
    id: StrategyId,
    kind: Kind,
}

impl Strategy {
    pub fn lexicon(id: StrategyId, lexicon: Lexicon) -> Result<Self> {
        Self::check(id, StrategyCategory::RuleBased)?;
        Ok(Strategy {
            id,
            kind: Kind::Lexicon(lexicon),
        })
    }

    pub fn classifier(id: StrategyId, scorer: SentenceScorer, threshold: f64) -> Result<Self> {
        Self::check(id, StrategyCategory::ClassifierBased)?;
        check_threshold(threshold)?;
        Ok(Strategy {
            id,
            kind: Kind::Classifier { scorer, threshold },
        })
    }

    pub fn quality(id: StrategyId, model: HashedLinearModel, threshold: f64) -> Result<Self> {
        Self::check(id, StrategyCategory::QualityBased)?;
        check_threshold(threshold)?;
        Ok(Strategy {
            id,
            kind: Kind::Quality { model, threshold },
        })
    }

    fn check(id: StrategyId, want: StrategyCategory) -> Result<()> {
        if id.category() != want {
            return Err(Error::Validation(format!(
                "strategy {id} is {:?}, not {want:?}",
                id.category()
            )));
        }
        Ok(())
    }

    pub fn id(&self) -> StrategyId {
        self.id
    }

    pub fn threshold(&self) -> Option<f64> {
        match &self.kind {
            Kind::Lexicon(_) => None,
            Kind::Classifier { threshold, .. } | Kind::Quality { threshold, .. } => Some(*threshold),
        }
    }

    /// Verdict for one sentence of `doc_id`. Panics on quality strategies.
    pub fn judge_sentence(&self, doc_id: &str, sentence: &Sentence) -> StrategyVerdict {
        let unit = UnitRef::sentence(doc_id, sentence.index);
        match &self.kind {
            Kind::Lexicon(lex) => lexicon_flag(unit, sentence, lex),
            Kind::Classifier { scorer, threshold } => match scorer.score(sentence) {
                Some(p) => StrategyVerdict {
                    unit,
                    flagged: threshold_flag(p, *threshold),
                    score: Some(p),
                    matched_terms: None,
                    unscored: false,
                },
                None => StrategyVerdict {
                    unit,
                    flagged: false,
                    score: None,
                    matched_terms: None,
                    unscored: true,
                },
            },
            Kind::Quality { .. } => panic!("{} judges documents, not sentences", self.id),
        }
    }

    /// Verdict for a whole document. Panics on sentence-level strategies.
    pub fn judge_document(&self, doc: &Document) -> StrategyVerdict {
        match &self.kind {
            Kind::Quality { model, threshold } => quality_gate(doc, model, *threshold),
            _ => panic!("{} judges sentences, not documents", self.id),
        }
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Validation(format!("threshold {t} outside [0, 1]")));
    }
    Ok(())
}

//! Lexicon (rule-based) filtering.

use crate::error::{Error, Result};
use crate::matcher::TokenTrie;
use crate::text::token_norms;

/// A compiled term list. Terms are token sequences; a term matches wherever
/// its tokens appear contiguously in a sentence.
#[derive(Debug, Clone)]
pub struct Lexicon {
    trie: TokenTrie,
    /// display form of each pattern: tokens joined by single spaces
    terms: Vec<String>,
}

impl Lexicon {
    /// Compiles `terms`, normalizing each with the shared tokenizer and
    /// dropping duplicates and terms with no tokens.
    pub fn compile<I, S>(terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut trie = TokenTrie::new();
        let mut display = Vec::new();
        for term in terms {
            let seq = token_norms(term.as_ref());
            if let Some(idx) = trie.insert(&seq) {
                if idx == display.len() {
                    display.push(seq.join(" "));
                }
            }
        }
        if display.is_empty() {
            return Err(Error::Validation("lexicon has no usable terms".into()));
        }
        Ok(Lexicon { trie, terms: display })
    }

    /// One term per line; blank lines and `#` comments ignored.
    pub fn parse(text: &str) -> Result<Self> {
        Self::compile(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Every occurrence of every term, in order of position.
    pub fn matches<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<&str> {
        self.trie
            .find_all(tokens)
            .into_iter()
            .map(|m| self.terms[m.pattern].as_str())
            .collect()
    }
}

pub const SHUTTERSTOCK_STARTER: &str = include_str!("../../data/lexicons/shutterstock.txt");
pub const HATEBASE_STARTER: &str = include_str!("../../data/lexicons/hatebase.txt");

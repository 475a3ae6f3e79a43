//! Tokenization and surface-form normalization shared by every stage.

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// A word token: byte offsets into the text it was cut from plus its
/// lowercased matching form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub start: usize,
    pub end: usize,
    pub norm: String,
}

impl Token {
    pub fn slice<'a>(&self, text: &'a str) -> &'a str {
        &text[self.start..self.end]
    }
}

/// Splits on Unicode whitespace, trims non-alphanumeric characters from both
/// ends of every piece and lowercases what remains. Pieces that are pure
/// punctuation produce no token.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut piece_start: Option<usize> = None;
    for (i, c) in text.char_indices().chain(std::iter::once((text.len(), ' '))) {
        if c.is_whitespace() {
            if let Some(s) = piece_start.take() {
                push_trimmed(text, s, i, &mut tokens);
            }
        } else if piece_start.is_none() {
            piece_start = Some(i);
        }
    }
    tokens
}

fn push_trimmed(text: &str, start: usize, end: usize, out: &mut Vec<Token>) {
    let piece = &text[start..end];
    let lead = piece.len() - piece.trim_start_matches(|c: char| !c.is_alphanumeric()).len();
    let trimmed = piece[lead..].trim_end_matches(|c: char| !c.is_alphanumeric());
    if trimmed.is_empty() {
        return;
    }
    let s = start + lead;
    out.push(Token {
        start: s,
        end: s + trimmed.len(),
        norm: trimmed.to_lowercase(),
    });
}

/// Lowercased token forms only.
pub fn token_norms(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.norm).collect()
}

/// Canonical lookup key for a name or surface form: NFC, lowercase, the
/// tokenizer's punctuation trimming, single spaces between tokens.
pub fn normalize_surface(s: &str) -> String {
    let nfc: String = s.nfc().collect();
    token_norms(&nfc).join(" ")
}

/// Casefold + trim + collapse runs of whitespace, hyphens and underscores.
/// Used for ethnic-group labels, where "African-Americans" and
/// "african americans" must compare equal.
pub fn normalize_label(s: &str) -> String {
    let nfc: String = s.nfc().collect();
    nfc.to_lowercase()
        .split(|c: char| c.is_whitespace() || c == '-' || c == '_')
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// FNV-1a 64-bit. Fixed so feature buckets and cache keys are identical on
/// every platform.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hello_world() {
        assert_eq!(token_norms("Hello, world!"), vec!["hello", "world"]);
    }

    #[test]
    fn empty_text_has_no_tokens() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("  \t\n ").is_empty());
        assert!(tokenize("-- ... !!").is_empty());
    }

    #[test]
    fn inner_punctuation_is_kept() {
        assert_eq!(token_norms("U.S. don't e-mail"), vec!["u.s", "don't", "e-mail"]);
    }

    #[test]
    fn surface_normalization() {
        assert_eq!(normalize_surface("  Ada   LOVELACE. "), "ada lovelace");
        // composed and decomposed e-acute agree
        assert_eq!(normalize_surface("Ame\u{301}lie"), normalize_surface("Am\u{e9}lie"));
    }

    #[test]
    fn label_normalization() {
        assert_eq!(normalize_label(" African-Americans "), "african americans");
        assert_eq!(normalize_label("african   americans"), "african americans");
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    proptest! {
        #[test]
        fn offsets_reconstruct_tokens(s in "\\PC{0,60}") {
            let toks = tokenize(&s);
            let mut last_end = 0;
            for t in &toks {
                prop_assert!(t.start >= last_end);
                prop_assert!(t.start < t.end);
                prop_assert_eq!(s[t.start..t.end].to_lowercase(), t.norm.clone());
                prop_assert!(!s[t.start..t.end].chars().any(char::is_whitespace));
                last_end = t.end;
            }
        }
    }
}

//! Token-sequence automaton used by both the gazetteer (mention detection)
//! and the lexicon strategies.
//!
//! Patterns are sequences of normalized tokens. Tokens are interned to ids and
//! stored in a trie; scanning walks the trie from every start position, which
//! is linear in the haystack for the bounded pattern lengths seen here.

use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Match {
    pub pattern: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Default, Clone)]
struct Node {
    next: HashMap<u32, u32>,
    terminal: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TokenTrie {
    vocab: HashMap<String, u32>,
    nodes: Vec<Node>,
    patterns: Vec<Vec<String>>,
    max_len: usize,
}

impl Default for TokenTrie {
    fn default() -> Self {
        Self::new()
    }
}

impl TokenTrie {
    pub fn new() -> Self {
        Self {
            vocab: HashMap::new(),
            nodes: vec![Node::default()],
            patterns: Vec::new(),
            max_len: 0,
        }
    }

    /// Inserts a token sequence and returns its pattern index. Inserting an
    /// existing sequence returns the original index. Empty sequences are
    /// ignored and return `None`.
    pub fn insert<S: AsRef<str>>(&mut self, seq: &[S]) -> Option<usize> {
        if seq.is_empty() {
            return None;
        }
        let mut node = 0usize;
        for tok in seq {
            let next_id = self.vocab.len() as u32;
            let id = *self.vocab.entry(tok.as_ref().to_owned()).or_insert(next_id);
            node = match self.nodes[node].next.get(&id) {
                Some(&n) => n as usize,
                None => {
                    let n = self.nodes.len();
                    self.nodes.push(Node::default());
                    self.nodes[node].next.insert(id, n as u32);
                    n
                }
            };
        }
        if let Some(existing) = self.nodes[node].terminal {
            return Some(existing);
        }
        let idx = self.patterns.len();
        self.nodes[node].terminal = Some(idx);
        self.patterns.push(seq.iter().map(|s| s.as_ref().to_owned()).collect());
        self.max_len = self.max_len.max(seq.len());
        Some(idx)
    }

    pub fn pattern(&self, idx: usize) -> &[String] {
        &self.patterns[idx]
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    fn ids<S: AsRef<str>>(&self, haystack: &[S]) -> Vec<Option<u32>> {
        haystack.iter().map(|t| self.vocab.get(t.as_ref()).copied()).collect()
    }

    /// Calls `f` with each pattern that starts at `start`, shortest first.
    fn walk(&self, ids: &[Option<u32>], start: usize, mut f: impl FnMut(usize, usize)) {
        let mut node = 0usize;
        for (offset, id) in ids[start..].iter().enumerate() {
            let Some(id) = id else { return };
            match self.nodes[node].next.get(id) {
                Some(&n) => node = n as usize,
                None => return,
            }
            if let Some(p) = self.nodes[node].terminal {
                f(p, start + offset + 1);
            }
        }
    }

    /// Every occurrence of every pattern, ordered by (start, end).
    pub fn find_all<S: AsRef<str>>(&self, haystack: &[S]) -> Vec<Match> {
        let ids = self.ids(haystack);
        let mut out = Vec::new();
        for start in 0..ids.len() {
            self.walk(&ids, start, |pattern, end| out.push(Match { pattern, start, end }));
        }
        out
    }

    /// Left-to-right greedy longest matches that do not overlap.
    pub fn find_longest<S: AsRef<str>>(&self, haystack: &[S]) -> Vec<Match> {
        let ids = self.ids(haystack);
        let mut out = Vec::new();
        let mut start = 0;
        while start < ids.len() {
            let mut best: Option<Match> = None;
            self.walk(&ids, start, |pattern, end| best = Some(Match { pattern, start, end }));
            match best {
                Some(m) => {
                    out.push(m);
                    start = m.end;
                }
                None => start += 1,
            }
        }
        out
    }
}

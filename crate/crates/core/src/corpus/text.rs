use std::collections::HashMap;

use crate::error::{Error, Result};

/// Longest caption kept, in tokens, before START/END framing.
pub const MAX_CAPTION_TOKENS: usize = 30;
pub const DEFAULT_MIN_COUNT: usize = 5;

pub const START: usize = 0;
pub const END: usize = 1;
pub const UNK: usize = 2;
pub const START_TOKEN: &str = "<start>";
pub const END_TOKEN: &str = "<end>";
pub const UNK_TOKEN: &str = "<unk>";

/// Lowercases, drops every character outside `a-z` and space, splits on
/// whitespace and keeps the first 30 tokens.
pub fn preprocess_caption(raw: &str) -> Vec<String> {
    let cleaned: String = raw
        .chars()
        .flat_map(char::to_lowercase)
        .filter(|c| c.is_ascii_lowercase() || *c == ' ')
        .collect();
    cleaned
        .split_whitespace()
        .take(MAX_CAPTION_TOKENS)
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<usize>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds ids for tokens seen at least `min_count` times. Ids 0..3 are
    /// START, END and UNK; the rest follow count-descending, ties
    /// alphabetical. UNK's count is the total count of dropped tokens.
    pub fn build(corpus: &[Vec<String>], min_count: usize) -> Result<Self> {
        if min_count == 0 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        if corpus.iter().all(|c| c.is_empty()) {
            return Err(Error::Input("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for tok in corpus.iter().flatten() {
            *freq.entry(tok.as_str()).or_default() += 1;
        }
        let mut kept: Vec<(&str, usize)> = Vec::new();
        let mut unk = 0;
        for (tok, n) in freq {
            let reserved = tok == START_TOKEN || tok == END_TOKEN || tok == UNK_TOKEN;
            if n >= min_count && !reserved {
                kept.push((tok, n));
            } else {
                unk += n;
            }
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let n_captions = corpus.iter().filter(|c| !c.is_empty()).count();
        let mut tokens = vec![START_TOKEN.to_string(), END_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let mut counts = vec![n_captions, n_captions, unk];
        for (tok, n) in kept {
            tokens.push(tok.to_string());
            counts.push(n);
        }
        Self::from_parts(tokens, counts)
    }

    /// Rebuilds a vocabulary from an id-ordered token list.
    pub fn from_parts(tokens: Vec<String>, counts: Vec<usize>) -> Result<Self> {
        if tokens.len() != counts.len() {
            return Err(Error::Input("token and count lists differ in length".into()));
        }
        if tokens.get(START).map(String::as_str) != Some(START_TOKEN)
            || tokens.get(END).map(String::as_str) != Some(END_TOKEN)
            || tokens.get(UNK).map(String::as_str) != Some(UNK_TOKEN)
        {
            return Err(Error::Input("vocabulary must start with <start> <end> <unk>".into()));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate vocabulary token {t}")));
            }
        }
        Ok(Self { tokens, counts, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`, or UNK.
    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn count(&self, id: usize) -> usize {
        self.counts.get(id).copied().unwrap_or(0)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn is_reserved(id: usize) -> bool {
        id == START || id == END || id == UNK
    }

    /// `[START] + ids + [END]`.
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        let mut out = Vec::with_capacity(tokens.len() + 2);
        out.push(START);
        out.extend(tokens.iter().map(|t| self.id(t)));
        out.push(END);
        out
    }

    /// Space-joined words with START/END dropped.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i != START && i != END)
            .filter_map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// The F most frequent non-reserved words, most frequent first.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequentWordSet {
    ids: Vec<usize>,
    position: HashMap<usize, usize>,
}

impl FrequentWordSet {
    pub fn from_ids(ids: Vec<usize>) -> Self {
        let position = ids.iter().enumerate().map(|(p, &id)| (id, p)).collect();
        Self { ids, position }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn position(&self, word_id: usize) -> Option<usize> {
        self.position.get(&word_id).copied()
    }

    /// Per-slot flags: does the caption contain that frequent word?
    pub fn membership(&self, caption: &[usize]) -> Vec<bool> {
        let mut out = vec![false; self.ids.len()];
        for id in caption {
            if let Some(p) = self.position(*id) {
                out[p] = true;
            }
        }
        out
    }
}

/// Outcome of [`frequent_words`]; `truncated` is set when fewer than the
/// requested number of words were available.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequentWords {
    pub set: FrequentWordSet,
    pub truncated: bool,
}

/// Top-`f` words by count (ties alphabetical), excluding reserved tokens.
pub fn frequent_words(vocab: &Vocabulary, f: usize) -> Result<FrequentWords> {
    if f == 0 {
        return Err(Error::Config("frequent word count must be at least 1".into()));
    }
    let mut cand: Vec<usize> = (0..vocab.len()).filter(|&i| !Vocabulary::is_reserved(i)).collect();
    cand.sort_by(|&a, &b| {
        vocab
            .count(b)
            .cmp(&vocab.count(a))
            .then_with(|| vocab.token(a).cmp(&vocab.token(b)))
    });
    let truncated = cand.len() < f;
    cand.truncate(f);
    Ok(FrequentWords {
        set: FrequentWordSet::from_ids(cand),
        truncated,
    })
}

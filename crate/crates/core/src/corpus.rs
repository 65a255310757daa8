//! Base vocabulary, labeled corpus loading, and the greedy longest-match
//! subword tokenizer every later stage builds on.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::TokenId;

pub const DEFAULT_CONTINUATION_PREFIX: &str = "##";
pub const UNKNOWN_TOKEN: &str = "[UNK]";

/// Class identifier as it appears in the corpus file.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Int(i64),
    Str(String),
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Int(v) => write!(f, "{v}"),
            Label::Str(s) => write!(f, "{s}"),
        }
    }
}

impl From<&str> for Label {
    fn from(s: &str) -> Self {
        Label::Str(s.to_string())
    }
}

impl From<i64> for Label {
    fn from(v: i64) -> Self {
        Label::Int(v)
    }
}

/// Fixed subword vocabulary. A token's id is its position in `tokens`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseVocab {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
    continuation_prefix: String,
    unk_id: TokenId,
}

impl BaseVocab {
    /// Builds a vocabulary from tokens in id order. The unknown token is
    /// `[UNK]` when present, otherwise id 0.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.is_empty() {
            return Err(Error::EmptyVocab);
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, token) in tokens.iter().enumerate() {
            if let Some(&first) = ids.get(token) {
                return Err(Error::DuplicateToken {
                    token: token.clone(),
                    first: first as usize,
                    second: i,
                });
            }
            ids.insert(token.clone(), i as TokenId);
        }
        let unk_id = ids.get(UNKNOWN_TOKEN).copied().unwrap_or(0);
        Ok(BaseVocab {
            tokens,
            ids,
            continuation_prefix: DEFAULT_CONTINUATION_PREFIX.to_string(),
            unk_id,
        })
    }

    pub fn with_continuation_prefix(mut self, prefix: impl Into<String>) -> Self {
        self.continuation_prefix = prefix.into();
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn unk_id(&self) -> TokenId {
        self.unk_id
    }

    pub fn continuation_prefix(&self) -> &str {
        &self.continuation_prefix
    }

    /// Lowercases, splits on whitespace and punctuation, then segments each
    /// word by greedy longest match. A word with no full segmentation maps
    /// to a single unknown id. Punctuation characters become standalone
    /// tokens when the vocabulary has them and are dropped otherwise.
    pub fn base_tokenize(&self, text: &str) -> Vec<TokenId> {
        let mut ids = Vec::new();
        for piece in pre_tokenize(text) {
            match piece {
                PreToken::Word(word) => self.segment_word(&word, &mut ids),
                PreToken::Punct(c) => {
                    let mut buf = [0u8; 4];
                    if let Some(id) = self.id(c.encode_utf8(&mut buf)) {
                        ids.push(id);
                    }
                }
            }
        }
        ids
    }

    fn segment_word(&self, word: &str, out: &mut Vec<TokenId>) {
        let bounds: Vec<usize> = word
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(word.len()))
            .collect();
        let n_chars = bounds.len() - 1;
        let mut pieces = Vec::new();
        let mut start = 0;
        let mut candidate = String::with_capacity(word.len() + self.continuation_prefix.len());
        while start < n_chars {
            let mut matched = None;
            for end in (start + 1..=n_chars).rev() {
                candidate.clear();
                if start > 0 {
                    candidate.push_str(&self.continuation_prefix);
                }
                candidate.push_str(&word[bounds[start]..bounds[end]]);
                if let Some(id) = self.id(&candidate) {
                    matched = Some((id, end));
                    break;
                }
            }
            match matched {
                Some((id, end)) => {
                    pieces.push(id);
                    start = end;
                }
                None => {
                    out.push(self.unk_id);
                    return;
                }
            }
        }
        out.extend(pieces);
    }

    /// Reassembles words from ids by gluing continuation pieces onto the
    /// preceding piece.
    pub fn decode_words(&self, ids: &[TokenId]) -> Vec<String> {
        let mut words: Vec<String> = Vec::new();
        for &id in ids {
            let token = self.token(id).unwrap_or(UNKNOWN_TOKEN);
            match token.strip_prefix(self.continuation_prefix.as_str()) {
                Some(rest) if !words.is_empty() && !self.continuation_prefix.is_empty() => {
                    words.last_mut().unwrap().push_str(rest)
                }
                _ => words.push(token.to_string()),
            }
        }
        words
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PreToken {
    Word(String),
    Punct(char),
}

fn is_punctuation(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Lowercases and splits text into words and single punctuation characters.
/// Control characters are discarded.
pub fn pre_tokenize(text: &str) -> Vec<PreToken> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.to_lowercase().chars() {
        if c.is_whitespace() || is_punctuation(c) {
            if !word.is_empty() {
                out.push(PreToken::Word(std::mem::take(&mut word)));
            }
            if is_punctuation(c) && !c.is_control() {
                out.push(PreToken::Punct(c));
            }
        } else {
            word.push(c);
        }
    }
    if !word.is_empty() {
        out.push(PreToken::Word(word));
    }
    out
}

/// Reads a vocabulary file: UTF-8, one token per line, line number = id.
pub fn load_vocab(path: &Path) -> Result<BaseVocab> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<&str> = text.split('\n').collect();
    // A trailing newline terminates the last line rather than adding an empty token.
    let lines = match lines.split_last() {
        Some((last, rest)) if last.is_empty() => rest,
        _ => &lines[..],
    };
    BaseVocab::from_tokens(lines.iter().map(|l| l.strip_suffix('\r').unwrap_or(l)))
}

pub fn base_tokenize(vocab: &BaseVocab, text: &str) -> Vec<TokenId> {
    vocab.base_tokenize(text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledDoc {
    pub text: String,
    pub label: Label,
}

impl LabeledDoc {
    pub fn new(text: impl Into<String>, label: impl Into<Label>) -> Self {
        LabeledDoc {
            text: text.into(),
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedDoc {
    pub ids: Vec<TokenId>,
    pub label: Label,
}

impl TokenizedDoc {
    pub fn new(ids: Vec<TokenId>, label: impl Into<Label>) -> Self {
        TokenizedDoc {
            ids,
            label: label.into(),
        }
    }
}

/// Tokenizes every document, preserving order and labels.
pub fn tokenize_corpus(vocab: &BaseVocab, docs: &[LabeledDoc]) -> Result<Vec<TokenizedDoc>> {
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if let Some(index) = docs.iter().position(|d| d.text.trim().is_empty()) {
        return Err(Error::EmptyText { index });
    }
    let tokenized: Vec<Vec<TokenId>> = docs
        .par_iter()
        .map(|d| vocab.base_tokenize(&d.text))
        .collect();
    if let Some(index) = tokenized.iter().position(Vec::is_empty) {
        return Err(Error::EmptyTokenization { index });
    }
    Ok(tokenized
        .into_iter()
        .zip(docs)
        .map(|(ids, d)| TokenizedDoc {
            ids,
            label: d.label.clone(),
        })
        .collect())
}

/// Reads a JSON Lines corpus with `text` and `label` fields.
pub fn read_corpus(path: &Path) -> Result<Vec<LabeledDoc>> {
    let docs: Vec<LabeledDoc> = io::read_jsonl(path)?;
    if let Some(index) = docs.iter().position(|d| d.text.trim().is_empty()) {
        return Err(Error::EmptyText { index });
    }
    Ok(docs)
}

pub fn write_corpus(path: &Path, docs: &[LabeledDoc]) -> Result<()> {
    io::write_jsonl(path, docs)
}

pub fn read_tokenized(path: &Path) -> Result<Vec<TokenizedDoc>> {
    io::read_jsonl(path)
}

pub fn write_tokenized(path: &Path, docs: &[TokenizedDoc]) -> Result<()> {
    io::write_jsonl(path, docs)
}

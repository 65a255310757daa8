//! Task-adaptive tokenization: base tokens are kept and each matched task
//! sequence contributes its new id immediately before the match start.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{BaseVocab, Label, LabeledDoc, TokenizedDoc};
use crate::error::Result;
use crate::io;
use crate::taskvocab::TaskVocabulary;
use crate::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Insertion {
    pub entry: usize,
    /// Start of the match in the base tokenization.
    pub pos: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdaptiveTokenization {
    pub ids: Vec<TokenId>,
    /// Ordered as the inserted ids appear in `ids`.
    pub insertions: Vec<Insertion>,
}

/// Entries that share at least one token with `base_ids`.
pub fn candidate_lookup(tv: &TaskVocabulary, base_ids: &[TokenId]) -> BTreeSet<usize> {
    base_ids
        .iter()
        .flat_map(|&t| tv.entries_with(t).iter().copied())
        .collect()
}

/// Starts of left-to-right non-overlapping contiguous occurrences.
fn contiguous_starts(base: &[TokenId], seq: &[TokenId]) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut i = 0;
    while i + seq.len() <= base.len() {
        if base[i..i + seq.len()] == *seq {
            starts.push(i);
            i += seq.len();
        } else {
            i += 1;
        }
    }
    starts
}

/// Starts of repeated leftmost-greedy gapped matches, each search resuming
/// just after the previous match's first element.
fn gapped_starts(base: &[TokenId], seq: &[TokenId]) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut from = 0;
    while let Some(offset) = base[from..].iter().position(|&t| t == seq[0]) {
        let start = from + offset;
        let mut rest = base[start + 1..].iter();
        if !seq[1..].iter().all(|t| rest.any(|b| b == t)) {
            break;
        }
        starts.push(start);
        from = start + 1;
    }
    starts
}

pub fn match_starts(base: &[TokenId], seq: &[TokenId], contiguous: bool) -> Vec<usize> {
    if seq.is_empty() {
        return Vec::new();
    }
    if contiguous {
        contiguous_starts(base, seq)
    } else {
        gapped_starts(base, seq)
    }
}

/// Adds task ids to an existing base tokenization. Matching only looks at
/// base tokens, so inserted ids never trigger further insertions.
pub fn insert_task_tokens(tv: &TaskVocabulary, base: &[TokenId]) -> AdaptiveTokenization {
    let entries = tv.entries();
    let mut insertions: Vec<Insertion> = candidate_lookup(tv, base)
        .into_iter()
        .flat_map(|entry| {
            let e = &entries[entry];
            match_starts(base, &e.tokens, e.contiguous)
                .into_iter()
                .map(move |pos| Insertion { entry, pos })
        })
        .collect();
    insertions.sort_by(|a, b| {
        let (ea, eb) = (&entries[a.entry], &entries[b.entry]);
        a.pos
            .cmp(&b.pos)
            .then(eb.tokens.len().cmp(&ea.tokens.len()))
            .then(ea.id.cmp(&eb.id))
    });

    let mut ids = Vec::with_capacity(base.len() + insertions.len());
    let mut pending = insertions.iter().peekable();
    for (pos, &t) in base.iter().enumerate() {
        while let Some(ins) = pending.next_if(|ins| ins.pos == pos) {
            ids.push(entries[ins.entry].id);
        }
        ids.push(t);
    }
    AdaptiveTokenization { ids, insertions }
}

pub fn adaptive_tokenize(tv: &TaskVocabulary, vocab: &BaseVocab, text: &str) -> AdaptiveTokenization {
    assert_eq!(
        tv.base_vocab_size(),
        vocab.len(),
        "task vocabulary was built for a different base vocabulary"
    );
    insert_task_tokens(tv, &vocab.base_tokenize(text))
}

/// One line of the adaptive tokenization JSON Lines file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptedDoc {
    pub ids: Vec<TokenId>,
    #[serde(default)]
    pub insertions: Vec<Insertion>,
    pub label: Label,
}

impl AdaptedDoc {
    pub fn into_tokenized(self) -> TokenizedDoc {
        TokenizedDoc {
            ids: self.ids,
            label: self.label,
        }
    }
}

/// Adaptive tokenization of every document, in input order.
pub fn apply_corpus(tv: &TaskVocabulary, vocab: &BaseVocab, docs: &[LabeledDoc]) -> Vec<AdaptedDoc> {
    docs.par_iter()
        .map(|d| {
            let a = adaptive_tokenize(tv, vocab, &d.text);
            AdaptedDoc {
                ids: a.ids,
                insertions: a.insertions,
                label: d.label.clone(),
            }
        })
        .collect()
}

pub fn write_adapted(path: &Path, docs: &[AdaptedDoc]) -> Result<()> {
    io::write_jsonl(path, docs)
}

/// Reads adaptive (or plain tokenized) JSON Lines as labeled id sequences.
pub fn read_adapted(path: &Path) -> Result<Vec<AdaptedDoc>> {
    io::read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqmine::MinedSequence;
    use crate::taskvocab::build_task_vocab;

    fn tv(base_size: usize, seqs: &[(Vec<TokenId>, bool)]) -> TaskVocabulary {
        let selected: Vec<MinedSequence> = seqs
            .iter()
            .map(|(t, c)| MinedSequence::new(t.clone(), 5, *c))
            .collect();
        build_task_vocab(&selected, base_size).unwrap()
    }

    #[test]
    fn single_contiguous_insertion() {
        let tv = tv(100, &[(vec![7, 9], true)]);
        let out = insert_task_tokens(&tv, &[5, 7, 9]);
        assert_eq!(out.ids, vec![5, 100, 7, 9]);
        assert_eq!(out.insertions, vec![Insertion { entry: 0, pos: 1 }]);
    }

    #[test]
    fn repeated_contiguous_occurrences() {
        let tv = tv(100, &[(vec![7, 9], true)]);
        assert_eq!(insert_task_tokens(&tv, &[7, 9, 7, 9]).ids, vec![100, 7, 9, 100, 7, 9]);
        // Overlapping occurrences: only the non-overlapping left-to-right ones.
        let tv = self::tv(100, &[(vec![7, 7], true)]);
        assert_eq!(insert_task_tokens(&tv, &[7, 7, 7]).ids, vec![100, 7, 7, 7]);
    }

    #[test]
    fn gapped_insertion_at_first_element() {
        let tv = tv(100, &[(vec![5, 9], false)]);
        assert_eq!(insert_task_tokens(&tv, &[5, 7, 9]).ids, vec![100, 5, 7, 9]);
    }

    #[test]
    fn gapped_matches_resume_after_first_element() {
        let tv = tv(100, &[(vec![5, 9], false)]);
        let out = insert_task_tokens(&tv, &[5, 5, 9, 5]);
        assert_eq!(
            out.insertions,
            vec![Insertion { entry: 0, pos: 0 }, Insertion { entry: 0, pos: 1 }]
        );
        assert_eq!(out.ids, vec![100, 5, 100, 5, 9, 5]);
    }

    #[test]
    fn contiguous_entry_ignores_gapped_occurrence() {
        let tv = tv(100, &[(vec![5, 9], true)]);
        assert_eq!(insert_task_tokens(&tv, &[5, 7, 9]).ids, vec![5, 7, 9]);
    }

    #[test]
    fn same_position_orders_longer_first() {
        let tv = tv(100, &[(vec![1, 2], true), (vec![1, 2, 3], true), (vec![1], true)]);
        let out = insert_task_tokens(&tv, &[1, 2, 3]);
        assert_eq!(out.ids, vec![101, 100, 102, 1, 2, 3]);
    }

    #[test]
    fn lookup() {
        let tv = tv(100, &[(vec![1, 2], true), (vec![1, 3], true), (vec![4], true)]);
        assert_eq!(candidate_lookup(&tv, &[1]), BTreeSet::from([0, 1]));
        assert!(candidate_lookup(&tv, &[9, 8]).is_empty());
        assert_eq!(candidate_lookup(&tv, &[1, 2, 3, 4]), BTreeSet::from([0, 1, 2]));
    }

    #[test]
    fn empty_task_vocab_is_identity() {
        let tv = TaskVocabulary::empty(10);
        let out = insert_task_tokens(&tv, &[1, 2, 3]);
        assert_eq!(out.ids, vec![1, 2, 3]);
        assert!(out.insertions.is_empty());
    }

    #[test]
    fn adapted_line_format() {
        let doc = AdaptedDoc {
            ids: vec![100, 5],
            insertions: vec![Insertion { entry: 0, pos: 0 }],
            label: Label::Int(1),
        };
        assert_eq!(
            serde_json::to_string(&doc).unwrap(),
            r#"{"ids":[100,5],"insertions":[{"entry":0,"pos":0}],"label":1}"#
        );
        let plain: AdaptedDoc = serde_json::from_str(r#"{"ids":[1],"label":"x"}"#).unwrap();
        assert!(plain.insertions.is_empty());
    }
}

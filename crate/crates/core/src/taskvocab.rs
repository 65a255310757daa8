//! New token ids for selected sequences and the reverse index from base
//! tokens to the sequences containing them.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::io;
use crate::seqmine::MinedSequence;
use crate::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEntry {
    // Field order is alphabetical so the JSON keys come out sorted.
    pub contiguous: bool,
    pub id: TokenId,
    #[serde(with = "pplx_serde")]
    pub pplx: f64,
    pub support: usize,
    pub tokens: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskVocabulary {
    base_vocab_size: usize,
    entries: Vec<TaskEntry>,
    reverse_index: BTreeMap<TokenId, Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct TaskVocabFile {
    base_vocab_size: usize,
    sequences: Vec<TaskEntry>,
}

impl TaskVocabulary {
    /// Vocabulary with no task sequences; adaptive tokenization then equals
    /// base tokenization.
    pub fn empty(base_vocab_size: usize) -> Self {
        TaskVocabulary {
            base_vocab_size,
            entries: Vec::new(),
            reverse_index: BTreeMap::new(),
        }
    }

    fn from_entries(base_vocab_size: usize, entries: Vec<TaskEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut reverse_index: BTreeMap<TokenId, Vec<usize>> = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            if !seen.insert(e.tokens.as_slice()) {
                return Err(Error::DuplicateSequence(e.tokens.clone()));
            }
            let expected = base_vocab_size as u64 + i as u64;
            if e.id as u64 != expected {
                return Err(Error::IdRange {
                    id: e.id as u64,
                    expected: format!("{expected} (entry {i} with base size {base_vocab_size})"),
                });
            }
            let mut distinct: Vec<TokenId> = e.tokens.clone();
            distinct.sort_unstable();
            distinct.dedup();
            for t in distinct {
                reverse_index.entry(t).or_default().push(i);
            }
        }
        Ok(TaskVocabulary {
            base_vocab_size,
            entries,
            reverse_index,
        })
    }

    pub fn base_vocab_size(&self) -> usize {
        self.base_vocab_size
    }

    pub fn entries(&self) -> &[TaskEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Base vocabulary plus task tokens.
    pub fn total_size(&self) -> usize {
        self.base_vocab_size + self.entries.len()
    }

    /// Entries whose sequence contains `token`, in entry order.
    pub fn entries_with(&self, token: TokenId) -> &[usize] {
        self.reverse_index.get(&token).map_or(&[], Vec::as_slice)
    }

    pub fn reverse_index(&self) -> &BTreeMap<TokenId, Vec<usize>> {
        &self.reverse_index
    }

    pub fn to_json(&self) -> String {
        let file = TaskVocabFile {
            base_vocab_size: self.base_vocab_size,
            sequences: self.entries.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("serializable vocabulary");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TaskVocabFile =
            serde_json::from_str(text).map_err(|e| Error::parse(e.line(), "json", e))?;
        for (i, e) in file.sequences.iter().enumerate() {
            if e.tokens.is_empty() {
                return Err(Error::parse(0, format!("sequences[{i}].tokens"), "empty token list"));
            }
        }
        Self::from_entries(file.base_vocab_size, file.sequences)
    }
}

/// Assigns ids `V, V+1, ...` to `selected` in order and indexes their tokens.
pub fn build_task_vocab(selected: &[MinedSequence], base_vocab_size: usize) -> Result<TaskVocabulary> {
    let entries = selected
        .iter()
        .enumerate()
        .map(|(i, s)| TaskEntry {
            tokens: s.tokens.clone(),
            id: (base_vocab_size + i) as TokenId,
            contiguous: s.contiguous,
            support: s.support,
            pplx: s.perplexity.unwrap_or(f64::INFINITY),
        })
        .collect();
    TaskVocabulary::from_entries(base_vocab_size, entries)
}

pub fn save_task_vocab(tv: &TaskVocabulary, path: &Path) -> Result<()> {
    io::write_string(path, &tv.to_json())
}

pub fn load_task_vocab(path: &Path) -> Result<TaskVocabulary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TaskVocabulary::from_json(&text)
}

mod pplx_serde {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("invalid pplx {s:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(tokens: Vec<TokenId>, pplx: f64) -> MinedSequence {
        MinedSequence {
            perplexity: Some(pplx),
            ..MinedSequence::new(tokens, 5, true)
        }
    }

    #[test]
    fn sequential_ids() {
        let tv = build_task_vocab(&[seq(vec![1, 2], 2.0), seq(vec![7, 9], 1.5)], 100).unwrap();
        let ids: Vec<_> = tv.entries().iter().map(|e| e.id).collect();
        assert_eq!(ids, vec![100, 101]);
        assert_eq!(tv.entries_with(7), &[1]);
        assert_eq!(tv.entries_with(9), &[1]);
        assert!(tv.entries_with(3).is_empty());
        assert_eq!(tv.total_size(), 102);
    }

    #[test]
    fn repeated_token_indexed_once() {
        let tv = build_task_vocab(&[seq(vec![4, 4, 5], 2.0)], 10).unwrap();
        assert_eq!(tv.entries_with(4), &[0]);
    }

    #[test]
    fn duplicate_sequence_rejected() {
        let err = build_task_vocab(&[seq(vec![1, 2], 2.0), seq(vec![1, 2], 3.0)], 10).unwrap_err();
        assert!(matches!(err, Error::DuplicateSequence(t) if t == vec![1, 2]));
    }

    #[test]
    fn round_trip_and_sorted_keys() {
        let tv = build_task_vocab(
            &[seq(vec![3, 1], f64::INFINITY), seq(vec![1, 2, 3], 1.7320508075688772)],
            50,
        )
        .unwrap();
        let json = tv.to_json();
        assert!(json.contains("\"pplx\": \"inf\""));
        let keys: Vec<usize> = ["\"contiguous\"", "\"id\"", "\"pplx\"", "\"support\"", "\"tokens\""]
            .iter()
            .map(|k| json.find(k).unwrap())
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
        let back = TaskVocabulary::from_json(&json).unwrap();
        assert_eq!(back, tv);
        assert_eq!(back.to_json(), json);
    }

    #[test]
    fn id_inside_base_range() {
        let text = r#"{"base_vocab_size": 100, "sequences": [{"tokens": [1, 2], "id": 50, "contiguous": true, "support": 3, "pplx": 2.0}]}"#;
        assert!(matches!(
            TaskVocabulary::from_json(text),
            Err(Error::IdRange { id: 50, .. })
        ));
    }

    #[test]
    fn malformed_file() {
        assert!(matches!(
            TaskVocabulary::from_json("{\"base_vocab_size\": 1,\n \"sequences\": [{]}"),
            Err(Error::Parse { line: 2, .. })
        ));
        let text = r#"{"base_vocab_size": 10, "sequences": [{"tokens": [], "id": 10, "contiguous": true, "support": 3, "pplx": 2.0}]}"#;
        assert!(matches!(TaskVocabulary::from_json(text), Err(Error::Parse { .. })));
    }

    #[test]
    fn empty_vocabulary_is_valid() {
        let tv = TaskVocabulary::from_json(r#"{"base_vocab_size": 10, "sequences": []}"#).unwrap();
        assert!(tv.is_empty());
        assert_eq!(tv, TaskVocabulary::empty(10));
    }
}

//! Seeded synthetic corpora.
//!
//! The bigram task: every document holds two marker words `x` and `y` among
//! filler words. In positive documents `y` directly follows `x`; in negative
//! documents `x` precedes `y` with at least one word between them. Bags of
//! tokens are identically distributed across the classes, so any
//! order-invariant model without a token for the adjacent pair sits near
//! chance.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{LabeledDoc, UNKNOWN_TOKEN};

pub const MARKER_X: &str = "gene";
pub const MARKER_Y: &str = "therapy";
pub const POSITIVE: &str = "pos";
pub const NEGATIVE: &str = "neg";

const FILLERS: &[&str] = &[
    "the", "a", "of", "and", "in", "to", "with", "for", "on", "patients", "study", "results",
    "clinical", "trial", "cell", "cells", "protein", "expression", "model", "analysis", "data",
    "effect", "effects", "response", "treatment", "dose", "group", "groups", "risk", "level",
    "levels", "tissue", "sample", "samples", "method", "approach", "observed", "reported",
    "significant", "increase", "decrease", "human", "mouse", "blood", "tumor", "growth",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BigramTaskConfig {
    pub train: usize,
    pub test: usize,
    /// Filler words per document, excluding the two markers.
    pub fillers: usize,
    pub seed: u64,
}

impl Default for BigramTaskConfig {
    fn default() -> Self {
        BigramTaskConfig {
            train: 400,
            test: 200,
            fillers: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BigramTask {
    pub vocab: Vec<String>,
    pub train: Vec<LabeledDoc>,
    pub test: Vec<LabeledDoc>,
}

/// Vocabulary covering the bigram task: unknown token, punctuation, filler
/// words, and the two markers, which are split into subword pieces.
pub fn bigram_vocab() -> Vec<String> {
    let mut v: Vec<String> = vec![UNKNOWN_TOKEN.to_string(), ".".into(), ",".into()];
    v.extend(FILLERS.iter().map(|s| s.to_string()));
    v.extend(["ge", "##ne", "ther", "##apy"].iter().map(|s| s.to_string()));
    v
}

fn document(rng: &mut ChaCha8Rng, fillers: usize, positive: bool) -> String {
    let mut words: Vec<&str> = (0..fillers).map(|_| *FILLERS.choose(rng).unwrap()).collect();
    let n = fillers + 2;
    let (ix, iy) = if positive {
        let ix = rng.random_range(0..n - 1);
        (ix, ix + 1)
    } else {
        let ix = rng.random_range(0..n - 2);
        (ix, rng.random_range(ix + 2..n))
    };
    // y goes in after x, so both end up at their drawn indices.
    words.insert(ix, MARKER_X);
    words.insert(iy, MARKER_Y);
    words.join(" ")
}

fn split(rng: &mut ChaCha8Rng, count: usize, fillers: usize) -> Vec<LabeledDoc> {
    let mut labels: Vec<bool> = (0..count).map(|i| i % 2 == 0).collect();
    labels.shuffle(rng);
    labels
        .into_iter()
        .map(|positive| {
            LabeledDoc::new(
                document(rng, fillers, positive),
                if positive { POSITIVE } else { NEGATIVE },
            )
        })
        .collect()
}

/// Balanced train and test splits of the bigram task.
pub fn bigram_task(cfg: &BigramTaskConfig) -> BigramTask {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let train = split(&mut rng, cfg.train, cfg.fillers);
    let test = split(&mut rng, cfg.test, cfg.fillers);
    BigramTask {
        vocab: bigram_vocab(),
        train,
        test,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::BaseVocab;

    fn marker_positions(text: &str) -> (usize, usize) {
        let words: Vec<&str> = text.split(' ').collect();
        (
            words.iter().position(|w| *w == MARKER_X).unwrap(),
            words.iter().position(|w| *w == MARKER_Y).unwrap(),
        )
    }

    #[test]
    fn class_structure() {
        let task = bigram_task(&BigramTaskConfig::default());
        assert_eq!(task.train.len(), 400);
        assert_eq!(task.test.len(), 200);
        let positives = task.train.iter().filter(|d| d.label == POSITIVE.into()).count();
        assert_eq!(positives, 200);
        for d in task.train.iter().chain(&task.test) {
            let (x, y) = marker_positions(&d.text);
            if d.label == POSITIVE.into() {
                assert_eq!(y, x + 1);
            } else {
                assert!(y >= x + 2);
            }
        }
    }

    #[test]
    fn seeded() {
        let a = bigram_task(&BigramTaskConfig::default());
        let b = bigram_task(&BigramTaskConfig::default());
        assert_eq!(a, b);
        let c = bigram_task(&BigramTaskConfig {
            seed: 1,
            ..Default::default()
        });
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn vocabulary_covers_text() {
        let vocab = BaseVocab::from_tokens(bigram_vocab()).unwrap();
        let task = bigram_task(&BigramTaskConfig::default());
        for d in &task.train {
            assert!(!vocab.base_tokenize(&d.text).contains(&vocab.unk_id()));
        }
        assert_eq!(
            vocab.base_tokenize("gene therapy"),
            vec![
                vocab.id("ge").unwrap(),
                vocab.id("##ne").unwrap(),
                vocab.id("ther").unwrap(),
                vocab.id("##apy").unwrap()
            ]
        );
    }
}

//! Reference implementations used as test oracles: brute-force closed
//! sequence enumeration (support comes from `support_with_gap` alone, never
//! from the mining search), finite-difference gradients, and the budget rule
//! spelled out over module prefixes.

#![allow(dead_code)]

use std::collections::BTreeSet;

use adapt_core::seqmine::{is_contiguous_in, support_with_gap, MinedSequence, MiningParams};
use adapt_core::adapttok::apply_corpus;
use adapt_core::pipeline::{build_vocabulary, initial_model, PipelineConfig};
use adapt_core::synth::{bigram_task, BigramTaskConfig};
use adapt_core::{BaseVocab, SensitivityReport, TinyClassifier, TokenId, TokenizedDoc};
use proptest::prelude::*;

/// Every distinct subsequence (gapped, order-preserving) of `doc` with
/// length in `1..=max_len`.
pub fn subsequences(doc: &[TokenId], max_len: usize, out: &mut BTreeSet<Vec<TokenId>>) {
    let n = doc.len();
    assert!(n < 32);
    for mask in 1u32..(1 << n) {
        if mask.count_ones() as usize > max_len {
            continue;
        }
        let seq: Vec<TokenId> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| doc[i]).collect();
        out.insert(seq);
    }
}

fn is_subseq(small: &[TokenId], big: &[TokenId]) -> bool {
    let mut it = big.iter();
    small.iter().all(|t| it.any(|b| b == t))
}

/// Closed frequent sequences by enumeration. Closedness: no sequence one
/// token longer that contains `s` has the same support. Any super-sequence
/// with non-zero support is itself a document subsequence, so enumerating
/// document subsequences up to `max_len + 1` covers every candidate.
pub fn brute_force_closed(corpus: &[TokenizedDoc], params: &MiningParams) -> Vec<MinedSequence> {
    let mut all = BTreeSet::new();
    for d in corpus {
        subsequences(&d.ids, params.max_len + 1, &mut all);
    }
    let support = |s: &[TokenId]| support_with_gap(corpus, s, params.max_gap);
    let mut out = Vec::new();
    for s in &all {
        if s.len() < params.min_len || s.len() > params.max_len {
            continue;
        }
        let sup = support(s);
        if sup < params.min_frequency {
            continue;
        }
        let closed = match params.max_gap {
            None => !all
                .iter()
                .any(|t| t.len() == s.len() + 1 && is_subseq(s, t) && support(t) == sup),
            Some(gap) => {
                // Gap-constrained mode: no single-token insertion may occur in
                // every document that supports `s`.
                let supporting: Vec<&TokenizedDoc> = corpus
                    .iter()
                    .filter(|d| support_with_gap(std::slice::from_ref(*d), s, Some(gap)) == 1)
                    .collect();
                let alphabet: BTreeSet<TokenId> = corpus.iter().flat_map(|d| d.ids.iter().copied()).collect();
                !(0..=s.len()).any(|slot| {
                    alphabet.iter().any(|&e| {
                        let mut t = s.clone();
                        t.insert(slot, e);
                        supporting
                            .iter()
                            .all(|d| support_with_gap(std::slice::from_ref(*d), &t, Some(gap)) == 1)
                    })
                })
            }
        };
        if closed {
            // An adjacent occurrence is always a supporting one.
            let contiguous = corpus.iter().any(|d| is_contiguous_in(&d.ids, s));
            out.push(MinedSequence::new(s.clone(), sup, contiguous));
        }
    }
    adapt_core::seqmine::canonical_sort(&mut out);
    out
}

pub fn docs(raw: Vec<Vec<TokenId>>) -> Vec<TokenizedDoc> {
    raw.into_iter().map(|ids| TokenizedDoc::new(ids, 0)).collect()
}

/// Random corpora within the oracle's reach: up to `max_docs` documents of
/// length 1..=`max_doc_len` over `alphabet` tokens.
pub fn corpus_strategy(max_docs: usize, max_doc_len: usize, alphabet: TokenId) -> impl Strategy<Value = Vec<Vec<TokenId>>> {
    prop::collection::vec(prop::collection::vec(0..alphabet, 1..=max_doc_len), 1..=max_docs)
}

pub fn params_strategy() -> impl Strategy<Value = MiningParams> {
    (1usize..=4, 1usize..=3, 0usize..=4).prop_map(|(f, lo, extra)| MiningParams::new(f, lo, lo + extra))
}

pub const FD_STEP: f64 = 1e-4;

fn with_param(model: &TinyClassifier, array: usize, i: usize, delta: f64) -> TinyClassifier {
    let mut m = model.clone();
    m.parameters_mut()[array][i] += delta;
    m
}

/// Central differences of the mean batch loss, one array per parameter group.
pub fn numeric_grads(model: &TinyClassifier, batch: &[TokenizedDoc]) -> Vec<Vec<f64>> {
    let sizes: Vec<usize> = model.parameters().iter().map(|(_, p)| p.len()).collect();
    sizes
        .iter()
        .enumerate()
        .map(|(a, &n)| {
            (0..n)
                .map(|i| {
                    let up = with_param(model, a, i, FD_STEP).loss(batch).unwrap();
                    let down = with_param(model, a, i, -FD_STEP).loss(batch).unwrap();
                    (up - down) / (2.0 * FD_STEP)
                })
                .collect()
        })
        .collect()
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub fn max_relative_error(model: &TinyClassifier, batch: &[TokenizedDoc]) -> f64 {
    let refs: Vec<&TokenizedDoc> = batch.iter().collect();
    let (_, g) = model.loss_and_grads(&refs).unwrap();
    let analytic = [&g.embedding, &g.w1, &g.b1, &g.w2, &g.b2];
    let numeric = numeric_grads(model, batch);
    let mut worst: f64 = 0.0;
    for (an, nu) in analytic.iter().zip(&numeric) {
        for (x, y) in an.iter().zip(nu) {
            worst = worst.max(relative_error(*x, *y));
        }
    }
    worst
}

/// The mask the budget rule prescribes: walk modules by sensitivity, keep
/// every prefix within budget, and take the first overshooting prefix only
/// when it is strictly nearer the budget.
pub fn expected_trainable(report: &SensitivityReport, forced: usize) -> Vec<bool> {
    let total: usize = report.modules.iter().map(|m| m.params).sum();
    let mut order: Vec<usize> = (0..report.modules.len()).collect();
    order.sort_by(|&a, &b| {
        let (ma, mb) = (&report.modules[a], &report.modules[b]);
        mb.sensitivity.partial_cmp(&ma.sensitivity).unwrap().then(ma.name.cmp(&mb.name))
    });
    let fraction = |set: &[usize]| {
        let counted: usize = set.iter().map(|&i| report.modules[i].params).sum();
        let forced_outside = if set.iter().any(|&i| report.modules[i].name == "embedding") { 0 } else { forced };
        (counted + forced_outside) as f64 / total as f64
    };
    let mut k = 0;
    while k < order.len() && fraction(&order[..=k]) <= report.budget {
        k += 1;
    }
    if k < order.len() && (fraction(&order[..=k]) - report.budget).abs() < (fraction(&order[..k]) - report.budget).abs() {
        k += 1;
    }
    let mut trainable = vec![false; report.modules.len()];
    for &i in &order[..k] {
        trainable[i] = true;
    }
    trainable
}


pub struct Bigram {
    pub model: TinyClassifier,
    pub train: Vec<TokenizedDoc>,
}

pub fn bigram_setup(seed: u64) -> Bigram {
    let task = bigram_task(&BigramTaskConfig::default());
    let vocab = BaseVocab::from_tokens(&task.vocab).unwrap();
    let cfg = PipelineConfig::bigram_task();
    let (_, _, _, tv) = build_vocabulary(&vocab, &task.train, &cfg).unwrap();
    assert!(!tv.is_empty());
    let train: Vec<TokenizedDoc> = apply_corpus(&tv, &vocab, &task.train)
        .into_iter()
        .map(|d| d.into_tokenized())
        .collect();
    let model = initial_model(&tv, &train, &cfg, seed).unwrap();
    Bigram { model, train }
}

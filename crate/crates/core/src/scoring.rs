//! Corpus n-gram counts, unigram-normalized perplexity, and the cutoff plus
//! vocabulary-cap selection of task sequences.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::TokenizedDoc;
use crate::error::{Error, Result};
use crate::io;
use crate::seqmine::{format_tokens, parse_flag, parse_tokens, MinedSequence};
use crate::TokenId;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub total_tokens: u64,
    pub documents: u64,
    pub unigram: HashMap<TokenId, u64>,
    pub bigram: HashMap<(TokenId, TokenId), u64>,
}

impl CorpusStats {
    pub fn unigram_count(&self, t: TokenId) -> u64 {
        self.unigram.get(&t).copied().unwrap_or(0)
    }

    pub fn bigram_count(&self, a: TokenId, b: TokenId) -> u64 {
        self.bigram.get(&(a, b)).copied().unwrap_or(0)
    }

    fn add_doc(mut self, ids: &[TokenId]) -> Self {
        self.total_tokens += ids.len() as u64;
        self.documents += 1;
        for &t in ids {
            *self.unigram.entry(t).or_insert(0) += 1;
        }
        for w in ids.windows(2) {
            *self.bigram.entry((w[0], w[1])).or_insert(0) += 1;
        }
        self
    }

    fn merge(mut self, other: CorpusStats) -> Self {
        self.total_tokens += other.total_tokens;
        self.documents += other.documents;
        for (k, v) in other.unigram {
            *self.unigram.entry(k).or_insert(0) += v;
        }
        for (k, v) in other.bigram {
            *self.bigram.entry(k).or_insert(0) += v;
        }
        self
    }
}

/// Exact unigram and adjacent-pair counts. Pairs never span documents.
pub fn build_stats(corpus: &[TokenizedDoc]) -> CorpusStats {
    corpus
        .par_iter()
        .fold(CorpusStats::default, |acc, d| acc.add_doc(&d.ids))
        .reduce(CorpusStats::default, CorpusStats::merge)
}

/// `p = ct(x1)/N * prod ct(x_j x_{j+1}) / ct(x_j)`, returned as `p^(-1/k)`.
/// A zero pair count yields `f64::INFINITY`.
pub fn compute_pplx(stats: &CorpusStats, seq: &[TokenId]) -> Result<f64> {
    assert!(!seq.is_empty(), "perplexity of an empty sequence");
    let counts = seq
        .iter()
        .map(|&t| match stats.unigram_count(t) {
            0 => Err(Error::UnknownToken(t)),
            c => Ok(c),
        })
        .collect::<Result<Vec<u64>>>()?;
    let mut p = counts[0] as f64 / stats.total_tokens as f64;
    for (j, w) in seq.windows(2).enumerate() {
        let pair = stats.bigram_count(w[0], w[1]);
        if pair == 0 {
            return Ok(f64::INFINITY);
        }
        p *= pair as f64 / counts[j] as f64;
    }
    Ok(p.powf(-1.0 / seq.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionParams {
    pub pplx_cutoff: f64,
    pub freq_cutoff: usize,
    pub vocab_cap_fraction: f64,
}

impl Default for SelectionParams {
    fn default() -> Self {
        SelectionParams {
            pplx_cutoff: 0.0,
            freq_cutoff: 1,
            vocab_cap_fraction: 0.10,
        }
    }
}

impl SelectionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.pplx_cutoff >= 0.0) {
            return Err(Error::Config("pplx cutoff must be non-negative".into()));
        }
        if self.freq_cutoff == 0 {
            return Err(Error::Config("frequency cutoff must be at least 1".into()));
        }
        if !(self.vocab_cap_fraction > 0.0 && self.vocab_cap_fraction <= 1.0) {
            return Err(Error::Config("vocabulary cap fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Largest number of sequences the cap admits for a base vocabulary.
    pub fn cap(&self, base_vocab_size: usize) -> usize {
        (self.vocab_cap_fraction * base_vocab_size as f64).floor() as usize
    }
}

/// Ranking used for capping: perplexity descending (infinite first), then
/// support descending, then tokens ascending.
pub fn selection_order(a: &MinedSequence, b: &MinedSequence) -> Ordering {
    let pa = a.perplexity.unwrap_or(0.0);
    let pb = b.perplexity.unwrap_or(0.0);
    pb.total_cmp(&pa)
        .then(b.support.cmp(&a.support))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Keeps candidates with perplexity and support at or above the cutoffs,
/// records their perplexity, ranks them and truncates to the vocabulary cap.
pub fn select_sequences(
    candidates: &[MinedSequence],
    stats: &CorpusStats,
    params: &SelectionParams,
    base_vocab_size: usize,
) -> Result<Vec<MinedSequence>> {
    params.validate()?;
    let scored = candidates
        .par_iter()
        .map(|c| compute_pplx(stats, &c.tokens).map(|p| (c, p)))
        .collect::<Result<Vec<_>>>()?;
    let mut kept: Vec<MinedSequence> = scored
        .into_iter()
        .filter(|(c, p)| *p >= params.pplx_cutoff && c.support >= params.freq_cutoff)
        .map(|(c, p)| MinedSequence {
            perplexity: Some(p),
            ..c.clone()
        })
        .collect();
    kept.sort_by(selection_order);
    kept.truncate(params.cap(base_vocab_size));
    Ok(kept)
}

pub const SELECTED_HEADER: &str = "tokens\tsupport\tcontiguous\tpplx";

pub fn format_pplx(p: f64) -> String {
    if p.is_infinite() {
        "inf".to_string()
    } else {
        format!("{p}")
    }
}

pub fn parse_pplx(s: &str) -> std::result::Result<f64, String> {
    if s == "inf" {
        return Ok(f64::INFINITY);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        Ok(v) => Err(format!("perplexity {v} out of range")),
        Err(e) => Err(e.to_string()),
    }
}

/// Writes the scored-sequence TSV (`tokens`, `support`, `contiguous`, `pplx`).
pub fn write_selected(path: &Path, seqs: &[MinedSequence]) -> Result<()> {
    let mut s = String::from(SELECTED_HEADER);
    s.push('\n');
    for seq in seqs {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}",
            format_tokens(&seq.tokens),
            seq.support,
            u8::from(seq.contiguous),
            format_pplx(seq.perplexity.unwrap_or(f64::NAN))
        );
    }
    io::write_string(path, &s)
}

pub fn read_selected(path: &Path) -> Result<Vec<MinedSequence>> {
    let lines = io::read_lines(path)?;
    if lines.first().map(String::as_str) != Some(SELECTED_HEADER) {
        return Err(Error::parse(1, "header", format!("expected {SELECTED_HEADER:?}")));
    }
    lines
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let line = i + 1;
            let cols: Vec<&str> = l.split('\t').collect();
            if cols.len() != 4 {
                return Err(Error::parse(line, "columns", "expected 4 columns"));
            }
            Ok(MinedSequence {
                tokens: parse_tokens(line, cols[0])?,
                support: cols[1].parse().map_err(|e| Error::parse(line, "support", e))?,
                contiguous: parse_flag(line, cols[2])?,
                perplexity: Some(parse_pplx(cols[3]).map_err(|e| Error::parse(line, "pplx", e))?),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: TokenId = 0;
    const B: TokenId = 1;
    const C: TokenId = 2;
    const D: TokenId = 3;

    fn corpus(docs: &[&[TokenId]]) -> Vec<TokenizedDoc> {
        docs.iter().map(|d| TokenizedDoc::new(d.to_vec(), 0)).collect()
    }

    fn worked() -> CorpusStats {
        build_stats(&corpus(&[&[A, B, C], &[A, B, D]]))
    }

    #[test]
    fn counts() {
        let s = worked();
        assert_eq!(s.total_tokens, 6);
        assert_eq!(s.unigram_count(A), 2);
        assert_eq!(s.unigram_count(B), 2);
        assert_eq!(s.bigram_count(A, B), 2);
        assert_eq!(s.bigram_count(B, C), 1);
        assert_eq!(s.bigram_count(B, D), 1);
        assert_eq!(s.bigram.len(), 3);

        let single = build_stats(&corpus(&[&[A]]));
        assert_eq!(single.total_tokens, 1);
        assert!(single.bigram.is_empty());

        let twice = build_stats(&corpus(&[&[A, A]]));
        assert_eq!(twice.unigram_count(A), 2);
        assert_eq!(twice.bigram_count(A, A), 1);
    }

    #[test]
    fn perplexity_values() {
        let s = worked();
        // (2/6)(2/2) = 1/3
        assert!((compute_pplx(&s, &[A, B]).unwrap() - 3f64.sqrt()).abs() < 1e-9);
        // (1/3)(1/2) = 1/6
        assert!((compute_pplx(&s, &[A, B, C]).unwrap() - 6f64.cbrt()).abs() < 1e-9);
        assert_eq!(compute_pplx(&s, &[A, D]).unwrap(), f64::INFINITY);
        let single = build_stats(&corpus(&[&[A]]));
        assert_eq!(compute_pplx(&single, &[A]).unwrap(), 1.0);
    }

    #[test]
    fn unseen_token_is_an_error() {
        assert!(matches!(
            compute_pplx(&worked(), &[A, 9]),
            Err(Error::UnknownToken(9))
        ));
    }

    fn cand(tokens: Vec<TokenId>, support: usize) -> MinedSequence {
        MinedSequence::new(tokens, support, true)
    }

    #[test]
    fn cap_truncates_by_ranking() {
        let c = corpus(&[&[A, B, C, D], &[A, B, C], &[B, C, D, A], &[A, C]]);
        let stats = build_stats(&c);
        let cands = vec![
            cand(vec![A, B], 2),
            cand(vec![B, C], 3),
            cand(vec![C, D], 2),
            cand(vec![A, C], 3),
            cand(vec![A, B, C], 2),
        ];
        let mut expected: Vec<(Vec<TokenId>, f64)> = cands
            .iter()
            .map(|c| (c.tokens.clone(), compute_pplx(&stats, &c.tokens).unwrap()))
            .collect();
        let params = SelectionParams {
            vocab_cap_fraction: 0.3,
            ..Default::default()
        };
        let out = select_sequences(&cands, &stats, &params, 10).unwrap();
        assert_eq!(out.len(), 3);
        expected.sort_by(|a, b| b.1.total_cmp(&a.1));
        let got: Vec<_> = out.iter().map(|s| s.tokens.clone()).collect();
        let want: Vec<_> = expected.iter().take(3).map(|e| e.0.clone()).collect();
        assert_eq!(got, want);
        // [A, C] has a zero pair chain count only if never adjacent; here it is adjacent once.
        assert!(out.iter().all(|s| s.perplexity.is_some()));
    }

    #[test]
    fn vacuous_filter_keeps_all() {
        let c = corpus(&[&[A, B, C], &[A, B, D]]);
        let stats = build_stats(&c);
        let cands = vec![cand(vec![A, B], 2), cand(vec![A, B, C], 1), cand(vec![A, D], 1)];
        let params = SelectionParams {
            pplx_cutoff: 0.0,
            freq_cutoff: 1,
            vocab_cap_fraction: 1.0,
        };
        let out = select_sequences(&cands, &stats, &params, 3).unwrap();
        assert_eq!(out.len(), 3);
        // Infinite perplexity ranks first.
        assert_eq!(out[0].tokens, vec![A, D]);
    }

    #[test]
    fn default_cap_on_bert_sized_vocab() {
        assert_eq!(SelectionParams::default().cap(30522), 3052);
    }

    #[test]
    fn cutoffs_filter() {
        let c = corpus(&[&[A, B, C], &[A, B, D]]);
        let stats = build_stats(&c);
        let cands = vec![cand(vec![A, B], 2), cand(vec![A, B, C], 1)];
        let params = SelectionParams {
            pplx_cutoff: 1.8,
            freq_cutoff: 1,
            vocab_cap_fraction: 1.0,
        };
        let out = select_sequences(&cands, &stats, &params, 10).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].tokens, vec![A, B, C]);
        let params = SelectionParams {
            pplx_cutoff: 0.0,
            freq_cutoff: 2,
            vocab_cap_fraction: 1.0,
        };
        let out = select_sequences(&cands, &stats, &params, 10).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].tokens, vec![A, B]);
    }

    #[test]
    fn selected_tsv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("selected.tsv");
        let seqs = vec![
            MinedSequence {
                perplexity: Some(f64::INFINITY),
                ..cand(vec![3, 1], 7)
            },
            MinedSequence {
                perplexity: Some(1.7320508075688772),
                ..cand(vec![1, 2, 3], 5)
            },
        ];
        write_selected(&path, &seqs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("3 1\t7\t1\tinf\n"));
        assert_eq!(read_selected(&path).unwrap(), seqs);
    }
}

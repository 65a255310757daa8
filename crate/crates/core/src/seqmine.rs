//! Closed frequent sequence mining over tokenized documents.
//!
//! Support is document frequency: a document counts once if it contains the
//! sequence as an in-order, possibly gapped, subsequence. A frequent sequence
//! is closed when no single-token insertion (at any position) keeps its
//! support. Insertions suffice: support is anti-monotone, so any equal-support
//! super-sequence has an equal-support super-sequence exactly one token longer.
//!
//! The unbounded-gap path is a projected-database depth-first search in the
//! style of BIDE. For a prefix `p` and a supporting document we compute two
//! embeddings: the leftmost one (`first`) and the rightmost one (`last`). A
//! token `e` can be inserted before `p[i]` in that document iff it occurs
//! strictly between `first[i - 1]` and `last[i]` (the maximum period). If
//! some token occurs strictly between `first[i - 1]` and `first[i]` (the
//! semi-maximum period) in every supporting document, no extension of `p`
//! can be closed and the whole subtree is skipped.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::TokenizedDoc;
use crate::error::{Error, Result};
use crate::io;
use crate::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MiningParams {
    pub min_frequency: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Maximum number of skipped tokens between consecutive matched tokens.
    /// `None` allows unbounded gaps.
    pub max_gap: Option<usize>,
}

impl Default for MiningParams {
    fn default() -> Self {
        MiningParams {
            min_frequency: 5,
            min_len: 3,
            max_len: 20,
            max_gap: None,
        }
    }
}

impl MiningParams {
    pub fn new(min_frequency: usize, min_len: usize, max_len: usize) -> Self {
        MiningParams {
            min_frequency,
            min_len,
            max_len,
            max_gap: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_frequency == 0 {
            return Err(Error::Config("min_frequency must be at least 1".into()));
        }
        if self.min_len == 0 {
            return Err(Error::Config("min_len must be at least 1".into()));
        }
        if self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "min_len {} exceeds max_len {}",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinedSequence {
    pub tokens: Vec<TokenId>,
    pub support: usize,
    /// True iff some supporting document holds the tokens adjacently.
    pub contiguous: bool,
    /// Filled by scoring; `Some(f64::INFINITY)` marks a zero-probability chain.
    pub perplexity: Option<f64>,
}

impl MinedSequence {
    pub fn new(tokens: Vec<TokenId>, support: usize, contiguous: bool) -> Self {
        MinedSequence {
            tokens,
            support,
            contiguous,
            perplexity: None,
        }
    }
}

/// Canonical output order: support descending, length descending, tokens ascending.
pub fn canonical_sort(seqs: &mut [MinedSequence]) {
    seqs.sort_by(|a, b| {
        b.support
            .cmp(&a.support)
            .then(b.tokens.len().cmp(&a.tokens.len()))
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
}

/// Whether `seq` occurs in `doc` in order with unbounded gaps.
pub fn is_subsequence(doc: &[TokenId], seq: &[TokenId]) -> bool {
    let mut it = doc.iter();
    seq.iter().all(|t| it.any(|d| d == t))
}

/// Whether `seq` occurs in `doc` in order with at most `max_gap` skipped
/// tokens between consecutive matches.
pub fn is_subsequence_with_gap(doc: &[TokenId], seq: &[TokenId], max_gap: Option<usize>) -> bool {
    match max_gap {
        None => is_subsequence(doc, seq),
        Some(gap) => {
            let Some((&first, rest)) = seq.split_first() else {
                return true;
            };
            let mut ends: Vec<usize> = positions_of(doc, first, 0, doc.len());
            for &t in rest {
                ends = extend_ends(doc, &ends, t, gap);
                if ends.is_empty() {
                    return false;
                }
            }
            !ends.is_empty()
        }
    }
}

/// Whether `seq` occurs as a contiguous run in `doc`.
pub fn is_contiguous_in(doc: &[TokenId], seq: &[TokenId]) -> bool {
    !seq.is_empty() && doc.windows(seq.len()).any(|w| w == seq)
}

/// Number of documents containing `seq` as a (possibly gapped) subsequence.
pub fn support_of(corpus: &[TokenizedDoc], seq: &[TokenId]) -> usize {
    corpus
        .iter()
        .filter(|d| is_subsequence(&d.ids, seq))
        .count()
}

pub fn support_with_gap(corpus: &[TokenizedDoc], seq: &[TokenId], max_gap: Option<usize>) -> usize {
    corpus
        .iter()
        .filter(|d| is_subsequence_with_gap(&d.ids, seq, max_gap))
        .count()
}

fn positions_of(doc: &[TokenId], token: TokenId, from: usize, to: usize) -> Vec<usize> {
    (from..to).filter(|&i| doc[i] == token).collect()
}

fn extend_ends(doc: &[TokenId], ends: &[usize], token: TokenId, gap: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut next_free = 0;
    for &e in ends {
        let lo = (e + 1).max(next_free);
        let hi = (e + gap + 2).min(doc.len());
        for q in lo..hi {
            if doc[q] == token {
                out.push(q);
            }
        }
        next_free = next_free.max(hi);
    }
    out
}

/// Mines closed frequent sequences within the length and support bounds.
/// The result is in canonical order and does not depend on document order
/// or thread count.
pub fn mine_closed(corpus: &[TokenizedDoc], params: &MiningParams) -> Result<Vec<MinedSequence>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    params.validate()?;
    let docs: Vec<&[TokenId]> = corpus.iter().map(|d| d.ids.as_slice()).collect();
    let mut out = match params.max_gap {
        None => Bide::new(&docs, params).run(),
        Some(gap) => GapMiner::new(&docs, params, gap).run(),
    };
    canonical_sort(&mut out);
    Ok(out)
}

/// Frequent single tokens with their supporting documents.
fn frequent_items(docs: &[&[TokenId]], min_frequency: usize) -> Vec<(TokenId, Vec<usize>)> {
    let mut items: BTreeMap<TokenId, Vec<usize>> = BTreeMap::new();
    for (d, doc) in docs.iter().enumerate() {
        let mut seen = HashSet::new();
        for &t in doc.iter() {
            if seen.insert(t) {
                items.entry(t).or_default().push(d);
            }
        }
    }
    items
        .into_iter()
        .filter(|(_, ds)| ds.len() >= min_frequency)
        .collect()
}

fn contiguous_in_any(docs: &[&[TokenId]], supporting: impl Iterator<Item = usize>, seq: &[TokenId]) -> bool {
    let mut supporting = supporting;
    supporting.any(|d| is_contiguous_in(docs[d], seq))
}

/// Sorted, deduplicated tokens at positions strictly between `lo` and `hi`.
fn tokens_between(doc: &[TokenId], lo: Option<usize>, hi: usize) -> Vec<TokenId> {
    let start = lo.map_or(0, |l| l + 1);
    if start >= hi {
        return Vec::new();
    }
    let mut v = doc[start..hi].to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

fn intersect_sorted(acc: &mut Vec<TokenId>, other: &[TokenId]) {
    let mut j = 0;
    acc.retain(|t| {
        while j < other.len() && other[j] < *t {
            j += 1;
        }
        j < other.len() && other[j] == *t
    });
}

struct Bide<'a> {
    docs: &'a [&'a [TokenId]],
    params: &'a MiningParams,
}

/// One supporting document and the position just past the leftmost match.
#[derive(Clone, Copy)]
struct Projection {
    doc: usize,
    end: usize,
}

impl<'a> Bide<'a> {
    fn new(docs: &'a [&'a [TokenId]], params: &'a MiningParams) -> Self {
        Bide { docs, params }
    }

    fn run(&self) -> Vec<MinedSequence> {
        frequent_items(self.docs, self.params.min_frequency)
            .into_par_iter()
            .map(|(item, supporting)| {
                let proj: Vec<Projection> = supporting
                    .iter()
                    .map(|&d| {
                        let pos = self.docs[d].iter().position(|&t| t == item).unwrap();
                        Projection { doc: d, end: pos + 1 }
                    })
                    .collect();
                let mut out = Vec::new();
                let mut prefix = vec![item];
                self.grow(&mut prefix, &proj, &mut out);
                out
            })
            .flatten()
            .collect()
    }

    fn leftmost(&self, doc: &[TokenId], prefix: &[TokenId]) -> Vec<usize> {
        let mut out = Vec::with_capacity(prefix.len());
        let mut pos = 0;
        for &t in prefix {
            while doc[pos] != t {
                pos += 1;
            }
            out.push(pos);
            pos += 1;
        }
        out
    }

    fn rightmost(&self, doc: &[TokenId], prefix: &[TokenId]) -> Vec<usize> {
        let mut out = vec![0; prefix.len()];
        let mut pos = doc.len();
        for (i, &t) in prefix.iter().enumerate().rev() {
            pos -= 1;
            while doc[pos] != t {
                pos -= 1;
            }
            out[i] = pos;
        }
        out
    }

    /// Checks every insertion slot before an existing prefix token. With
    /// `semi` the upper bound is the leftmost embedding (pruning test),
    /// otherwise the rightmost embedding (closure test).
    fn has_backward_extension(&self, prefix: &[TokenId], proj: &[Projection], semi: bool) -> bool {
        let bounds: Vec<(Vec<usize>, Vec<usize>)> = proj
            .iter()
            .map(|p| {
                let doc = self.docs[p.doc];
                let first = self.leftmost(doc, prefix);
                let upper = if semi {
                    first.clone()
                } else {
                    self.rightmost(doc, prefix)
                };
                (first, upper)
            })
            .collect();
        (0..prefix.len()).any(|i| {
            let mut acc: Option<Vec<TokenId>> = None;
            for (p, (first, upper)) in proj.iter().zip(&bounds) {
                let lo = if i == 0 { None } else { Some(first[i - 1]) };
                let here = tokens_between(self.docs[p.doc], lo, upper[i]);
                match acc.as_mut() {
                    None => acc = Some(here),
                    Some(a) => intersect_sorted(a, &here),
                }
                if acc.as_ref().is_some_and(Vec::is_empty) {
                    return false;
                }
            }
            acc.is_some_and(|a| !a.is_empty())
        })
    }

    fn grow(&self, prefix: &mut Vec<TokenId>, proj: &[Projection], out: &mut Vec<MinedSequence>) {
        let support = proj.len();
        if self.has_backward_extension(prefix, proj, true) {
            return;
        }

        // Supporting documents per forward token, each document once.
        let mut forward: BTreeMap<TokenId, Vec<Projection>> = BTreeMap::new();
        for p in proj {
            let doc = self.docs[p.doc];
            let mut seen = HashSet::new();
            for (offset, &t) in doc[p.end..].iter().enumerate() {
                if seen.insert(t) {
                    forward.entry(t).or_default().push(Projection {
                        doc: p.doc,
                        end: p.end + offset + 1,
                    });
                }
            }
        }

        let forward_closed = forward.values().all(|ps| ps.len() < support);
        let len = prefix.len();
        if forward_closed
            && len >= self.params.min_len
            && !self.has_backward_extension(prefix, proj, false)
        {
            out.push(MinedSequence::new(
                prefix.clone(),
                support,
                contiguous_in_any(self.docs, proj.iter().map(|p| p.doc), prefix),
            ));
        }

        if len >= self.params.max_len {
            return;
        }
        for (t, next) in forward {
            if next.len() >= self.params.min_frequency {
                prefix.push(t);
                self.grow(prefix, &next, out);
                prefix.pop();
            }
        }
    }
}

/// Mining under a bounded gap. Projections track every feasible end
/// position, and closure is checked by direct insertion tests.
struct GapMiner<'a> {
    docs: &'a [&'a [TokenId]],
    params: &'a MiningParams,
    gap: usize,
}

impl<'a> GapMiner<'a> {
    fn new(docs: &'a [&'a [TokenId]], params: &'a MiningParams, gap: usize) -> Self {
        GapMiner { docs, params, gap }
    }

    fn run(&self) -> Vec<MinedSequence> {
        frequent_items(self.docs, self.params.min_frequency)
            .into_par_iter()
            .map(|(item, supporting)| {
                let proj: Vec<(usize, Vec<usize>)> = supporting
                    .iter()
                    .map(|&d| (d, positions_of(self.docs[d], item, 0, self.docs[d].len())))
                    .collect();
                let mut out = Vec::new();
                let mut prefix = vec![item];
                self.grow(&mut prefix, &proj, &mut out);
                out
            })
            .flatten()
            .collect()
    }

    fn is_closed(&self, prefix: &[TokenId], proj: &[(usize, Vec<usize>)]) -> bool {
        let mut alphabet: Vec<TokenId> = self.docs[proj[0].0].to_vec();
        alphabet.sort_unstable();
        alphabet.dedup();
        let mut candidate = Vec::with_capacity(prefix.len() + 1);
        for slot in 0..=prefix.len() {
            for &e in &alphabet {
                candidate.clear();
                candidate.extend_from_slice(&prefix[..slot]);
                candidate.push(e);
                candidate.extend_from_slice(&prefix[slot..]);
                if proj
                    .iter()
                    .all(|(d, _)| is_subsequence_with_gap(self.docs[*d], &candidate, Some(self.gap)))
                {
                    return false;
                }
            }
        }
        true
    }

    fn grow(&self, prefix: &mut Vec<TokenId>, proj: &[(usize, Vec<usize>)], out: &mut Vec<MinedSequence>) {
        let len = prefix.len();
        if len >= self.params.min_len && self.is_closed(prefix, proj) {
            out.push(MinedSequence::new(
                prefix.clone(),
                proj.len(),
                contiguous_in_any(self.docs, proj.iter().map(|(d, _)| *d), prefix),
            ));
        }
        if len >= self.params.max_len {
            return;
        }
        let mut forward: BTreeMap<TokenId, Vec<(usize, Vec<usize>)>> = BTreeMap::new();
        for (d, ends) in proj {
            let doc = self.docs[*d];
            let mut candidates: Vec<TokenId> = ends
                .iter()
                .flat_map(|&e| doc[(e + 1).min(doc.len())..(e + self.gap + 2).min(doc.len())].iter().copied())
                .collect();
            candidates.sort_unstable();
            candidates.dedup();
            for t in candidates {
                let next = extend_ends(doc, ends, t, self.gap);
                if !next.is_empty() {
                    forward.entry(t).or_default().push((*d, next));
                }
            }
        }
        for (t, next) in forward {
            if next.len() >= self.params.min_frequency {
                prefix.push(t);
                self.grow(prefix, &next, out);
                prefix.pop();
            }
        }
    }
}

pub(crate) fn format_tokens(tokens: &[TokenId]) -> String {
    let mut s = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{t}");
    }
    s
}

pub(crate) fn parse_tokens(line: usize, field: &str) -> Result<Vec<TokenId>> {
    let tokens = field
        .split(' ')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<TokenId>().map_err(|e| Error::parse(line, "tokens", e)))
        .collect::<Result<Vec<_>>>()?;
    if tokens.is_empty() {
        return Err(Error::parse(line, "tokens", "empty token list"));
    }
    Ok(tokens)
}

pub(crate) fn parse_flag(line: usize, field: &str) -> Result<bool> {
    match field {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::parse(line, "contiguous", format!("expected 0 or 1, got {other:?}"))),
    }
}

pub const MINED_HEADER: &str = "tokens\tsupport\tcontiguous";

/// Writes the mined-sequence TSV (`tokens`, `support`, `contiguous`).
pub fn write_mined(path: &Path, seqs: &[MinedSequence]) -> Result<()> {
    let mut s = String::from(MINED_HEADER);
    s.push('\n');
    for seq in seqs {
        let _ = writeln!(
            s,
            "{}\t{}\t{}",
            format_tokens(&seq.tokens),
            seq.support,
            u8::from(seq.contiguous)
        );
    }
    io::write_string(path, &s)
}

pub fn read_mined(path: &Path) -> Result<Vec<MinedSequence>> {
    let lines = io::read_lines(path)?;
    match lines.first() {
        Some(h) if h.split('\t').take(3).eq(MINED_HEADER.split('\t')) => {}
        _ => return Err(Error::parse(1, "header", format!("expected {MINED_HEADER:?}"))),
    }
    lines
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let line = i + 1;
            let cols: Vec<&str> = l.split('\t').collect();
            if cols.len() < 3 {
                return Err(Error::parse(line, "columns", "expected 3 columns"));
            }
            Ok(MinedSequence::new(
                parse_tokens(line, cols[0])?,
                cols[1].parse().map_err(|e| Error::parse(line, "support", e))?,
                parse_flag(line, cols[2])?,
            ))
        })
        .collect()
}

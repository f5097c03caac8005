use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::bleu::ngram_counts;
use super::tokenize::{tokenize, Lang};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(hits: usize, hyp_total: usize, ref_total: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(hits, hyp_total);
        let recall = ratio(hits, ref_total);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { precision, recall, f1 }
    }
}

pub fn rouge_n(hyp: &[String], reference: &[String], n: usize) -> Prf {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let overlap = h
        .iter()
        .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    Prf::from_counts(overlap, h.values().sum(), r.values().sum())
}

/// LCS table `t[i][j]` over `a[..i]` and `b[..j]`.
fn lcs_table(a: &[String], b: &[String]) -> Vec<Vec<usize>> {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for j in 1..=b.len() {
            cur[j] = if *x == b[j - 1] {
                prev[j - 1] + 1
            } else {
                prev[j].max(cur[j - 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(hyp: &[String], reference: &[String]) -> Prf {
    Prf::from_counts(lcs_len(hyp, reference), hyp.len(), reference.len())
}

/// Indices into `reference` of one LCS with `candidate`.
fn lcs_indices(reference: &[String], candidate: &[String]) -> Vec<usize> {
    let t = lcs_table(candidate, reference);
    let (mut i, mut j) = (candidate.len(), reference.len());
    let mut out = Vec::new();
    while i > 0 && j > 0 {
        if reference[j - 1] == candidate[i - 1] {
            out.push(j - 1);
            i -= 1;
            j -= 1;
        } else if t[i][j - 1] > t[i - 1][j] {
            j -= 1;
        } else {
            i -= 1;
        }
    }
    out.reverse();
    out
}

const TERMINATORS: [char; 7] = ['.', '!', '?', ';', '。', '！', '？'];

/// Split at a terminator that is followed by whitespace or the end of text.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if !TERMINATORS.contains(&c) {
            continue;
        }
        let boundary = match chars.peek() {
            None => true,
            Some((_, next)) => next.is_whitespace(),
        };
        if boundary {
            let end = i + c.len_utf8();
            out.push(text[start..end].trim());
            start = end;
        }
    }
    out.push(text[start..].trim());
    out.retain(|s| !s.is_empty());
    out
}

/// Summary-level ROUGE-L over sentence-split texts, F1.
pub fn rouge_lsum(hyp: &str, reference: &str, lang: Lang) -> f64 {
    let hyp_sents: Vec<Vec<String>> = split_sentences(hyp).into_iter().map(|s| tokenize(s, lang)).collect();
    let ref_sents: Vec<Vec<String>> = split_sentences(reference)
        .into_iter()
        .map(|s| tokenize(s, lang))
        .collect();
    rouge_lsum_tokens(&hyp_sents, &ref_sents).f1
}

pub fn rouge_lsum_tokens(hyp_sents: &[Vec<String>], ref_sents: &[Vec<String>]) -> Prf {
    let n: usize = hyp_sents.iter().map(Vec::len).sum();
    let m: usize = ref_sents.iter().map(Vec::len).sum();
    if n == 0 || m == 0 {
        return Prf::default();
    }
    let mut hyp_left: HashMap<&str, usize> = HashMap::new();
    for t in hyp_sents.iter().flatten() {
        *hyp_left.entry(t.as_str()).or_default() += 1;
    }
    let mut ref_left: HashMap<&str, usize> = HashMap::new();
    for t in ref_sents.iter().flatten() {
        *ref_left.entry(t.as_str()).or_default() += 1;
    }

    let mut hits = 0;
    for r in ref_sents {
        let mut union: Vec<usize> = hyp_sents.iter().flat_map(|h| lcs_indices(r, h)).collect();
        union.sort_unstable();
        union.dedup();
        for idx in union {
            let tok = r[idx].as_str();
            let (Some(hc), Some(rc)) = (hyp_left.get(tok).copied(), ref_left.get(tok).copied()) else {
                continue;
            };
            if hc > 0 && rc > 0 {
                hits += 1;
                hyp_left.insert(tok, hc - 1);
                ref_left.insert(tok, rc - 1);
            }
        }
    }
    Prf::from_counts(hits, n, m)
}

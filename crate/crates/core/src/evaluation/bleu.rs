use std::collections::HashMap;

use super::MetricError;

/// Substitute for a zero n-gram numerator.
pub const BLEU_EPSILON: f64 = 1e-9;

/// A reference with its rater weight in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedReference {
    pub tokens: Vec<String>,
    pub weight: f64,
}

impl WeightedReference {
    pub fn new(tokens: Vec<String>, weight: f64) -> Result<Self, MetricError> {
        if tokens.is_empty() {
            return Err(MetricError::EmptyReference);
        }
        if !(weight.abs() <= 1.0) {
            return Err(MetricError::BadWeight(weight));
        }
        Ok(Self { tokens, weight })
    }

    /// Weight 1.0.
    pub fn unit(tokens: Vec<String>) -> Result<Self, MetricError> {
        Self::new(tokens, 1.0)
    }
}

pub(crate) fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

fn closest_ref_len(hyp_len: usize, refs: &[WeightedReference]) -> usize {
    refs.iter()
        .map(|r| r.tokens.len())
        .min_by_key(|&len| (len.abs_diff(hyp_len), len))
        .expect("refs nonempty")
}

/// Sentence-level deltaBLEU.
///
/// For each hypothesis n-gram the credit is the largest `weight * min(count_hyp, count_ref)`
/// among references that contain it. Per-order credit sums are floored at 0;
/// a zero numerator (or an order with no hypothesis n-grams) becomes
/// [`BLEU_EPSILON`]. Brevity penalty uses the closest reference length,
/// preferring the shorter one on ties.
pub fn delta_bleu(hyp: &[String], refs: &[WeightedReference], max_n: usize) -> Result<f64, MetricError> {
    if refs.is_empty() {
        return Err(MetricError::NoReferences);
    }
    if hyp.is_empty() || max_n == 0 {
        return Ok(0.0);
    }

    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let hyp_counts = ngram_counts(hyp, n);
        let denom = hyp.len().saturating_sub(n - 1);
        let ref_counts: Vec<_> = refs.iter().map(|r| (ngram_counts(&r.tokens, n), r.weight)).collect();

        let mut numer = 0.0;
        for (gram, &ch) in &hyp_counts {
            let best = ref_counts
                .iter()
                .filter_map(|(counts, w)| counts.get(gram).map(|&cr| w * ch.min(cr) as f64))
                .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.max(x))));
            numer += best.unwrap_or(0.0);
        }
        let numer = numer.max(0.0);

        let p = if denom == 0 {
            BLEU_EPSILON
        } else if numer == 0.0 {
            BLEU_EPSILON / denom as f64
        } else {
            numer / denom as f64
        };
        log_sum += p.ln();
    }

    let c = hyp.len() as f64;
    let r = closest_ref_len(hyp.len(), refs) as f64;
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    Ok((bp * (log_sum / max_n as f64).exp()).clamp(0.0, 1.0))
}

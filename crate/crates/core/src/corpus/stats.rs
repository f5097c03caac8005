use std::collections::BTreeMap;

use serde::Serialize;

use super::{Attribute, Corpus, Split, WoundAttributes};
use crate::evaluation::tokenize::word_count;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelCount {
    pub label: String,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub split: Split,
    pub encounters: usize,
    pub responses: usize,
    pub images: usize,
    pub single_image_encounters: usize,
    pub multi_image_encounters: usize,
    pub max_images_per_encounter: usize,
    /// Whitespace words over the English title and content.
    pub mean_query_words: f64,
    /// Whitespace words over English reference responses.
    pub mean_response_words: f64,
    pub label_distribution: BTreeMap<Attribute, Vec<LabelCount>>,
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let encs = corpus.encounters();
    let images: usize = encs.iter().map(|e| e.images.len()).sum();
    let single = encs.iter().filter(|e| e.images.len() == 1).count();
    let responses: Vec<&String> = encs.iter().flat_map(|e| &e.reference_responses_en).collect();

    let query_words: usize = encs.iter().map(|e| word_count(&e.query_en())).sum();
    let response_words: usize = responses.iter().map(|r| word_count(r)).sum();

    CorpusStats {
        split: corpus.split(),
        encounters: encs.len(),
        responses: responses.len(),
        images,
        single_image_encounters: single,
        multi_image_encounters: encs.len() - single,
        max_images_per_encounter: encs.iter().map(|e| e.images.len()).max().unwrap_or(0),
        mean_query_words: mean(query_words, encs.len()),
        mean_response_words: mean(response_words, responses.len()),
        label_distribution: label_distribution_of(
            encs.iter().filter_map(|e| e.gold_attributes.as_ref()),
        ),
    }
}

fn mean(total: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        total as f64 / n as f64
    }
}

/// Counts and percentages of present labels per attribute, most frequent first.
pub fn label_distribution_of<'a>(
    attrs: impl IntoIterator<Item = &'a WoundAttributes>,
) -> BTreeMap<Attribute, Vec<LabelCount>> {
    let mut counts: BTreeMap<Attribute, BTreeMap<String, usize>> =
        Attribute::ALL.iter().map(|a| (*a, BTreeMap::new())).collect();
    for a in attrs {
        for attr in Attribute::ALL {
            for v in a.values(attr) {
                *counts.get_mut(&attr).unwrap().entry(v.to_string()).or_default() += 1;
            }
        }
    }
    counts
        .into_iter()
        .map(|(attr, labels)| {
            let total: usize = labels.values().sum();
            let mut rows: Vec<LabelCount> = labels
                .into_iter()
                .map(|(label, count)| LabelCount {
                    label,
                    count,
                    percent: 100.0 * count as f64 / total as f64,
                })
                .collect();
            rows.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.label.cmp(&b.label)));
            (attr, rows)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Encounter, ImageRef};
    use std::path::PathBuf;

    fn enc(id: &str, n_images: usize, wound_type: Option<&str>) -> Encounter {
        Encounter {
            encounter_id: id.into(),
            images: (0..n_images)
                .map(|i| ImageRef {
                    rel_path: format!("{id}-{i}.jpg"),
                    path: PathBuf::from(format!("{id}-{i}.jpg")),
                    byte_length: 1,
                    width_px: None,
                    height_px: None,
                })
                .collect(),
            query_title_en: "My cut".into(),
            query_content_en: "is it bad".into(),
            query_title_zh: String::new(),
            query_content_zh: String::new(),
            gold_attributes: wound_type.map(|t| WoundAttributes {
                wound_type: Some(t.into()),
                ..Default::default()
            }),
            reference_responses_en: vec!["Keep it clean.".into()],
            reference_responses_zh: vec![],
        }
    }

    #[test]
    fn single_encounter() {
        let corpus = Corpus::new(Split::Train, vec![enc("e1", 1, Some("traumatic"))]).unwrap();
        let s = corpus_stats(&corpus);
        assert_eq!((s.single_image_encounters, s.multi_image_encounters), (1, 0));
        assert_eq!(s.mean_query_words, 5.0);
        assert_eq!(s.mean_response_words, 3.0);
        assert_eq!(s.label_distribution[&Attribute::WoundType][0].percent, 100.0);
    }

    #[test]
    fn planted_label_counts_are_reported() {
        let mut encs = Vec::new();
        for i in 0..10 {
            let t = match i {
                0..=6 => Some("traumatic"),
                7 | 8 => Some("surgical"),
                _ => None,
            };
            encs.push(enc(&format!("e{i}"), 1 + i % 3, t));
        }
        let s = corpus_stats(&Corpus::new(Split::Validation, encs).unwrap());
        let wt = &s.label_distribution[&Attribute::WoundType];
        assert_eq!(wt.len(), 2);
        assert_eq!((wt[0].label.as_str(), wt[0].count), ("traumatic", 7));
        assert_eq!((wt[1].label.as_str(), wt[1].count), ("surgical", 2));
        let pct: f64 = wt.iter().map(|r| r.percent).sum();
        assert!((pct - 100.0).abs() < 0.1);
        assert!(s.label_distribution[&Attribute::Infection].is_empty());
        assert_eq!(s.images, 4 * 1 + 3 * 2 + 3 * 3);
        assert_eq!(s.single_image_encounters, 4);
        assert_eq!(s.max_images_per_encounter, 3);
    }
}

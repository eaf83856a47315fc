//! Corpus statistics over a dataset manifest: unique labels per field and
//! word occurrence rankings.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::images::{DatasetManifest, DatasetSample};
use crate::llm::ExtractedFields;

/// Articles and prepositions left out of word counts.
pub const STOPWORDS: &[&str] = &[
    "a", "about", "above", "across", "after", "against", "along", "among", "an", "around", "as",
    "at", "before", "behind", "below", "beneath", "beside", "between", "beyond", "by", "down",
    "during", "for", "from", "in", "inside", "into", "near", "of", "off", "on", "onto", "out",
    "outside", "over", "per", "through", "the", "to", "toward", "towards", "under", "until", "up",
    "upon", "via", "with", "within", "without",
];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sample_count: usize,
    pub unique_counts: BTreeMap<String, usize>,
    pub word_occurrences: BTreeMap<String, Vec<(String, usize)>>,
}

pub fn default_stopwords() -> HashSet<String> {
    STOPWORDS.iter().map(|s| s.to_string()).collect()
}

/// Split a field value into lowercase word tokens. Tokens are separated by
/// whitespace and lose leading/trailing punctuation; inner hyphens stay, so
/// "three-phase" is one token.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
}

fn field_values<'a>(
    samples: &'a [DatasetSample],
    field: &'a str,
) -> impl Iterator<Item = &'a str> + 'a {
    samples.iter().filter_map(move |s| s.fields.get(field))
}

/// Number of distinct exact strings per field.
pub fn unique_label_counts_of(samples: &[DatasetSample]) -> BTreeMap<String, usize> {
    ExtractedFields::NAMES
        .iter()
        .map(|&f| {
            let set: HashSet<&str> = field_values(samples, f).collect();
            (f.to_string(), set.len())
        })
        .collect()
}

pub fn unique_label_counts(manifest: &DatasetManifest) -> BTreeMap<String, usize> {
    unique_label_counts_of(&manifest.samples)
}

/// Word counts for one field, sorted by count (descending) then word.
pub fn word_occurrences_of(
    samples: &[DatasetSample],
    field: &str,
    stopwords: &HashSet<String>,
) -> Vec<(String, usize)> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for value in field_values(samples, field) {
        for token in tokenize(value) {
            if !stopwords.contains(&token) {
                *counts.entry(token).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

pub fn word_occurrences(
    manifest: &DatasetManifest,
    field: &str,
    stopwords: &HashSet<String>,
) -> Vec<(String, usize)> {
    word_occurrences_of(&manifest.samples, field, stopwords)
}

pub fn compute_stats(samples: &[DatasetSample]) -> CorpusStats {
    let stopwords = default_stopwords();
    CorpusStats {
        sample_count: samples.len(),
        unique_counts: unique_label_counts_of(samples),
        word_occurrences: ExtractedFields::NAMES
            .iter()
            .map(|&f| (f.to_string(), word_occurrences_of(samples, f, &stopwords)))
            .collect(),
    }
}

/// The top `top` rows of a ranking as CSV with a `word,count` header.
pub fn occurrences_csv(ranked: &[(String, usize)], top: usize) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["word", "count"]).expect("in-memory write");
    for (word, count) in ranked.iter().take(top) {
        w.write_record([word.as_str(), &count.to_string()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv of utf-8 is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::images::{ImageMeta, SampleSource};
    use url::Url;

    fn sample(id: &str, label_short: &str) -> DatasetSample {
        let u = Url::parse("https://x/p").unwrap();
        DatasetSample {
            sample_id: id.into(),
            image_path: format!("images/{id}.png"),
            fields: ExtractedFields {
                label_long: "long".into(),
                label_short: label_short.into(),
                description: "d".into(),
                material: "steel".into(),
                material_finish: "matte".into(),
            },
            source: SampleSource {
                shop_id: "s".into(),
                source_url: u.clone(),
                image_url: u,
            },
            image_meta: ImageMeta {
                width: 1,
                height: 1,
                format: "png".into(),
            },
        }
    }

    #[test]
    fn unique_counts_small() {
        let s = vec![sample("1", "a"), sample("2", "a"), sample("3", "b")];
        assert_eq!(unique_label_counts_of(&s)["label_short"], 2);
        assert_eq!(unique_label_counts_of(&s)["material"], 1);
    }

    #[test]
    fn ranking_and_stopwords() {
        let s = vec![
            sample("1", "clamp for the door"),
            sample("2", "toggle clamp"),
            sample("3", "three-phase motor"),
        ];
        let r = word_occurrences_of(&s, "label_short", &default_stopwords());
        assert_eq!(r[0], ("clamp".to_string(), 2));
        assert!(r.iter().any(|(w, _)| w == "three-phase"));
        assert!(!r.iter().any(|(w, _)| w == "the" || w == "for"));
        assert!(word_occurrences_of(&[], "label_short", &default_stopwords()).is_empty());
    }

    #[test]
    fn csv_output() {
        let r = vec![("clamp".to_string(), 2), ("a,b".to_string(), 1)];
        assert_eq!(occurrences_csv(&r, 40), "word,count\nclamp,2\n\"a,b\",1\n");
        assert_eq!(occurrences_csv(&r, 1), "word,count\nclamp,2\n");
    }
}

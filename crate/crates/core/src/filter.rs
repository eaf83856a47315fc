//! Text filters applied before and after LLM extraction.
//!
//! Every filter here is idempotent: each one iterates its single pass to a
//! fixpoint, so `f(f(x)) == f(x)` holds even when one pass exposes new
//! material for the next (a decoded entity that spells another entity, a
//! removed trade name that leaves another one behind).

use std::collections::HashMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::FilterThresholds;
use crate::document::{Record, RecordId};
use crate::llm::ExtractedFields;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub dropped_duplicates: u64,
    pub dropped_insufficient: u64,
    pub trade_name_hits: u64,
    pub dimension_tokens_removed: u64,
}

impl FilterReport {
    pub fn merge(&mut self, other: FilterReport) {
        self.dropped_duplicates += other.dropped_duplicates;
        self.dropped_insufficient += other.dropped_insufficient;
        self.trade_name_hits += other.trade_name_hits;
        self.dimension_tokens_removed += other.dimension_tokens_removed;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("field {0} is empty after post-filtering")]
pub struct FieldEmptied(pub &'static str);

const MAX_PASSES: usize = 16;

fn fixpoint(s: &str, pass: impl Fn(&str) -> String) -> String {
    let mut cur = pass(s);
    for _ in 0..MAX_PASSES {
        let next = pass(&cur);
        if next == cur {
            break;
        }
        cur = next;
    }
    cur
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn is_kept_char(c: char) -> bool {
    c.is_alphabetic() || c.is_ascii_digit() || ".,;:/()-&".contains(c)
}

static EMPTY_PARENS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\(\s*\)").unwrap());

fn sanitize_pass(s: &str) -> String {
    let decoded = html_escape::decode_html_entities(s);
    let mapped: String = decoded
        .chars()
        .map(|c| if is_kept_char(c) { c } else { ' ' })
        .collect();
    let no_parens = EMPTY_PARENS.replace_all(&mapped, " ");
    collapse_ws(&no_parens)
}

/// Decode HTML entities, replace control characters and symbols with
/// spaces, drop empty parentheses and normalize whitespace. Letters,
/// digits and `. , ; : / ( ) - &` are kept.
pub fn sanitize_text(s: &str) -> String {
    fixpoint(s, sanitize_pass)
}

// Units that may be glued to a number ("40mm") or follow it ("40 mm").
const UNIT_SUFFIX: &str = r#"(?:mm²|mm2|mm³|µm|um|nm|mm|cm|dm|km|m|inches|inch|in|ft|"|''|'|kg|mg|g|t|lbs|lb|oz|ml|l|kv|mv|v|kw|w|ma|a|khz|hz|rpm|kn|n|mbar|bar|psi|kpa|mpa|pa|°c|°f|°|c|f|%|ms|s|h|min|pcs|pc|st)"#;
const STANDALONE_UNITS: &[&str] = &[
    "mm", "cm", "dm", "km", "m", "µm", "in", "inch", "inches", "ft", "kg", "g", "mg", "lb", "lbs",
    "oz", "l", "ml", "v", "kv", "w", "kw", "hz", "khz", "rpm", "nm", "bar", "mbar", "psi", "kpa",
    "mpa", "°c", "°f", "c", "f", "n", "kn", "a", "ma", "pcs", "pc", "mm²", "mm2",
];

static DIMENSION: LazyLock<Regex> = LazyLock::new(|| {
    let num = r"\d+(?:[.,/\-]\d+)*";
    Regex::new(&format!(
        r"(?i)^[+\-±]?[øØ⌀]?m?{num}{UNIT_SUFFIX}?(?:[x×*]{num}{UNIT_SUFFIX}?)*[x×]?$"
    ))
    .unwrap()
});
static POST_REMOVAL: LazyLock<Vec<(Regex, &'static str)>> = LazyLock::new(|| {
    vec![
        (Regex::new(r"\(\s+").unwrap(), "("),
        (Regex::new(r"\s+([,.;:)])").unwrap(), "$1"),
        (Regex::new(r"([,;:.])(?:\s*[,;:.])+").unwrap(), "$1"),
        (Regex::new(r"^[\s,.;:]+").unwrap(), ""),
        (Regex::new(r"[\s,;:]+$").unwrap(), ""),
    ]
});

fn split_punct(token: &str) -> (&str, &str, &str) {
    let lead_end = token
        .char_indices()
        .find(|&(_, c)| !"([".contains(c))
        .map_or(token.len(), |(i, _)| i);
    let rest = &token[lead_end..];
    let core_end = rest
        .char_indices()
        .rev()
        .find(|&(_, c)| !"),;:.!?]".contains(c))
        .map_or(0, |(i, c)| i + c.len_utf8());
    (&token[..lead_end], &rest[..core_end], &rest[core_end..])
}

fn is_dimension(core: &str) -> bool {
    !core.is_empty() && DIMENSION.is_match(core)
}

fn is_standalone_unit(core: &str) -> bool {
    let lower = core.to_lowercase();
    STANDALONE_UNITS.contains(&lower.as_str())
}

fn strip_dimensions_pass(s: &str) -> (String, usize) {
    let tokens: Vec<&str> = s.split_whitespace().collect();
    let parts: Vec<(&str, &str, &str)> = tokens.iter().map(|t| split_punct(t)).collect();
    let dims: Vec<bool> = parts.iter().map(|(_, c, _)| is_dimension(c)).collect();

    let mut removed = vec![false; parts.len()];
    for i in 0..parts.len() {
        let core = parts[i].1;
        let prev_removed = i > 0 && removed[i - 1];
        let next_dim = dims.get(i + 1).copied().unwrap_or(false);
        removed[i] = dims[i]
            || (prev_removed && is_standalone_unit(core))
            || (prev_removed && next_dim && matches!(core, "x" | "X" | "×" | "*"))
            || (next_dim && matches!(core, "Ø" | "ø" | "⌀" | "M"));
    }
    let count = removed.iter().filter(|&&r| r).count();
    if count == 0 {
        return (collapse_ws(s), 0);
    }

    let mut pieces: Vec<String> = Vec::with_capacity(parts.len());
    for (i, (lead, core, trail)) in parts.iter().enumerate() {
        if removed[i] {
            let punct = format!("{lead}{trail}");
            if !punct.is_empty() {
                pieces.push(punct);
            }
        } else {
            pieces.push(format!("{lead}{core}{trail}"));
        }
    }
    let mut out = pieces.join(" ");
    // "((40) mm)" only empties from the inside out
    while EMPTY_PARENS.is_match(&out) {
        out = EMPTY_PARENS.replace_all(&out, " ").into_owned();
    }
    for (re, rep) in POST_REMOVAL.iter() {
        out = re.replace_all(&out, *rep).into_owned();
    }
    (collapse_ws(&out), count)
}

/// Remove numbers and number-unit compounds ("40x40", "12 mm", "M8",
/// "1/2\"") and tidy the punctuation they leave behind. Spelled-out numbers
/// are kept.
pub fn strip_dimensions(s: &str) -> String {
    strip_dimensions_counted(s).0
}

/// `strip_dimensions` plus the number of tokens removed.
pub fn strip_dimensions_counted(s: &str) -> (String, usize) {
    let (mut cur, mut total) = strip_dimensions_pass(s);
    for _ in 0..MAX_PASSES {
        let (next, n) = strip_dimensions_pass(&cur);
        if n == 0 && next == cur {
            break;
        }
        total += n;
        cur = next;
    }
    (cur, total)
}

/// Compiled whole-word, case-insensitive matchers for a trade-name list.
#[derive(Debug, Clone)]
pub struct TradeNames {
    patterns: Vec<Regex>,
}

impl TradeNames {
    pub fn new(names: &[String]) -> Self {
        let patterns = names
            .iter()
            .map(|n| n.trim())
            .filter(|n| !n.is_empty())
            .map(|n| {
                let first_word = n
                    .chars()
                    .next()
                    .is_some_and(|c| c.is_alphanumeric() || c == '_');
                let last_word = n
                    .chars()
                    .last()
                    .is_some_and(|c| c.is_alphanumeric() || c == '_');
                Regex::new(&format!(
                    "(?i){}{}{}",
                    if first_word { r"\b" } else { "" },
                    regex::escape(n),
                    if last_word { r"\b" } else { "" },
                ))
                .expect("escaped trade name is a valid regex")
            })
            .collect();
        TradeNames { patterns }
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    /// Remove every trade name from `s`; returns the cleaned text and the
    /// number of occurrences removed.
    pub fn remove(&self, s: &str) -> (String, usize) {
        if self.patterns.is_empty() {
            return (s.to_string(), 0);
        }
        let mut cur = s.to_string();
        let mut hits = 0;
        for _ in 0..MAX_PASSES {
            let mut changed = false;
            for re in &self.patterns {
                let n = re.find_iter(&cur).count();
                if n > 0 {
                    hits += n;
                    cur = re.replace_all(&cur, " ").into_owned();
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        if hits > 0 {
            cur = collapse_ws(&cur);
        }
        (cur, hits)
    }
}

/// Whole-word, case-insensitive removal of trade names from the label and
/// every info string. Returns the record and the number of hits.
pub fn remove_trade_names(mut record: Record, trade_names: &TradeNames) -> (Record, usize) {
    let (label, mut hits) = trade_names.remove(&record.label);
    record.label = label;
    for info in &mut record.info {
        let (cleaned, n) = trade_names.remove(info);
        *info = cleaned;
        hits += n;
    }
    (record, hits)
}

/// Sanitize and dimension-strip label and info in place; empty info
/// strings are dropped. Returns the number of dimension tokens removed.
pub fn clean_record_text(record: &mut Record) -> usize {
    let (label, mut removed) = strip_dimensions_counted(&sanitize_text(&record.label));
    record.label = label;
    let mut info = Vec::with_capacity(record.info.len());
    for s in &record.info {
        let (cleaned, n) = strip_dimensions_counted(&sanitize_text(s));
        removed += n;
        if !cleaned.is_empty() {
            info.push(cleaned);
        }
    }
    record.info = info;
    removed
}

/// Drop duplicates: records sharing `(label, info)` or a record id are
/// duplicates of each other, transitively. Each group keeps its record with
/// the lowest `(source_url, label, info)`; survivors stay in input order.
pub fn dedup_records(records: Vec<Record>) -> (Vec<Record>, FilterReport) {
    let n = records.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut by_key: HashMap<(&str, &[String]), usize> = HashMap::new();
    let mut by_id: HashMap<&RecordId, usize> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        let firsts = [
            *by_key
                .entry((r.label.as_str(), r.info.as_slice()))
                .or_insert(i),
            *by_id.entry(&r.record_id).or_insert(i),
        ];
        for j in firsts {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            parent[a] = b;
        }
    }

    let rank = |i: usize| {
        (
            records[i].source_url.as_str(),
            &records[i].label,
            &records[i].info,
        )
    };
    let mut best: HashMap<usize, usize> = HashMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        let slot = best.entry(root).or_insert(i);
        if rank(i) < rank(*slot) {
            *slot = i;
        }
    }
    let mut keep = vec![false; n];
    for &i in best.values() {
        keep[i] = true;
    }
    let kept: Vec<Record> = records
        .into_iter()
        .zip(keep)
        .filter_map(|(r, k)| k.then_some(r))
        .collect();
    let report = FilterReport {
        dropped_duplicates: (n - kept.len()) as u64,
        ..Default::default()
    };
    (kept, report)
}

pub fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Drop records whose label has fewer than `min_label_words` words or whose
/// info text has fewer than `min_info_words` words in total (both
/// thresholds inclusive).
pub fn drop_insufficient(
    records: Vec<Record>,
    thresholds: &FilterThresholds,
) -> (Vec<Record>, FilterReport) {
    let before = records.len();
    let kept: Vec<Record> = records
        .into_iter()
        .filter(|r| {
            word_count(&r.label) >= thresholds.min_label_words
                && r.info.iter().map(|s| word_count(s)).sum::<usize>() >= thresholds.min_info_words
        })
        .collect();
    let report = FilterReport {
        dropped_insufficient: (before - kept.len()) as u64,
        ..Default::default()
    };
    (kept, report)
}

fn postfilter_pass(s: &str) -> String {
    let s = strip_dimensions(&sanitize_text(s));
    let s: String = s.chars().filter(|c| !c.is_ascii_digit()).collect();
    let s = sanitize_text(&s).to_lowercase();
    s.trim().trim_end_matches('.').trim().to_string()
}

/// Clean one extracted value: sanitize, strip dimensions, remove digits,
/// lowercase and trim.
pub fn postfilter_text(s: &str) -> String {
    fixpoint(s, postfilter_pass)
}

/// Apply `postfilter_text` to all five fields. Fails naming the first field
/// that ends up empty.
pub fn postfilter_fields(fields: ExtractedFields) -> Result<ExtractedFields, FieldEmptied> {
    let mut out = fields;
    for (name, value) in out.named_mut() {
        *value = postfilter_text(value);
        if value.is_empty() {
            return Err(FieldEmptied(name));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::RecordId;
    use chrono::Utc;
    use url::Url;

    fn rec(url: &str, label: &str, info: &[&str]) -> Record {
        let url = Url::parse(url).unwrap();
        Record {
            record_id: RecordId::derive("s", &url),
            shop_id: "s".into(),
            source_url: url,
            label: label.into(),
            info: info.iter().map(|s| s.to_string()).collect(),
            image_urls: vec![Url::parse("https://x/i.png").unwrap()],
            fetched_at: Utc::now(),
            prompt_truncated: false,
            fields: None,
            images: vec![],
        }
    }

    #[test]
    fn sanitize_examples() {
        assert_eq!(
            sanitize_text("Hinge&nbsp;&amp; bracket\t\t x"),
            "Hinge & bracket x"
        );
        assert_eq!(sanitize_text(""), "");
        assert_eq!(sanitize_text("ACME® Hinge™ (steel)"), "ACME Hinge (steel)");
        assert_eq!(sanitize_text("a\u{0}b\u{7}c"), "a b c");
        assert_eq!(sanitize_text("&amp;amp;"), "&");
        assert_eq!(sanitize_text("knob ( )"), "knob");
    }

    #[test]
    fn strip_examples() {
        assert_eq!(
            strip_dimensions("hinge 40x40 mm stainless"),
            "hinge stainless"
        );
        assert_eq!(strip_dimensions("three-phase motor"), "three-phase motor");
        assert_eq!(strip_dimensions("Steel, M8 thread"), "Steel, thread");
        assert_eq!(strip_dimensions("clamp (M10) zinc"), "clamp zinc");
        assert_eq!(strip_dimensions("40 mm"), "");
        assert_eq!(strip_dimensions_counted("rod 40 x 40 mm").1, 4);
    }

    #[test]
    fn trade_names_whole_word() {
        let tn = TradeNames::new(&["acme".to_string()]);
        let (r, hits) = remove_trade_names(rec("https://x/1", "ACME door hinge", &[]), &tn);
        assert_eq!(r.label, "door hinge");
        assert_eq!(hits, 1);
        let (r, hits) = remove_trade_names(rec("https://x/1", "acmeite rod", &[]), &tn);
        assert_eq!(r.label, "acmeite rod");
        assert_eq!(hits, 0);
    }

    #[test]
    fn trade_names_counted_across_info() {
        let tn = TradeNames::new(&["acme".to_string()]);
        let r = rec(
            "https://x/1",
            "hinge",
            &["by Acme, for acme doors", "ACME quality"],
        );
        let (r, hits) = remove_trade_names(r, &tn);
        assert_eq!(hits, 3);
        assert_eq!(r.info, vec!["by , for doors", "quality"]);
    }

    #[test]
    fn dedup_keeps_lowest_url() {
        let a = rec("https://x/b", "door hinge", &["steel"]);
        let b = rec("https://x/a", "door hinge", &["steel"]);
        let (kept, rep) = dedup_records(vec![a, b]);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].source_url.as_str(), "https://x/a");
        assert_eq!(rep.dropped_duplicates, 1);

        let (kept, rep) = dedup_records(vec![]);
        assert!(kept.is_empty());
        assert_eq!(rep, FilterReport::default());
    }

    #[test]
    fn insufficient_thresholds_inclusive() {
        let t = FilterThresholds::default();
        let ten = "one two three four five six seven eight nine ten";
        let forty = [ten; 4].join(" ");
        let (kept, rep) = drop_insufficient(
            vec![
                rec("https://x/1", "hinge", &[]),
                rec("https://x/2", "stainless steel hinge", &[forty.as_str()]),
                rec("https://x/3", "steel hinge", &[ten]),
                rec(
                    "https://x/4",
                    "steel hinge",
                    &["one two three four five", "six seven eight nine"],
                ),
            ],
            &t,
        );
        assert_eq!(kept.len(), 2);
        assert_eq!(rep.dropped_insufficient, 2);
    }

    #[test]
    fn postfilter_examples() {
        let f = ExtractedFields {
            label_long: "Heavy Door Hinge".into(),
            label_short: "Door Hinge".into(),
            description: "a hinge (2) for doors".into(),
            material: "Steel, M8 thread".into(),
            material_finish: "Brushed".into(),
        };
        let out = postfilter_fields(f).unwrap();
        assert_eq!(out.label_short, "door hinge");
        assert_eq!(out.description, "a hinge for doors");
        assert_eq!(out.material, "steel, thread");

        let f = ExtractedFields {
            material: "(2)".into(),
            ..out.clone()
        };
        assert_eq!(postfilter_fields(f), Err(FieldEmptied("material")));
    }
}

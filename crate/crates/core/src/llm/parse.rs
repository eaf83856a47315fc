//! Turning a free-form completion into the five target fields.
//!
//! Small instruction-tuned models are inconsistent about list formatting,
//! so markers are accepted as `(1)`, `1.`, `1)` or `1:`, optionally wrapped
//! in markdown emphasis, and echoed field names ("Long label:") are
//! stripped. When no numbered markers are present the field names alone are
//! used as markers.

use std::sync::LazyLock;

use regex::Regex;

use super::{Discard, DiscardReason, ExtractedFields};

static NUMBERED: LazyLock<Vec<Regex>> = LazyLock::new(|| {
    (1..=5)
        .map(|n| {
            Regex::new(&format!(
                r"(?m)\(\s*{n}\s*\)|^[ \t>#*\-•]*\**{n}\s*[.):]\**|(?:^|\s)\**{n}[.)]\**(?:\s|$)"
            ))
            .unwrap()
        })
        .collect()
});

static NAMED: LazyLock<Vec<Regex>> = LazyLock::new(|| {
    [
        r"long[ _]label|label[ _]long|long[ _]name",
        r"short[ _]label|label[ _]short|short[ _]name",
        r"description",
        r"material",
        r"material[ _]finish/colou?r|material[ _]finish|finish/colou?r|finish|colou?r",
    ]
    .iter()
    .map(|keys| Regex::new(&format!(r"(?mi)^[ \t>#*\-•]*\**(?:{keys})\**\s*:\**")).unwrap())
    .collect()
});

static ECHO: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)^\**\s*(?:a long label[^:\n]*|a short label[^:\n]*|description of the product[^:\n]*|material finish/colou?r with[^:\n]*|material with[^:\n]*|long[ _]label|short[ _]label|label[ _]long|label[ _]short|label|name|description|material[ _]finish/colou?r|material[ _]finish|finish/colou?r|material|finish|colou?r)\s*\**\s*(?::|\s[\-–]\s)\s*\**",
    )
    .unwrap()
});

/// Position (start, end) of each of the five markers, in order.
fn locate(patterns: &[Regex], text: &str) -> Result<Vec<(usize, usize)>, usize> {
    let mut spans = Vec::with_capacity(5);
    let mut from = 0;
    for (i, re) in patterns.iter().enumerate() {
        match re.find_at(text, from) {
            Some(m) => {
                spans.push((m.start(), m.end()));
                from = m.end();
            }
            None => return Err(i),
        }
    }
    Ok(spans)
}

fn clean_segment(segment: &str) -> String {
    let line = segment
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or_default();
    let line = ECHO.replace(line, "");
    let no_digits: String = line.chars().filter(|c| !c.is_ascii_digit()).collect();
    let trimmed = no_digits.split_whitespace().collect::<Vec<_>>().join(" ");
    let trimmed = trimmed.trim_matches(|c: char| "*`\"'“”‘’_".contains(c) || c.is_whitespace());
    trimmed.trim_end_matches('.').trim().to_string()
}

/// Parse a completion into [`ExtractedFields`] or a discard reason.
pub fn parse_extraction(response: &str) -> Result<ExtractedFields, Discard> {
    let spans = match locate(&NUMBERED, response) {
        Ok(spans) => spans,
        Err(missing_numbered) => locate(&NAMED, response).map_err(|missing_named| Discard {
            reason: DiscardReason::MissingField,
            field: Some(ExtractedFields::NAMES[missing_numbered.max(missing_named)]),
        })?,
    };

    let mut values: Vec<String> = Vec::with_capacity(5);
    for (i, &(_, end)) in spans.iter().enumerate() {
        let stop = spans.get(i + 1).map_or(response.len(), |&(start, _)| start);
        values.push(clean_segment(&response[end..stop]));
    }

    let mut fields = ExtractedFields::default();
    for ((name, slot), value) in fields.named_mut().into_iter().zip(values) {
        if value.is_empty() {
            return Err(Discard {
                reason: DiscardReason::Empty,
                field: Some(name),
            });
        }
        *slot = value;
    }
    fields.check_bounds()?;
    Ok(fields)
}

/// Canonical numbered-list rendering that [`parse_extraction`] inverts.
pub fn render_fields(fields: &ExtractedFields) -> String {
    format!(
        "(1) {}\n(2) {}\n(3) {}\n(4) {}\n(5) {}",
        fields.label_long,
        fields.label_short,
        fields.description,
        fields.material,
        fields.material_finish
    )
}

//! Structured extraction of the five target fields with a chat-completion
//! LLM endpoint.

mod client;
mod parse;
mod prompt;

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::config::LlmEndpoint;
use crate::document::{Provenance, Record, Stage, StageDocument};
use crate::filter::word_count;

pub use client::{ChatClient, ChatMessage, ChatRequest, ChatResponse, LlmClient, LlmError};
pub use parse::{parse_extraction, render_fields};
pub use prompt::{
    build_prompts, build_prompts_within, estimate_tokens, ExtractionPrompt, SYSTEM_TEMPLATE,
    USER_TEMPLATE,
};

pub const MAX_LABEL_SHORT_WORDS: usize = 4;
pub const MAX_DESCRIPTION_WORDS: usize = 20;
pub const MAX_MATERIAL_WORDS: usize = 5;
pub const MAX_MATERIAL_FINISH_WORDS: usize = 5;

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExtractedFields {
    #[serde(default)]
    pub label_long: String,
    #[serde(default)]
    pub label_short: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub material: String,
    #[serde(default)]
    pub material_finish: String,
}

impl ExtractedFields {
    pub const NAMES: [&'static str; 5] = [
        "label_long",
        "label_short",
        "description",
        "material",
        "material_finish",
    ];

    pub fn named(&self) -> [(&'static str, &str); 5] {
        [
            ("label_long", &self.label_long),
            ("label_short", &self.label_short),
            ("description", &self.description),
            ("material", &self.material),
            ("material_finish", &self.material_finish),
        ]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut String); 5] {
        [
            ("label_long", &mut self.label_long),
            ("label_short", &mut self.label_short),
            ("description", &mut self.description),
            ("material", &mut self.material),
            ("material_finish", &mut self.material_finish),
        ]
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.named()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| v)
    }

    /// Word-count limits from the extraction prompt; the short label must
    /// also not be longer than the long one.
    pub fn check_bounds(&self) -> Result<(), Discard> {
        let limits = [
            ("label_short", &self.label_short, MAX_LABEL_SHORT_WORDS),
            ("description", &self.description, MAX_DESCRIPTION_WORDS),
            ("material", &self.material, MAX_MATERIAL_WORDS),
            (
                "material_finish",
                &self.material_finish,
                MAX_MATERIAL_FINISH_WORDS,
            ),
        ];
        for (name, value, max) in limits {
            if word_count(value) > max {
                return Err(Discard::over_length(name));
            }
        }
        if word_count(&self.label_short) > word_count(&self.label_long) {
            return Err(Discard::over_length("label_short"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscardReason {
    MissingField,
    OverLength,
    Empty,
}

impl DiscardReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DiscardReason::MissingField => "missing-field",
            DiscardReason::OverLength => "over-length",
            DiscardReason::Empty => "empty",
        }
    }
}

/// Why a completion was not turned into fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Discard {
    pub reason: DiscardReason,
    pub field: Option<&'static str>,
}

impl Discard {
    fn over_length(field: &'static str) -> Self {
        Discard {
            reason: DiscardReason::OverLength,
            field: Some(field),
        }
    }
}

impl fmt::Display for Discard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.field {
            Some(field) => write!(f, "{} ({field})", self.reason.as_str()),
            None => f.write_str(self.reason.as_str()),
        }
    }
}

/// Result of extracting one record.
#[derive(Debug, Clone, PartialEq)]
pub enum ExtractOutcome {
    Fields(ExtractedFields),
    Discarded(Discard),
    Failed(LlmError),
}

/// Prompt, call and parse one record, retrying once when a field marker is
/// missing from the completion.
pub fn extract_record(
    record: &Record,
    client: &dyn ChatClient,
    token_budget: usize,
) -> (ExtractOutcome, bool) {
    let (prompt, truncated) = build_prompts_within(record, token_budget);
    let mut attempt = 0;
    let outcome = loop {
        attempt += 1;
        let reply = match client.chat_complete(&prompt) {
            Ok(r) => r,
            Err(e) => break ExtractOutcome::Failed(e),
        };
        match parse_extraction(&reply) {
            Ok(fields) => break ExtractOutcome::Fields(fields),
            Err(d) if d.reason == DiscardReason::MissingField && attempt < 2 => continue,
            Err(d) => break ExtractOutcome::Discarded(d),
        }
    };
    (outcome, truncated)
}

#[derive(Debug, thiserror::Error)]
#[error("LLM endpoint failed for every record; last error: {0}")]
pub struct FatalEndpoint(pub LlmError);

/// Run extraction over a prefilter document. Records keep their input
/// order regardless of completion order; up to `endpoint.max_concurrency`
/// requests are in flight.
pub fn extract_stage(
    doc: &StageDocument,
    endpoint: &LlmEndpoint,
    client: &dyn ChatClient,
) -> Result<StageDocument, FatalEndpoint> {
    let n = doc.records.len();
    let results: Vec<Mutex<Option<(ExtractOutcome, bool)>>> =
        (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = endpoint.max_concurrency.max(1).min(n.max(1));

    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let out = extract_record(&doc.records[i], client, endpoint.token_budget);
                *results[i].lock().unwrap() = Some(out);
            });
        }
    });

    let mut provenance: Provenance = doc.provenance.clone();
    let mut records = Vec::new();
    let mut failures = 0usize;
    let mut last_error = None;
    let mut truncations = 0u64;
    for (record, slot) in doc.records.iter().zip(results) {
        let (outcome, truncated) = slot.into_inner().unwrap().expect("every record processed");
        if truncated {
            truncations += 1;
        }
        match outcome {
            ExtractOutcome::Fields(fields) => {
                let mut r = record.clone();
                r.fields = Some(fields);
                r.prompt_truncated = truncated;
                records.push(r);
            }
            ExtractOutcome::Discarded(d) => {
                log::debug!("record {} discarded: {d}", record.record_id);
                provenance.record_drop(Stage::Extract, d.reason.as_str());
            }
            ExtractOutcome::Failed(e) => {
                log::warn!("record {}: {e}", record.record_id);
                failures += 1;
                provenance.record_drop(Stage::Extract, "llm-error");
                last_error = Some(e);
            }
        }
    }
    if n > 0 && failures == n {
        return Err(FatalEndpoint(last_error.expect("at least one failure")));
    }
    if truncations > 0 {
        *provenance
            .counters
            .entry("prompt_truncated".into())
            .or_default() += truncations;
    }
    Ok(StageDocument::new(Stage::Extract, records, provenance))
}

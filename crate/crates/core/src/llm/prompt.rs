use serde::{Deserialize, Serialize};

use crate::document::Record;

pub const SYSTEM_TEMPLATE: &str = include_str!("../../prompts/system.txt");
pub const USER_TEMPLATE: &str = include_str!("../../prompts/user.txt");
const SLOT: &str = "{{}}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionPrompt {
    pub system: String,
    pub user: String,
}

/// Token estimate used for the prompt budget: one token per four bytes.
pub fn estimate_tokens(text: &str) -> usize {
    text.len().div_ceil(4)
}

fn render_user(label: &str, info: &str) -> String {
    let mut parts = USER_TEMPLATE.splitn(3, SLOT);
    let head = parts.next().unwrap_or_default();
    let mid = parts.next().unwrap_or_default();
    let tail = parts.next().unwrap_or_default();
    format!("{head}{label}{mid}{info}{tail}")
}

/// Fill the extraction templates for a record. The info list is joined
/// with single spaces.
pub fn build_prompts(record: &Record) -> ExtractionPrompt {
    build_prompts_within(record, usize::MAX).0
}

/// Like [`build_prompts`], but drops trailing info words until the prompt
/// fits `token_budget`. The flag reports whether anything was cut.
pub fn build_prompts_within(record: &Record, token_budget: usize) -> (ExtractionPrompt, bool) {
    let info = record.info.join(" ");
    let full = ExtractionPrompt {
        system: SYSTEM_TEMPLATE.to_string(),
        user: render_user(&record.label, &info),
    };
    let fits = |p: &ExtractionPrompt| {
        estimate_tokens(&p.system) + estimate_tokens(&p.user) <= token_budget
    };
    if fits(&full) {
        return (full, false);
    }

    let words: Vec<&str> = info.split(' ').collect();
    let (mut lo, mut hi) = (0usize, words.len());
    // Largest word prefix that fits; the estimate is monotone in prefix length.
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        let candidate = ExtractionPrompt {
            system: SYSTEM_TEMPLATE.to_string(),
            user: render_user(&record.label, &words[..mid].join(" ")),
        };
        if fits(&candidate) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let prompt = ExtractionPrompt {
        system: SYSTEM_TEMPLATE.to_string(),
        user: render_user(&record.label, &words[..lo].join(" ")),
    };
    (prompt, true)
}

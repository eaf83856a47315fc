//! Stage documents: the JSON handoff between pipeline steps.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use url::Url;

use crate::filter::FilterReport;
use crate::images::ImageMeta;
use crate::llm::ExtractedFields;
use crate::sitemap::{SitemapFailure, SitemapSummary};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Crawl,
    Prefilter,
    Extract,
    Postfilter,
    Download,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Crawl,
        Stage::Prefilter,
        Stage::Extract,
        Stage::Postfilter,
        Stage::Download,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Crawl => "crawl",
            Stage::Prefilter => "prefilter",
            Stage::Extract => "extract",
            Stage::Postfilter => "postfilter",
            Stage::Download => "download",
        }
    }

    pub fn predecessor(self) -> Option<Stage> {
        match self {
            Stage::Crawl => None,
            Stage::Prefilter => Some(Stage::Crawl),
            Stage::Extract => Some(Stage::Prefilter),
            Stage::Postfilter => Some(Stage::Extract),
            Stage::Download => Some(Stage::Postfilter),
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.json", self.as_str())
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

/// Stable record identifier: truncated SHA-256 of shop id and product URL.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RecordId(pub String);

impl RecordId {
    pub fn derive(shop_id: &str, source_url: &Url) -> Self {
        let mut h = Sha256::new();
        h.update(shop_id.as_bytes());
        h.update([0u8]);
        h.update(source_url.as_str().as_bytes());
        let digest = h.finalize();
        RecordId(hex::encode(&digest[..8]))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// An image stored for a record during the download stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredImage {
    pub sample_id: String,
    pub image_path: String,
    pub image_url: Url,
    pub meta: ImageMeta,
}

/// One product as it moves through the stages. Later stages fill in
/// `fields` (extract) and `images` (download).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub record_id: RecordId,
    pub shop_id: String,
    pub source_url: Url,
    pub label: String,
    pub info: Vec<String>,
    pub image_urls: Vec<Url>,
    pub fetched_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub prompt_truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fields: Option<ExtractedFields>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<StoredImage>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShopProvenance {
    pub shop_id: String,
    pub origin: Option<Url>,
    pub robots_status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crawl_delay_ms: Option<u64>,
    pub sitemaps: Vec<SitemapSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sitemap_failures: Vec<SitemapFailure>,
    pub product_urls: usize,
    pub records: usize,
    pub skipped: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub shops: Vec<ShopProvenance>,
    /// Dropped-record counts, stage name -> reason -> count. Carried forward
    /// so every document holds the history of the run so far.
    pub drops: BTreeMap<String, BTreeMap<String, u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterReport>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub counters: BTreeMap<String, u64>,
}

impl Provenance {
    pub fn record_drop(&mut self, stage: Stage, reason: &str) {
        self.add_drops(stage, reason, 1);
    }

    pub fn add_drops(&mut self, stage: Stage, reason: &str, n: u64) {
        if n == 0 {
            return;
        }
        *self
            .drops
            .entry(stage.as_str().to_string())
            .or_default()
            .entry(reason.to_string())
            .or_default() += n;
    }

    pub fn drops_for(&self, stage: Stage) -> BTreeMap<String, u64> {
        self.drops.get(stage.as_str()).cloned().unwrap_or_default()
    }

    pub fn total_drops(&self, stage: Stage) -> u64 {
        self.drops_for(stage).values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDocument {
    pub stage_name: Stage,
    pub schema_version: u32,
    pub created_at: DateTime<Utc>,
    /// Set when a crawl legitimately produced no records.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub empty_run: bool,
    pub records: Vec<Record>,
    pub provenance: Provenance,
}

impl StageDocument {
    pub fn new(stage: Stage, records: Vec<Record>, provenance: Provenance) -> Self {
        StageDocument {
            stage_name: stage,
            schema_version: SCHEMA_VERSION,
            created_at: Utc::now(),
            empty_run: false,
            records,
            provenance,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stage document serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// JSON with the run timestamps blanked, for determinism comparisons.
    pub fn canonical_json(&self) -> String {
        let mut doc = self.clone();
        doc.created_at = DateTime::<Utc>::UNIX_EPOCH;
        for r in &mut doc.records {
            r.fetched_at = DateTime::<Utc>::UNIX_EPOCH;
        }
        doc.to_json()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn doc(&mut self, message: impl Into<String>) {
        self.violations.push(Violation {
            record_id: None,
            field: None,
            message: message.into(),
        });
    }

    fn rec(&mut self, id: &RecordId, field: Option<&str>, message: impl Into<String>) {
        self.violations.push(Violation {
            record_id: Some(id.0.clone()),
            field: field.map(str::to_string),
            message: message.into(),
        });
    }
}

/// Check a document against the invariants of its stage. Never fails; an
/// empty report means the document is valid.
pub fn validate_document(doc: &StageDocument) -> ValidationReport {
    let mut report = ValidationReport::default();
    if doc.schema_version != SCHEMA_VERSION {
        report.doc(format!(
            "schema_version {} is not the supported version {SCHEMA_VERSION}",
            doc.schema_version
        ));
    }
    if doc.stage_name == Stage::Crawl && doc.records.is_empty() && !doc.empty_run {
        report.doc("crawl document has no records and is not marked as an empty run");
    }

    let mut seen = HashSet::new();
    for r in &doc.records {
        let id = &r.record_id;
        if !seen.insert(id.clone()) {
            report.rec(id, Some("record_id"), "duplicate id");
        }
        if RecordId::derive(&r.shop_id, &r.source_url) != *id {
            report.rec(
                id,
                Some("record_id"),
                "record_id does not match shop_id and source_url",
            );
        }
        if r.label.trim().is_empty() {
            report.rec(id, Some("label"), "label is empty");
        }
        if r.image_urls.is_empty() {
            report.rec(id, Some("image_urls"), "no image urls");
        }
        if doc.stage_name >= Stage::Extract {
            match &r.fields {
                None => report.rec(id, Some("fields"), "extracted fields missing"),
                Some(f) => check_fields(&mut report, id, f, doc.stage_name >= Stage::Postfilter),
            }
        }
        if doc.stage_name == Stage::Download && r.images.is_empty() {
            report.rec(id, Some("images"), "no stored image");
        }
    }
    report
}

fn check_fields(report: &mut ValidationReport, id: &RecordId, f: &ExtractedFields, post: bool) {
    for (name, value) in f.named() {
        if value.trim().is_empty() {
            report.rec(id, Some(name), format!("{name} is missing or empty"));
            continue;
        }
        if value.chars().any(|c| c.is_ascii_digit()) {
            report.rec(id, Some(name), format!("{name} contains a digit"));
        }
        if post && value.to_lowercase() != value {
            report.rec(id, Some(name), format!("{name} is not lowercased"));
        }
    }
    if post {
        if let Err(reason) = f.check_bounds() {
            report.rec(id, None, reason.to_string());
        }
    }
}

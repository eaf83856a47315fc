//! Pipeline configuration, loaded from a single JSON document.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

/// Smallest image side the training harness can crop from.
pub const MIN_IMAGE_SIDE: u32 = 224;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub shops: Vec<ShopSpec>,
    #[serde(default)]
    pub trade_names: Vec<String>,
    /// Optional file with one trade name per line, merged into `trade_names`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trade_names_file: Option<PathBuf>,
    pub llm: LlmEndpoint,
    #[serde(default = "default_max_side")]
    pub image_max_side: u32,
    #[serde(default)]
    pub image_format: ImageFormat,
    /// Keep every product image instead of only the first one.
    #[serde(default)]
    pub keep_all_images: bool,
    #[serde(default)]
    pub politeness: Politeness,
    #[serde(default)]
    pub filter: FilterThresholds,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShopSpec {
    pub shop_id: String,
    pub origin: Url,
    pub product_url_filter: UrlFilter,
    pub extraction_rules: ExtractionRules,
    #[serde(default = "default_user_agent")]
    pub user_agent: String,
    /// Sitemap locations to use instead of (or when missing from) robots.txt.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sitemap_urls: Vec<Url>,
}

/// Selects product pages among sitemap entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UrlFilter {
    Contains(String),
    Regex(String),
}

impl UrlFilter {
    pub fn compile(&self) -> Result<CompiledFilter, ConfigError> {
        Ok(match self {
            UrlFilter::Contains(s) => CompiledFilter::Contains(s.clone()),
            UrlFilter::Regex(r) => CompiledFilter::Regex(
                Regex::new(r).map_err(|e| ConfigError::Invalid(format!("url filter: {e}")))?,
            ),
        })
    }
}

#[derive(Debug, Clone)]
pub enum CompiledFilter {
    Contains(String),
    Regex(Regex),
}

impl CompiledFilter {
    pub fn matches(&self, url: &Url) -> bool {
        match self {
            CompiledFilter::Contains(s) => url.as_str().contains(s.as_str()),
            CompiledFilter::Regex(r) => r.is_match(url.as_str()),
        }
    }
}

/// CSS selectors describing where a shop's product data lives. Image
/// selectors may name the attribute to read with an `@attr` suffix
/// (`img.main@data-src`); otherwise `src`, `data-src`, `href` and `content`
/// are tried in that order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionRules {
    pub label_selector: String,
    #[serde(default)]
    pub info_selectors: Vec<String>,
    pub image_selectors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmEndpoint {
    pub url: Url,
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_llm_concurrency")]
    pub max_concurrency: usize,
    #[serde(default = "default_llm_timeout")]
    pub timeout_ms: u64,
    /// Retries after a 5xx or transport failure.
    #[serde(default = "default_llm_retries")]
    pub max_retries: u32,
    /// Rough prompt size limit in tokens (estimated as bytes / 4).
    #[serde(default = "default_token_budget")]
    pub token_budget: usize,
    /// Environment variable holding an optional bearer token.
    #[serde(default = "default_token_env")]
    pub token_env: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    #[default]
    Png,
    Jpeg,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Png => "png",
            ImageFormat::Jpeg => "jpg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Politeness {
    #[serde(default = "default_min_delay")]
    pub min_delay_ms: u64,
    #[serde(default = "default_max_hosts")]
    pub max_concurrent_hosts: usize,
    #[serde(default = "default_fetch_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_fetch_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_base_ms: u64,
}

impl Default for Politeness {
    fn default() -> Self {
        Politeness {
            min_delay_ms: default_min_delay(),
            max_concurrent_hosts: default_max_hosts(),
            timeout_ms: default_fetch_timeout(),
            max_retries: default_fetch_retries(),
            backoff_base_ms: default_backoff(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterThresholds {
    #[serde(default = "default_min_label_words")]
    pub min_label_words: usize,
    #[serde(default = "default_min_info_words")]
    pub min_info_words: usize,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        FilterThresholds {
            min_label_words: default_min_label_words(),
            min_info_words: default_min_info_words(),
        }
    }
}

fn default_max_side() -> u32 {
    512
}
fn default_user_agent() -> String {
    concat!("catalog-dataset/", env!("CARGO_PKG_VERSION")).to_string()
}
fn default_llm_concurrency() -> usize {
    2
}
fn default_llm_timeout() -> u64 {
    120_000
}
fn default_llm_retries() -> u32 {
    2
}
fn default_token_budget() -> usize {
    2048
}
fn default_token_env() -> String {
    "CATALOG_LLM_TOKEN".to_string()
}
fn default_min_delay() -> u64 {
    1000
}
fn default_max_hosts() -> usize {
    4
}
fn default_fetch_timeout() -> u64 {
    30_000
}
fn default_fetch_retries() -> u32 {
    3
}
fn default_backoff() -> u64 {
    500
}
fn default_min_label_words() -> usize {
    2
}
fn default_min_info_words() -> usize {
    10
}

impl PipelineConfig {
    /// Load and validate a config file. Relative `output_dir` and
    /// `trade_names_file` paths resolve against the config file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        if let Some(file) = cfg.trade_names_file.take() {
            let file = if file.is_relative() {
                base.join(file)
            } else {
                file
            };
            let names = load_trade_names(&file)?;
            cfg.trade_names.extend(names);
            cfg.trade_names_file = Some(file);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.politeness.max_concurrent_hosts < 1 {
            return bad("politeness.max_concurrent_hosts must be >= 1".into());
        }
        if self.image_max_side < MIN_IMAGE_SIDE {
            return bad(format!("image_max_side must be >= {MIN_IMAGE_SIDE}"));
        }
        if self.llm.max_concurrency < 1 {
            return bad("llm.max_concurrency must be >= 1".into());
        }
        if self.llm.temperature.is_nan() || self.llm.temperature < 0.0 {
            return bad("llm.temperature must be >= 0".into());
        }
        let mut ids = HashSet::new();
        for shop in &self.shops {
            if !ids.insert(shop.shop_id.as_str()) {
                return bad(format!("duplicate shop_id {:?}", shop.shop_id));
            }
            if shop.origin.host_str().is_none() {
                return bad(format!("shop {:?}: origin has no host", shop.shop_id));
            }
            if shop.extraction_rules.label_selector.trim().is_empty() {
                return bad(format!("shop {:?}: empty label_selector", shop.shop_id));
            }
            if shop.extraction_rules.image_selectors.is_empty() {
                return bad(format!("shop {:?}: no image selectors", shop.shop_id));
            }
            shop.product_url_filter.compile()?;
        }
        Ok(())
    }

    /// Trade names lowercased, trimmed, deduplicated, in first-seen order.
    pub fn normalized_trade_names(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.trade_names
            .iter()
            .map(|n| n.trim().to_lowercase())
            .filter(|n| !n.is_empty() && seen.insert(n.clone()))
            .collect()
    }
}

/// Read a trade-name list: one name per line, UTF-8. Blank lines and lines
/// starting with `#` are ignored.
pub fn load_trade_names(path: &Path) -> Result<Vec<String>, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect())
}

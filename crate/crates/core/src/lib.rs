//! Build a language-image dataset from industrial web catalogs.
//!
//! The pipeline runs five stages, each reading the previous stage's JSON
//! document: `crawl` (robots.txt, sitemaps, product pages), `prefilter`
//! (sanitation, dimension and trade-name removal, dedup), `extract` (LLM
//! structured extraction), `postfilter` (field cleanup) and `download`
//! (images plus the final manifest).

pub mod cli;
pub mod config;
pub mod crawler;
pub mod document;
pub mod fetch;
pub mod filter;
pub mod images;
pub mod llm;
pub mod pipeline;
pub mod robots;
pub mod sitemap;
pub mod stats;
pub mod testkit;

pub use config::PipelineConfig;
pub use document::{validate_document, Record, RecordId, Stage, StageDocument, ValidationReport};
pub use llm::{ExtractedFields, ExtractionPrompt};
pub use pipeline::{Pipeline, PipelineError};
pub use robots::{parse_robots, RobotsPolicy};
pub use sitemap::{parse_sitemap, SitemapTree};

//! Python bindings: the text filters, robots.txt and sitemap parsers,
//! prompt rendering and reply parsing, and manifest statistics and
//! validation.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use catalog_dataset::filter;
use catalog_dataset::images::{validate_manifest as check_manifest, DatasetManifest};
use catalog_dataset::llm;
use catalog_dataset::pipeline::Pipeline;
use catalog_dataset::robots;
use catalog_dataset::sitemap::{self, SitemapKind};
use catalog_dataset::stats;
use catalog_dataset::{Record, RecordId};
use url::Url;

fn bad_url(e: url::ParseError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyfunction]
fn sanitize_text(text: &str) -> String {
    filter::sanitize_text(text)
}

#[pyfunction]
fn strip_dimensions(text: &str) -> String {
    filter::strip_dimensions(text)
}

#[pyfunction]
fn postfilter_text(text: &str) -> String {
    filter::postfilter_text(text)
}

/// A parsed robots.txt for one user agent.
#[pyclass(name = "RobotsPolicy", module = "catalog_dataset_py")]
struct PyRobotsPolicy {
    inner: robots::RobotsPolicy,
}

#[pymethods]
impl PyRobotsPolicy {
    #[new]
    #[pyo3(signature = (body, user_agent, origin=None))]
    fn new(body: &[u8], user_agent: &str, origin: Option<&str>) -> PyResult<Self> {
        let mut inner = robots::parse_robots_bytes(body, user_agent);
        if let Some(o) = origin {
            inner = inner.with_origin(Url::parse(o).map_err(bad_url)?);
        }
        Ok(PyRobotsPolicy { inner })
    }

    fn is_allowed(&self, url: &str) -> PyResult<bool> {
        let url = Url::parse(url).map_err(bad_url)?;
        self.inner
            .is_allowed(&url)
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn crawl_delay(&self) -> Option<f64> {
        self.inner.crawl_delay
    }

    #[getter]
    fn sitemaps(&self) -> Vec<String> {
        self.inner
            .sitemap_urls
            .iter()
            .map(|u| u.to_string())
            .collect()
    }

    #[getter]
    fn skipped_lines(&self) -> usize {
        self.inner.skipped_lines
    }
}

/// Parse one sitemap body (plain or gzipped). Returns
/// `(kind, [(loc, lastmod)], warnings)` with kind `"urlset"` or `"index"`.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn parse_sitemap(body: &[u8]) -> PyResult<(String, Vec<(String, Option<String>)>, Vec<String>)> {
    let tree = sitemap::parse_sitemap(body).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let kind = match tree.kind {
        SitemapKind::Urlset => "urlset",
        SitemapKind::Index => "index",
    };
    let entries = tree
        .entries
        .into_iter()
        .map(|e| (e.loc.to_string(), e.lastmod))
        .collect();
    Ok((kind.to_string(), entries, tree.warnings))
}

/// Render the system and user extraction prompts for a product.
#[pyfunction]
fn build_prompts(label: &str, info: Vec<String>) -> PyResult<(String, String)> {
    let url = Url::parse("https://example.invalid/").map_err(bad_url)?;
    let record = Record {
        record_id: RecordId::derive("python", &url),
        shop_id: "python".into(),
        source_url: url,
        label: label.to_string(),
        info,
        image_urls: Vec::new(),
        fetched_at: chrono::Utc::now(),
        prompt_truncated: false,
        fields: None,
        images: Vec::new(),
    };
    let p = llm::build_prompts(&record);
    Ok((p.system, p.user))
}

/// Parse an LLM reply into a dict of the five fields. Raises ValueError
/// with the discard reason when the reply is unusable.
#[pyfunction]
fn parse_extraction(reply: &str) -> PyResult<BTreeMap<String, String>> {
    let fields = llm::parse_extraction(reply).map_err(|d| PyValueError::new_err(d.to_string()))?;
    Ok(fields
        .named()
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}

fn load_manifest(path: PathBuf) -> PyResult<DatasetManifest> {
    DatasetManifest::load(&path).map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))
}

/// Corpus statistics of a manifest as a JSON string.
#[pyfunction]
fn manifest_stats(path: PathBuf) -> PyResult<String> {
    let m = load_manifest(path)?;
    serde_json::to_string(&stats::compute_stats(&m.samples))
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// The `top` most frequent non-stopword words of one field.
#[pyfunction]
#[pyo3(signature = (path, field, top=40))]
fn word_occurrences(path: PathBuf, field: &str, top: usize) -> PyResult<Vec<(String, usize)>> {
    if !catalog_dataset::ExtractedFields::NAMES.contains(&field) {
        return Err(PyValueError::new_err(format!("unknown field {field:?}")));
    }
    let m = load_manifest(path)?;
    let mut ranked = stats::word_occurrences(&m, field, &stats::default_stopwords());
    ranked.truncate(top);
    Ok(ranked)
}

/// Problems in a manifest and its image files, keyed by sample id.
#[pyfunction]
fn validate_manifest(path: PathBuf) -> PyResult<BTreeMap<String, Vec<String>>> {
    let m = load_manifest(path.clone())?;
    let base = path.parent().map(PathBuf::from).unwrap_or_default();
    Ok(check_manifest(&m, &base))
}

/// Violation messages of a stage document; empty when it is valid.
#[pyfunction]
fn validate_document(path: PathBuf) -> PyResult<Vec<String>> {
    let doc = Pipeline::load_document(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
    Ok(catalog_dataset::validate_document(&doc)
        .violations
        .into_iter()
        .map(|v| match (v.record_id, v.field) {
            (Some(id), Some(f)) => format!("{id} {f}: {}", v.message),
            (Some(id), None) => format!("{id}: {}", v.message),
            _ => v.message,
        })
        .collect())
}

#[pymodule]
fn catalog_dataset_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRobotsPolicy>()?;
    m.add_function(wrap_pyfunction!(sanitize_text, m)?)?;
    m.add_function(wrap_pyfunction!(strip_dimensions, m)?)?;
    m.add_function(wrap_pyfunction!(postfilter_text, m)?)?;
    m.add_function(wrap_pyfunction!(parse_sitemap, m)?)?;
    m.add_function(wrap_pyfunction!(build_prompts, m)?)?;
    m.add_function(wrap_pyfunction!(parse_extraction, m)?)?;
    m.add_function(wrap_pyfunction!(manifest_stats, m)?)?;
    m.add_function(wrap_pyfunction!(word_occurrences, m)?)?;
    m.add_function(wrap_pyfunction!(validate_manifest, m)?)?;
    m.add_function(wrap_pyfunction!(validate_document, m)?)?;
    Ok(())
}

//! XML sitemap parsing (urlset and sitemap index, optionally gzipped) and
//! resolution of a sitemap hierarchy down to product-page URLs.

use std::collections::{BTreeSet, HashSet};
use std::io::Read;

use flate2::read::GzDecoder;
use quick_xml::events::Event;
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

/// Maximum entries a single sitemap file may hold under the protocol.
pub const MAX_ENTRIES_PER_FILE: usize = 50_000;
/// Sitemap files deeper than this (root = 1) are not fetched.
pub const MAX_DEPTH: usize = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SitemapError {
    #[error("malformed sitemap xml: {0}")]
    XmlMalformed(String),
    #[error("unknown sitemap root element <{0}>")]
    UnknownRootElement(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SitemapKind {
    Index,
    Urlset,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SitemapEntry {
    pub loc: Url,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lastmod: Option<String>,
}

/// One sitemap file. For an index, `entries` lists the child sitemap
/// locations and `children` holds whichever of them were fetched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SitemapTree {
    pub kind: SitemapKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loc: Option<Url>,
    pub entries: Vec<SitemapEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<SitemapTree>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Compact form of a resolved tree, kept in crawl provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SitemapSummary {
    pub loc: Option<Url>,
    pub kind: SitemapKind,
    pub entry_count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<SitemapSummary>,
}

impl SitemapTree {
    pub fn summary(&self) -> SitemapSummary {
        SitemapSummary {
            loc: self.loc.clone(),
            kind: self.kind,
            entry_count: self.entries.len(),
            children: self.children.iter().map(SitemapTree::summary).collect(),
        }
    }
}

fn is_gzip(body: &[u8]) -> bool {
    body.len() >= 2 && body[0] == 0x1f && body[1] == 0x8b
}

/// Parse a fetched sitemap body. Gzip input is detected by magic bytes.
pub fn parse_sitemap(body: &[u8]) -> Result<SitemapTree, SitemapError> {
    if is_gzip(body) {
        let mut xml = Vec::new();
        GzDecoder::new(body)
            .read_to_end(&mut xml)
            .map_err(|e| SitemapError::XmlMalformed(format!("gzip: {e}")))?;
        return parse_xml(&xml);
    }
    parse_xml(body)
}

#[derive(Default)]
struct PendingEntry {
    loc: Option<String>,
    lastmod: Option<String>,
}

fn parse_xml(xml: &[u8]) -> Result<SitemapTree, SitemapError> {
    let mut reader = Reader::from_reader(xml);
    let mut buf = Vec::new();

    let mut kind: Option<SitemapKind> = None;
    let mut stack: Vec<String> = Vec::new();
    let mut entry: Option<PendingEntry> = None;
    let mut text = String::new();
    let mut entries = Vec::new();
    let mut warnings = Vec::new();

    loop {
        let event = reader
            .read_event_into(&mut buf)
            .map_err(|e| SitemapError::XmlMalformed(e.to_string()))?;
        match event {
            Event::Start(e) => {
                let name = e.local_name().as_ref().to_ascii_lowercase();
                if stack.is_empty() {
                    if kind.is_some() {
                        return Err(SitemapError::XmlMalformed("multiple root elements".into()));
                    }
                    kind = Some(match name.as_str() {
                        "urlset" => SitemapKind::Urlset,
                        "sitemapindex" => SitemapKind::Index,
                        _ => return Err(SitemapError::UnknownRootElement(name)),
                    });
                } else if stack.len() == 1 && (name == "url" || name == "sitemap") {
                    entry = Some(PendingEntry::default());
                }
                text.clear();
                stack.push(name);
            }
            Event::Empty(e) => {
                if stack.is_empty() {
                    let name = e.local_name().as_ref().to_ascii_lowercase();
                    return match name.as_str() {
                        "urlset" | "sitemapindex" => Ok(SitemapTree {
                            kind: if name == "urlset" {
                                SitemapKind::Urlset
                            } else {
                                SitemapKind::Index
                            },
                            loc: None,
                            entries: Vec::new(),
                            children: Vec::new(),
                            warnings,
                        }),
                        _ => Err(SitemapError::UnknownRootElement(name)),
                    };
                }
            }
            Event::Text(t) => text.push_str(&t.into_inner()),
            Event::CData(t) => text.push_str(&t.into_inner()),
            Event::GeneralRef(r) => {
                if let Ok(Some(c)) = r.resolve_char_ref() {
                    text.push(c);
                } else {
                    let name = r.into_inner();
                    match name.as_ref() {
                        "amp" => text.push('&'),
                        "lt" => text.push('<'),
                        "gt" => text.push('>'),
                        "quot" => text.push('"'),
                        "apos" => text.push('\''),
                        other => {
                            text.push('&');
                            text.push_str(other);
                            text.push(';');
                        }
                    }
                }
            }
            Event::End(_) => {
                let name = stack.pop().unwrap_or_default();
                match (stack.len(), name.as_str()) {
                    (2, "loc") => {
                        if let Some(en) = entry.as_mut() {
                            en.loc = Some(text.trim().to_string());
                        }
                    }
                    (2, "lastmod") => {
                        if let Some(en) = entry.as_mut() {
                            en.lastmod = Some(text.trim().to_string());
                        }
                    }
                    (1, "url") | (1, "sitemap") => {
                        if let Some(en) = entry.take() {
                            match en.loc.as_deref().map(Url::parse) {
                                Some(Ok(loc)) => entries.push(SitemapEntry {
                                    loc,
                                    lastmod: en.lastmod.filter(|s| !s.is_empty()),
                                }),
                                Some(Err(e)) => warnings.push(format!(
                                    "invalid loc {:?}: {e}",
                                    en.loc.unwrap_or_default()
                                )),
                                None => warnings.push("entry without <loc>".to_string()),
                            }
                        }
                    }
                    _ => {}
                }
                text.clear();
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }

    if !stack.is_empty() {
        return Err(SitemapError::XmlMalformed(format!(
            "unexpected end of document inside <{}>",
            stack.last().map(String::as_str).unwrap_or_default()
        )));
    }
    let Some(kind) = kind else {
        return Err(SitemapError::XmlMalformed("no root element".into()));
    };
    if entries.len() > MAX_ENTRIES_PER_FILE {
        warnings.push(format!(
            "{} entries exceed the protocol limit of {MAX_ENTRIES_PER_FILE}",
            entries.len()
        ));
    }
    Ok(SitemapTree {
        kind,
        loc: None,
        entries,
        children: Vec::new(),
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SitemapFailure {
    pub url: Url,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    /// Sorted, duplicate-free product URLs.
    pub urls: Vec<Url>,
    pub failures: Vec<SitemapFailure>,
    pub trees: Vec<SitemapTree>,
}

/// Walk the sitemap hierarchy rooted at `roots`, collecting every page URL
/// accepted by `product_filter`. Fetch or parse failures are recorded per
/// sitemap and never abort the walk.
pub fn resolve_product_urls<F, P>(roots: &[Url], mut fetch: F, product_filter: P) -> Resolution
where
    F: FnMut(&Url) -> Result<Vec<u8>, String>,
    P: Fn(&Url) -> bool,
{
    let mut visited = HashSet::new();
    let mut urls = BTreeSet::new();
    let mut failures = Vec::new();
    let mut trees = Vec::new();
    for root in roots {
        if let Some(tree) = resolve_node(
            root,
            1,
            &mut fetch,
            &product_filter,
            &mut visited,
            &mut urls,
            &mut failures,
        ) {
            trees.push(tree);
        }
    }
    let mut urls: Vec<Url> = urls
        .into_iter()
        .filter_map(|s| Url::parse(&s).ok())
        .collect();
    urls.sort_by(|a, b| a.as_str().cmp(b.as_str()));
    Resolution {
        urls,
        failures,
        trees,
    }
}

fn resolve_node<F, P>(
    loc: &Url,
    depth: usize,
    fetch: &mut F,
    filter: &P,
    visited: &mut HashSet<String>,
    urls: &mut BTreeSet<String>,
    failures: &mut Vec<SitemapFailure>,
) -> Option<SitemapTree>
where
    F: FnMut(&Url) -> Result<Vec<u8>, String>,
    P: Fn(&Url) -> bool,
{
    if !visited.insert(loc.as_str().to_string()) {
        return None;
    }
    if depth > MAX_DEPTH {
        failures.push(SitemapFailure {
            url: loc.clone(),
            reason: format!("depth limit {MAX_DEPTH} exceeded"),
        });
        return None;
    }
    let body = match fetch(loc) {
        Ok(b) => b,
        Err(reason) => {
            failures.push(SitemapFailure {
                url: loc.clone(),
                reason,
            });
            return None;
        }
    };
    let mut tree = match parse_sitemap(&body) {
        Ok(t) => t,
        Err(e) => {
            failures.push(SitemapFailure {
                url: loc.clone(),
                reason: e.to_string(),
            });
            return None;
        }
    };
    tree.loc = Some(loc.clone());
    match tree.kind {
        SitemapKind::Urlset => {
            for entry in &tree.entries {
                if filter(&entry.loc) {
                    urls.insert(entry.loc.as_str().to_string());
                }
            }
        }
        SitemapKind::Index => {
            let child_locs: Vec<Url> = tree.entries.iter().map(|e| e.loc.clone()).collect();
            for child in &child_locs {
                if let Some(sub) =
                    resolve_node(child, depth + 1, fetch, filter, visited, urls, failures)
                {
                    tree.children.push(sub);
                }
            }
        }
    }
    Some(tree)
}

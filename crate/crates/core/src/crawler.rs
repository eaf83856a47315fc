//! Catalog crawling: robots.txt -> sitemaps -> product pages -> raw records.

use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use chrono::Utc;
use scraper::{ElementRef, Html, Selector};
use thiserror::Error;
use url::Url;

use crate::config::{ExtractionRules, PipelineConfig, ShopSpec};
use crate::document::{Provenance, Record, RecordId, ShopProvenance, Stage, StageDocument};
use crate::fetch::{host_key, FetchError, Fetcher};
use crate::robots::{parse_robots_bytes, RobotsPolicy};
use crate::sitemap::resolve_product_urls;

#[derive(Debug, Error)]
pub enum CrawlError {
    #[error("shop {shop_id}: robots.txt unreachable ({cause}) and no sitemap override configured")]
    FatalConfig { shop_id: String, cause: String },
    #[error("shop {shop_id}: invalid selector {selector:?}: {message}")]
    BadSelector {
        shop_id: String,
        selector: String,
        message: String,
    },
    #[error("shop {shop_id}: {message}")]
    BadShop { shop_id: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Skip {
    NoLabel,
    NoImage,
}

impl Skip {
    pub fn as_str(self) -> &'static str {
        match self {
            Skip::NoLabel => "no-label",
            Skip::NoImage => "no-image",
        }
    }
}

/// Label, info blocks and images pulled from one product page.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProductPage {
    pub label: String,
    pub info: Vec<String>,
    pub image_urls: Vec<Url>,
}

struct ImageSelector {
    selector: Selector,
    attr: Option<String>,
}

/// Extraction rules with their selectors parsed.
pub struct CompiledRules {
    label: Selector,
    info: Vec<Selector>,
    images: Vec<ImageSelector>,
}

const DEFAULT_IMAGE_ATTRS: [&str; 4] = ["src", "data-src", "href", "content"];

impl CompiledRules {
    pub fn compile(rules: &ExtractionRules) -> Result<Self, (String, String)> {
        let parse = |s: &str| Selector::parse(s).map_err(|e| (s.to_string(), e.to_string()));
        let label = parse(&rules.label_selector)?;
        let info = rules
            .info_selectors
            .iter()
            .map(|s| parse(s))
            .collect::<Result<Vec<_>, _>>()?;
        let images = rules
            .image_selectors
            .iter()
            .map(|spec| {
                let (sel, attr) = match spec.rsplit_once('@') {
                    Some((sel, attr)) if !attr.is_empty() && !attr.contains(' ') => {
                        (sel, Some(attr.to_string()))
                    }
                    _ => (spec.as_str(), None),
                };
                Ok::<_, (String, String)>(ImageSelector {
                    selector: parse(sel)?,
                    attr,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CompiledRules {
            label,
            info,
            images,
        })
    }
}

fn element_text(el: ElementRef<'_>) -> String {
    el.text()
        .flat_map(str::split_whitespace)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Pull a product out of a page. The label is the trimmed text of the first
/// label match; each info selector contributes one block (the text of all
/// its matches); image URLs are resolved against `url` and deduplicated.
pub fn extract_product(html: &[u8], url: &Url, rules: &CompiledRules) -> Result<ProductPage, Skip> {
    let doc = Html::parse_document(&String::from_utf8_lossy(html));

    let label = doc
        .select(&rules.label)
        .next()
        .map(element_text)
        .unwrap_or_default();
    if label.is_empty() {
        return Err(Skip::NoLabel);
    }

    let info: Vec<String> = rules
        .info
        .iter()
        .filter_map(|sel| {
            let block = doc
                .select(sel)
                .map(element_text)
                .filter(|t| !t.is_empty())
                .collect::<Vec<_>>()
                .join(" ");
            (!block.is_empty()).then_some(block)
        })
        .collect();

    let mut seen = HashSet::new();
    let mut image_urls = Vec::new();
    for img in &rules.images {
        for el in doc.select(&img.selector) {
            let raw = match &img.attr {
                Some(attr) => el.value().attr(attr),
                None => DEFAULT_IMAGE_ATTRS.iter().find_map(|a| el.value().attr(a)),
            };
            let Some(raw) = raw.map(str::trim).filter(|s| !s.is_empty()) else {
                continue;
            };
            let Ok(abs) = url.join(raw) else { continue };
            if matches!(abs.scheme(), "http" | "https") && seen.insert(abs.as_str().to_string()) {
                image_urls.push(abs);
            }
        }
    }
    if image_urls.is_empty() {
        return Err(Skip::NoImage);
    }
    Ok(ProductPage {
        label,
        info,
        image_urls,
    })
}

/// Outcome of crawling one shop.
#[derive(Debug, Clone)]
pub struct ShopCrawl {
    pub records: Vec<Record>,
    pub provenance: ShopProvenance,
}

/// Fetch and parse a shop's robots.txt. A 4xx means no restrictions; a
/// server or network failure is returned as an error.
pub fn fetch_robots(fetcher: &Fetcher, origin: &Url) -> Result<(RobotsPolicy, String), FetchError> {
    let robots_url = origin.join("/robots.txt").expect("origin is a base url");
    match fetcher.fetch_unchecked(&robots_url) {
        Ok(f) => Ok((
            parse_robots_bytes(&f.body, fetcher.user_agent()).with_origin(origin.clone()),
            "ok".to_string(),
        )),
        Err(FetchError::HttpError { status, .. }) if (400..500).contains(&status) => Ok((
            RobotsPolicy::allow_all(fetcher.user_agent()).with_origin(origin.clone()),
            format!("absent (HTTP {status})"),
        )),
        Err(e) => Err(e),
    }
}

fn bump(map: &mut BTreeMap<String, u64>, reason: &str) {
    *map.entry(reason.to_string()).or_default() += 1;
}

/// Crawl one shop: robots.txt, sitemap hierarchy, then every product page
/// allowed by robots. Records come back sorted by source URL.
pub fn crawl_catalog(shop: &ShopSpec, fetcher: &Fetcher) -> Result<ShopCrawl, CrawlError> {
    let rules = CompiledRules::compile(&shop.extraction_rules).map_err(|(selector, message)| {
        CrawlError::BadSelector {
            shop_id: shop.shop_id.clone(),
            selector,
            message,
        }
    })?;
    let filter = shop
        .product_url_filter
        .compile()
        .map_err(|e| CrawlError::BadShop {
            shop_id: shop.shop_id.clone(),
            message: e.to_string(),
        })?;
    let fetcher = fetcher
        .for_user_agent(&shop.user_agent)
        .map_err(|e| CrawlError::BadShop {
            shop_id: shop.shop_id.clone(),
            message: e.to_string(),
        })?;

    let mut prov = ShopProvenance {
        shop_id: shop.shop_id.clone(),
        origin: Some(shop.origin.clone()),
        ..Default::default()
    };

    let policy = match fetch_robots(&fetcher, &shop.origin) {
        Ok((policy, status)) => {
            prov.robots_status = status;
            policy
        }
        Err(e) if !shop.sitemap_urls.is_empty() => {
            log::warn!(
                "shop {}: robots.txt unreachable ({e}); using sitemap override",
                shop.shop_id
            );
            prov.robots_status = format!("unreachable ({})", e.reason());
            RobotsPolicy::allow_all(&shop.user_agent).with_origin(shop.origin.clone())
        }
        Err(e) => {
            return Err(CrawlError::FatalConfig {
                shop_id: shop.shop_id.clone(),
                cause: e.to_string(),
            })
        }
    };

    let host = host_key(&shop.origin);
    if let Some(secs) = policy.crawl_delay {
        fetcher
            .gate()
            .set_host_delay(&host, Duration::from_secs_f64(secs));
    }
    prov.crawl_delay_ms = Some(fetcher.gate().host_delay(&host).as_millis() as u64);

    let roots: Vec<Url> = if !shop.sitemap_urls.is_empty() {
        shop.sitemap_urls.clone()
    } else if !policy.sitemap_urls.is_empty() {
        policy.sitemap_urls.clone()
    } else {
        vec![shop
            .origin
            .join("/sitemap.xml")
            .expect("origin is a base url")]
    };

    let resolution = resolve_product_urls(
        &roots,
        |url| {
            fetcher
                .fetch(url, &policy)
                .map(|f| f.body)
                .map_err(|e| e.to_string())
        },
        |url| filter.matches(url),
    );
    prov.sitemaps = resolution.trees.iter().map(|t| t.summary()).collect();
    prov.sitemap_failures = resolution.failures.clone();
    prov.product_urls = resolution.urls.len();

    let mut records = Vec::new();
    for url in &resolution.urls {
        if host_key(url) != host {
            bump(&mut prov.skipped, "off-origin");
            continue;
        }
        match policy.is_allowed(url) {
            Ok(true) => {}
            Ok(false) => {
                bump(&mut prov.skipped, "robots");
                continue;
            }
            Err(_) => {
                bump(&mut prov.skipped, "off-origin");
                continue;
            }
        }
        let page = match fetcher.fetch(url, &policy) {
            Ok(page) => page,
            Err(e) => {
                log::info!("{e}");
                bump(&mut prov.skipped, "fetch-failed");
                continue;
            }
        };
        match extract_product(&page.body, url, &rules) {
            Ok(p) => records.push(Record {
                record_id: RecordId::derive(&shop.shop_id, url),
                shop_id: shop.shop_id.clone(),
                source_url: url.clone(),
                label: p.label,
                info: p.info,
                image_urls: p.image_urls,
                fetched_at: Utc::now(),
                prompt_truncated: false,
                fields: None,
                images: Vec::new(),
            }),
            Err(skip) => bump(&mut prov.skipped, skip.as_str()),
        }
    }
    records.sort_by(|a, b| a.source_url.as_str().cmp(b.source_url.as_str()));
    prov.records = records.len();
    Ok(ShopCrawl {
        records,
        provenance: prov,
    })
}

/// Crawl every configured shop (or only `only_shop`) and gather the results
/// into one crawl document. Shops on different hosts run concurrently, up
/// to `politeness.max_concurrent_hosts` at a time.
pub fn crawl_stage(
    config: &PipelineConfig,
    fetcher: &Fetcher,
    only_shop: Option<&str>,
) -> Result<StageDocument, CrawlError> {
    let shops: Vec<&ShopSpec> = config
        .shops
        .iter()
        .filter(|s| only_shop.is_none_or(|id| s.shop_id == id))
        .collect();

    // Shops sharing a host are crawled by the same worker, one after another.
    let mut by_host: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, shop) in shops.iter().enumerate() {
        by_host.entry(host_key(&shop.origin)).or_default().push(i);
    }
    let host_groups: Vec<Vec<usize>> = by_host.into_values().collect();
    let results: Vec<Mutex<Option<Result<ShopCrawl, CrawlError>>>> =
        shops.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = config
        .politeness
        .max_concurrent_hosts
        .max(1)
        .min(host_groups.len().max(1));

    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let g = next.fetch_add(1, Ordering::SeqCst);
                let Some(group) = host_groups.get(g) else {
                    break;
                };
                for &i in group {
                    let out = crawl_catalog(shops[i], fetcher);
                    *results[i].lock().unwrap() = Some(out);
                }
            });
        }
    });

    let mut records = Vec::new();
    let mut provenance = Provenance::default();
    for slot in results {
        let crawl = slot.into_inner().unwrap().expect("every shop crawled")?;
        for (reason, n) in &crawl.provenance.skipped {
            provenance.add_drops(Stage::Crawl, reason, *n);
        }
        provenance.shops.push(crawl.provenance);
        records.extend(crawl.records);
    }
    records.sort_by(|a, b| {
        (a.shop_id.as_str(), a.source_url.as_str())
            .cmp(&(b.shop_id.as_str(), b.source_url.as_str()))
    });
    let mut doc = StageDocument::new(Stage::Crawl, records, provenance);
    doc.empty_run = doc.records.is_empty();
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rules(label: &str, info: &[&str], images: &[&str]) -> CompiledRules {
        CompiledRules::compile(&ExtractionRules {
            label_selector: label.into(),
            info_selectors: info.iter().map(|s| s.to_string()).collect(),
            image_selectors: images.iter().map(|s| s.to_string()).collect(),
        })
        .unwrap()
    }

    const PAGE: &str = r#"<html><head><title>t</title></head><body>
      <h1 class="title">  Door   Hinge </h1>
      <div class="desc"><p>Heavy duty hinge</p><p>for doors</p></div>
      <table class="specs"><tr><td>Material</td><td>Steel</td></tr></table>
      <img class="main" src="/img/a.jpg">
      <img class="main" src="/img/a.jpg">
      <img class="thumb" data-src="thumbs/b.jpg">
    </body></html>"#;

    #[test]
    fn extracts_label_info_images() {
        let url = Url::parse("https://x/p/1").unwrap();
        let p = extract_product(
            PAGE.as_bytes(),
            &url,
            &rules("h1.title", &[".desc", ".specs"], &["img.main"]),
        )
        .unwrap();
        assert_eq!(p.label, "Door Hinge");
        assert_eq!(p.info, vec!["Heavy duty hinge for doors", "Material Steel"]);
        assert_eq!(
            p.image_urls,
            vec![Url::parse("https://x/img/a.jpg").unwrap()]
        );
    }

    #[test]
    fn attribute_suffix_and_relative_resolution() {
        let url = Url::parse("https://x/p/1").unwrap();
        let p = extract_product(
            PAGE.as_bytes(),
            &url,
            &rules("h1", &[], &["img.thumb@data-src"]),
        )
        .unwrap();
        assert_eq!(
            p.image_urls,
            vec![Url::parse("https://x/p/thumbs/b.jpg").unwrap()]
        );
    }

    #[test]
    fn skips() {
        let url = Url::parse("https://x/p/1").unwrap();
        assert_eq!(
            extract_product(PAGE.as_bytes(), &url, &rules("h2", &[], &["img"])),
            Err(Skip::NoLabel)
        );
        assert_eq!(
            extract_product(PAGE.as_bytes(), &url, &rules("h1", &[], &["img.none"])),
            Err(Skip::NoImage)
        );
    }

    #[test]
    fn bad_selector_is_reported() {
        let r = CompiledRules::compile(&ExtractionRules {
            label_selector: "h1[".into(),
            info_selectors: vec![],
            image_selectors: vec!["img".into()],
        });
        assert!(r.is_err());
    }
}

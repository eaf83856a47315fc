mod common;

use catalog_dataset::sitemap::{parse_sitemap, resolve_product_urls, SitemapKind};
use catalog_dataset::testkit::FixtureServer;
use proptest::prelude::*;
use url::Url;

#[test]
fn corpus_matches_expectations() {
    match common::check_sitemap_corpus() {
        Ok(n) => assert!(n >= 20, "only {n} sitemap fixtures"),
        Err(errors) => panic!("{} mismatches:\n{}", errors.len(), errors.join("\n")),
    }
}

fn http_get(url: &Url) -> Result<Vec<u8>, String> {
    let resp = reqwest::blocking::get(url.as_str()).map_err(|e| e.to_string())?;
    if !resp.status().is_success() {
        return Err(format!("HTTP {}", resp.status().as_u16()));
    }
    resp.bytes().map(|b| b.to_vec()).map_err(|e| e.to_string())
}

#[test]
fn index_resolves_to_filtered_products() {
    let server = FixtureServer::start(common::fixtures().join("catalog"));
    let root = server.url("/sitemap_index.xml");
    let res = resolve_product_urls(&[root], http_get, |u: &Url| u.path().contains("/product/"));
    assert!(res.failures.is_empty(), "{:?}", res.failures);
    assert_eq!(res.urls.len(), common::FIXTURE_PRODUCT_URLS);
    let mut sorted = res.urls.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted, res.urls, "sorted and unique");
    assert!(res.urls.iter().all(|u| u.path().starts_with("/product/")));
    assert_eq!(res.trees.len(), 1);
    assert_eq!(res.trees[0].kind, SitemapKind::Index);
    assert_eq!(res.trees[0].children.len(), 2);
    // the gzipped child was fetched as such
    assert!(server
        .requested_paths()
        .contains(&"/sitemaps/products.xml.gz".to_string()));
}

#[test]
fn unreachable_roots_are_reported() {
    let server = FixtureServer::start(common::fixtures().join("catalog"));
    let roots = [server.url("/nope-1.xml"), server.url("/nope-2.xml")];
    let res = resolve_product_urls(&roots, http_get, |_: &Url| true);
    assert!(res.urls.is_empty());
    assert_eq!(res.failures.len(), 2);
}

#[test]
fn self_referencing_index_terminates() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("loop.xml"),
        r#"<sitemapindex xmlns="http://www.sitemaps.org/schemas/sitemap/0.9">
<sitemap><loc>{{origin}}/loop.xml</loc></sitemap>
<sitemap><loc>{{origin}}/leaf.xml</loc></sitemap></sitemapindex>"#,
    )
    .unwrap();
    std::fs::write(
        dir.path().join("leaf.xml"),
        r#"<urlset><url><loc>{{origin}}/product/x</loc></url></urlset>"#,
    )
    .unwrap();
    let server = FixtureServer::start(dir.path());
    let res = resolve_product_urls(&[server.url("/loop.xml")], http_get, |_: &Url| true);
    assert_eq!(res.urls, vec![server.url("/product/x")]);
    assert!(server.requests().len() <= 3);
}

proptest! {
    #[test]
    fn parser_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..2048)) {
        let _ = parse_sitemap(&bytes);
    }

    #[test]
    fn urlset_round_trip(paths in proptest::collection::vec("[a-z0-9]{1,12}", 0..30)) {
        let body: String = paths
            .iter()
            .map(|p| format!("<url><loc>https://shop.example/product/{p}</loc></url>"))
            .collect();
        let xml = format!(r#"<?xml version="1.0"?><urlset xmlns="http://www.sitemaps.org/schemas/sitemap/0.9">{body}</urlset>"#);
        let tree = parse_sitemap(xml.as_bytes()).unwrap();
        let locs: Vec<String> = tree.entries.iter().map(|e| e.loc.path().to_string()).collect();
        let want: Vec<String> = paths.iter().map(|p| format!("/product/{p}")).collect();
        prop_assert_eq!(locs, want);
    }
}

"""Smoke test for the catalog_dataset_py extension module.

Build and install the module first:

    pip install maturin
    maturin build --release -m crates/py/Cargo.toml -o dist
    pip install dist/catalog_dataset-*.whl

then run ``python python/smoke_test.py [path/to/manifest.json]``.
"""

import gzip
import json
import sys

import catalog_dataset_py as cd


def check_filters():
    assert cd.sanitize_text("Door&nbsp;hinge &amp; bracket​") == "Door hinge & bracket"
    assert cd.strip_dimensions("toggle clamp 40x40 mm, M8") == "toggle clamp"
    assert cd.postfilter_text("Stainless Steel (A2).") == "stainless steel (a)"


def check_robots():
    body = b"User-agent: *\nDisallow: /cart\nAllow: /cart/public\nCrawl-delay: 2\nSitemap: https://shop.example/sm.xml\n"
    policy = cd.RobotsPolicy(body, "CatalogBot/1.0", "https://shop.example/")
    assert not policy.is_allowed("https://shop.example/cart/x")
    assert policy.is_allowed("https://shop.example/cart/public/x")
    assert policy.crawl_delay == 2.0
    assert policy.sitemaps == ["https://shop.example/sm.xml"]
    try:
        policy.is_allowed("https://elsewhere.example/")
    except ValueError:
        pass
    else:
        raise AssertionError("off-origin URL accepted")


def check_sitemap():
    xml = (
        b'<urlset xmlns="http://www.sitemaps.org/schemas/sitemap/0.9">'
        b"<url><loc>https://shop.example/product/a</loc><lastmod>2024-05-01</lastmod></url>"
        b"</urlset>"
    )
    plain = cd.parse_sitemap(xml)
    assert plain == cd.parse_sitemap(gzip.compress(xml))
    kind, entries, warnings = plain
    assert kind == "urlset"
    assert entries == [("https://shop.example/product/a", "2024-05-01")]
    assert warnings == []


def check_llm():
    system, user = cd.build_prompts("door hinge", ["steel", "matte"])
    assert system.startswith("You are a helpful assistant")
    assert user.startswith("Summarize 'Label: door hinge Text: steel matte'")
    fields = cd.parse_extraction(
        "(1) steel door hinge (2) door hinge (3) hinge for doors (4) steel (5) matte"
    )
    assert fields["label_short"] == "door hinge"
    assert fields["material_finish"] == "matte"
    try:
        cd.parse_extraction("(1) only one")
    except ValueError as e:
        assert "missing-field" in str(e)
    else:
        raise AssertionError("incomplete reply accepted")


def check_manifest(path):
    stats = json.loads(cd.manifest_stats(path))
    assert stats["sample_count"] > 0
    top = cd.word_occurrences(path, "label_short", 10)
    assert 0 < len(top) <= 10
    problems = cd.validate_manifest(path)
    assert problems == {}, problems
    print(f"manifest: {stats['sample_count']} samples, top word {top[0]}")


def main():
    check_filters()
    check_robots()
    check_sitemap()
    check_llm()
    if len(sys.argv) > 1:
        check_manifest(sys.argv[1])
    print("smoke test passed")


if __name__ == "__main__":
    main()

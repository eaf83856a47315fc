#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use catalog_dataset::testkit::{FixtureServer, MockLlm};
use catalog_dataset::PipelineConfig;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn test_fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
}

/// Fixture catalog server, scripted LLM and a materialized config file.
pub struct FixtureEnv {
    pub server: FixtureServer,
    pub llm: MockLlm,
    pub dir: tempfile::TempDir,
    pub config_path: PathBuf,
}

impl FixtureEnv {
    pub fn start() -> Self {
        let server = FixtureServer::start(fixtures().join("catalog"));
        let llm = MockLlm::from_file(&fixtures().join("llm_script.json")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let template = fs::read_to_string(fixtures().join("shop.json")).unwrap();
        let text = template
            .replace("{{origin}}", server.origin().as_str().trim_end_matches('/'))
            .replace("{{llm}}", llm.url().as_str());
        let config_path = dir.path().join("shop.json");
        fs::write(&config_path, text).unwrap();
        FixtureEnv {
            server,
            llm,
            dir,
            config_path,
        }
    }

    pub fn config(&self) -> PipelineConfig {
        PipelineConfig::load(&self.config_path).unwrap()
    }

    pub fn output_dir(&self) -> PathBuf {
        self.dir.path().join("out")
    }
}

/// Drop reasons the fixture catalog is built to produce, per stage.
pub fn expected_fixture_drops() -> BTreeMap<String, BTreeMap<String, u64>> {
    let table: &[(&str, &[(&str, u64)])] = &[
        (
            "crawl",
            &[
                ("robots", 1),
                ("fetch-failed", 1),
                ("no-label", 1),
                ("no-image", 1),
            ],
        ),
        ("prefilter", &[("duplicate", 2), ("insufficient", 1)]),
        ("extract", &[("missing-field", 1), ("over-length", 1)]),
        ("postfilter", &[("field-emptied", 1)]),
        ("download", &[("image-missing", 1)]),
    ];
    table
        .iter()
        .map(|(stage, reasons)| {
            (
                stage.to_string(),
                reasons.iter().map(|(r, n)| (r.to_string(), *n)).collect(),
            )
        })
        .collect()
}

/// Records left after each stage of the fixture run.
pub const EXPECTED_RECORDS: [(&str, usize); 5] = [
    ("crawl", 20),
    ("prefilter", 17),
    ("extract", 15),
    ("postfilter", 14),
    ("download", 13),
];
pub const EXPECTED_SAMPLES: usize = 13;
pub const FIXTURE_PRODUCT_URLS: usize = 24;

fn sorted_files(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    files.sort();
    files
}

fn expectation(file: &Path) -> serde_json::Value {
    let stem = file.file_stem().unwrap().to_string_lossy();
    let path = file.with_file_name(format!("{stem}.expect.json"));
    serde_json::from_str(&fs::read_to_string(&path).unwrap())
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Check every robots.txt fixture against its hand-written expectation.
/// Returns the number of files checked, or one message per mismatch.
pub fn check_robots_corpus() -> Result<usize, Vec<String>> {
    use catalog_dataset::robots::parse_robots_bytes;
    let origin = url::Url::parse("https://shop.example/").unwrap();
    let files = sorted_files(&test_fixtures().join("robots"), "txt");
    let mut errors = Vec::new();
    for file in &files {
        let name = file.file_name().unwrap().to_string_lossy().to_string();
        let exp = expectation(file);
        let body = fs::read(file).unwrap();
        let policy = parse_robots_bytes(&body, exp["user_agent"].as_str().unwrap())
            .with_origin(origin.clone());

        let sitemaps: Vec<String> = policy.sitemap_urls.iter().map(|u| u.to_string()).collect();
        let want: Vec<String> = exp["sitemaps"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_str().unwrap().to_string())
            .collect();
        if sitemaps != want {
            errors.push(format!("{name}: sitemaps {sitemaps:?}, expected {want:?}"));
        }
        if policy.crawl_delay != exp["crawl_delay"].as_f64() {
            errors.push(format!(
                "{name}: crawl_delay {:?}, expected {}",
                policy.crawl_delay, exp["crawl_delay"]
            ));
        }
        if let Some(n) = exp["skipped_lines"].as_u64() {
            if policy.skipped_lines as u64 != n {
                errors.push(format!(
                    "{name}: skipped {} lines, expected {n}",
                    policy.skipped_lines
                ));
            }
        }
        for (key, want_allowed) in [("allowed", true), ("disallowed", false)] {
            for path in exp[key].as_array().unwrap() {
                let path = path.as_str().unwrap();
                let url = origin.join(path).unwrap();
                match policy.is_allowed(&url) {
                    Ok(got) if got == want_allowed => {}
                    other => errors.push(format!(
                        "{name}: {path} -> {other:?}, expected {want_allowed}"
                    )),
                }
            }
        }
    }
    if errors.is_empty() {
        Ok(files.len())
    } else {
        Err(errors)
    }
}

/// Check every sitemap fixture, plain and gzipped, against its expectation.
pub fn check_sitemap_corpus() -> Result<usize, Vec<String>> {
    use catalog_dataset::sitemap::{parse_sitemap, SitemapError, SitemapKind};
    use std::io::Write;

    let files = sorted_files(&test_fixtures().join("sitemaps"), "xml");
    let mut errors = Vec::new();
    for file in &files {
        let name = file.file_name().unwrap().to_string_lossy().to_string();
        let exp = expectation(file);
        let body = fs::read(file).unwrap();
        let parsed = parse_sitemap(&body);

        let mut gz = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::best());
        gz.write_all(&body).unwrap();
        let gz_parsed = parse_sitemap(&gz.finish().unwrap());
        if format!("{parsed:?}") != format!("{gz_parsed:?}") {
            errors.push(format!("{name}: gzipped body parses differently"));
        }

        if let Some(kind) = exp["error"].as_str() {
            let ok = matches!(
                (&parsed, kind),
                (Err(SitemapError::XmlMalformed(_)), "XmlMalformed")
                    | (
                        Err(SitemapError::UnknownRootElement(_)),
                        "UnknownRootElement"
                    )
            );
            if !ok {
                errors.push(format!("{name}: got {parsed:?}, expected error {kind}"));
            }
            continue;
        }
        let tree = match parsed {
            Ok(t) => t,
            Err(e) => {
                errors.push(format!("{name}: unexpected error {e}"));
                continue;
            }
        };
        let want_kind = match exp["kind"].as_str().unwrap() {
            "urlset" => SitemapKind::Urlset,
            _ => SitemapKind::Index,
        };
        if tree.kind != want_kind {
            errors.push(format!("{name}: kind {:?}", tree.kind));
        }
        let locs: Vec<String> = tree.entries.iter().map(|e| e.loc.to_string()).collect();
        let want_locs: Vec<String> = exp["locs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_str().unwrap().to_string())
            .collect();
        if locs != want_locs {
            errors.push(format!("{name}: locs {locs:?}, expected {want_locs:?}"));
        }
        let lastmods: Vec<Option<String>> =
            tree.entries.iter().map(|e| e.lastmod.clone()).collect();
        let want_lastmods: Vec<Option<String>> = exp["lastmods"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_str().map(str::to_string))
            .collect();
        if lastmods != want_lastmods {
            errors.push(format!(
                "{name}: lastmods {lastmods:?}, expected {want_lastmods:?}"
            ));
        }
        if tree.warnings.len() as u64 != exp["warnings"].as_u64().unwrap() {
            errors.push(format!("{name}: warnings {:?}", tree.warnings));
        }
        if !tree.children.is_empty() {
            errors.push(format!("{name}: parse_sitemap must not fetch children"));
        }
    }
    if errors.is_empty() {
        Ok(files.len())
    } else {
        Err(errors)
    }
}

/// `[input, expected]` pairs from a text corpus file.
pub fn text_corpus(name: &str) -> Vec<(String, String)> {
    let path = test_fixtures().join("text").join(name);
    let pairs: Vec<(String, String)> =
        serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    pairs
}

/// A crawl-stage record for `url` under shop `shop`.
pub fn record(shop: &str, url: &str, label: &str, info: &[&str]) -> catalog_dataset::Record {
    let source_url = url::Url::parse(url).unwrap();
    catalog_dataset::Record {
        record_id: catalog_dataset::RecordId::derive(shop, &source_url),
        shop_id: shop.into(),
        image_urls: vec![source_url.join("/img.png").unwrap()],
        source_url,
        label: label.into(),
        info: info.iter().map(|s| s.to_string()).collect(),
        fetched_at: chrono::Utc::now(),
        prompt_truncated: false,
        fields: None,
        images: Vec::new(),
    }
}

/// Check that requests in `log` never overlap and that each one starts at
/// least `min_delay` after the previous response began.
pub fn check_politeness(
    log: &[catalog_dataset::testkit::RequestLog],
    min_delay: std::time::Duration,
) -> Result<(), String> {
    let mut log: Vec<_> = log.to_vec();
    log.sort_by_key(|r| r.started);
    for pair in log.windows(2) {
        let (prev, next) = (&pair[0], &pair[1]);
        if next.started < prev.finished {
            return Err(format!("{} overlaps {}", next.path, prev.path));
        }
        let gap = next.started - prev.responding;
        if gap < min_delay {
            return Err(format!(
                "{} started {gap:?} after {} (minimum {min_delay:?})",
                next.path, prev.path
            ));
        }
    }
    Ok(())
}

const VOCAB: &[&str] = &[
    "clamp",
    "toggle",
    "hinge",
    "steel",
    "stainless",
    "zinc-plated",
    "knob",
    "the",
    "for",
    "with",
    "of",
    "a",
    "and",
    "door",
    "heavy-duty",
    "caster",
    "swivel",
    "lever",
    "black",
    "matte,",
    "polished.",
    "aluminium",
    "(anodized)",
    "brass",
    "plunger",
    "spring",
    "in",
    "on",
    "to",
    "base",
];

/// `n` deterministic synthetic manifest samples drawn from a small
/// vocabulary with stopwords and punctuation mixed in.
pub fn synthetic_samples(n: usize, seed: u64) -> Vec<catalog_dataset::images::DatasetSample> {
    use catalog_dataset::images::{DatasetSample, ImageMeta, SampleSource};
    use rand::{RngExt, SeedableRng};

    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut phrase = |max_words: usize| -> String {
        let k = rng.random_range(1..=max_words);
        (0..k)
            .map(|_| VOCAB[rng.random_range(0..VOCAB.len())])
            .collect::<Vec<_>>()
            .join(" ")
    };
    (0..n)
        .map(|i| {
            let fields = catalog_dataset::ExtractedFields {
                label_long: phrase(6),
                label_short: phrase(3),
                description: phrase(12),
                material: phrase(2),
                material_finish: phrase(2),
            };
            let url = url::Url::parse(&format!("https://shop.example/p/{i}")).unwrap();
            DatasetSample {
                sample_id: format!("s{i:04}"),
                image_path: format!("images/s{i:04}.png"),
                fields,
                source: SampleSource {
                    shop_id: "synthetic".into(),
                    source_url: url.clone(),
                    image_url: url,
                },
                image_meta: ImageMeta {
                    width: 1,
                    height: 1,
                    format: "png".into(),
                },
            }
        })
        .collect()
}

/// Word counts computed the slow way: scan characters, cut at whitespace,
/// strip non-alphanumerics from both ends, lowercase, skip stopwords.
pub fn oracle_word_counts(values: &[&str], stopwords: &[&str]) -> Vec<(String, usize)> {
    let mut tokens: Vec<String> = Vec::new();
    for value in values {
        let mut current = String::new();
        for c in value.chars().chain(std::iter::once(' ')) {
            if c.is_whitespace() {
                if !current.is_empty() {
                    let chars: Vec<char> = current.chars().collect();
                    let start = chars.iter().position(|c| c.is_alphanumeric());
                    let end = chars.iter().rposition(|c| c.is_alphanumeric());
                    if let (Some(s), Some(e)) = (start, end) {
                        let word: String = chars[s..=e].iter().collect::<String>().to_lowercase();
                        if !stopwords.contains(&word.as_str()) {
                            tokens.push(word);
                        }
                    }
                    current.clear();
                }
            } else {
                current.push(c);
            }
        }
    }
    tokens.sort();
    let mut counts: Vec<(String, usize)> = Vec::new();
    for t in tokens {
        match counts.last_mut() {
            Some((w, n)) if *w == t => *n += 1,
            _ => counts.push((t, 1)),
        }
    }
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    counts
}

/// Distinct values of one field, by sorting and deduplicating.
pub fn oracle_unique(values: &[&str]) -> usize {
    let mut v = values.to_vec();
    v.sort_unstable();
    v.dedup();
    v.len()
}

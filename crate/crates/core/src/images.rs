//! Image download, normalization and dataset manifest assembly.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{self, Cursor};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use image::codecs::jpeg::JpegEncoder;
use image::codecs::png::{CompressionType, FilterType as PngFilter, PngEncoder};
use image::imageops::FilterType;
use image::{DynamicImage, ImageEncoder, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::config::{ImageFormat, PipelineConfig};
use crate::crawler::fetch_robots;
use crate::document::{Provenance, Record, Stage, StageDocument, StoredImage};
use crate::fetch::{host_key, FetchError, Fetcher};
use crate::llm::ExtractedFields;
use crate::robots::RobotsPolicy;
use crate::stats::{compute_stats, CorpusStats};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const IMAGES_DIR: &str = "images";
const JPEG_QUALITY: u8 = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub width: u32,
    pub height: u32,
    pub format: String,
}

#[derive(Debug, Error)]
pub enum ImageError {
    #[error(transparent)]
    Fetch(#[from] FetchError),
    #[error("{0} did not return a recognizable image")]
    NotAnImage(Url),
    #[error("cannot decode image: {0}")]
    DecodeFailed(String),
    #[error("cannot encode image: {0}")]
    EncodeFailed(String),
}

impl ImageError {
    /// Drop reason recorded when a record loses its image.
    pub fn reason(&self) -> &'static str {
        match self {
            ImageError::Fetch(FetchError::Disallowed(_)) => "robots",
            ImageError::Fetch(FetchError::OffOrigin(_)) => "off-origin",
            ImageError::Fetch(_) => "image-missing",
            ImageError::NotAnImage(_) => "not-an-image",
            ImageError::DecodeFailed(_) | ImageError::EncodeFailed(_) => "image-decode",
        }
    }
}

/// Fetch an image URL and check its magic bytes.
pub fn download_image(
    fetcher: &Fetcher,
    url: &Url,
    robots: &RobotsPolicy,
) -> Result<Vec<u8>, ImageError> {
    let fetched = fetcher.fetch(url, robots)?;
    if image::guess_format(&fetched.body).is_err() {
        return Err(ImageError::NotAnImage(url.clone()));
    }
    Ok(fetched.body)
}

/// Target size for an image whose longest side must not exceed `max_side`.
/// Aspect ratio is preserved and images are never enlarged.
pub fn fit_within(width: u32, height: u32, max_side: u32) -> (u32, u32) {
    let long = width.max(height);
    if long <= max_side || long == 0 {
        return (width, height);
    }
    let scale = |side: u32| -> u32 {
        ((u64::from(side) * u64::from(max_side) + u64::from(long) / 2) / u64::from(long)).max(1)
            as u32
    };
    if width >= height {
        (max_side, scale(height))
    } else {
        (scale(width), max_side)
    }
}

fn flatten_to_rgb(img: DynamicImage) -> RgbImage {
    if !img.color().has_alpha() {
        return img.into_rgb8();
    }
    let rgba = img.into_rgba8();
    let (w, h) = rgba.dimensions();
    RgbImage::from_fn(w, h, |x, y| {
        let p = rgba.get_pixel(x, y).0;
        let a = u32::from(p[3]);
        let over_white = |c: u8| ((u32::from(c) * a + 255 * (255 - a) + 127) / 255) as u8;
        image::Rgb([over_white(p[0]), over_white(p[1]), over_white(p[2])])
    })
}

/// Decode, flatten onto white, downscale so the longest side is at most
/// `max_side`, and re-encode. Encoder settings are fixed, so normalizing
/// an already normalized PNG reproduces it byte for byte.
pub fn normalize_image(
    bytes: &[u8],
    max_side: u32,
    format: ImageFormat,
) -> Result<(Vec<u8>, ImageMeta), ImageError> {
    let decoded =
        image::load_from_memory(bytes).map_err(|e| ImageError::DecodeFailed(e.to_string()))?;
    let mut rgb = flatten_to_rgb(decoded);
    let (w, h) = rgb.dimensions();
    let (tw, th) = fit_within(w, h, max_side);
    if (tw, th) != (w, h) {
        rgb = image::imageops::resize(&rgb, tw, th, FilterType::Lanczos3);
    }

    let mut out = Vec::new();
    let result = match format {
        ImageFormat::Png => PngEncoder::new_with_quality(
            Cursor::new(&mut out),
            CompressionType::Default,
            PngFilter::Adaptive,
        )
        .write_image(rgb.as_raw(), tw, th, image::ExtendedColorType::Rgb8),
        ImageFormat::Jpeg => JpegEncoder::new_with_quality(Cursor::new(&mut out), JPEG_QUALITY)
            .write_image(rgb.as_raw(), tw, th, image::ExtendedColorType::Rgb8),
    };
    result.map_err(|e| ImageError::EncodeFailed(e.to_string()))?;
    Ok((
        out,
        ImageMeta {
            width: tw,
            height: th,
            format: format.extension_name().to_string(),
        },
    ))
}

impl ImageFormat {
    fn extension_name(self) -> &'static str {
        match self {
            ImageFormat::Png => "png",
            ImageFormat::Jpeg => "jpeg",
        }
    }
}

/// Per-origin robots policies, fetched on first use.
struct RobotsCache<'a> {
    fetcher: &'a Fetcher,
    policies: Mutex<HashMap<String, RobotsPolicy>>,
}

impl RobotsCache<'_> {
    fn policy_for(&self, url: &Url) -> RobotsPolicy {
        let key = host_key(url);
        if let Some(p) = self.policies.lock().unwrap().get(&key) {
            return p.clone();
        }
        let origin = url.join("/").expect("http url has a root");
        let policy = match fetch_robots(self.fetcher, &origin) {
            Ok((policy, _)) => policy,
            Err(e) => {
                log::warn!("robots.txt for {origin} unreachable ({e}); assuming no restrictions");
                RobotsPolicy::allow_all(self.fetcher.user_agent()).with_origin(origin)
            }
        };
        self.policies
            .lock()
            .unwrap()
            .entry(key)
            .or_insert(policy)
            .clone()
    }
}

fn sample_id(record: &Record, index: usize) -> String {
    if index == 0 {
        record.record_id.to_string()
    } else {
        format!("{}-{index}", record.record_id)
    }
}

fn user_agent_for(config: &PipelineConfig, shop_id: &str) -> Option<String> {
    config
        .shops
        .iter()
        .find(|s| s.shop_id == shop_id)
        .map(|s| s.user_agent.clone())
}

/// Download, normalize and store the images of one record. Returns the
/// stored images, or the failure of the first image when none survived.
fn ingest_record(
    record: &Record,
    config: &PipelineConfig,
    fetcher: &Fetcher,
    robots: &RobotsCache<'_>,
    images_dir: &Path,
) -> Result<Vec<StoredImage>, ImageError> {
    let take = if config.keep_all_images {
        record.image_urls.len()
    } else {
        1
    };
    let mut stored = Vec::new();
    let mut first_error = None;
    for (i, url) in record.image_urls.iter().take(take).enumerate() {
        let outcome = download_image(fetcher, url, &robots.policy_for(url))
            .and_then(|bytes| normalize_image(&bytes, config.image_max_side, config.image_format));
        match outcome {
            Ok((bytes, meta)) => {
                let id = sample_id(record, i);
                let rel = format!("{IMAGES_DIR}/{id}.{}", config.image_format.extension());
                if let Err(e) = write_atomic(
                    &images_dir.join(format!("{id}.{}", config.image_format.extension())),
                    &bytes,
                ) {
                    return Err(ImageError::EncodeFailed(e.to_string()));
                }
                stored.push(StoredImage {
                    sample_id: id,
                    image_path: rel,
                    image_url: url.clone(),
                    meta,
                });
            }
            Err(e) => {
                log::info!("record {} image {url}: {e}", record.record_id);
                first_error.get_or_insert(e);
            }
        }
    }
    match (stored.is_empty(), first_error) {
        (true, Some(e)) => Err(e),
        _ => Ok(stored),
    }
}

/// Download stage: fetch, normalize and store images under
/// `{output_dir}/images/`. Records without a stored image are dropped.
pub fn download_stage(
    doc: &StageDocument,
    config: &PipelineConfig,
    fetcher: &Fetcher,
    output_dir: &Path,
) -> io::Result<StageDocument> {
    let images_dir = output_dir.join(IMAGES_DIR);
    fs::create_dir_all(&images_dir)?;
    let robots = RobotsCache {
        fetcher,
        policies: Mutex::new(HashMap::new()),
    };
    let n = doc.records.len();
    type Slot = Mutex<Option<Result<Vec<StoredImage>, ImageError>>>;
    let results: Vec<Slot> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = config.politeness.max_concurrent_hosts.max(1).min(n.max(1));

    // Each record is fetched with its shop's user agent; the host gate is
    // shared so per-host spacing holds across workers.
    let mut fetchers: HashMap<String, Fetcher> = HashMap::new();
    for r in &doc.records {
        if !fetchers.contains_key(&r.shop_id) {
            let ua = user_agent_for(config, &r.shop_id);
            let f = match ua {
                Some(ua) => fetcher
                    .for_user_agent(&ua)
                    .unwrap_or_else(|_| fetcher.clone()),
                None => fetcher.clone(),
            };
            fetchers.insert(r.shop_id.clone(), f);
        }
    }

    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let record = &doc.records[i];
                let out = ingest_record(
                    record,
                    config,
                    &fetchers[&record.shop_id],
                    &robots,
                    &images_dir,
                );
                *results[i].lock().unwrap() = Some(out);
            });
        }
    });

    let mut provenance = doc.provenance.clone();
    let mut records = Vec::new();
    for (record, slot) in doc.records.iter().zip(results) {
        match slot.into_inner().unwrap().expect("every record processed") {
            Ok(images) => {
                let mut r = record.clone();
                r.images = images;
                records.push(r);
            }
            Err(e) => provenance.record_drop(Stage::Download, e.reason()),
        }
    }
    Ok(StageDocument::new(Stage::Download, records, provenance))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSource {
    pub shop_id: String,
    pub source_url: Url,
    pub image_url: Url,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSample {
    pub sample_id: String,
    pub image_path: String,
    pub fields: ExtractedFields,
    pub source: SampleSource,
    pub image_meta: ImageMeta,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImagePolicy {
    pub resize: String,
    pub max_side: u32,
    pub format: ImageFormat,
    pub keep_all_images: bool,
}

impl ImagePolicy {
    pub fn from_config(config: &PipelineConfig) -> Self {
        ImagePolicy {
            resize: "max-side".into(),
            max_side: config.image_max_side,
            format: config.image_format,
            keep_all_images: config.keep_all_images,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub manifest_version: u32,
    pub pipeline_version: String,
    pub created_at: DateTime<Utc>,
    pub image_policy: ImagePolicy,
    pub samples: Vec<DatasetSample>,
    pub stats: CorpusStats,
    pub provenance: Provenance,
}

impl DatasetManifest {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// JSON with `created_at` blanked, for determinism comparisons.
    pub fn canonical_json(&self) -> String {
        let mut copy = self.clone();
        copy.created_at = DateTime::<Utc>::UNIX_EPOCH;
        copy.to_json()
    }
}

/// Write `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp: PathBuf = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// Build the manifest from a download document, remove image files no
/// sample references, and write `{output_dir}/manifest.json` atomically.
pub fn assemble_manifest(
    doc: &StageDocument,
    config: &PipelineConfig,
    output_dir: &Path,
) -> io::Result<DatasetManifest> {
    let mut samples = Vec::new();
    for record in &doc.records {
        let Some(fields) = &record.fields else {
            continue;
        };
        for img in &record.images {
            samples.push(DatasetSample {
                sample_id: img.sample_id.clone(),
                image_path: img.image_path.clone(),
                fields: fields.clone(),
                source: SampleSource {
                    shop_id: record.shop_id.clone(),
                    source_url: record.source_url.clone(),
                    image_url: img.image_url.clone(),
                },
                image_meta: img.meta.clone(),
            });
        }
    }
    samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));

    let images_dir = output_dir.join(IMAGES_DIR);
    fs::create_dir_all(&images_dir)?;
    let referenced: BTreeSet<&str> = samples.iter().map(|s| s.image_path.as_str()).collect();
    for entry in fs::read_dir(&images_dir)? {
        let entry = entry?;
        let rel = format!("{IMAGES_DIR}/{}", entry.file_name().to_string_lossy());
        if !referenced.contains(rel.as_str()) && entry.file_type()?.is_file() {
            fs::remove_file(entry.path())?;
        }
    }

    let manifest = DatasetManifest {
        manifest_version: MANIFEST_VERSION,
        pipeline_version: env!("CARGO_PKG_VERSION").to_string(),
        created_at: Utc::now(),
        image_policy: ImagePolicy::from_config(config),
        stats: compute_stats(&samples),
        samples,
        provenance: doc.provenance.clone(),
    };
    write_atomic(
        &output_dir.join(MANIFEST_FILE),
        manifest.to_json().as_bytes(),
    )?;
    Ok(manifest)
}

/// Problems found by [`validate_manifest`], keyed by sample id (or `"*"`
/// for manifest-wide issues).
pub fn validate_manifest(
    manifest: &DatasetManifest,
    base_dir: &Path,
) -> BTreeMap<String, Vec<String>> {
    let mut problems: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut push = |id: &str, msg: String| problems.entry(id.to_string()).or_default().push(msg);

    if manifest.manifest_version != MANIFEST_VERSION {
        push(
            "*",
            format!("unsupported manifest version {}", manifest.manifest_version),
        );
    }
    let mut seen = BTreeSet::new();
    for s in &manifest.samples {
        if !seen.insert(s.sample_id.as_str()) {
            push(&s.sample_id, "duplicate sample id".into());
        }
        for (name, value) in s.fields.named() {
            if value.is_empty() {
                push(&s.sample_id, format!("field {name} is empty"));
            }
            if value.chars().any(|c| c.is_ascii_digit()) {
                push(&s.sample_id, format!("field {name} contains a digit"));
            }
        }
        match image::open(base_dir.join(&s.image_path)) {
            Ok(img) => {
                if img.width().max(img.height()) > manifest.image_policy.max_side {
                    push(&s.sample_id, "image exceeds max side".into());
                }
                if (img.width(), img.height()) != (s.image_meta.width, s.image_meta.height) {
                    push(&s.sample_id, "image size differs from image_meta".into());
                }
            }
            Err(e) => push(
                &s.sample_id,
                format!("image {} unreadable: {e}", s.image_path),
            ),
        }
    }
    if let Ok(entries) = fs::read_dir(base_dir.join(IMAGES_DIR)) {
        let referenced: BTreeSet<&str> = manifest
            .samples
            .iter()
            .map(|s| s.image_path.as_str())
            .collect();
        for entry in entries.flatten() {
            let rel = format!("{IMAGES_DIR}/{}", entry.file_name().to_string_lossy());
            if !referenced.contains(rel.as_str()) {
                push("*", format!("orphan image file {rel}"));
            }
        }
    }
    problems
}

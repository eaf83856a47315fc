//! Stage orchestration. Each stage reads the previous stage's document and
//! writes its own as `{output_dir}/{stage}.json`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{ConfigError, PipelineConfig};
use crate::crawler::{crawl_stage, CrawlError};
use crate::document::{Stage, StageDocument, SCHEMA_VERSION};
use crate::fetch::{FetchError, Fetcher};
use crate::filter::{
    clean_record_text, dedup_records, drop_insufficient, postfilter_fields, remove_trade_names,
    FilterReport, TradeNames,
};
use crate::images::{assemble_manifest, download_stage, write_atomic, DatasetManifest};
use crate::llm::{extract_stage, ChatClient, FatalEndpoint, LlmClient, LlmError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage {stage} expects a {expected} document, got {found}")]
    SchemaMismatch {
        stage: Stage,
        expected: String,
        found: String,
    },
    #[error("stage {stage} needs the {predecessor} document ({path})")]
    MissingInput {
        stage: Stage,
        predecessor: Stage,
        path: PathBuf,
    },
    #[error("stage {stage}: the {predecessor} document has no records")]
    EmptyInput { stage: Stage, predecessor: Stage },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Crawl(#[from] CrawlError),
    #[error(transparent)]
    Llm(#[from] FatalEndpoint),
    #[error("cannot create LLM client: {0}")]
    LlmClient(LlmError),
    #[error("cannot create HTTP client: {0}")]
    Http(#[from] FetchError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: invalid stage document: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Prefilter: sanitize and strip dimensions, remove trade names, drop
/// duplicates, then drop records with too little text.
pub fn prefilter_stage(doc: &StageDocument, config: &PipelineConfig) -> StageDocument {
    let trade_names = TradeNames::new(&config.normalized_trade_names());
    let mut report = FilterReport::default();
    let mut records = Vec::with_capacity(doc.records.len());
    for record in &doc.records {
        let mut r = record.clone();
        report.dimension_tokens_removed += clean_record_text(&mut r) as u64;
        let (r, hits) = remove_trade_names(r, &trade_names);
        report.trade_name_hits += hits as u64;
        records.push(r);
    }
    let (records, dup) = dedup_records(records);
    report.merge(dup);
    let (records, insufficient) = drop_insufficient(records, &config.filter);
    report.merge(insufficient);

    let mut provenance = doc.provenance.clone();
    provenance.add_drops(Stage::Prefilter, "duplicate", report.dropped_duplicates);
    provenance.add_drops(
        Stage::Prefilter,
        "insufficient",
        report.dropped_insufficient,
    );
    provenance
        .filter
        .get_or_insert_with(FilterReport::default)
        .merge(report);
    StageDocument::new(Stage::Prefilter, records, provenance)
}

/// Postfilter: clean and lowercase the extracted fields; records whose
/// fields end up empty or over the word limits are dropped.
pub fn postfilter_stage(doc: &StageDocument) -> StageDocument {
    let mut provenance = doc.provenance.clone();
    let mut records = Vec::with_capacity(doc.records.len());
    for record in &doc.records {
        let Some(fields) = record.fields.clone() else {
            provenance.record_drop(Stage::Postfilter, "missing-fields");
            continue;
        };
        match postfilter_fields(fields) {
            Ok(fields) => match fields.check_bounds() {
                Ok(()) => {
                    let mut r = record.clone();
                    r.fields = Some(fields);
                    records.push(r);
                }
                Err(d) => provenance.record_drop(Stage::Postfilter, d.reason.as_str()),
            },
            Err(e) => {
                log::debug!("record {}: {e}", record.record_id);
                provenance.record_drop(Stage::Postfilter, "field-emptied");
            }
        }
    }
    StageDocument::new(Stage::Postfilter, records, provenance)
}

/// Counts reported after a full run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub records_per_stage: Vec<(Stage, usize)>,
    pub samples: usize,
    pub manifest_path: PathBuf,
}

pub struct Pipeline {
    config: PipelineConfig,
    fetcher: Fetcher,
    chat: Option<Box<dyn ChatClient + Send>>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let ua = config
            .shops
            .first()
            .map(|s| s.user_agent.clone())
            .unwrap_or_else(|| concat!("catalog-dataset/", env!("CARGO_PKG_VERSION")).into());
        let fetcher = Fetcher::new(&config.politeness, &ua)?;
        Ok(Pipeline {
            config,
            fetcher,
            chat: None,
        })
    }

    /// Use `client` instead of the configured HTTP endpoint for extraction.
    pub fn with_chat_client(mut self, client: Box<dyn ChatClient + Send>) -> Self {
        self.chat = Some(client);
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn output_dir(&self) -> &Path {
        &self.config.output_dir
    }

    pub fn stage_path(&self, stage: Stage) -> PathBuf {
        self.config.output_dir.join(stage.file_name())
    }

    fn check_input<'a>(
        &self,
        prev: Option<&'a StageDocument>,
        stage: Stage,
    ) -> Result<Option<&'a StageDocument>, PipelineError> {
        match (stage.predecessor(), prev) {
            (None, None) => Ok(None),
            (None, Some(doc)) => Err(PipelineError::SchemaMismatch {
                stage,
                expected: "no".into(),
                found: doc.stage_name.to_string(),
            }),
            (Some(pred), None) => Err(PipelineError::MissingInput {
                stage,
                predecessor: pred,
                path: self.stage_path(pred),
            }),
            (Some(pred), Some(doc)) => {
                if doc.schema_version != SCHEMA_VERSION {
                    return Err(PipelineError::SchemaMismatch {
                        stage,
                        expected: format!("schema version {SCHEMA_VERSION}"),
                        found: format!("schema version {}", doc.schema_version),
                    });
                }
                if doc.stage_name != pred {
                    return Err(PipelineError::SchemaMismatch {
                        stage,
                        expected: pred.to_string(),
                        found: doc.stage_name.to_string(),
                    });
                }
                if doc.records.is_empty() {
                    return Err(PipelineError::EmptyInput {
                        stage,
                        predecessor: pred,
                    });
                }
                Ok(Some(doc))
            }
        }
    }

    /// Run one stage on the previous stage's document. The input is not
    /// modified; the download stage also writes images under `output_dir`.
    pub fn run_stage(
        &self,
        prev: Option<&StageDocument>,
        stage: Stage,
    ) -> Result<StageDocument, PipelineError> {
        self.run_stage_for(prev, stage, None)
    }

    /// Like [`Pipeline::run_stage`]; `only_shop` limits the crawl to one shop.
    pub fn run_stage_for(
        &self,
        prev: Option<&StageDocument>,
        stage: Stage,
        only_shop: Option<&str>,
    ) -> Result<StageDocument, PipelineError> {
        let input = self.check_input(prev, stage)?;
        match (stage, input) {
            (Stage::Crawl, _) => {
                if let Some(id) = only_shop {
                    if !self.config.shops.iter().any(|s| s.shop_id == id) {
                        return Err(ConfigError::Invalid(format!("unknown shop {id:?}")).into());
                    }
                }
                Ok(crawl_stage(&self.config, &self.fetcher, only_shop)?)
            }
            (Stage::Prefilter, Some(doc)) => Ok(prefilter_stage(doc, &self.config)),
            (Stage::Extract, Some(doc)) => {
                let doc = match &self.chat {
                    Some(client) => extract_stage(doc, &self.config.llm, client.as_ref())?,
                    None => {
                        let client =
                            LlmClient::new(&self.config.llm).map_err(PipelineError::LlmClient)?;
                        extract_stage(doc, &self.config.llm, &client)?
                    }
                };
                Ok(doc)
            }
            (Stage::Postfilter, Some(doc)) => Ok(postfilter_stage(doc)),
            (Stage::Download, Some(doc)) => {
                let dir = &self.config.output_dir;
                fs::create_dir_all(dir).map_err(io_err(dir))?;
                download_stage(doc, &self.config, &self.fetcher, dir).map_err(io_err(dir))
            }
            (_, None) => unreachable!("check_input requires a predecessor for {stage}"),
        }
    }

    /// Read a persisted stage document.
    pub fn load_document(path: &Path) -> Result<StageDocument, PipelineError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        StageDocument::from_json(&text).map_err(|source| PipelineError::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Load the persisted document of `stage` from `output_dir`.
    pub fn load_stage(&self, stage: Stage) -> Result<StageDocument, PipelineError> {
        let path = self.stage_path(stage);
        if !path.exists() {
            let next = Stage::ALL
                .iter()
                .copied()
                .find(|s| s.predecessor() == Some(stage))
                .unwrap_or(stage);
            return Err(PipelineError::MissingInput {
                stage: next,
                predecessor: stage,
                path,
            });
        }
        Self::load_document(&path)
    }

    /// Write `doc` to `{output_dir}/{stage}.json`.
    pub fn persist(&self, doc: &StageDocument) -> Result<PathBuf, PipelineError> {
        let dir = &self.config.output_dir;
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = self.stage_path(doc.stage_name);
        write_atomic(&path, doc.to_json().as_bytes()).map_err(io_err(&path))?;
        Ok(path)
    }

    pub fn assemble_manifest(&self, doc: &StageDocument) -> Result<DatasetManifest, PipelineError> {
        let dir = &self.config.output_dir;
        assemble_manifest(doc, &self.config, dir).map_err(io_err(dir))
    }

    /// Run every stage in order, persisting each document, then write the
    /// manifest.
    pub fn run_all(&self, only_shop: Option<&str>) -> Result<RunSummary, PipelineError> {
        let mut prev: Option<StageDocument> = None;
        let mut counts = Vec::new();
        for stage in Stage::ALL {
            log::info!("running stage {stage}");
            let doc = self.run_stage_for(prev.as_ref(), stage, only_shop)?;
            self.persist(&doc)?;
            log::info!("stage {stage}: {} records", doc.records.len());
            counts.push((stage, doc.records.len()));
            prev = Some(doc);
        }
        let manifest = self.assemble_manifest(prev.as_ref().expect("download ran"))?;
        Ok(RunSummary {
            records_per_stage: counts,
            samples: manifest.samples.len(),
            manifest_path: self.config.output_dir.join(crate::images::MANIFEST_FILE),
        })
    }
}

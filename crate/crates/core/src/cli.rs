//! Command-line interface.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::PipelineConfig;
use crate::document::{validate_document, Stage};
use crate::images::{validate_manifest, DatasetManifest};
use crate::llm::ExtractedFields;
use crate::pipeline::{Pipeline, PipelineError};
use crate::stats::{default_stopwords, occurrences_csv, word_occurrences};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_FATAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "catalog-dataset",
    version,
    about = "Build a language-image dataset from industrial web catalogs",
    after_help = "The LLM bearer token is read from the environment variable named by \
                  llm.token_env in the config (default CATALOG_LLM_TOKEN)."
)]
pub struct Cli {
    /// More log output on stderr (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct StageArgs {
    /// Pipeline config file (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Predecessor stage document; defaults to `{output_dir}/{previous}.json`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Override the config's output_dir.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CrawlArgs {
    /// Pipeline config file (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Override the config's output_dir.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Crawl only this shop.
    #[arg(long)]
    pub shop: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read robots.txt and sitemaps, fetch product pages, write crawl.json.
    Crawl(CrawlArgs),
    /// Sanitize, strip dimensions and trade names, deduplicate; writes prefilter.json.
    Prefilter(StageArgs),
    /// Query the LLM endpoint for the five fields; writes extract.json.
    Extract(StageArgs),
    /// Clean and lowercase extracted fields; writes postfilter.json.
    Postfilter(StageArgs),
    /// Download and resize images; writes download.json and manifest.json.
    Download(StageArgs),
    /// Run every stage in order.
    RunAll(CrawlArgs),
    /// Check a stage document (--input) or a manifest (--manifest).
    Validate {
        #[arg(
            long,
            conflicts_with = "manifest",
            required_unless_present = "manifest"
        )]
        input: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Print corpus statistics as JSON, or a top-k word table as CSV with --field.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        /// Field to rank words for (label_long, label_short, description, material, material_finish).
        #[arg(long)]
        field: Option<String>,
        /// Number of CSV rows.
        #[arg(long, default_value_t = 40)]
        top: usize,
        /// Write to this file instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn load_config(path: &Path, output_dir: Option<&PathBuf>) -> Result<PipelineConfig, PipelineError> {
    let mut config = PipelineConfig::load(path)?;
    if let Some(dir) = output_dir {
        config.output_dir = dir.clone();
    }
    Ok(config)
}

fn run_single(stage: Stage, args: &StageArgs) -> Result<(), PipelineError> {
    let config = load_config(&args.config, args.output_dir.as_ref())?;
    let pipeline = Pipeline::new(config)?;
    let pred = stage
        .predecessor()
        .expect("only non-crawl stages take StageArgs");
    let input = match &args.input {
        Some(path) if !path.exists() => {
            return Err(PipelineError::MissingInput {
                stage,
                predecessor: pred,
                path: path.clone(),
            })
        }
        Some(path) => Pipeline::load_document(path)?,
        None => pipeline.load_stage(pred)?,
    };
    let doc = pipeline.run_stage(Some(&input), stage)?;
    let path = pipeline.persist(&doc)?;
    eprintln!(
        "{stage}: {} records -> {}",
        doc.records.len(),
        path.display()
    );
    if stage == Stage::Download {
        let manifest = pipeline.assemble_manifest(&doc)?;
        eprintln!("manifest: {} samples", manifest.samples.len());
    }
    Ok(())
}

fn emit(text: &str, output: Option<&PathBuf>) -> Result<(), String> {
    match output {
        Some(path) => fs::write(path, text).map_err(|e| format!("{}: {e}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn validate(input: Option<&PathBuf>, manifest: Option<&PathBuf>) -> Result<i32, String> {
    if let Some(path) = manifest {
        let m = DatasetManifest::load(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let problems = validate_manifest(&m, base);
        println!(
            "{}",
            serde_json::to_string_pretty(&problems).expect("map serializes")
        );
        return Ok(if problems.is_empty() {
            EXIT_OK
        } else {
            EXIT_INVALID
        });
    }
    let path = input.expect("clap requires --input or --manifest");
    let doc = Pipeline::load_document(path).map_err(|e| e.to_string())?;
    let report = validate_document(&doc);
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    Ok(if report.is_valid() {
        EXIT_OK
    } else {
        EXIT_INVALID
    })
}

fn stats(
    manifest: &Path,
    field: Option<&str>,
    top: usize,
    output: Option<&PathBuf>,
) -> Result<i32, String> {
    let m = DatasetManifest::load(manifest).map_err(|e| format!("{}: {e}", manifest.display()))?;
    match field {
        Some(f) if !ExtractedFields::NAMES.contains(&f) => Err(format!(
            "unknown field {f:?}; expected one of {}",
            ExtractedFields::NAMES.join(", ")
        )),
        Some(f) => {
            let ranked = word_occurrences(&m, f, &default_stopwords());
            emit(&occurrences_csv(&ranked, top), output)?;
            Ok(EXIT_OK)
        }
        None => {
            let stats = crate::stats::compute_stats(&m.samples);
            let mut text = serde_json::to_string_pretty(&stats).expect("stats serialize");
            text.push('\n');
            emit(&text, output)?;
            Ok(EXIT_OK)
        }
    }
}

/// Execute a parsed command and return the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let result: Result<i32, String> = match &cli.command {
        Command::Crawl(a) | Command::RunAll(a) => {
            let run = || -> Result<(), PipelineError> {
                let pipeline = Pipeline::new(load_config(&a.config, a.output_dir.as_ref())?)?;
                if matches!(cli.command, Command::RunAll(_)) {
                    let summary = pipeline.run_all(a.shop.as_deref())?;
                    for (stage, n) in &summary.records_per_stage {
                        eprintln!("{stage}: {n} records");
                    }
                    eprintln!(
                        "manifest: {} samples -> {}",
                        summary.samples,
                        summary.manifest_path.display()
                    );
                } else {
                    let doc = pipeline.run_stage_for(None, Stage::Crawl, a.shop.as_deref())?;
                    let path = pipeline.persist(&doc)?;
                    eprintln!("crawl: {} records -> {}", doc.records.len(), path.display());
                }
                Ok(())
            };
            run().map(|()| EXIT_OK).map_err(|e| e.to_string())
        }
        Command::Prefilter(a) => run_single(Stage::Prefilter, a)
            .map(|()| EXIT_OK)
            .map_err(|e| e.to_string()),
        Command::Extract(a) => run_single(Stage::Extract, a)
            .map(|()| EXIT_OK)
            .map_err(|e| e.to_string()),
        Command::Postfilter(a) => run_single(Stage::Postfilter, a)
            .map(|()| EXIT_OK)
            .map_err(|e| e.to_string()),
        Command::Download(a) => run_single(Stage::Download, a)
            .map(|()| EXIT_OK)
            .map_err(|e| e.to_string()),
        Command::Validate { input, manifest } => validate(input.as_ref(), manifest.as_ref()),
        Command::Stats {
            manifest,
            field,
            top,
            output,
        } => stats(manifest, field.as_deref(), *top, output.as_ref()),
    };
    match result {
        Ok(code) => code,
        Err(message) => {
            log::error!("{message}");
            eprintln!("error: {message}");
            EXIT_FATAL
        }
    }
}

/// Parse `args` (including the program name) and run. Usage errors exit
/// with code 2, like fatal errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_FATAL
            } else {
                EXIT_OK
            }
        }
    }
}

pub fn log_level(verbose: u8) -> log::LevelFilter {
    match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    }
}

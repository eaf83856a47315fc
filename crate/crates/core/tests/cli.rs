mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_catalog-dataset"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CATALOG_LOG")
        .output()
        .unwrap()
}

#[test]
fn run_all_then_validate_and_stats() {
    let env = common::FixtureEnv::start();
    let cfg = env.config_path.to_str().unwrap();
    let out = env.output_dir();
    let out_s = out.to_str().unwrap();

    let run = bin(
        &["run-all", "--config", cfg, "--output-dir", out_s],
        env.dir.path(),
    );
    assert_eq!(
        run.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    for stage in ["crawl", "prefilter", "extract", "postfilter", "download"] {
        assert!(out.join(format!("{stage}.json")).is_file(), "{stage}.json");
    }
    let manifest = out.join("manifest.json");
    let manifest_s = manifest.to_str().unwrap();

    let v = bin(&["validate", "--manifest", manifest_s], env.dir.path());
    assert_eq!(
        v.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&v.stdout)
    );
    let crawl = out.join("crawl.json");
    let v = bin(
        &["validate", "--input", crawl.to_str().unwrap()],
        env.dir.path(),
    );
    assert_eq!(v.status.code(), Some(0));

    let csv_path = env.dir.path().join("short.csv");
    let s = bin(
        &[
            "stats",
            "--manifest",
            manifest_s,
            "--field",
            "label_short",
            "--output",
            csv_path.to_str().unwrap(),
        ],
        env.dir.path(),
    );
    assert_eq!(s.status.code(), Some(0));
    let csv = fs::read_to_string(&csv_path).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "word,count");
    assert!(lines.len() > 1 && lines.len() <= 41);

    let s = bin(&["stats", "--manifest", manifest_s], env.dir.path());
    assert_eq!(s.status.code(), Some(0));
    let stats: serde_json::Value = serde_json::from_slice(&s.stdout).unwrap();
    assert_eq!(stats["sample_count"], common::EXPECTED_SAMPLES);

    let bad = bin(
        &["stats", "--manifest", manifest_s, "--field", "colour"],
        env.dir.path(),
    );
    assert_eq!(bad.status.code(), Some(2));

    // a broken manifest is reported with exit code 1
    let mut m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    m["samples"][0]["fields"]["material"] = "steel 42".into();
    fs::write(&manifest, m.to_string()).unwrap();
    let v = bin(&["validate", "--manifest", manifest_s], env.dir.path());
    assert_eq!(v.status.code(), Some(1));
}

#[test]
fn stage_commands_chain_through_files() {
    let env = common::FixtureEnv::start();
    let cfg = env.config_path.to_str().unwrap();
    let out = env.output_dir();
    let out_s = out.to_str().unwrap();
    let dir = env.dir.path();

    let missing = bin(&["extract", "--config", cfg, "--output-dir", out_s], dir);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("prefilter"));

    for cmd in ["crawl", "prefilter", "extract", "postfilter", "download"] {
        let o = bin(&[cmd, "--config", cfg, "--output-dir", out_s], dir);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{cmd}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    assert!(out.join("manifest.json").is_file());

    // --input takes an explicit predecessor document
    let crawl = out.join("crawl.json");
    let other = dir.join("other");
    let o = bin(
        &[
            "prefilter",
            "--config",
            cfg,
            "--output-dir",
            other.to_str().unwrap(),
            "--input",
            crawl.to_str().unwrap(),
        ],
        dir,
    );
    assert_eq!(o.status.code(), Some(0));
    assert!(other.join("prefilter.json").is_file());

    let wrong = bin(
        &[
            "extract",
            "--config",
            cfg,
            "--output-dir",
            out_s,
            "--input",
            crawl.to_str().unwrap(),
        ],
        dir,
    );
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bin(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(bin(&["validate"], dir.path()).status.code(), Some(2));
    assert_eq!(bin(&["--help"], dir.path()).status.code(), Some(0));
    let o = bin(&["crawl", "--config", "nope.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

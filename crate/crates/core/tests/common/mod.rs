#![allow(dead_code)]

use std::path::PathBuf;

use smokegate::backends::{load_fixture_backend, BackendSuite};
use smokegate::evaluation::{load_manifest, ManifestEntry};
use smokegate::pipeline::{run_batch, PipelineConfig, Strategy};

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

pub fn golden_suite() -> BackendSuite {
    load_fixture_backend(&golden_dir().join("fixture.jsonl")).expect("golden fixture loads")
}

pub fn golden_manifest() -> Vec<ManifestEntry> {
    load_manifest(&golden_dir().join("manifest.csv")).expect("golden manifest loads")
}

pub fn golden_paths() -> Vec<PathBuf> {
    golden_manifest()
        .into_iter()
        .map(|e| e.image_path)
        .collect()
}

pub fn config(strategy: Strategy) -> PipelineConfig {
    PipelineConfig {
        strategy,
        ..PipelineConfig::default()
    }
}

/// Serialized results of the golden set, one JSON line per image.
pub fn golden_jsonl(strategy: Strategy, jobs: usize) -> String {
    let out = run_batch(&golden_paths(), &golden_suite(), &config(strategy), jobs);
    assert!(
        out.errors.is_empty(),
        "golden images decode: {:?}",
        out.errors
    );
    out.results
        .iter()
        .map(|r| r.to_json_line() + "\n")
        .collect()
}

pub const ROI_VERDICTS: [u8; 10] = [1, 0, 1, 0, 1, 1, 0, 1, 0, 1];
pub const RAW_VERDICTS: [u8; 10] = [1, 1, 0, 1, 0, 0, 0, 1, 0, 1];

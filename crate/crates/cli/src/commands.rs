use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use smokegate::backends::{load_fixture_backend, BackendSuite};
use smokegate::evaluation::{load_manifest, split_train_test, write_manifest, EvalReport};
use smokegate::imaging::{self, image_id_for_path};
use smokegate::pipeline::{render_result, run_batch, run_pipeline};

use crate::config::{BackendSource, CliConfig};
use crate::error::CliError;

pub fn load_backend(source: Option<&BackendSource>) -> Result<BackendSuite, CliError> {
    let source =
        source.ok_or_else(|| CliError::Config("no backend selected (use --backend)".into()))?;
    match source {
        BackendSource::Fixture(path) => {
            load_fixture_backend(path).map_err(|e| CliError::Backend(e.to_string()))
        }
        BackendSource::Model(dir) => load_model_backend(dir),
    }
}

#[cfg(feature = "onnx")]
fn load_model_backend(dir: &Path) -> Result<BackendSuite, CliError> {
    smokegate::backends::onnx::load_model_backend(dir).map_err(|e| CliError::Backend(e.to_string()))
}

#[cfg(not(feature = "onnx"))]
fn load_model_backend(dir: &Path) -> Result<BackendSuite, CliError> {
    Err(CliError::Backend(format!(
        "cannot load model from {}: this build has no model support (rebuild with --features onnx)",
        dir.display()
    )))
}

fn out_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |e| CliError::Output(format!("cannot write {}: {e}", path.display()))
}

fn print_line(line: &str) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    writeln!(out, "{line}").map_err(|e| CliError::Output(format!("stdout: {e}")))
}

/// Prints one result line per decodable image. Any decode failure makes the
/// command fail with the decode exit code once the rest have been printed.
pub fn classify(images: &[PathBuf], cfg: &CliConfig) -> Result<(), CliError> {
    let suite = load_backend(cfg.backend.as_ref())?;
    let outcome = run_batch(images, &suite, &cfg.pipeline, cfg.jobs);
    for r in &outcome.results {
        print_line(&r.to_json_line())?;
    }
    match outcome.errors.as_slice() {
        [] => Ok(()),
        errs => Err(CliError::Decode(
            errs.iter()
                .map(|e| e.to_string())
                .collect::<Vec<_>>()
                .join("\n"),
        )),
    }
}

pub fn detect(image: &Path, annotated: Option<&Path>, cfg: &CliConfig) -> Result<(), CliError> {
    let suite = load_backend(cfg.backend.as_ref())?;
    let img = imaging::decode(image).map_err(|e| CliError::Decode(e.to_string()))?;
    let result = run_pipeline(&img, &suite, &cfg.pipeline);

    let target = match annotated {
        Some(p) => p.to_path_buf(),
        None => {
            fs::create_dir_all(&cfg.out).map_err(out_err(&cfg.out))?;
            cfg.out
                .join(format!("{}.annotated.png", image_id_for_path(image)))
        }
    };
    imaging::save_png(&render_result(&img, &result), &target)
        .map_err(|e| CliError::Output(e.to_string()))?;
    print_line(&result.to_json_line())
}

/// Runs the batch over the test split (or everything with `no_split`),
/// prints the table to stderr and the report JSON to stdout, and saves
/// `results.jsonl` and `report.json` under the output directory.
pub fn evaluate(manifest: &Path, cfg: &CliConfig) -> Result<(), CliError> {
    let entries = load_manifest(manifest).map_err(|e| CliError::Manifest(e.to_string()))?;
    let entries = if cfg.no_split {
        entries
    } else {
        let split = split_train_test(&entries, cfg.ratio, cfg.seed)
            .map_err(|e| CliError::Manifest(e.to_string()))?;
        for w in &split.warnings {
            eprintln!("warning: {w}");
        }
        split.test
    };
    if entries.is_empty() {
        eprintln!("warning: no images to evaluate");
    }
    let suite = load_backend(cfg.backend.as_ref())?;

    let paths: Vec<&Path> = entries.iter().map(|e| e.image_path.as_path()).collect();
    let outcome = run_batch(&paths, &suite, &cfg.pipeline, cfg.jobs);
    for e in &outcome.errors {
        eprintln!("warning: skipped {e}");
    }
    let report = EvalReport::build(&outcome.results, &entries, outcome.errors.len() as u64)
        .map_err(|e| CliError::Manifest(e.to_string()))?;

    fs::create_dir_all(&cfg.out).map_err(out_err(&cfg.out))?;
    let results: String = outcome
        .results
        .iter()
        .map(|r| r.to_json_line() + "\n")
        .collect();
    let results_path = cfg.out.join("results.jsonl");
    fs::write(&results_path, results).map_err(out_err(&results_path))?;
    let report_path = cfg.out.join("report.json");
    fs::write(&report_path, report.to_json() + "\n").map_err(out_err(&report_path))?;

    eprint!("{}", report.to_table());
    print_line(&report.to_json())
}

/// Writes `train.csv` and `test.csv` into the output directory.
pub fn split(manifest: &Path, cfg: &CliConfig) -> Result<(), CliError> {
    let entries = load_manifest(manifest).map_err(|e| CliError::Manifest(e.to_string()))?;
    let split = split_train_test(&entries, cfg.ratio, cfg.seed)
        .map_err(|e| CliError::Manifest(e.to_string()))?;
    for w in &split.warnings {
        eprintln!("warning: {w}");
    }
    fs::create_dir_all(&cfg.out).map_err(out_err(&cfg.out))?;
    for (name, part) in [("train.csv", &split.train), ("test.csv", &split.test)] {
        let path = cfg.out.join(name);
        write_manifest(&path, part).map_err(|e| CliError::Output(e.to_string()))?;
    }
    eprintln!(
        "train: {} images, test: {} images",
        split.train.len(),
        split.test.len()
    );
    Ok(())
}

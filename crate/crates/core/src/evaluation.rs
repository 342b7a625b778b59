//! Dataset manifests, train/test splitting and classification metrics.
//!
//! Smoker is the positive class everywhere in this module.

use std::collections::{HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::image_id_for_path;
use crate::label::ClassLabel;
use crate::pipeline::{PipelineResult, ResultRecord};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest parse error on line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("unknown label '{label}' ({location})")]
    UnknownLabel { label: String, location: String },
    #[error("no ground truth for image '{0}'")]
    MissingTruth(String),
    #[error("image id '{0}' appears more than once")]
    DuplicateImage(String),
    #[error("{0} is undefined: its denominator is zero")]
    UndefinedMetric(&'static str),
    #[error("split ratio must lie strictly between 0 and 1, got {0}")]
    InvalidRatio(f64),
}

/// One labelled image of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ManifestEntry {
    pub image_path: PathBuf,
    pub ground_truth: ClassLabel,
}

impl ManifestEntry {
    /// Same id the pipeline assigns to the decoded image.
    pub fn image_id(&self) -> String {
        image_id_for_path(&self.image_path)
    }
}

/// Accepts `0`/`1`, `nonsmoker`/`smoker` and the dataset folder names
/// `notsmoking`/`smoking`, case-insensitively.
pub fn parse_label(s: &str) -> Option<ClassLabel> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "smoker" | "smoking" => Some(ClassLabel::Smoker),
        "0" | "nonsmoker" | "notsmoking" => Some(ClassLabel::NonSmoker),
        _ => None,
    }
}

/// Loads a manifest from either a CSV file with a `path,label` header or a
/// directory with one sub-folder per class (`smoking/`, `notsmoking/`).
///
/// Relative CSV paths are resolved against the CSV's directory. Folder
/// entries are sorted by path.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>, EvalError> {
    let entries = if path.is_dir() {
        load_folder_manifest(path)?
    } else {
        load_csv_manifest(path)?
    };
    let mut seen = HashSet::new();
    for e in &entries {
        let id = e.image_id();
        if !seen.insert(id.clone()) {
            return Err(EvalError::DuplicateImage(id));
        }
    }
    Ok(entries)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn load_csv_manifest(path: &Path) -> Result<Vec<ManifestEntry>, EvalError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| EvalError::Parse {
            line: 1,
            detail: e.to_string(),
        })?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| EvalError::Parse {
                line: 1,
                detail: format!("missing '{name}' column"),
            })
    };
    let (path_col, label_col) = (col("path")?, col("label")?);

    let mut entries = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| EvalError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            detail: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let raw_path = row.get(path_col).unwrap_or("");
        if raw_path.is_empty() {
            return Err(EvalError::Parse {
                line,
                detail: "empty path".into(),
            });
        }
        let raw_label = row.get(label_col).unwrap_or("");
        let ground_truth = parse_label(raw_label).ok_or_else(|| EvalError::UnknownLabel {
            label: raw_label.to_string(),
            location: format!("{} line {line}", path.display()),
        })?;
        entries.push(ManifestEntry {
            image_path: base.join(raw_path),
            ground_truth,
        });
    }
    Ok(entries)
}

fn load_folder_manifest(root: &Path) -> Result<Vec<ManifestEntry>, EvalError> {
    let mut class_dirs = Vec::new();
    for item in fs::read_dir(root).map_err(io_err(root))? {
        let item = item.map_err(io_err(root))?;
        let p = item.path();
        if !p.is_dir() {
            continue;
        }
        let name = item.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') {
            continue;
        }
        let label = parse_label(&name).ok_or_else(|| EvalError::UnknownLabel {
            label: name.clone(),
            location: format!("folder {}", p.display()),
        })?;
        class_dirs.push((p, label));
    }
    class_dirs.sort();

    let mut entries = Vec::new();
    for (dir, label) in class_dirs {
        let mut files = Vec::new();
        for item in walkdir::WalkDir::new(&dir).sort_by_file_name() {
            let item = item.map_err(|e| EvalError::Io {
                path: dir.display().to_string(),
                source: e.into(),
            })?;
            let is_image = item
                .path()
                .extension()
                .map(|x| x.to_string_lossy().to_ascii_lowercase())
                .is_some_and(|x| IMAGE_EXTENSIONS.contains(&x.as_str()));
            if item.file_type().is_file() && is_image {
                files.push(item.into_path());
            }
        }
        entries.extend(files.into_iter().map(|image_path| ManifestEntry {
            image_path,
            ground_truth: label,
        }));
    }
    Ok(entries)
}

/// Writes a `path,label` CSV with absolute paths and 0/1 labels.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), EvalError> {
    let mut out = String::from("path,label\n");
    for e in entries {
        let abs = std::path::absolute(&e.image_path).unwrap_or_else(|_| e.image_path.clone());
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            abs.to_string_lossy().as_ref(),
            &e.ground_truth.as_u8().to_string(),
        ])
        .expect("writing to memory");
        let bytes = w.into_inner().expect("flushing to memory");
        out.push_str(&String::from_utf8_lossy(&bytes));
    }
    fs::write(path, out).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
    pub warnings: Vec<String>,
}

/// Seeded stratified split.
///
/// The train set has `round(ratio * N)` entries; each class contributes
/// `floor(ratio * n_class)` plus at most one more, the extra slots going to
/// the classes with the largest fractional remainders. Which entries land in
/// train is decided by a seeded shuffle; both outputs keep manifest order.
pub fn split_train_test(
    entries: &[ManifestEntry],
    ratio: f64,
    seed: u64,
) -> Result<Split, EvalError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(EvalError::InvalidRatio(ratio));
    }
    let classes = [ClassLabel::NonSmoker, ClassLabel::Smoker];
    let members: Vec<Vec<usize>> = classes
        .iter()
        .map(|c| {
            (0..entries.len())
                .filter(|&i| entries[i].ground_truth == *c)
                .collect()
        })
        .collect();

    let n = entries.len();
    let target = (ratio * n as f64).round() as usize;
    let mut quota: Vec<usize> = members
        .iter()
        .map(|m| (ratio * m.len() as f64).floor() as usize)
        .collect();
    let mut by_remainder: Vec<usize> = (0..classes.len()).collect();
    by_remainder.sort_by(|&a, &b| {
        let frac = |c: usize| ratio * members[c].len() as f64 - quota[c] as f64;
        frac(b).total_cmp(&frac(a)).then(a.cmp(&b))
    });
    let mut missing = target.saturating_sub(quota.iter().sum());
    for &c in &by_remainder {
        if missing == 0 {
            break;
        }
        if quota[c] < members[c].len() {
            quota[c] += 1;
            missing -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; n];
    for (m, q) in members.iter().zip(&quota) {
        let mut shuffled = m.clone();
        shuffled.shuffle(&mut rng);
        for &i in shuffled.iter().take(*q) {
            in_train[i] = true;
        }
    }

    let (train, test): (Vec<_>, Vec<_>) =
        entries.iter().cloned().zip(in_train).partition(|(_, t)| *t);
    let train: Vec<ManifestEntry> = train.into_iter().map(|(e, _)| e).collect();
    let test: Vec<ManifestEntry> = test.into_iter().map(|(e, _)| e).collect();

    let mut warnings = Vec::new();
    if test.is_empty() {
        warnings.push(format!("test split is empty ({n} entries, ratio {ratio})"));
    }
    if train.is_empty() {
        warnings.push(format!("train split is empty ({n} entries, ratio {ratio})"));
    }
    Ok(Split {
        train,
        test,
        warnings,
    })
}

/// What evaluation needs from a per-image pipeline outcome.
pub trait ImageOutcome {
    fn image_id(&self) -> &str;
    fn verdict(&self) -> ClassLabel;
    fn detect_calls(&self) -> u32;
    fn fallback_fired(&self) -> bool;
    fn empty_proposals(&self) -> bool;
}

impl ImageOutcome for PipelineResult {
    fn image_id(&self) -> &str {
        &self.image_id
    }
    fn verdict(&self) -> ClassLabel {
        self.verdict
    }
    fn detect_calls(&self) -> u32 {
        self.counters.detect_calls
    }
    fn fallback_fired(&self) -> bool {
        self.fallback_fired
    }
    fn empty_proposals(&self) -> bool {
        self.empty_proposals
    }
}

impl ImageOutcome for ResultRecord {
    fn image_id(&self) -> &str {
        &self.image_id
    }
    fn verdict(&self) -> ClassLabel {
        self.verdict
    }
    fn detect_calls(&self) -> u32 {
        self.counters.detect_calls
    }
    fn fallback_fired(&self) -> bool {
        self.fallback_fired
    }
    fn empty_proposals(&self) -> bool {
        self.empty_proposals
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn record(&mut self, predicted: ClassLabel, truth: ClassLabel) {
        match (predicted, truth) {
            (ClassLabel::Smoker, ClassLabel::Smoker) => self.tp += 1,
            (ClassLabel::NonSmoker, ClassLabel::NonSmoker) => self.tn += 1,
            (ClassLabel::Smoker, ClassLabel::NonSmoker) => self.fp += 1,
            (ClassLabel::NonSmoker, ClassLabel::Smoker) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn precision(&self) -> Result<Ratio, EvalError> {
        Ratio::new(self.tp, self.tp + self.fp).ok_or(EvalError::UndefinedMetric("precision"))
    }

    pub fn recall(&self) -> Result<Ratio, EvalError> {
        Ratio::new(self.tp, self.tp + self.fn_).ok_or(EvalError::UndefinedMetric("recall"))
    }

    pub fn accuracy(&self) -> Result<Ratio, EvalError> {
        Ratio::new(self.tp + self.tn, self.total()).ok_or(EvalError::UndefinedMetric("accuracy"))
    }
}

impl std::ops::AddAssign for ConfusionMatrix {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.tn += o.tn;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// An exact count ratio with a nonzero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Option<Self> {
        (den != 0).then_some(Self { num, den })
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Percentage rounded half-to-even on the exact fraction, e.g.
    /// `197/200` with 0 decimals is `"98%"`.
    pub fn percent(&self, decimals: u32) -> String {
        let scale = 10u128.pow(decimals);
        let scaled = u128::from(self.num) * 100 * scale;
        let den = u128::from(self.den);
        let (mut q, r) = (scaled / den, scaled % den);
        if 2 * r > den || (2 * r == den && q % 2 == 1) {
            q += 1;
        }
        if decimals == 0 {
            format!("{q}%")
        } else {
            let (int, frac) = (q / scale, q % scale);
            format!("{int}.{frac:0width$}%", width = decimals as usize)
        }
    }
}

/// Precision, recall and accuracy; a metric with a zero denominator is
/// `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub accuracy: Option<f64>,
}

pub fn compute_metrics(m: &ConfusionMatrix) -> Metrics {
    Metrics {
        precision: m.precision().ok().map(|r| r.value()),
        recall: m.recall().ok().map(|r| r.value()),
        accuracy: m.accuracy().ok().map(|r| r.value()),
    }
}

/// Confusion matrix of verdicts against ground truth, matched by image id.
pub fn accumulate<T: ImageOutcome>(
    results: &[T],
    truth: &[ManifestEntry],
) -> Result<ConfusionMatrix, EvalError> {
    let mut by_id = HashMap::with_capacity(truth.len());
    for e in truth {
        if by_id.insert(e.image_id(), e.ground_truth).is_some() {
            return Err(EvalError::DuplicateImage(e.image_id()));
        }
    }
    let mut m = ConfusionMatrix::default();
    for r in results {
        let t = by_id
            .get(r.image_id())
            .ok_or_else(|| EvalError::MissingTruth(r.image_id().to_string()))?;
        m.record(r.verdict(), *t);
    }
    Ok(m)
}

/// Detector invocations against an always-on detector that would run once
/// per image.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatingReport {
    pub images: u64,
    pub smoker_verdicts: u64,
    pub detect_calls: u64,
    pub detect_calls_saved_vs_always_on: u64,
    pub fallback_fired: u64,
    pub empty_proposal_count: u64,
}

pub fn gating_report<T: ImageOutcome>(results: &[T]) -> GatingReport {
    let mut g = GatingReport::default();
    for r in results {
        g.images += 1;
        g.smoker_verdicts += u64::from(r.verdict().is_smoker());
        g.detect_calls += u64::from(r.detect_calls());
        g.fallback_fired += u64::from(r.fallback_fired());
        g.empty_proposal_count += u64::from(r.empty_proposals());
    }
    g.detect_calls_saved_vs_always_on = g.images - g.smoker_verdicts;
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub matrix: ConfusionMatrix,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub accuracy: Option<f64>,
    pub images: u64,
    pub smoker_verdicts: u64,
    pub total_detect_calls: u64,
    pub detect_calls_saved_vs_always_on: u64,
    pub fallback_count: u64,
    pub empty_proposal_count: u64,
    /// Images that could not be processed and are missing from the matrix.
    pub errors: u64,
}

impl EvalReport {
    pub fn build<T: ImageOutcome>(
        results: &[T],
        truth: &[ManifestEntry],
        errors: u64,
    ) -> Result<Self, EvalError> {
        let matrix = accumulate(results, truth)?;
        let metrics = compute_metrics(&matrix);
        let g = gating_report(results);
        Ok(Self {
            matrix,
            precision: metrics.precision,
            recall: metrics.recall,
            accuracy: metrics.accuracy,
            images: g.images,
            smoker_verdicts: g.smoker_verdicts,
            total_detect_calls: g.detect_calls,
            detect_calls_saved_vs_always_on: g.detect_calls_saved_vs_always_on,
            fallback_count: g.fallback_fired,
            empty_proposal_count: g.empty_proposal_count,
            errors,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("reports always serialize")
    }

    /// Human-readable table with percentages rounded to two decimals.
    pub fn to_table(&self) -> String {
        let pct =
            |r: Result<Ratio, EvalError>| r.map_or_else(|_| "n/a".to_string(), |r| r.percent(2));
        let m = &self.matrix;
        let rows: [(&str, String); 12] = [
            ("Precision", pct(m.precision())),
            ("Recall", pct(m.recall())),
            ("Accuracy", pct(m.accuracy())),
            ("True Positives", m.tp.to_string()),
            ("True Negatives", m.tn.to_string()),
            ("False Positives", m.fp.to_string()),
            ("False Negatives", m.fn_.to_string()),
            ("Images", self.images.to_string()),
            ("Detector calls", self.total_detect_calls.to_string()),
            (
                "Calls saved vs always-on",
                self.detect_calls_saved_vs_always_on.to_string(),
            ),
            ("Fallback searches", self.fallback_count.to_string()),
            (
                "Images without proposals",
                self.empty_proposal_count.to_string(),
            ),
        ];
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v}");
        }
        if self.errors > 0 {
            let _ = writeln!(out, "{:<width$}  {}", "Unprocessed images", self.errors);
        }
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_table())
    }
}

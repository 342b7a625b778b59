//! Annotation-replaying backend.
//!
//! A fixture file holds one JSON record per line:
//!
//! ```text
//! {"image_id": "img_01",
//!  "faces": [{"cx": 50, "cy": 40, "w": 20, "h": 30, "conf": 0.9}],
//!  "hands": [{"x1": 10, "y1": 10, "x2": 30, "y2": 40, "conf": 0.8}],
//!  "labels": {"face:0": 1, "hand:0": 0},
//!  "label_full": 0,
//!  "det_full": [{"x1": 44, "y1": 50, "x2": 60, "y2": 54, "conf": 0.7}],
//!  "det_prop": {"hand:0": [{"x1": 2, "y1": 3, "x2": 9, "y2": 6, "conf": 0.6}]}}
//! ```
//!
//! Proposal keys index the `faces`/`hands` arrays in file order. A label is
//! the smoker-class score in `[0, 1]` (so `0` and `1` are plain labels);
//! unlabeled proposals score 0. `label_full` answers whole-image
//! classification. `det_full` boxes are in image coordinates and `det_prop`
//! boxes are relative to the proposal crop. Blank lines and lines starting
//! with `#` are skipped; unknown keys are ignored.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    Backend, BackendFailure, BackendSuite, CigaretteDetector, Concurrency, FaceDetector,
    FaceProposalRaw, HandDetector, HandProposalRaw, ProposalClassifier, ProposalKey, ProposalKind,
    RawDetection, RegionSubject,
};
use crate::imaging::{ImageRef, PixelRegion};
use crate::label::{Classification, Confidence};

const NAME: &str = "fixture";

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("cannot read fixture {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("fixture parse error on line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("fixture validation error on line {line}: {detail}")]
    Validation { line: usize, detail: String },
}

/// One image's worth of annotations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub image_id: String,
    #[serde(default)]
    pub faces: Vec<FaceProposalRaw>,
    #[serde(default)]
    pub hands: Vec<HandProposalRaw>,
    #[serde(default)]
    pub labels: BTreeMap<ProposalKey, Confidence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_full: Option<Confidence>,
    #[serde(default)]
    pub det_full: Vec<RawDetection>,
    #[serde(default)]
    pub det_prop: BTreeMap<ProposalKey, Vec<RawDetection>>,
}

impl FixtureRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("fixture records always serialize")
    }

    fn check_keys(&self) -> Result<(), String> {
        let declared = |k: &ProposalKey| match k.kind {
            ProposalKind::Face => k.index < self.faces.len(),
            ProposalKind::Hand => k.index < self.hands.len(),
        };
        for key in self.labels.keys().chain(self.det_prop.keys()) {
            if !declared(key) {
                return Err(format!(
                    "image '{}': key {key} refers to an undeclared proposal",
                    self.image_id
                ));
            }
        }
        Ok(())
    }

    /// Sorts proposals by descending confidence (stable) and rewrites keys so
    /// they follow the new order.
    fn normalize(mut self) -> Self {
        let face_map = sort_by_confidence(&mut self.faces, |f| f.confidence);
        let hand_map = sort_by_confidence(&mut self.hands, |h| h.confidence);
        let remap = |k: ProposalKey| match k.kind {
            ProposalKind::Face => ProposalKey::face(face_map[k.index]),
            ProposalKind::Hand => ProposalKey::hand(hand_map[k.index]),
        };
        self.labels = self
            .labels
            .into_iter()
            .map(|(k, v)| (remap(k), v))
            .collect();
        self.det_prop = self
            .det_prop
            .into_iter()
            .map(|(k, v)| (remap(k), v))
            .collect();
        self
    }
}

/// Returns `new_position[old_index]`.
fn sort_by_confidence<T: Copy>(items: &mut [T], conf: impl Fn(&T) -> Confidence) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| conf(&items[b]).value().total_cmp(&conf(&items[a]).value()));
    let sorted: Vec<T> = order.iter().map(|&i| items[i]).collect();
    items.copy_from_slice(&sorted);
    let mut new_position = vec![0; order.len()];
    for (new, &old) in order.iter().enumerate() {
        new_position[old] = new;
    }
    new_position
}

/// Immutable replay backend implementing all four contracts.
#[derive(Debug, Clone, Default)]
pub struct FixtureBackend {
    records: HashMap<String, FixtureRecord>,
}

impl FixtureBackend {
    pub fn from_records(records: Vec<FixtureRecord>) -> Result<Self, FixtureError> {
        let mut map = HashMap::with_capacity(records.len());
        for (i, rec) in records.into_iter().enumerate() {
            Self::insert(&mut map, rec, i + 1)?;
        }
        Ok(Self { records: map })
    }

    pub fn parse(text: &str) -> Result<Self, FixtureError> {
        let mut map = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let rec: FixtureRecord =
                serde_json::from_str(trimmed).map_err(|e| classify_json_error(line_no, e))?;
            Self::insert(&mut map, rec, line_no)?;
        }
        Ok(Self { records: map })
    }

    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        let text = fs::read_to_string(path).map_err(|source| FixtureError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    fn insert(
        map: &mut HashMap<String, FixtureRecord>,
        rec: FixtureRecord,
        line: usize,
    ) -> Result<(), FixtureError> {
        rec.check_keys()
            .map_err(|detail| FixtureError::Validation { line, detail })?;
        if map.contains_key(&rec.image_id) {
            return Err(FixtureError::Validation {
                line,
                detail: format!("duplicate image_id '{}'", rec.image_id),
            });
        }
        map.insert(rec.image_id.clone(), rec.normalize());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, image_id: &str) -> Option<&FixtureRecord> {
        self.records.get(image_id)
    }

    pub fn into_suite(self) -> BackendSuite {
        let shared = Arc::new(self);
        BackendSuite {
            face_detector: shared.clone(),
            hand_detector: shared.clone(),
            proposal_classifier: shared.clone(),
            cigarette_detector: shared,
        }
    }

    fn lookup(&self, image_id: &str) -> Result<&FixtureRecord, BackendFailure> {
        self.records.get(image_id).ok_or_else(|| {
            BackendFailure::new(NAME, format!("no fixture record for image '{image_id}'"))
        })
    }
}

/// serde_json reports invalid boxes and confidences as data errors; those are
/// validation failures rather than syntax errors.
fn classify_json_error(line: usize, e: serde_json::Error) -> FixtureError {
    let detail = e.to_string();
    match e.classify() {
        serde_json::error::Category::Data => FixtureError::Validation { line, detail },
        _ => FixtureError::Parse { line, detail },
    }
}

pub fn load_fixture_backend(path: &Path) -> Result<BackendSuite, FixtureError> {
    FixtureBackend::load(path).map(FixtureBackend::into_suite)
}

impl Backend for FixtureBackend {
    fn name(&self) -> &str {
        NAME
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::ConcurrentSafe
    }
}

impl FaceDetector for FixtureBackend {
    fn detect_faces(&self, image: &ImageRef) -> Result<Vec<FaceProposalRaw>, BackendFailure> {
        Ok(self.lookup(image.id())?.faces.clone())
    }
}

impl HandDetector for FixtureBackend {
    fn detect_hands(&self, image: &ImageRef) -> Result<Vec<HandProposalRaw>, BackendFailure> {
        Ok(self.lookup(image.id())?.hands.clone())
    }
}

impl ProposalClassifier for FixtureBackend {
    fn classify(
        &self,
        region: &PixelRegion,
        subject: RegionSubject,
    ) -> Result<Classification, BackendFailure> {
        let rec = self.lookup(region.source())?;
        let score = match subject {
            RegionSubject::FullImage => rec.label_full,
            RegionSubject::Proposal(key) => rec.labels.get(&key).copied(),
        };
        let zero = Confidence::new(0.0).expect("zero is a valid confidence");
        Ok(Classification::from_score(score.unwrap_or(zero)))
    }
}

impl CigaretteDetector for FixtureBackend {
    fn detect_cigarettes(
        &self,
        region: &PixelRegion,
        subject: RegionSubject,
    ) -> Result<Vec<RawDetection>, BackendFailure> {
        let rec = self.lookup(region.source())?;
        Ok(match subject {
            RegionSubject::FullImage => rec.det_full.clone(),
            RegionSubject::Proposal(key) => rec.det_prop.get(&key).cloned().unwrap_or_default(),
        })
    }
}

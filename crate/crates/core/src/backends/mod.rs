//! Inference contracts consumed by the pipeline.
//!
//! The pipeline talks to four detectors/classifiers through the traits in
//! this module. [`fixture::FixtureBackend`] replays annotation files so the
//! whole pipeline can run without trained weights.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::geometry::{CenterBox, CornerBox};
use crate::imaging::{ImageRef, PixelRegion};
use crate::label::{Classification, Confidence};

pub mod fixture;
#[cfg(feature = "onnx")]
pub mod onnx;

pub use fixture::{load_fixture_backend, FixtureBackend, FixtureError, FixtureRecord};

/// A failed backend call. The pipeline records it and degrades gracefully.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{backend}: {detail}")]
pub struct BackendFailure {
    pub backend: String,
    pub detail: String,
}

impl BackendFailure {
    pub fn new(backend: impl Into<String>, detail: impl Into<String>) -> Self {
        Self {
            backend: backend.into(),
            detail: detail.into(),
        }
    }
}

/// Whether a backend may be called from several threads at once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Concurrency {
    ConcurrentSafe,
    Exclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposalKind {
    Face,
    Hand,
}

impl fmt::Display for ProposalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProposalKind::Face => "face",
            ProposalKind::Hand => "hand",
        })
    }
}

/// Identity of a proposal within one image, written `face:0`, `hand:2`, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProposalKey {
    pub kind: ProposalKind,
    pub index: usize,
}

impl ProposalKey {
    pub fn face(index: usize) -> Self {
        Self {
            kind: ProposalKind::Face,
            index,
        }
    }

    pub fn hand(index: usize) -> Self {
        Self {
            kind: ProposalKind::Hand,
            index,
        }
    }
}

impl fmt::Display for ProposalKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.index)
    }
}

impl FromStr for ProposalKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, index) = s
            .split_once(':')
            .ok_or_else(|| format!("proposal key '{s}' is not of the form kind:index"))?;
        let kind = match kind {
            "face" => ProposalKind::Face,
            "hand" => ProposalKind::Hand,
            other => return Err(format!("unknown proposal kind '{other}'")),
        };
        let index = index
            .parse()
            .map_err(|_| format!("bad proposal index in '{s}'"))?;
        Ok(Self { kind, index })
    }
}

impl Serialize for ProposalKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ProposalKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// What a region handed to the classifier or cigarette detector depicts.
/// Model backends may ignore it; the fixture backend keys its answers on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegionSubject {
    FullImage,
    Proposal(ProposalKey),
}

/// Face detector output, in center format.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceProposalRaw {
    #[serde(flatten)]
    pub bbox: CenterBox,
    #[serde(rename = "conf")]
    pub confidence: Confidence,
}

/// Hand detector output, in corner format.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandProposalRaw {
    #[serde(flatten)]
    pub bbox: CornerBox,
    #[serde(rename = "conf")]
    pub confidence: Confidence,
}

/// Cigarette detector output, in the coordinates of the queried region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawDetection {
    #[serde(flatten)]
    pub bbox: CornerBox,
    #[serde(rename = "conf")]
    pub confidence: Confidence,
}

/// Which detector pass produced a detection. `Proposal(k)` refers to the
/// k-th entry of the result's positive proposal list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionSource {
    FullImage,
    Proposal(usize),
}

/// A cigarette detection in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(flatten)]
    pub bbox: CornerBox,
    #[serde(rename = "conf")]
    pub confidence: Confidence,
    pub source: DetectionSource,
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    fn concurrency(&self) -> Concurrency;
}

/// Face region detector. Proposals come back sorted by descending
/// confidence.
pub trait FaceDetector: Backend {
    fn detect_faces(&self, image: &ImageRef) -> Result<Vec<FaceProposalRaw>, BackendFailure>;
}

/// Hand region detector. Proposals come back sorted by descending
/// confidence.
pub trait HandDetector: Backend {
    fn detect_hands(&self, image: &ImageRef) -> Result<Vec<HandProposalRaw>, BackendFailure>;
}

/// Binary smoker classifier over a cropped region.
pub trait ProposalClassifier: Backend {
    fn classify(
        &self,
        region: &PixelRegion,
        subject: RegionSubject,
    ) -> Result<Classification, BackendFailure>;
}

/// Cigarette detector. Boxes are returned relative to `region`'s origin.
pub trait CigaretteDetector: Backend {
    fn detect_cigarettes(
        &self,
        region: &PixelRegion,
        subject: RegionSubject,
    ) -> Result<Vec<RawDetection>, BackendFailure>;
}

/// The four backends a pipeline run needs.
#[derive(Clone)]
pub struct BackendSuite {
    pub face_detector: Arc<dyn FaceDetector>,
    pub hand_detector: Arc<dyn HandDetector>,
    pub proposal_classifier: Arc<dyn ProposalClassifier>,
    pub cigarette_detector: Arc<dyn CigaretteDetector>,
}

impl BackendSuite {
    pub fn all_concurrent_safe(&self) -> bool {
        [
            self.face_detector.concurrency(),
            self.hand_detector.concurrency(),
            self.proposal_classifier.concurrency(),
            self.cigarette_detector.concurrency(),
        ]
        .iter()
        .all(|c| *c == Concurrency::ConcurrentSafe)
    }

    /// Backend names in contract order: face, hand, classifier, cigarette.
    pub fn names(&self) -> [&str; 4] {
        [
            self.face_detector.name(),
            self.hand_detector.name(),
            self.proposal_classifier.name(),
            self.cigarette_detector.name(),
        ]
    }
}

impl fmt::Debug for BackendSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BackendSuite")
            .field("backends", &self.names())
            .field("concurrent_safe", &self.all_concurrent_safe())
            .finish()
    }
}

//! Proposal extraction, classification and gated cigarette detection.
//!
//! Per image the pipeline:
//!
//! 1. asks the face and hand detectors for proposals, drops those under the
//!    confidence threshold, adjusts each box (face: shift down and widen;
//!    hand: grow on every side), clips it to the image and crops it;
//! 2. classifies every crop and takes the maximum label as the verdict;
//! 3. only for a smoker verdict, runs the cigarette detector on the whole
//!    image, and if that finds nothing, on each smoker-labelled crop.
//!
//! [`Strategy::RawImageOnly`] replaces steps 1 and 2 with one classification
//! of the whole image.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{
    BackendFailure, BackendSuite, Detection, DetectionSource, ProposalKey, ProposalKind,
    RawDetection, RegionSubject,
};
use crate::geometry::{CornerBox, DeltaRule};
use crate::imaging::{self, ImageRef, PixelRegion};
use crate::label::{ClassLabel, Confidence};

mod batch;
mod result;

pub use batch::{run_batch, run_images, BatchError, BatchOutcome};
pub use result::{
    parse_result_records, Counters, PipelineResult, Proposal, ProposalRecord, RecordedFailure,
    ResultRecord, Stage,
};

/// Processing strategy: classify region proposals, or the raw image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Strategy {
    #[default]
    #[serde(rename = "roi")]
    RoiPipeline,
    #[serde(rename = "raw")]
    RawImageOnly,
}

impl FromStr for Strategy {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "roi" => Ok(Strategy::RoiPipeline),
            "raw" => Ok(Strategy::RawImageOnly),
            other => Err(ConfigError(format!(
                "unknown strategy '{other}' (expected roi or raw)"
            ))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::RoiPipeline => "roi",
            Strategy::RawImageOnly => "raw",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid pipeline config: {0}")]
pub struct ConfigError(pub String);

/// Minimum detector confidence for a proposal or detection to be kept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub face: f64,
    pub hand: f64,
    pub cigarette: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            face: 0.5,
            hand: 0.5,
            cigarette: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub face_deltas: DeltaRule,
    pub hand_deltas: DeltaRule,
    pub thresholds: Thresholds,
    pub strategy: Strategy,
    pub detection_fallback: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            face_deltas: DeltaRule::face_default(),
            hand_deltas: DeltaRule::hand_default(),
            thresholds: Thresholds::default(),
            strategy: Strategy::RoiPipeline,
            detection_fallback: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = self.thresholds;
        for (name, v) in [
            ("face", t.face),
            ("hand", t.hand),
            ("cigarette", t.cigarette),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError(format!(
                    "{name} threshold must lie in [0, 1], got {v}"
                )));
            }
        }
        DeltaRule::new(self.face_deltas.horizontal, self.face_deltas.vertical)
            .and(DeltaRule::new(
                self.hand_deltas.horizontal,
                self.hand_deltas.vertical,
            ))
            .map_err(|e| ConfigError(e.to_string()))?;
        Ok(())
    }
}

/// Image verdict: the maximum of the proposal labels, non-smoker when there
/// are none.
pub fn aggregate_labels<I: IntoIterator<Item = ClassLabel>>(labels: I) -> ClassLabel {
    labels.into_iter().max().unwrap_or(ClassLabel::NonSmoker)
}

/// Proposals plus whatever went wrong while producing them.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub proposals: Vec<Proposal>,
    pub counters: Counters,
    pub failures: Vec<RecordedFailure>,
}

/// Runs the face and hand detectors and turns their boxes into cropped
/// proposals, faces first, each kind in detector order.
pub fn extract_proposals(
    image: &ImageRef,
    suite: &BackendSuite,
    cfg: &PipelineConfig,
) -> Extraction {
    let mut run = Run::new(image, suite, cfg);
    let proposals = run.extract();
    Extraction {
        proposals,
        counters: run.counters,
        failures: run.failures,
    }
}

/// Runs the full method on one decoded image. Backend failures are recorded
/// in the result and never abort the run.
pub fn run_pipeline(
    image: &ImageRef,
    suite: &BackendSuite,
    cfg: &PipelineConfig,
) -> PipelineResult {
    let mut run = Run::new(image, suite, cfg);

    let (proposals, verdict, empty_proposals) = match cfg.strategy {
        Strategy::RoiPipeline => {
            let mut proposals = run.extract();
            for p in &mut proposals {
                let outcome = run.classify(&p.crop, RegionSubject::Proposal(p.key()));
                p.label = Some(outcome.map_or(ClassLabel::NonSmoker, |(l, _)| l));
                p.score = outcome.map(|(_, s)| s);
            }
            let verdict = aggregate_labels(proposals.iter().filter_map(|p| p.label));
            let empty = proposals.is_empty();
            (proposals, verdict, empty)
        }
        Strategy::RawImageOnly => {
            let whole = imaging::full_region(image);
            let verdict = run
                .classify(&whole, RegionSubject::FullImage)
                .map_or(ClassLabel::NonSmoker, |(l, _)| l);
            (Vec::new(), verdict, false)
        }
    };

    let positive_indices: Vec<usize> = proposals
        .iter()
        .enumerate()
        .filter(|(_, p)| p.is_positive())
        .map(|(i, _)| i)
        .collect();

    let mut detections = Vec::new();
    let mut fallback_fired = false;
    if verdict.is_smoker() {
        let whole = imaging::full_region(image);
        detections = run.detect(&whole, RegionSubject::FullImage, DetectionSource::FullImage);
        if detections.is_empty() && cfg.detection_fallback {
            fallback_fired = true;
            for (k, &pi) in positive_indices.iter().enumerate() {
                let p = &proposals[pi];
                let found = run.detect(
                    &p.crop,
                    RegionSubject::Proposal(p.key()),
                    DetectionSource::Proposal(k),
                );
                detections.extend(found);
            }
        }
    }

    PipelineResult {
        image_id: image.id().to_string(),
        strategy: cfg.strategy,
        verdict,
        empty_proposals,
        fallback_fired,
        proposals,
        positive_indices,
        detections,
        counters: run.counters,
        failures: run.failures,
    }
}

/// Per-image mutable state: counters and the failure log.
struct Run<'a> {
    image: &'a ImageRef,
    suite: &'a BackendSuite,
    cfg: &'a PipelineConfig,
    counters: Counters,
    failures: Vec<RecordedFailure>,
}

impl<'a> Run<'a> {
    fn new(image: &'a ImageRef, suite: &'a BackendSuite, cfg: &'a PipelineConfig) -> Self {
        Self {
            image,
            suite,
            cfg,
            counters: Counters::default(),
            failures: Vec::new(),
        }
    }

    fn fail(&mut self, stage: Stage, subject: impl Into<String>, detail: impl Into<String>) {
        self.failures.push(RecordedFailure {
            stage,
            subject: subject.into(),
            detail: detail.into(),
        });
    }

    fn backend_fail(&mut self, stage: Stage, subject: impl Into<String>, e: BackendFailure) {
        self.fail(stage, subject, e.to_string());
    }

    fn extract(&mut self) -> Vec<Proposal> {
        let mut out = Vec::new();

        self.counters.face_calls += 1;
        match self.suite.face_detector.detect_faces(self.image) {
            Ok(faces) => {
                for (index, f) in faces.iter().enumerate() {
                    if f.confidence.value() < self.cfg.thresholds.face {
                        continue;
                    }
                    let deltas = self.cfg.face_deltas.resolve_face(&f.bbox);
                    let adjusted = f.bbox.adjust_face(deltas).to_corner();
                    let key = ProposalKey::face(index);
                    if let Some(p) = self.make_proposal(key, f.bbox.to_corner(), adjusted) {
                        out.push(p);
                    }
                }
            }
            Err(e) => self.backend_fail(Stage::FaceDetection, "image", e),
        }

        self.counters.hand_calls += 1;
        match self.suite.hand_detector.detect_hands(self.image) {
            Ok(hands) => {
                for (index, h) in hands.iter().enumerate() {
                    if h.confidence.value() < self.cfg.thresholds.hand {
                        continue;
                    }
                    let deltas = self.cfg.hand_deltas.resolve_hand(&h.bbox);
                    let adjusted = h.bbox.expand_hand(deltas);
                    let key = ProposalKey::hand(index);
                    if let Some(p) = self.make_proposal(key, h.bbox, adjusted) {
                        out.push(p);
                    }
                }
            }
            Err(e) => self.backend_fail(Stage::HandDetection, "image", e),
        }
        out
    }

    fn make_proposal(
        &mut self,
        key: ProposalKey,
        raw_box: CornerBox,
        adjusted: CornerBox,
    ) -> Option<Proposal> {
        let clipped = match adjusted.clip_to(self.image.extent()) {
            Ok(c) => c,
            Err(e) => {
                self.fail(Stage::Crop, key.to_string(), e.to_string());
                return None;
            }
        };
        match imaging::crop(self.image, &clipped) {
            Ok(crop) => Some(Proposal {
                kind: key.kind,
                index: key.index,
                raw_box,
                adjusted_box: clipped,
                crop,
                label: None,
                score: None,
            }),
            Err(e) => {
                self.fail(Stage::Crop, key.to_string(), e.to_string());
                None
            }
        }
    }

    fn classify(
        &mut self,
        region: &PixelRegion,
        subject: RegionSubject,
    ) -> Option<(ClassLabel, Confidence)> {
        self.counters.classify_calls += 1;
        match self.suite.proposal_classifier.classify(region, subject) {
            Ok(c) => Some((c.label(), c.score())),
            Err(e) => {
                self.backend_fail(Stage::Classification, subject_name(subject), e);
                None
            }
        }
    }

    /// One detector call on `region`; boxes are filtered, clipped to the
    /// region and moved into image coordinates.
    fn detect(
        &mut self,
        region: &PixelRegion,
        subject: RegionSubject,
        source: DetectionSource,
    ) -> Vec<Detection> {
        self.counters.detect_calls += 1;
        let raw = match self
            .suite
            .cigarette_detector
            .detect_cigarettes(region, subject)
        {
            Ok(r) => r,
            Err(e) => {
                self.backend_fail(Stage::CigaretteDetection, subject_name(subject), e);
                return Vec::new();
            }
        };
        let origin = region.rect();
        let mut out = Vec::with_capacity(raw.len());
        for RawDetection { bbox, confidence } in raw {
            if confidence.value() < self.cfg.thresholds.cigarette {
                continue;
            }
            match bbox.clip_to(region.extent()) {
                Ok(local) => out.push(Detection {
                    bbox: local.translate(f64::from(origin.x), f64::from(origin.y)),
                    confidence,
                    source,
                }),
                Err(e) => self.fail(
                    Stage::CigaretteDetection,
                    subject_name(subject),
                    format!("detection {bbox} dropped: {e}"),
                ),
            }
        }
        out
    }
}

fn subject_name(subject: RegionSubject) -> String {
    match subject {
        RegionSubject::FullImage => "image".to_string(),
        RegionSubject::Proposal(k) => k.to_string(),
    }
}

/// Outline color for a proposal kind.
pub fn overlay_color(kind: ProposalKind) -> image::Rgb<u8> {
    match kind {
        ProposalKind::Face => imaging::FACE_COLOR,
        ProposalKind::Hand => imaging::HAND_COLOR,
    }
}

/// Draws the result onto a copy of `image`: all proposals in their kind
/// color, detections in red, and a verdict banner.
pub fn render_result(image: &ImageRef, result: &PipelineResult) -> ImageRef {
    let overlays: Vec<imaging::Overlay> = result
        .proposals
        .iter()
        .map(|p| imaging::Overlay {
            bbox: p.adjusted_box,
            color: overlay_color(p.kind),
        })
        .collect();
    let dets: Vec<CornerBox> = result.detections.iter().map(|d| d.bbox).collect();
    imaging::render_annotations(image, &overlays, &dets, result.verdict)
}

#[cfg(test)]
mod tests;

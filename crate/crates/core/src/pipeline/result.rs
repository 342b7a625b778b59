use serde::{Deserialize, Serialize};

use crate::backends::{Detection, ProposalKey, ProposalKind};
use crate::geometry::{CornerBox, PixelRect};
use crate::imaging::PixelRegion;
use crate::label::{ClassLabel, Confidence};

use super::Strategy;

/// A face or hand region after adjustment, clipping and cropping.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub kind: ProposalKind,
    /// Position in the detector's output list for this kind.
    pub index: usize,
    /// Detector box in corner format, before adjustment.
    pub raw_box: CornerBox,
    /// Adjusted box clipped to the image.
    pub adjusted_box: CornerBox,
    pub crop: PixelRegion,
    pub label: Option<ClassLabel>,
    pub score: Option<Confidence>,
}

impl Proposal {
    pub fn key(&self) -> ProposalKey {
        ProposalKey {
            kind: self.kind,
            index: self.index,
        }
    }

    pub fn is_positive(&self) -> bool {
        self.label == Some(ClassLabel::Smoker)
    }
}

/// Backend invocation counts for one image.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub face_calls: u32,
    pub hand_calls: u32,
    pub classify_calls: u32,
    pub detect_calls: u32,
}

impl std::ops::AddAssign for Counters {
    fn add_assign(&mut self, o: Self) {
        self.face_calls += o.face_calls;
        self.hand_calls += o.hand_calls;
        self.classify_calls += o.classify_calls;
        self.detect_calls += o.detect_calls;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    FaceDetection,
    HandDetection,
    Crop,
    Classification,
    CigaretteDetection,
}

/// A backend failure or dropped region, kept for audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedFailure {
    pub stage: Stage,
    /// `face:0`, `hand:1`, `image`, ...
    pub subject: String,
    pub detail: String,
}

/// Everything the pipeline decided about one image.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineResult {
    pub image_id: String,
    pub strategy: Strategy,
    pub verdict: ClassLabel,
    /// The ROI path found no usable proposal and fell back to a non-smoker verdict.
    pub empty_proposals: bool,
    /// The full-image detector came back empty and proposal crops were searched.
    pub fallback_fired: bool,
    pub proposals: Vec<Proposal>,
    /// Indices into `proposals` of the smoker-labelled ones, in order.
    pub positive_indices: Vec<usize>,
    pub detections: Vec<Detection>,
    pub counters: Counters,
    pub failures: Vec<RecordedFailure>,
}

impl PipelineResult {
    pub fn to_record(&self) -> ResultRecord {
        ResultRecord {
            image_id: self.image_id.clone(),
            strategy: self.strategy,
            verdict: self.verdict,
            empty_proposals: self.empty_proposals,
            fallback_fired: self.fallback_fired,
            proposals: self
                .proposals
                .iter()
                .map(|p| ProposalRecord {
                    kind: p.kind,
                    index: p.index,
                    raw_box: p.raw_box,
                    adjusted_box: p.adjusted_box,
                    crop: p.crop.rect(),
                    label: p.label,
                    score: p.score,
                })
                .collect(),
            positive_indices: self.positive_indices.clone(),
            detections: self.detections.clone(),
            counters: self.counters,
            failures: self.failures.clone(),
        }
    }

    /// Single-line JSON with a fixed key order.
    pub fn to_json_line(&self) -> String {
        self.to_record().to_json_line()
    }
}

/// Serialized form of a [`PipelineResult`]; crops are reduced to their
/// pixel rectangles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub image_id: String,
    pub strategy: Strategy,
    pub verdict: ClassLabel,
    pub empty_proposals: bool,
    pub fallback_fired: bool,
    pub proposals: Vec<ProposalRecord>,
    pub positive_indices: Vec<usize>,
    pub detections: Vec<Detection>,
    pub counters: Counters,
    pub failures: Vec<RecordedFailure>,
}

impl ResultRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("result records always serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub kind: ProposalKind,
    pub index: usize,
    pub raw_box: CornerBox,
    pub adjusted_box: CornerBox,
    pub crop: PixelRect,
    pub label: Option<ClassLabel>,
    pub score: Option<Confidence>,
}

/// Parses line-delimited result records, skipping blank lines.
pub fn parse_result_records(text: &str) -> Result<Vec<ResultRecord>, (usize, serde_json::Error)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| (i + 1, e)))
        .collect()
}

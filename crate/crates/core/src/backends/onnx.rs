//! Backend running serialized ONNX models with `tract`.
//!
//! A model directory holds a `model.toml` and the model files it names:
//!
//! ```toml
//! nms_iou = 0.45            # optional, default 0.45
//!
//! [face]
//! file = "face.onnx"
//! input_size = 416          # square input side in pixels
//! box_format = "center"     # optional; default "center" for faces, "corner" otherwise
//!
//! [hand]
//! file = "hand.onnx"
//! input_size = 416
//!
//! [cigarette]
//! file = "cigarette.onnx"
//! input_size = 416
//!
//! [classifier]
//! files = ["resnet18.onnx", "resnet34.onnx"]
//! input_size = 224
//! mean = [0.485, 0.456, 0.406]   # optional, these are the defaults
//! std = [0.229, 0.224, 0.225]
//! softmax = true                 # optional; false if models already output probabilities
//! ```
//!
//! Every model takes one `1×3×S×S` float RGB tensor. Pixels are scaled to
//! `[0, 1]`; detector inputs are used as is, classifier inputs are then
//! normalized with `mean`/`std`. Images and crops are resized to `S×S`
//! bilinearly.
//!
//! Detectors output rows of five numbers, four box coordinates normalized to
//! the input (`cx, cy, w, h` or `x1, y1, x2, y2`) and a confidence, in any
//! tensor shape whose last axis is 5. Rows are de-duplicated with greedy
//! NMS. Classifiers output two class scores, non-smoker then smoker; the
//! ensemble score is the mean of the per-model smoker probabilities.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::imageops::{self, FilterType};
use image::RgbImage;
use serde::Deserialize;
use thiserror::Error;
use tract_onnx::prelude::*;

use super::{
    Backend, BackendFailure, BackendSuite, CigaretteDetector, Concurrency, FaceDetector,
    FaceProposalRaw, HandDetector, HandProposalRaw, ProposalClassifier, RawDetection,
    RegionSubject,
};
use crate::geometry::{CenterBox, CornerBox};
use crate::imaging::{ImageRef, PixelRegion};
use crate::label::{Classification, Confidence};

const CONFIG_FILE: &str = "model.toml";
const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid model config {path}: {detail}")]
    Config { path: String, detail: String },
    #[error("cannot load model {path}: {detail}")]
    Load { path: String, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxFormat {
    Center,
    Corner,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectorSection {
    file: PathBuf,
    input_size: u32,
    box_format: Option<BoxFormat>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassifierSection {
    files: Vec<PathBuf>,
    input_size: u32,
    mean: Option<[f32; 3]>,
    std: Option<[f32; 3]>,
    softmax: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelConfig {
    nms_iou: Option<f64>,
    face: DetectorSection,
    hand: DetectorSection,
    cigarette: DetectorSection,
    classifier: ClassifierSection,
}

type Plan = Arc<TypedRunnableModel>;

/// One loaded network with its square input size.
struct Network {
    plan: Plan,
    size: u32,
}

impl Network {
    fn load(path: &Path, size: u32) -> Result<Self, ModelError> {
        let err = |e: TractError| ModelError::Load {
            path: path.display().to_string(),
            detail: format!("{e:#}"),
        };
        let s = size as usize;
        let plan = tract_onnx::onnx()
            .model_for_path(path)
            .and_then(|m| m.with_input_fact(0, f32::fact([1, 3, s, s]).into()))
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(err)?;
        Ok(Self { plan, size })
    }

    /// Runs the network on `pixels` resized to its input and returns the
    /// first output flattened.
    fn run(&self, pixels: &RgbImage, mean: [f32; 3], std: [f32; 3]) -> TractResult<Vec<f32>> {
        let s = self.size;
        let resized = imageops::resize(pixels, s, s, FilterType::Triangle);
        let n = s as usize;
        let input = tract_ndarray::Array4::from_shape_fn((1, 3, n, n), |(_, c, y, x)| {
            let v = f32::from(resized.get_pixel(x as u32, y as u32)[c]) / 255.0;
            (v - mean[c]) / std[c]
        });
        let out = self.plan.run(tvec!(Tensor::from(input).into()))?;
        let view = out[0].to_plain_array_view::<f32>()?;
        Ok(view.iter().copied().collect())
    }
}

struct Detector {
    name: &'static str,
    net: Network,
    format: BoxFormat,
    nms_iou: f64,
}

impl Detector {
    /// Boxes in pixel coordinates of `pixels`, after NMS, by descending
    /// confidence.
    fn detect(&self, pixels: &RgbImage) -> Result<Vec<(CornerBox, Confidence)>, BackendFailure> {
        let fail = |detail: String| BackendFailure::new(self.name, detail);
        let out = self
            .net
            .run(pixels, [0.0; 3], [1.0; 3])
            .map_err(|e| fail(format!("inference failed: {e:#}")))?;
        if out.len() % 5 != 0 {
            return Err(fail(format!(
                "expected rows of 5 values, got {} values",
                out.len()
            )));
        }
        let (w, h) = (f64::from(pixels.width()), f64::from(pixels.height()));
        let mut boxes: Vec<(CornerBox, Confidence)> = out
            .chunks_exact(5)
            .filter_map(|r| {
                let r: Vec<f64> = r.iter().map(|&v| f64::from(v)).collect();
                let bbox = match self.format {
                    BoxFormat::Center => CenterBox::new(r[0] * w, r[1] * h, r[2] * w, r[3] * h)
                        .map(|b| b.to_corner()),
                    BoxFormat::Corner => CornerBox::new(r[0] * w, r[1] * h, r[2] * w, r[3] * h),
                }
                .ok()?;
                let conf = Confidence::new(r[4].clamp(0.0, 1.0)).ok()?;
                Some((bbox, conf))
            })
            .collect();
        boxes.sort_by(|a, b| b.1.value().total_cmp(&a.1.value()));
        Ok(non_max_suppression(boxes, self.nms_iou))
    }
}

pub fn iou(a: &CornerBox, b: &CornerBox) -> f64 {
    let iw = (a.x2().min(b.x2()) - a.x1().max(b.x1())).max(0.0);
    let ih = (a.y2().min(b.y2()) - a.y1().max(b.y1())).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Greedy NMS over boxes already sorted by descending confidence.
pub fn non_max_suppression(
    sorted: Vec<(CornerBox, Confidence)>,
    max_iou: f64,
) -> Vec<(CornerBox, Confidence)> {
    let mut kept: Vec<(CornerBox, Confidence)> = Vec::new();
    for cand in sorted {
        if kept.iter().all(|k| iou(&k.0, &cand.0) <= max_iou) {
            kept.push(cand);
        }
    }
    kept
}

struct Classifier {
    nets: Vec<Network>,
    mean: [f32; 3],
    std: [f32; 3],
    softmax: bool,
}

impl Classifier {
    fn smoker_probability(&self, pixels: &RgbImage) -> Result<f64, BackendFailure> {
        let fail = |detail: String| BackendFailure::new("onnx-classifier", detail);
        let mut total = 0.0;
        for net in &self.nets {
            let out = net
                .run(pixels, self.mean, self.std)
                .map_err(|e| fail(format!("inference failed: {e:#}")))?;
            let [neg, pos] = out[..] else {
                return Err(fail(format!("expected 2 class scores, got {}", out.len())));
            };
            let p = if self.softmax {
                let m = neg.max(pos);
                let (en, ep) = (f64::from(neg - m).exp(), f64::from(pos - m).exp());
                ep / (en + ep)
            } else {
                f64::from(pos)
            };
            total += p;
        }
        Ok((total / self.nets.len() as f64).clamp(0.0, 1.0))
    }
}

/// The four ONNX networks behind the backend contracts.
pub struct OnnxBackend {
    face: Detector,
    hand: Detector,
    cigarette: Detector,
    classifier: Classifier,
}

impl OnnxBackend {
    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let cfg_path = dir.join(CONFIG_FILE);
        let text = fs::read_to_string(&cfg_path).map_err(|source| ModelError::Io {
            path: cfg_path.display().to_string(),
            source,
        })?;
        let config_err = |detail: String| ModelError::Config {
            path: cfg_path.display().to_string(),
            detail,
        };
        let cfg: ModelConfig = toml::from_str(&text).map_err(|e| config_err(e.to_string()))?;
        let nms_iou = cfg.nms_iou.unwrap_or(0.45);
        if !(0.0..=1.0).contains(&nms_iou) {
            return Err(config_err(format!(
                "nms_iou must lie in [0, 1], got {nms_iou}"
            )));
        }
        if cfg.classifier.files.is_empty() {
            return Err(config_err("classifier.files is empty".into()));
        }
        let sections = [
            cfg.face.input_size,
            cfg.hand.input_size,
            cfg.cigarette.input_size,
            cfg.classifier.input_size,
        ];
        if sections.contains(&0) {
            return Err(config_err("input_size must be positive".into()));
        }
        let std = cfg.classifier.std.unwrap_or(IMAGENET_STD);
        if std.iter().any(|s| *s <= 0.0) {
            return Err(config_err("classifier std must be positive".into()));
        }

        let detector = |name, s: DetectorSection, default| -> Result<Detector, ModelError> {
            Ok(Detector {
                name,
                net: Network::load(&dir.join(&s.file), s.input_size)?,
                format: s.box_format.unwrap_or(default),
                nms_iou,
            })
        };
        let nets = cfg
            .classifier
            .files
            .iter()
            .map(|f| Network::load(&dir.join(f), cfg.classifier.input_size))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            face: detector("onnx-face", cfg.face, BoxFormat::Center)?,
            hand: detector("onnx-hand", cfg.hand, BoxFormat::Corner)?,
            cigarette: detector("onnx-cigarette", cfg.cigarette, BoxFormat::Corner)?,
            classifier: Classifier {
                nets,
                mean: cfg.classifier.mean.unwrap_or(IMAGENET_MEAN),
                std,
                softmax: cfg.classifier.softmax.unwrap_or(true),
            },
        })
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
}

pub fn load_model_backend(dir: &Path) -> Result<BackendSuite, ModelError> {
    OnnxBackend::load(dir).map(OnnxBackend::into_suite)
}

impl Backend for OnnxBackend {
    fn name(&self) -> &str {
        "onnx"
    }

    // tract plans spawn fresh state per run.
    fn concurrency(&self) -> Concurrency {
        Concurrency::ConcurrentSafe
    }
}

impl FaceDetector for OnnxBackend {
    fn detect_faces(&self, image: &ImageRef) -> Result<Vec<FaceProposalRaw>, BackendFailure> {
        Ok(self
            .face
            .detect(image.pixels())?
            .into_iter()
            .map(|(b, confidence)| FaceProposalRaw {
                bbox: b.to_center(),
                confidence,
            })
            .collect())
    }
}

impl HandDetector for OnnxBackend {
    fn detect_hands(&self, image: &ImageRef) -> Result<Vec<HandProposalRaw>, BackendFailure> {
        Ok(self
            .hand
            .detect(image.pixels())?
            .into_iter()
            .map(|(bbox, confidence)| HandProposalRaw { bbox, confidence })
            .collect())
    }
}

impl ProposalClassifier for OnnxBackend {
    fn classify(
        &self,
        region: &PixelRegion,
        _subject: RegionSubject,
    ) -> Result<Classification, BackendFailure> {
        let p = self.classifier.smoker_probability(region.pixels())?;
        let score = Confidence::new(p)
            .map_err(|e| BackendFailure::new("onnx-classifier", e.to_string()))?;
        Ok(Classification::from_score(score))
    }
}

impl CigaretteDetector for OnnxBackend {
    fn detect_cigarettes(
        &self,
        region: &PixelRegion,
        _subject: RegionSubject,
    ) -> Result<Vec<RawDetection>, BackendFailure> {
        Ok(self
            .cigarette
            .detect(region.pixels())?
            .into_iter()
            .map(|(bbox, confidence)| RawDetection { bbox, confidence })
            .collect())
    }
}

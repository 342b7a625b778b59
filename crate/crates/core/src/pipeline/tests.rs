use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use image::{Rgb, RgbImage};
use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, proptest, ProptestConfig};
use proptest::strategy::Strategy as PropStrategy;

use super::*;
use crate::backends::{
    Backend, CigaretteDetector, Concurrency, FaceDetector, FaceProposalRaw, FixtureBackend,
    FixtureRecord, HandDetector, HandProposalRaw, ProposalClassifier,
};
use crate::geometry::{AdjustmentDeltas, CenterBox};
use crate::label::Classification;

fn kb(x1: f64, y1: f64, x2: f64, y2: f64) -> CornerBox {
    CornerBox::new(x1, y1, x2, y2).unwrap()
}

fn conf(v: f64) -> Confidence {
    Confidence::new(v).unwrap()
}

fn face(cx: f64, cy: f64, w: f64, h: f64, c: f64) -> FaceProposalRaw {
    FaceProposalRaw {
        bbox: CenterBox::new(cx, cy, w, h).unwrap(),
        confidence: conf(c),
    }
}

fn hand(x1: f64, y1: f64, x2: f64, y2: f64, c: f64) -> HandProposalRaw {
    HandProposalRaw {
        bbox: kb(x1, y1, x2, y2),
        confidence: conf(c),
    }
}

fn det(x1: f64, y1: f64, x2: f64, y2: f64, c: f64) -> RawDetection {
    RawDetection {
        bbox: kb(x1, y1, x2, y2),
        confidence: conf(c),
    }
}

fn image(id: &str, w: u32, h: u32) -> ImageRef {
    ImageRef::new(id, RgbImage::from_pixel(w, h, Rgb([120, 110, 100]))).unwrap()
}

fn suite(records: Vec<FixtureRecord>) -> BackendSuite {
    FixtureBackend::from_records(records).unwrap().into_suite()
}

fn fixed_cfg(face: (f64, f64), hand: (f64, f64)) -> PipelineConfig {
    PipelineConfig {
        face_deltas: DeltaRule::fixed(AdjustmentDeltas::new(face.0, face.1).unwrap()),
        hand_deltas: DeltaRule::fixed(AdjustmentDeltas::new(hand.0, hand.1).unwrap()),
        ..PipelineConfig::default()
    }
}

fn one_face_one_hand(labels: &[(&str, f64)]) -> FixtureRecord {
    FixtureRecord {
        image_id: "img".into(),
        faces: vec![face(50.0, 40.0, 20.0, 30.0, 0.9)],
        hands: vec![hand(10.0, 10.0, 30.0, 40.0, 0.9)],
        labels: labels
            .iter()
            .map(|(k, v)| (k.parse().unwrap(), conf(*v)))
            .collect(),
        ..Default::default()
    }
}

#[test]
fn extraction_applies_both_adjustments() {
    let s = suite(vec![one_face_one_hand(&[])]);
    let cfg = fixed_cfg((10.0, 5.0), (2.0, 3.0));
    let ex = extract_proposals(&image("img", 100, 80), &s, &cfg);
    assert_eq!(ex.proposals.len(), 2);
    let (f, h) = (&ex.proposals[0], &ex.proposals[1]);
    assert_eq!(f.kind, ProposalKind::Face);
    assert_eq!(f.raw_box, kb(40.0, 25.0, 60.0, 55.0));
    // (50, 40, 20, 30) -> (50, 45, 30, 30) -> corners
    assert_eq!(f.adjusted_box, kb(35.0, 30.0, 65.0, 60.0));
    assert_eq!(h.kind, ProposalKind::Hand);
    assert_eq!(h.adjusted_box, kb(8.0, 7.0, 32.0, 43.0));
    assert!(h
        .raw_box
        .expand_hand(AdjustmentDeltas::new(2.0, 3.0).unwrap())
        .contains(&h.raw_box));
    assert_eq!(ex.counters.face_calls, 1);
    assert_eq!(ex.counters.hand_calls, 1);
    assert!(ex.failures.is_empty());
}

#[test]
fn extraction_with_default_proportional_deltas() {
    let s = suite(vec![one_face_one_hand(&[])]);
    let ex = extract_proposals(&image("img", 100, 80), &s, &PipelineConfig::default());
    // face: dh = 0.25 * 20 = 5, dv = 0.2 * 30 = 6 -> (50, 46, 25, 30)
    assert_eq!(ex.proposals[0].adjusted_box, kb(37.5, 31.0, 62.5, 61.0));
    // hand: 0.15 * max(20, 30) = 4.5 on each side
    assert_eq!(ex.proposals[1].adjusted_box, kb(5.5, 5.5, 34.5, 44.5));
}

#[test]
fn adjusted_face_leaving_the_image_is_clipped() {
    let rec = FixtureRecord {
        image_id: "img".into(),
        faces: vec![face(50.0, 70.0, 20.0, 20.0, 0.9)],
        ..Default::default()
    };
    let ex = extract_proposals(
        &image("img", 100, 80),
        &suite(vec![rec]),
        &fixed_cfg((10.0, 8.0), (0.0, 0.0)),
    );
    // (50, 78, 30, 20) -> (35, 68, 65, 88) -> clipped at y = 80
    assert_eq!(ex.proposals[0].adjusted_box, kb(35.0, 68.0, 65.0, 80.0));
    assert_eq!(ex.proposals[0].crop.rect().height, 12);
}

#[test]
fn proposal_outside_image_is_dropped_and_recorded() {
    let rec = FixtureRecord {
        image_id: "img".into(),
        hands: vec![
            hand(200.0, 200.0, 220.0, 230.0, 0.9),
            hand(1.0, 1.0, 5.0, 5.0, 0.8),
        ],
        ..Default::default()
    };
    let ex = extract_proposals(
        &image("img", 100, 80),
        &suite(vec![rec]),
        &fixed_cfg((0.0, 0.0), (0.0, 0.0)),
    );
    assert_eq!(ex.proposals.len(), 1);
    assert_eq!(ex.proposals[0].index, 1);
    assert_eq!(ex.failures.len(), 1);
    assert_eq!(ex.failures[0].stage, Stage::Crop);
    assert_eq!(ex.failures[0].subject, "hand:0");
}

#[test]
fn zero_raw_proposals_give_nothing() {
    let rec = FixtureRecord {
        image_id: "img".into(),
        ..Default::default()
    };
    let ex = extract_proposals(
        &image("img", 10, 10),
        &suite(vec![rec]),
        &PipelineConfig::default(),
    );
    assert!(ex.proposals.is_empty());
}

#[test]
fn low_confidence_hand_is_filtered() {
    let rec = FixtureRecord {
        image_id: "img".into(),
        hands: vec![
            hand(10.0, 10.0, 30.0, 40.0, 0.9),
            hand(40.0, 10.0, 60.0, 40.0, 0.4),
        ],
        ..Default::default()
    };
    let ex = extract_proposals(
        &image("img", 100, 80),
        &suite(vec![rec]),
        &PipelineConfig::default(),
    );
    assert_eq!(ex.proposals.len(), 1);
    assert_eq!(ex.proposals[0].index, 0);
}

#[test]
fn aggregate_examples() {
    use ClassLabel::*;
    assert_eq!(
        aggregate_labels([NonSmoker, NonSmoker, Smoker, NonSmoker]),
        Smoker
    );
    assert_eq!(aggregate_labels([NonSmoker, NonSmoker]), NonSmoker);
    assert_eq!(aggregate_labels([]), NonSmoker);
}

#[test]
fn aggregate_matches_or_for_every_short_list() {
    let mut cases = 0;
    for len in 1..=6u32 {
        for bits in 0..(1u32 << len) {
            let labels: Vec<ClassLabel> = (0..len)
                .map(|i| ClassLabel::from_u8(((bits >> i) & 1) as u8).unwrap())
                .collect();
            let any = labels.contains(&ClassLabel::Smoker);
            let expected = if any {
                ClassLabel::Smoker
            } else {
                ClassLabel::NonSmoker
            };
            assert_eq!(aggregate_labels(labels.iter().copied()), expected);
            cases += 1;
        }
    }
    assert_eq!(cases, 126);
}

#[test]
fn all_negative_proposals_skip_detection() {
    let mut rec = one_face_one_hand(&[("face:0", 0.0), ("hand:0", 0.0)]);
    rec.det_full = vec![det(1.0, 1.0, 5.0, 5.0, 0.9)];
    let r = run_pipeline(
        &image("img", 100, 80),
        &suite(vec![rec]),
        &PipelineConfig::default(),
    );
    assert_eq!(r.verdict, ClassLabel::NonSmoker);
    assert!(r.detections.is_empty());
    assert_eq!(r.counters.detect_calls, 0);
    assert_eq!(r.counters.classify_calls, 2);
    assert!(r.positive_indices.is_empty());
}

#[test]
fn smoker_with_full_image_detection() {
    let mut rec = one_face_one_hand(&[("face:0", 1.0), ("hand:0", 0.0)]);
    rec.det_full = vec![det(44.0, 50.0, 60.0, 54.0, 0.8)];
    let r = run_pipeline(
        &image("img", 100, 80),
        &suite(vec![rec]),
        &PipelineConfig::default(),
    );
    assert_eq!(r.verdict, ClassLabel::Smoker);
    assert_eq!(r.positive_indices, vec![0]);
    assert_eq!(r.detections.len(), 1);
    assert_eq!(r.detections[0].source, DetectionSource::FullImage);
    assert_eq!(r.detections[0].bbox, kb(44.0, 50.0, 60.0, 54.0));
    assert_eq!(r.counters.detect_calls, 1);
    assert!(!r.fallback_fired);
}

#[test]
fn fallback_searches_positive_crops() {
    let mut rec = one_face_one_hand(&[("face:0", 1.0), ("hand:0", 1.0)]);
    rec.det_prop = BTreeMap::from([(
        "hand:0".parse().unwrap(),
        vec![det(1.0, 2.0, 9.0, 6.0, 0.7)],
    )]);
    let cfg = fixed_cfg((10.0, 5.0), (2.0, 3.0));
    let r = run_pipeline(&image("img", 100, 80), &suite(vec![rec]), &cfg);
    assert_eq!(r.verdict, ClassLabel::Smoker);
    assert!(r.fallback_fired);
    assert_eq!(r.positive_indices, vec![0, 1]);
    assert_eq!(r.counters.detect_calls, 1 + 2);
    assert_eq!(r.detections.len(), 1);
    assert_eq!(r.detections[0].source, DetectionSource::Proposal(1));
    // hand crop origin is (8, 7)
    assert_eq!(r.detections[0].bbox, kb(9.0, 9.0, 17.0, 13.0));

    let no_fallback = PipelineConfig {
        detection_fallback: false,
        ..cfg
    };
    let r = run_pipeline(
        &image("img", 100, 80),
        &suite(vec![one_face_one_hand(&[("face:0", 1.0)])]),
        &no_fallback,
    );
    assert_eq!(r.counters.detect_calls, 1);
    assert!(!r.fallback_fired);
}

#[test]
fn low_confidence_and_outside_detections_are_dropped() {
    let mut rec = one_face_one_hand(&[("face:0", 1.0)]);
    rec.det_full = vec![
        det(1.0, 1.0, 5.0, 5.0, 0.3),
        det(150.0, 1.0, 160.0, 5.0, 0.9),
        det(90.0, 70.0, 120.0, 90.0, 0.9),
    ];
    let r = run_pipeline(
        &image("img", 100, 80),
        &suite(vec![rec]),
        &PipelineConfig::default(),
    );
    assert_eq!(r.detections.len(), 1);
    assert_eq!(r.detections[0].bbox, kb(90.0, 70.0, 100.0, 80.0));
    assert_eq!(r.failures.len(), 1);
    assert_eq!(r.failures[0].stage, Stage::CigaretteDetection);
}

#[test]
fn empty_image_is_non_smoker_and_flagged() {
    let rec = FixtureRecord {
        image_id: "img".into(),
        label_full: Some(conf(1.0)),
        ..Default::default()
    };
    let r = run_pipeline(
        &image("img", 30, 30),
        &suite(vec![rec]),
        &PipelineConfig::default(),
    );
    assert_eq!(r.verdict, ClassLabel::NonSmoker);
    assert!(r.empty_proposals);
    assert_eq!(r.counters.classify_calls, 0);
}

#[test]
fn raw_strategy_classifies_whole_image_once() {
    let mut rec = one_face_one_hand(&[("face:0", 1.0)]);
    rec.label_full = Some(conf(0.2));
    let raw = PipelineConfig {
        strategy: Strategy::RawImageOnly,
        ..PipelineConfig::default()
    };
    let s = suite(vec![rec]);
    let r = run_pipeline(&image("img", 100, 80), &s, &raw);
    assert_eq!(r.verdict, ClassLabel::NonSmoker);
    assert_eq!(
        r.counters,
        Counters {
            face_calls: 0,
            hand_calls: 0,
            classify_calls: 1,
            detect_calls: 0
        }
    );
    assert!(r.proposals.is_empty());
    let roi = run_pipeline(&image("img", 100, 80), &s, &PipelineConfig::default());
    assert_eq!(roi.verdict, ClassLabel::Smoker);
}

struct Broken {
    concurrency: Concurrency,
}

impl Backend for Broken {
    fn name(&self) -> &str {
        "broken"
    }

    fn concurrency(&self) -> Concurrency {
        self.concurrency
    }
}

impl FaceDetector for Broken {
    fn detect_faces(&self, _: &ImageRef) -> Result<Vec<FaceProposalRaw>, BackendFailure> {
        Err(BackendFailure::new("broken", "face model crashed"))
    }
}

impl ProposalClassifier for Broken {
    fn classify(
        &self,
        _: &PixelRegion,
        _: RegionSubject,
    ) -> Result<Classification, BackendFailure> {
        Err(BackendFailure::new("broken", "classifier crashed"))
    }
}

impl CigaretteDetector for Broken {
    fn detect_cigarettes(
        &self,
        _: &PixelRegion,
        _: RegionSubject,
    ) -> Result<Vec<RawDetection>, BackendFailure> {
        Err(BackendFailure::new("broken", "detector crashed"))
    }
}

#[test]
fn backend_failures_degrade_and_are_recorded() {
    let fx = Arc::new(
        FixtureBackend::from_records(vec![one_face_one_hand(&[("hand:0", 1.0)])]).unwrap(),
    );
    let broken = Arc::new(Broken {
        concurrency: Concurrency::ConcurrentSafe,
    });
    let s = BackendSuite {
        face_detector: broken.clone(),
        hand_detector: fx.clone(),
        proposal_classifier: fx.clone(),
        cigarette_detector: broken.clone(),
    };
    let r = run_pipeline(&image("img", 100, 80), &s, &PipelineConfig::default());
    assert_eq!(r.proposals.len(), 1);
    assert_eq!(r.verdict, ClassLabel::Smoker);
    assert!(r.detections.is_empty());
    // full image + one fallback crop, both failing
    assert_eq!(r.counters.detect_calls, 2);
    let stages: Vec<Stage> = r.failures.iter().map(|f| f.stage).collect();
    assert_eq!(
        stages,
        vec![
            Stage::FaceDetection,
            Stage::CigaretteDetection,
            Stage::CigaretteDetection
        ]
    );

    let s = BackendSuite {
        proposal_classifier: broken,
        ..s
    };
    let r = run_pipeline(&image("img", 100, 80), &s, &PipelineConfig::default());
    assert_eq!(r.verdict, ClassLabel::NonSmoker);
    assert_eq!(r.proposals[0].label, Some(ClassLabel::NonSmoker));
    assert_eq!(r.proposals[0].score, None);
    assert_eq!(r.counters.detect_calls, 0);
}

/// Hand detector that tracks how many calls overlap.
struct Tracking {
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    concurrency: Concurrency,
}

impl Backend for Tracking {
    fn name(&self) -> &str {
        "tracking"
    }

    fn concurrency(&self) -> Concurrency {
        self.concurrency
    }
}

impl HandDetector for Tracking {
    fn detect_hands(&self, _: &ImageRef) -> Result<Vec<HandProposalRaw>, BackendFailure> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(std::time::Duration::from_millis(5));
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        Ok(Vec::new())
    }
}

#[test]
fn exclusive_backend_is_never_called_concurrently() {
    let images: Vec<ImageRef> = (0..16).map(|i| image(&format!("i{i}"), 8, 8)).collect();
    let fx = Arc::new(
        FixtureBackend::from_records(
            (0..16)
                .map(|i| FixtureRecord {
                    image_id: format!("i{i}"),
                    ..Default::default()
                })
                .collect(),
        )
        .unwrap(),
    );
    for (concurrency, max_peak) in [
        (Concurrency::Exclusive, 1),
        (Concurrency::ConcurrentSafe, 4),
    ] {
        let tracking = Arc::new(Tracking {
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            concurrency,
        });
        let s = BackendSuite {
            face_detector: fx.clone(),
            hand_detector: tracking.clone(),
            proposal_classifier: fx.clone(),
            cigarette_detector: fx.clone(),
        };
        let out = run_images(&images, &s, &PipelineConfig::default(), 4);
        assert_eq!(out.len(), 16);
        assert!(tracking.peak.load(Ordering::SeqCst) <= max_peak);
    }
}

#[test]
fn batch_isolates_undecodable_images_and_keeps_order() {
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for (i, name) in ["a.png", "b.png", "c.png"].iter().enumerate() {
        let p = dir.path().join(name);
        if i == 1 {
            std::fs::write(&p, b"not an image").unwrap();
        } else {
            RgbImage::from_pixel(20, 20, Rgb([1, 2, 3]))
                .save(&p)
                .unwrap();
        }
        paths.push(p);
    }
    let records = ["a", "b", "c"]
        .iter()
        .map(|id| FixtureRecord {
            image_id: id.to_string(),
            ..one_face_one_hand(&[("face:0", 1.0)])
        })
        .collect();
    let s = suite(records);
    let out = run_batch(&paths, &s, &PipelineConfig::default(), 2);
    let ids: Vec<&str> = out.results.iter().map(|r| r.image_id.as_str()).collect();
    assert_eq!(ids, vec!["a", "c"]);
    assert_eq!(out.errors.len(), 1);
    assert_eq!(out.errors[0].position, 1);

    let empty: Vec<std::path::PathBuf> = Vec::new();
    assert!(run_batch(&empty, &s, &PipelineConfig::default(), 4)
        .results
        .is_empty());
}

#[test]
fn result_json_is_stable_and_parseable() {
    let mut rec = one_face_one_hand(&[("face:0", 1.0)]);
    rec.det_full = vec![det(44.0, 50.0, 60.0, 54.0, 0.8)];
    let r = run_pipeline(
        &image("img", 100, 80),
        &suite(vec![rec]),
        &PipelineConfig::default(),
    );
    let line = r.to_json_line();
    assert!(line.starts_with(r#"{"image_id":"img","strategy":"roi","verdict":1,"#));
    assert!(line.contains(
        r#""counters":{"face_calls":1,"hand_calls":1,"classify_calls":2,"detect_calls":1}"#
    ));
    let back = parse_result_records(&format!("{line}\n\n{line}\n")).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(back[0], r.to_record());
}

#[test]
fn render_result_draws_only_inside_boxes_for_non_smoker() {
    let rec = one_face_one_hand(&[]);
    let img = image("img", 100, 80);
    let r = run_pipeline(&img, &suite(vec![rec]), &PipelineConfig::default());
    let out = render_result(&img, &r);
    assert_eq!(out.extent(), img.extent());
    assert_eq!(
        out.pixel(r.proposals[1].crop.rect().x, 40),
        imaging::HAND_COLOR.0
    );
}

fn random_record(id: String) -> impl PropStrategy<Value = FixtureRecord> {
    let faces = prop::collection::vec(
        (
            0.0..120.0f64,
            0.0..90.0f64,
            1.0..60.0f64,
            1.0..60.0f64,
            0.0..=1.0f64,
        ),
        0..3,
    );
    let hands = prop::collection::vec(
        (
            0.0..120.0f64,
            0.0..90.0f64,
            1.0..50.0f64,
            1.0..50.0f64,
            0.0..=1.0f64,
        ),
        0..3,
    );
    let dets = prop::collection::vec(
        (0.0..100.0f64, 0.0..80.0f64, 1.0..20.0f64, 0.0..=1.0f64),
        0..2,
    );
    (
        faces,
        hands,
        prop::collection::vec(0.0..=1.0f64, 6),
        dets.clone(),
        dets,
        0usize..6,
    )
        .prop_map(
            move |(faces, hands, scores, full, prop_dets, prop_target)| {
                let faces: Vec<_> = faces
                    .into_iter()
                    .map(|(x, y, w, h, c)| face(x, y, w, h, c))
                    .collect();
                let hands: Vec<_> = hands
                    .into_iter()
                    .map(|(x, y, w, h, c)| hand(x, y, x + w, y + h, c))
                    .collect();
                let mut keys: Vec<ProposalKey> = (0..faces.len()).map(ProposalKey::face).collect();
                keys.extend((0..hands.len()).map(ProposalKey::hand));
                let labels = keys
                    .iter()
                    .zip(scores)
                    .map(|(k, s)| (*k, conf(s)))
                    .collect();
                let to_det = |v: Vec<(f64, f64, f64, f64)>| -> Vec<RawDetection> {
                    v.into_iter()
                        .map(|(x, y, s, c)| det(x, y, x + s, y + s / 3.0, c))
                        .collect()
                };
                let mut det_prop = BTreeMap::new();
                if let Some(k) = keys.get(prop_target) {
                    det_prop.insert(*k, to_det(prop_dets));
                }
                FixtureRecord {
                    image_id: id.clone(),
                    faces,
                    hands,
                    labels,
                    label_full: None,
                    det_full: to_det(full),
                    det_prop,
                }
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn pipeline_invariants_hold(rec in random_record("p".into()), fallback in any::<bool>()) {
        let img = image("p", 100, 80);
        let cfg = PipelineConfig { detection_fallback: fallback, ..PipelineConfig::default() };
        let r = run_pipeline(&img, &suite(vec![rec]), &cfg);

        let labels: Vec<ClassLabel> = r.proposals.iter().map(|p| p.label.unwrap()).collect();
        prop_assert_eq!(r.verdict, ClassLabel::from_u8(labels.iter().any(|l| l.is_smoker()) as u8).unwrap());
        if !r.verdict.is_smoker() {
            prop_assert_eq!(r.counters.detect_calls, 0);
            prop_assert!(r.detections.is_empty());
        }
        if r.fallback_fired {
            prop_assert_eq!(r.counters.detect_calls as usize, 1 + r.positive_indices.len());
        }
        prop_assert_eq!(r.counters.classify_calls as usize, r.proposals.len());
        let expected_pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_smoker()).collect();
        prop_assert_eq!(&r.positive_indices, &expected_pos);
        let full = img.extent().full_box();
        for p in &r.proposals {
            prop_assert!(full.contains(&p.adjusted_box));
            let c = p.crop.rect();
            prop_assert_eq!(c, p.adjusted_box.rasterize());
        }
        for d in &r.detections {
            prop_assert!(full.contains(&d.bbox));
            prop_assert!(d.confidence.value() >= cfg.thresholds.cigarette);
            if let DetectionSource::Proposal(k) = d.source {
                prop_assert!(k < r.positive_indices.len());
            }
        }
    }
}

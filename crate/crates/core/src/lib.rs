//! Smoking-behaviour classification from face and hand region proposals,
//! with a cigarette detector that only runs on images classified as smoker.
//!
//! The crate is split the way the method is:
//!
//! - [`geometry`]: center/corner boxes, the face and hand box adjustments,
//!   clipping;
//! - [`backends`]: the four inference contracts and an annotation-replaying
//!   fixture backend;
//! - [`imaging`]: decode, crop, annotated rendering;
//! - [`pipeline`]: per-image orchestration and batch runs;
//! - [`evaluation`]: manifests, stratified splits, confusion matrix and
//!   metrics.
//!
//! ```no_run
//! use std::path::Path;
//! use smokegate::{backends, imaging, pipeline};
//!
//! let suite = backends::load_fixture_backend(Path::new("fixture.jsonl"))?;
//! let image = imaging::decode(Path::new("img_01.png"))?;
//! let result = pipeline::run_pipeline(&image, &suite, &Default::default());
//! println!("{}", result.to_json_line());
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod backends;
pub mod evaluation;
pub mod geometry;
pub mod imaging;
pub mod label;
pub mod pipeline;

pub use label::{ClassLabel, Classification, Confidence};

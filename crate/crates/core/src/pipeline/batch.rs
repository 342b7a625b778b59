use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::backends::BackendSuite;
use crate::imaging::{self, ImageRef};

use super::{run_pipeline, PipelineConfig, PipelineResult};

/// An image that could not be processed at all.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("image #{position} ({path}): {detail}")]
pub struct BatchError {
    /// Position of the image in the input list.
    pub position: usize,
    pub path: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchOutcome {
    /// Results in input order, skipping images listed in `errors`.
    pub results: Vec<PipelineResult>,
    pub errors: Vec<BatchError>,
}

/// Decodes and processes every path. Output order follows `paths`
/// whatever `jobs` is; an undecodable image is reported in `errors` and the
/// rest of the batch continues.
pub fn run_batch<P: AsRef<Path> + Sync>(
    paths: &[P],
    suite: &BackendSuite,
    cfg: &PipelineConfig,
    jobs: usize,
) -> BatchOutcome {
    let per_image = |(position, path): (usize, &P)| -> Result<PipelineResult, BatchError> {
        let path = path.as_ref();
        let image = imaging::decode(path).map_err(|e| BatchError {
            position,
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        Ok(run_pipeline(&image, suite, cfg))
    };
    let items: Vec<(usize, &P)> = paths.iter().enumerate().collect();
    let outcomes = ordered_map(items, effective_jobs(suite, jobs), per_image);

    let mut out = BatchOutcome::default();
    for o in outcomes {
        match o {
            Ok(r) => out.results.push(r),
            Err(e) => out.errors.push(e),
        }
    }
    out
}

/// Processes already-decoded images, in order.
pub fn run_images(
    images: &[ImageRef],
    suite: &BackendSuite,
    cfg: &PipelineConfig,
    jobs: usize,
) -> Vec<PipelineResult> {
    ordered_map(
        images.iter().collect(),
        effective_jobs(suite, jobs),
        |img| run_pipeline(img, suite, cfg),
    )
}

/// Exclusive backends force one image at a time.
fn effective_jobs(suite: &BackendSuite, jobs: usize) -> usize {
    if suite.all_concurrent_safe() {
        jobs.max(1)
    } else {
        1
    }
}

fn ordered_map<T, R, F>(items: Vec<T>, jobs: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    if jobs <= 1 || items.len() <= 1 {
        return items.into_iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| items.into_par_iter().map(&f).collect()),
        Err(_) => items.into_iter().map(f).collect(),
    }
}
